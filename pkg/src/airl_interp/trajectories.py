"""Trajectory records and their line-delimited JSON file format.

One trajectory per line::

    {"id": ..., "config_hash": ..., "episode_reward": ...,
     "steps": [{"s": [...], "a": 3, "s_next": [...],
                "token_surface": "storm", "token_tag": "NN",
                "reward_disc": 0.12, "log_pi": -1.3}, ...]}

``token_*`` fields appear only for the token environment, and
``reward_disc`` / ``log_pi`` (plus any ``reward_disc_*`` variants) only in
scored files.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .errors import DataError


@dataclass
class Step:
    s: np.ndarray
    a: int
    s_next: np.ndarray
    token_surface: Optional[str] = None
    token_tag: Optional[str] = None
    extra: dict = field(default_factory=dict)

    @property
    def reward_disc(self) -> Optional[float]:
        return self.extra.get("reward_disc")

    def to_dict(self) -> dict:
        d = {"s": self.s.tolist(), "a": int(self.a), "s_next": self.s_next.tolist()}
        if self.token_surface is not None:
            d["token_surface"] = self.token_surface
            d["token_tag"] = self.token_tag
        d.update(self.extra)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "Step":
        d = dict(d)
        s = np.asarray(d.pop("s"), dtype=np.float64)
        a = d.pop("a")
        s_next = np.asarray(d.pop("s_next"), dtype=np.float64)
        if not isinstance(a, int) or isinstance(a, bool) or a < 0:
            raise ValueError(f"action must be a non-negative integer, got {a!r}")
        if s.ndim != 1 or s.shape != s_next.shape:
            raise ValueError("s and s_next must be equal-length flat vectors")
        return cls(s, a, s_next, d.pop("token_surface", None), d.pop("token_tag", None), d)


@dataclass
class Trajectory:
    id: str
    steps: list
    episode_reward: float
    config_hash: str = ""

    def __len__(self):
        return len(self.steps)

    def states(self) -> np.ndarray:
        return np.stack([st.s for st in self.steps])

    def actions(self) -> np.ndarray:
        return np.array([st.a for st in self.steps], dtype=np.int64)

    def next_states(self) -> np.ndarray:
        return np.stack([st.s_next for st in self.steps])

    def to_dict(self) -> dict:
        return {
            "id": self.id,
            "config_hash": self.config_hash,
            "episode_reward": float(self.episode_reward),
            "steps": [st.to_dict() for st in self.steps],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "Trajectory":
        return cls(
            id=str(d["id"]),
            steps=[Step.from_dict(s) for s in d["steps"]],
            episode_reward=float(d["episode_reward"]),
            config_hash=str(d.get("config_hash", "")),
        )


def write_trajectories(path, trajectories) -> None:
    with open(path, "w") as fh:
        for traj in trajectories:
            fh.write(json.dumps(traj.to_dict(), sort_keys=True, separators=(",", ":")))
            fh.write("\n")


def read_trajectories(path) -> list[Trajectory]:
    """Parse a trajectory file; malformed lines raise :class:`DataError` with the line number."""
    out = []
    with open(path) as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                rec = json.loads(line)
                traj = Trajectory.from_dict(rec)
            except json.JSONDecodeError as exc:
                raise DataError(f"{path}: invalid JSON ({exc.msg})", line=lineno) from exc
            except (KeyError, TypeError, ValueError) as exc:
                raise DataError(f"{path}: malformed trajectory record ({exc})", line=lineno) from exc
            if not traj.steps:
                raise DataError(f"{path}: trajectory {traj.id!r} has no steps", line=lineno)
            out.append(traj)
    return out

