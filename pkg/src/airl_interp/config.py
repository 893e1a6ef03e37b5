"""Pipeline configuration: one YAML file, strict keys, per-stage hashes.

Unknown keys are rejected with their dotted path. The hash of a stage covers
the root seed plus every section that stage (and its predecessors) reads, so
changing analysis settings leaves the training artifacts valid.
"""

from __future__ import annotations

import dataclasses
import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np
import yaml

from .env import DEFAULT_TAGS
from .errors import ConfigError


@dataclass
class GridSection:
    width: int = 5
    height: int = 5
    goal: list = field(default_factory=lambda: [4, 4])
    walls: list = field(default_factory=list)
    start_cells: list = field(default_factory=lambda: [[2, 2]])
    step_penalty: float = -0.01
    goal_reward: float = 1.0
    max_steps: int = 30


@dataclass
class TokenSection:
    vocab_file: Optional[str] = None
    tags: list = field(default_factory=lambda: list(DEFAULT_TAGS))
    tokens_per_tag: int = 8
    vocab_seed: int = 0
    article_len: int = 12
    max_summary_len: int = 6
    rouge: str = "rouge1"
    inclusion: dict = field(default_factory=lambda: {"NN": 1.0, "VB": 1.0, "PRP": 1.0})
    tag_weights: dict = field(default_factory=dict)


@dataclass
class EnvSection:
    kind: str = "token"
    grid: GridSection = field(default_factory=GridSection)
    token: TokenSection = field(default_factory=TokenSection)


@dataclass
class RlSection:
    gamma: float = 0.9
    iterations: int = 1500
    batch_size: int = 32
    learning_rate: float = 0.01
    optimizer: str = "adam"
    momentum: float = 0.0
    entropy_coef: float = 0.01
    hidden: list = field(default_factory=lambda: [128])
    temperature: float = 1.0
    eval_episodes: int = 300
    min_improvement: float = 2.0
    trajectories: int = 300
    trajectory_mode: str = "greedy"


@dataclass
class AirlSection:
    gamma: float = 0.9
    iterations: int = 300
    episodes_per_iter: int = 32
    disc_updates: int = 1
    novice_updates: int = 1
    disc_batch: int = 256
    disc_learning_rate: float = 0.003
    novice_learning_rate: float = 0.01
    optimizer: str = "adam"
    disc_hidden: list = field(default_factory=lambda: [32])
    novice_entropy_coef: float = 0.0
    score_policy: str = "novice"
    eval_episodes: int = 300


@dataclass
class AnalysisSection:
    bins: int = 8
    nmi_normalization: str = "geometric"
    figure_format: str = "png"


@dataclass
class PathsSection:
    out: str = "artifacts"


@dataclass
class PipelineConfig:
    seed: int = 0
    env: EnvSection = field(default_factory=EnvSection)
    rl: RlSection = field(default_factory=RlSection)
    airl: AirlSection = field(default_factory=AirlSection)
    analysis: AnalysisSection = field(default_factory=AnalysisSection)
    paths: PathsSection = field(default_factory=PathsSection)

    # -- hashing -----------------------------------------------------------
    def stage_hash(self, stage: str) -> str:
        sections = {
            "train-expert": ("env", "rl"),
            "train-airl": ("env", "rl", "airl"),
            "analyze": ("env", "rl", "airl", "analysis"),
        }[stage]
        doc = {"seed": self.seed}
        for name in sections:
            doc[name] = dataclasses.asdict(getattr(self, name))
        if self.env.token.vocab_file and "env" in doc:
            # the vocabulary file's content, not its location, is what matters
            doc["env"]["token"]["vocab_file"] = _file_digest(self.env.token.vocab_file)
        blob = json.dumps(doc, sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode()).hexdigest()[:16]

    @property
    def config_hash(self) -> str:
        return self.stage_hash("analyze")

    def stage_seed(self, stage: str) -> int:
        k = {"train-expert": 1, "collect": 2, "train-airl": 3, "evaluate": 4, "analyze": 5}[stage]
        return int(np.random.SeedSequence([self.seed, k]).generate_state(1, dtype=np.uint64)[0] >> 2)

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)


def _file_digest(path) -> str:
    try:
        return hashlib.sha256(Path(path).read_bytes()).hexdigest()[:16]
    except OSError:
        return f"missing:{path}"


def _build(cls, data, path):
    if data is None:
        data = {}
    if not isinstance(data, dict):
        raise ConfigError(f"expected a mapping, got {type(data).__name__}", path or "<root>")
    known = {f.name: f for f in dataclasses.fields(cls)}
    unknown = sorted(set(data) - set(known))
    if unknown:
        where = f"{path}.{unknown[0]}" if path else unknown[0]
        raise ConfigError("unknown key", where)
    kwargs = {}
    defaults = cls()
    for name, f in known.items():
        if name not in data:
            continue
        sub = f"{path}.{name}" if path else name
        default = getattr(defaults, name)
        value = data[name]
        if dataclasses.is_dataclass(default):
            kwargs[name] = _build(type(default), value, sub)
        else:
            kwargs[name] = _coerce(value, default, f, sub)
    return cls(**kwargs)


def _coerce(value, default, f, path):
    if f.type in ("Optional[str]",):
        if value is None or isinstance(value, str):
            return value
        raise ConfigError("expected a string or null", path)
    if isinstance(default, bool):
        if isinstance(value, bool):
            return value
        raise ConfigError("expected true/false", path)
    if isinstance(default, int):
        if isinstance(value, int) and not isinstance(value, bool):
            return value
        raise ConfigError(f"expected an integer, got {value!r}", path)
    if isinstance(default, float):
        if isinstance(value, (int, float)) and not isinstance(value, bool):
            return float(value)
        raise ConfigError(f"expected a number, got {value!r}", path)
    if isinstance(default, str):
        if isinstance(value, str):
            return value
        raise ConfigError(f"expected a string, got {value!r}", path)
    if isinstance(default, list):
        if isinstance(value, list):
            return value
        raise ConfigError("expected a list", path)
    if isinstance(default, dict):
        if isinstance(value, dict):
            return value
        raise ConfigError("expected a mapping", path)
    return value


def _require(cond, message, path):
    if not cond:
        raise ConfigError(message, path)


def validate(cfg: PipelineConfig) -> PipelineConfig:
    _require(cfg.env.kind in ("token", "grid"), "must be 'token' or 'grid'", "env.kind")
    _require(cfg.seed >= 0, "must be >= 0", "seed")
    _require(0 < cfg.rl.gamma < 1, "must lie in (0, 1)", "rl.gamma")
    _require(cfg.rl.gamma == cfg.airl.gamma, "must equal rl.gamma", "airl.gamma")
    _require(cfg.rl.iterations >= 0, "must be >= 0", "rl.iterations")
    _require(cfg.rl.learning_rate >= 0, "must be >= 0", "rl.learning_rate")
    _require(cfg.rl.batch_size >= 1, "must be >= 1", "rl.batch_size")
    _require(cfg.rl.trajectories >= 1, "must be >= 1", "rl.trajectories")
    _require(cfg.rl.trajectory_mode in ("greedy", "sample"), "must be 'greedy' or 'sample'", "rl.trajectory_mode")
    _require(cfg.rl.optimizer in ("adam", "sgd"), "must be 'adam' or 'sgd'", "rl.optimizer")
    _require(cfg.airl.optimizer in ("adam", "sgd"), "must be 'adam' or 'sgd'", "airl.optimizer")
    _require(all(isinstance(h, int) and h > 0 for h in cfg.rl.hidden), "must be positive integers", "rl.hidden")
    _require(all(isinstance(h, int) and h > 0 for h in cfg.airl.disc_hidden), "must be positive integers", "airl.disc_hidden")
    _require(cfg.airl.iterations >= 0, "must be >= 0", "airl.iterations")
    _require(cfg.airl.disc_updates >= 1, "must be >= 1", "airl.disc_updates")
    _require(cfg.airl.score_policy in ("novice", "expert"), "must be 'novice' or 'expert'", "airl.score_policy")
    _require(cfg.analysis.bins >= 2, "must be >= 2", "analysis.bins")
    _require(cfg.analysis.nmi_normalization in ("geometric", "arithmetic"),
             "must be 'geometric' or 'arithmetic'", "analysis.nmi_normalization")
    _require(cfg.analysis.figure_format in ("png", "svg", "pdf"), "must be png, svg or pdf", "analysis.figure_format")
    tok = cfg.env.token
    _require(tok.rouge in ("rouge1", "rouge2", "rougeL"), "must be rouge1, rouge2 or rougeL", "env.token.rouge")
    _require(tok.max_summary_len >= 1, "must be >= 1", "env.token.max_summary_len")
    _require(tok.article_len >= 1, "must be >= 1", "env.token.article_len")
    for tag, p in tok.inclusion.items():
        _require(isinstance(p, (int, float)) and 0 <= p <= 1, "must be a probability", f"env.token.inclusion.{tag}")
    if tok.vocab_file is not None:
        _require(Path(tok.vocab_file).is_file(), "file not found", "env.token.vocab_file")
    g = cfg.env.grid
    _require(len(g.goal) == 2, "must be [x, y]", "env.grid.goal")
    _require(g.max_steps >= 1, "must be >= 1", "env.grid.max_steps")
    return cfg


def from_dict(data: dict) -> PipelineConfig:
    return validate(_build(PipelineConfig, data, ""))


def load_config(path) -> PipelineConfig:
    p = Path(path)
    if not p.is_file():
        raise ConfigError(f"config file not found: {p}")
    try:
        data = yaml.safe_load(p.read_text())
    except yaml.YAMLError as exc:
        raise ConfigError(f"{p}: invalid YAML ({exc})") from exc
    cfg = _build(PipelineConfig, data or {}, "")
    if cfg.env.token.vocab_file and not Path(cfg.env.token.vocab_file).is_absolute():
        cfg.env.token.vocab_file = str((p.parent / cfg.env.token.vocab_file).resolve())
    return validate(cfg)


def dump_config(cfg: PipelineConfig) -> str:
    """Resolved settings without ``paths``, so the copy is identical wherever it lands."""
    doc = cfg.to_dict()
    doc.pop("paths")
    return f"# config_hash={cfg.config_hash}\n" + yaml.safe_dump(doc, sort_keys=True)
