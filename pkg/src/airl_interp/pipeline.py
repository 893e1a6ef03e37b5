"""Stage orchestration: artifact layout, manifest, lock file and hash checks.

Layout of an artifact directory::

    manifest.json
    expert/   vocab.tsv expert.ckpt.json expert_curves.csv
              expert_trajectories.jsonl expert_summary.json
    airl/     discriminator.ckpt.json novice.ckpt.json airl_curves.csv airl_summary.json
    analysis/ scored_trajectories.jsonl reward_table.csv feature_table.csv
              pos_summary.csv mi_scores.csv report.md figures/

Every file carries the hash of the stage that wrote it (see
:meth:`PipelineConfig.stage_hash`).
"""

from __future__ import annotations

import csv
import hashlib
import json
import logging
import os
import time
from contextlib import contextmanager
from pathlib import Path

import numpy as np

from .airl import AirlConfig, AirlDivergence, Discriminator, TransitionSet, balanced_accuracy, score_trajectories, train_airl
from .analysis.report import build_report
from .config import PipelineConfig, dump_config
from .env import GridWorld, Grammar, TokenGenEnv, Vocabulary, build_vocabulary, optimal_mean_return
from .errors import ConfigError, PipelineError
from .numkit import load_checkpoint, save_checkpoint
from .rl import ExpertConfig, Policy, collect_trajectories, evaluate, train_expert, uniform_policy
from .trajectories import read_trajectories, write_trajectories

log = logging.getLogger(__name__)

STAGES = ("train-expert", "train-airl", "analyze")
MANIFEST_FORMAT = "airl-interp/manifest/v1"
LOCK_NAME = ".lock"

ACTION_NAMES = ("up", "down", "left", "right")


def sha256_file(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 16), b""):
            h.update(chunk)
    return h.hexdigest()


# -- manifest ---------------------------------------------------------------

class Manifest:
    """Stage completion flags, artifact checksums and wall-clock seconds."""

    def __init__(self, root: Path, data: dict | None = None):
        self.root = Path(root)
        self.data = data or {"format": MANIFEST_FORMAT, "config_hash": None, "seed": None, "stages": {}}

    @property
    def path(self) -> Path:
        return self.root / "manifest.json"

    @classmethod
    def load(cls, root) -> "Manifest":
        path = Path(root) / "manifest.json"
        if not path.exists():
            return cls(root)
        try:
            data = json.loads(path.read_text())
        except json.JSONDecodeError as exc:
            raise PipelineError(f"{path}: unreadable manifest ({exc.msg})") from exc
        if data.get("format") != MANIFEST_FORMAT:
            raise PipelineError(f"{path}: unknown manifest format {data.get('format')!r}")
        return cls(root, data)

    def save(self) -> None:
        self.root.mkdir(parents=True, exist_ok=True)
        tmp = self.path.with_suffix(".json.tmp")
        tmp.write_text(json.dumps(self.data, indent=2, sort_keys=True) + "\n")
        os.replace(tmp, self.path)

    def entry(self, stage) -> dict | None:
        return self.data["stages"].get(stage)

    def is_complete(self, stage, stage_hash=None) -> bool:
        e = self.entry(stage)
        if not e or not e.get("complete"):
            return False
        return stage_hash is None or e.get("stage_hash") == stage_hash

    def artifacts_intact(self, stage) -> bool:
        e = self.entry(stage) or {}
        for rel, digest in e.get("artifacts", {}).items():
            p = self.root / rel
            if not p.is_file() or sha256_file(p) != digest:
                return False
        return bool(e.get("artifacts"))

    def start(self, stage, cfg: PipelineConfig) -> None:
        """Clear ``stage`` and everything downstream before it is rerun."""
        for later in STAGES[STAGES.index(stage):]:
            self.data["stages"].pop(later, None)
        self.data["config_hash"] = cfg.config_hash
        self.data["seed"] = cfg.seed
        self.save()

    def finish(self, stage, stage_hash, seconds, files) -> None:
        self.data["stages"][stage] = {
            "complete": True,
            "stage_hash": stage_hash,
            "wall_clock_s": round(float(seconds), 3),
            "artifacts": {
                str(Path(f).relative_to(self.root)): sha256_file(f) for f in sorted(files)
            },
        }
        self.save()

    def last_completed(self) -> str | None:
        done = [s for s in STAGES if self.is_complete(s)]
        return done[-1] if done else None


# -- lock -------------------------------------------------------------------

def _pid_alive(pid: int) -> bool:
    if pid <= 0:
        return False
    try:
        os.kill(pid, 0)
    except ProcessLookupError:
        return False
    except PermissionError:
        return True
    return True


@contextmanager
def artifact_lock(root: Path):
    """Exclusive lock on an artifact directory; stale locks of dead processes are replaced."""
    root.mkdir(parents=True, exist_ok=True)
    path = root / LOCK_NAME
    for _ in range(2):
        try:
            fd = os.open(path, os.O_CREAT | os.O_EXCL | os.O_WRONLY, 0o644)
        except FileExistsError:
            try:
                pid = int(path.read_text().strip() or 0)
            except (OSError, ValueError):
                pid = 0
            if _pid_alive(pid) and pid != os.getpid():
                raise PipelineError(f"{root} is locked by running process {pid} ({path})")
            log.warning("removing stale lock %s (pid %s)", path, pid)
            path.unlink(missing_ok=True)
            continue
        with os.fdopen(fd, "w") as fh:
            fh.write(f"{os.getpid()}\n")
        break
    else:
        raise PipelineError(f"could not acquire {path}")
    try:
        yield path
    finally:
        path.unlink(missing_ok=True)


# -- environment ------------------------------------------------------------

def build_env(cfg: PipelineConfig):
    gamma = cfg.rl.gamma
    if cfg.env.kind == "grid":
        g = cfg.env.grid
        return GridWorld(
            width=g.width, height=g.height, goal=tuple(g.goal),
            walls=tuple(tuple(w) for w in g.walls),
            start_cells=tuple(tuple(c) for c in g.start_cells),
            step_penalty=g.step_penalty, goal_reward=g.goal_reward,
            max_steps=g.max_steps, gamma=gamma,
        )
    t = cfg.env.token
    if t.vocab_file:
        vocab = Vocabulary.load(t.vocab_file)
    else:
        vocab = build_vocabulary(t.tags, t.tokens_per_tag, t.vocab_seed)
    try:
        grammar = Grammar(vocab, t.article_len, t.max_summary_len, dict(t.inclusion), dict(t.tag_weights))
    except ValueError as exc:
        raise ConfigError(str(exc), "env.token") from exc
    return TokenGenEnv(grammar, gamma=gamma, rouge=t.rouge)


def label_grid_steps(trajectories, env: GridWorld):
    """Give gridworld steps word labels: surface = start cell, tag = move name."""
    for tr in trajectories:
        for st in tr.steps:
            x, y = env.decode(st.s)
            st.token_surface = f"{x},{y}"
            st.token_tag = ACTION_NAMES[st.a]
    return trajectories


# -- small writers ----------------------------------------------------------

def write_curves(path, curves, stage_hash) -> Path:
    with open(path, "w", newline="") as fh:
        fh.write(f"# config_hash={stage_hash}\n")
        if not curves:
            return Path(path)
        w = csv.DictWriter(fh, fieldnames=list(curves[0]), lineterminator="\n")
        w.writeheader()
        for rec in curves:
            w.writerow({k: repr(v) if isinstance(v, float) else v for k, v in rec.items()})
    return Path(path)


def read_curves(path) -> list[dict]:
    with open(path) as fh:
        lines = [ln for ln in fh if not ln.startswith("#")]
    return list(csv.DictReader(lines))


def write_json(path, data) -> Path:
    Path(path).write_text(json.dumps(data, indent=2, sort_keys=True) + "\n")
    return Path(path)


def _check_hash(found, expected, what, force):
    if found != expected:
        msg = f"{what} was produced with config hash {found!r}, current config hash is {expected!r}"
        if not force:
            raise PipelineError(msg + " (rerun the earlier stage or pass --force)")
        log.warning("%s; continuing because of --force", msg)


def _require_stage(manifest: Manifest, stage, cfg, force):
    if manifest.is_complete(stage, cfg.stage_hash(stage)):
        return
    if manifest.is_complete(stage):
        what = f"stage {stage!r} is complete for a different configuration"
    else:
        what = f"stage {stage!r} has not completed"
    if not force:
        raise PipelineError(f"{what} in {manifest.root} (run it first or pass --force)")
    log.warning("%s; continuing because of --force", what)


def _require_file(path: Path, stage: str) -> Path:
    if not path.is_file():
        raise PipelineError(f"missing artifact {path} (produced by stage {stage!r})")
    return path


# -- stages -----------------------------------------------------------------

def run_train_expert(cfg: PipelineConfig, root: Path, manifest: Manifest, force=False) -> dict:
    h = cfg.stage_hash("train-expert")
    manifest.start("train-expert", cfg)
    t0 = time.perf_counter()
    env = build_env(cfg)
    out = root / "expert"
    out.mkdir(parents=True, exist_ok=True)
    files = []
    if cfg.env.kind == "token":
        env.vocab.save(out / "vocab.tsv", h)
        files.append(out / "vocab.tsv")

    ecfg = ExpertConfig(
        iterations=cfg.rl.iterations, batch_size=cfg.rl.batch_size,
        learning_rate=cfg.rl.learning_rate, optimizer=cfg.rl.optimizer,
        momentum=cfg.rl.momentum, entropy_coef=cfg.rl.entropy_coef,
        hidden=tuple(cfg.rl.hidden), temperature=cfg.rl.temperature,
        eval_episodes=cfg.rl.eval_episodes, min_improvement=cfg.rl.min_improvement,
        seed=cfg.stage_seed("train-expert"),
    )
    res = train_expert(env, ecfg)
    files.append(write_curves(out / "expert_curves.csv", res.curves, h))
    save_checkpoint(out / "expert.ckpt.json", {"policy": res.policy.net},
                    {"config_hash": h, "role": "expert", "temperature": res.policy.temperature})
    files.append(out / "expert.ckpt.json")

    trajs = collect_trajectories(
        res.policy, env, cfg.rl.trajectories, seed=cfg.stage_seed("collect"),
        greedy=cfg.rl.trajectory_mode == "greedy", config_hash=h,
    )
    write_trajectories(out / "expert_trajectories.jsonl", trajs)
    files.append(out / "expert_trajectories.jsonl")

    summary = {
        "config_hash": h,
        "mean_return": res.mean_return,
        "random_baseline": res.random_baseline,
        "beats_baseline": res.beats_baseline,
        "min_improvement": cfg.rl.min_improvement,
        "trajectories": len(trajs),
        "trajectory_mode": cfg.rl.trajectory_mode,
        "mean_trajectory_reward": float(np.mean([t.episode_reward for t in trajs])),
    }
    if cfg.env.kind == "grid":
        summary["optimal_mean_return"] = optimal_mean_return(env)
    if not res.beats_baseline:
        log.warning("expert mean return %.4f does not beat %.1f x random baseline %.4f",
                    res.mean_return, cfg.rl.min_improvement, res.random_baseline)
    files.append(write_json(out / "expert_summary.json", summary))
    manifest.finish("train-expert", h, time.perf_counter() - t0, files)
    return summary


def _load_policy(path, expected_hash, what, force) -> Policy:
    nets, meta = load_checkpoint(path)
    _check_hash(meta.get("config_hash"), expected_hash, what, force)
    return Policy(nets["policy"], meta.get("temperature", 1.0))


def _load_expert_trajectories(root, cfg, force):
    path = _require_file(root / "expert" / "expert_trajectories.jsonl", "train-expert")
    trajs = read_trajectories(path)
    if not trajs:
        raise PipelineError(f"{path} holds no trajectories")
    expected = cfg.stage_hash("train-expert")
    found = {t.config_hash for t in trajs}
    _check_hash(found.pop() if len(found) == 1 else sorted(found), expected, str(path), force)
    return trajs


def airl_settings(cfg: PipelineConfig) -> AirlConfig:
    """The AIRL trainer settings a config asks for; the novice mirrors the expert's layout."""
    return AirlConfig(
        iterations=cfg.airl.iterations, episodes_per_iter=cfg.airl.episodes_per_iter,
        disc_updates=cfg.airl.disc_updates, novice_updates=cfg.airl.novice_updates,
        disc_batch=cfg.airl.disc_batch, disc_learning_rate=cfg.airl.disc_learning_rate,
        novice_learning_rate=cfg.airl.novice_learning_rate, optimizer=cfg.airl.optimizer,
        disc_hidden=tuple(cfg.airl.disc_hidden), novice_hidden=tuple(cfg.rl.hidden),
        novice_entropy_coef=cfg.airl.novice_entropy_coef, gamma=cfg.airl.gamma,
        seed=cfg.stage_seed("train-airl"),
    )


def heldout_sets(cfg: PipelineConfig, env, expert: Policy, count=64):
    """Fresh expert and uniform-policy transitions, seeded apart from training data."""
    eval_seed = cfg.stage_seed("evaluate")
    uni = uniform_policy(env.state_dim, env.action_count)
    held_e = collect_trajectories(expert, env, count, seed=eval_seed + 1, greedy=cfg.rl.trajectory_mode == "greedy")
    held_r = collect_trajectories(uni, env, count, seed=eval_seed + 2)
    return TransitionSet.from_trajectories(held_e), TransitionSet.from_trajectories(held_r), uni


def run_train_airl(cfg: PipelineConfig, root: Path, manifest: Manifest, force=False) -> dict:
    _require_stage(manifest, "train-expert", cfg, force)
    trajs = _load_expert_trajectories(root, cfg, force)
    expert = _load_policy(_require_file(root / "expert" / "expert.ckpt.json", "train-expert"),
                          cfg.stage_hash("train-expert"), "expert checkpoint", force)
    h = cfg.stage_hash("train-airl")
    manifest.start("train-airl", cfg)
    t0 = time.perf_counter()
    env = build_env(cfg)
    out = root / "airl"
    out.mkdir(parents=True, exist_ok=True)
    acfg = airl_settings(cfg)
    try:
        res = train_airl(trajs, env, acfg)
    except AirlDivergence as exc:
        write_curves(out / "airl_curves.csv", exc.curves, h)
        raise
    files = [write_curves(out / "airl_curves.csv", res.curves, h)]
    disc = res.discriminator
    save_checkpoint(out / "discriminator.ckpt.json", {"g": disc.g, "h": disc.h},
                    {"config_hash": h, "role": "discriminator", "gamma": disc.gamma,
                     "action_count": disc.action_count})
    save_checkpoint(out / "novice.ckpt.json", {"policy": res.novice.net},
                    {"config_hash": h, "role": "novice", "temperature": res.novice.temperature})
    files += [out / "discriminator.ckpt.json", out / "novice.ckpt.json"]

    eval_seed = cfg.stage_seed("evaluate")
    disc_flag = env.report_discounted
    novice_ret = evaluate(res.novice, env, cfg.airl.eval_episodes, eval_seed, discounted=disc_flag)
    expert_ret = evaluate(expert, env, cfg.airl.eval_episodes, eval_seed, discounted=disc_flag)
    # held-out check, scored with the policy that generated the negatives
    pos, neg, uni = heldout_sets(cfg, env, expert)
    summary = {
        "config_hash": h,
        "iterations": cfg.airl.iterations,
        "final_disc_accuracy": res.curves[-1]["disc_accuracy"] if res.curves else None,
        "novice_mean_return": novice_ret,
        "expert_mean_return": expert_ret,
        "novice_to_expert_ratio": novice_ret / expert_ret if expert_ret else None,
        "heldout_accuracy_expert_vs_random": balanced_accuracy(disc, uni, pos, neg),
        "heldout_accuracy_expert_vs_random_novice_pi": balanced_accuracy(disc, res.novice, pos, neg),
    }
    files.append(write_json(out / "airl_summary.json", summary))
    manifest.finish("train-airl", h, time.perf_counter() - t0, files)
    return summary


def run_analyze(cfg: PipelineConfig, root: Path, manifest: Manifest, force=False) -> dict:
    _require_stage(manifest, "train-airl", cfg, force)
    trajs = _load_expert_trajectories(root, cfg, force)
    h_airl = cfg.stage_hash("train-airl")
    expert = _load_policy(_require_file(root / "expert" / "expert.ckpt.json", "train-expert"),
                          cfg.stage_hash("train-expert"), "expert checkpoint", force)
    novice = _load_policy(_require_file(root / "airl" / "novice.ckpt.json", "train-airl"),
                          h_airl, "novice checkpoint", force)
    nets, meta = load_checkpoint(_require_file(root / "airl" / "discriminator.ckpt.json", "train-airl"))
    _check_hash(meta.get("config_hash"), h_airl, "discriminator checkpoint", force)
    disc = Discriminator(nets["g"], nets["h"], meta["gamma"], meta["action_count"])

    h = cfg.stage_hash("analyze")
    manifest.start("analyze", cfg)
    t0 = time.perf_counter()
    env = build_env(cfg)
    vocab = None
    if cfg.env.kind == "token":
        vocab = Vocabulary.load(_require_file(root / "expert" / "vocab.tsv", "train-expert"))
    else:
        label_grid_steps(trajs, env)
    score_trajectories(disc, trajs, novice, expert, mode=cfg.airl.score_policy)
    for t in trajs:
        t.config_hash = h
    out = root / "analysis"
    out.mkdir(parents=True, exist_ok=True)
    write_trajectories(out / "scored_trajectories.jsonl", trajs)

    expert_summary = json.loads((root / "expert" / "expert_summary.json").read_text())
    airl_summary = json.loads((root / "airl" / "airl_summary.json").read_text())
    provenance = {
        "seed": cfg.seed,
        "config_hash": h,
        "expert_stage_hash": cfg.stage_hash("train-expert"),
        "airl_stage_hash": h_airl,
        "expert_seed": cfg.stage_seed("train-expert"),
        "trajectory_seed": cfg.stage_seed("collect"),
        "airl_seed": cfg.stage_seed("train-airl"),
        "environment": cfg.env.kind,
        "scoring_policy": cfg.airl.score_policy,
    }
    stats = {
        "expert mean return": expert_summary["mean_return"],
        "random-policy mean return": expert_summary["random_baseline"],
        "novice mean return": airl_summary["novice_mean_return"],
        "final discriminator accuracy": airl_summary["final_disc_accuracy"],
    }
    result = build_report(
        trajs, out, vocab=vocab, bins=cfg.analysis.bins,
        normalization=cfg.analysis.nmi_normalization, figure_format=cfg.analysis.figure_format,
        provenance=provenance, stats=stats, config_hash=h,
    )
    files = [out / "scored_trajectories.jsonl", *result.files]
    manifest.finish("analyze", h, time.perf_counter() - t0, files)
    return {
        "config_hash": h,
        "method1_ranking": [r.tag for r in sorted(result.rows, key=lambda r: r.rank_m1)],
        "method2_ranking": [r.tag for r in sorted(result.rows, key=lambda r: r.rank_m2)],
        "spearman": result.spearman,
        "nmi": result.nmi,
    }


RUNNERS = {"train-expert": run_train_expert, "train-airl": run_train_airl, "analyze": run_analyze}


def plan(cfg: PipelineConfig, root: Path, stages=STAGES, resume=True) -> list[tuple[str, str]]:
    """What each stage would do: ``run`` or ``skip`` (already complete, artifacts intact)."""
    manifest = Manifest.load(root) if (root / "manifest.json").exists() else Manifest(root)
    out, upstream_rerun = [], False
    for stage in stages:
        done = (
            resume and not upstream_rerun
            and manifest.is_complete(stage, cfg.stage_hash(stage))
            and manifest.artifacts_intact(stage)
        )
        out.append((stage, "skip" if done else "run"))
        upstream_rerun = upstream_rerun or not done
    return out


def run_stages(cfg: PipelineConfig, root, stages=STAGES, force=False, resume=True) -> dict:
    """Run ``stages`` in order under the directory lock; returns per-stage summaries."""
    root = Path(root)
    results = {}
    with artifact_lock(root):
        manifest = Manifest.load(root)
        (root / "config.yaml").write_text(dump_config(cfg))
        steps = plan(cfg, root, stages, resume=resume)
        for stage, action in steps:
            if action == "skip":
                log.info("%s: complete, skipping", stage)
                results[stage] = "skipped"
                continue
            log.info("%s: running", stage)
            results[stage] = RUNNERS[stage](cfg, root, manifest, force)
    return results


__all__ = [
    "ACTION_NAMES", "Manifest", "STAGES", "airl_settings", "artifact_lock", "build_env",
    "heldout_sets", "label_grid_steps",
    "plan", "read_curves", "run_analyze", "run_stages", "run_train_airl", "run_train_expert",
    "sha256_file",
]
