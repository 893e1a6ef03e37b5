"""Step-3 report: tables, NMI scores, figures and a Markdown summary.

Everything written here is a pure function of the scored trajectories and
the arguments, so reruns produce identical bytes.
"""

from __future__ import annotations

import csv
import math
import warnings
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from ..errors import DegenerateInputWarning, PipelineError
from .mi import normalized_mi
from .plotting import pos_figures
from .tables import build_feature_table, build_reward_table, rank_agreement, summarize_pos

NMI_FEATURES = ("appearances", "complexity", "tag")


@dataclass
class ReportResult:
    rows: list
    spearman: float
    nmi: dict
    nmi_alt: dict
    mode_agreement: dict = field(default_factory=dict)
    files: list = field(default_factory=list)
    warnings: list = field(default_factory=list)


def _fmt(x) -> str:
    if isinstance(x, float):
        return "nan" if math.isnan(x) else repr(x)
    return str(x)


def _write_csv(path, header, rows, config_hash=""):
    with open(path, "w", newline="") as fh:
        if config_hash:
            fh.write(f"# config_hash={config_hash}\n")
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([_fmt(v) for v in row])


def nmi_scores(reward_table, feature_table, bins=8, normalization="geometric") -> tuple[dict, list]:
    """NMI of each word characteristic against the normalized reward, per occurrence."""
    reward = np.array([r.normalized_reward for r in reward_table])
    series = {
        "appearances": np.array([feature_table[r.word].n_w for r in reward_table]),
        "complexity": np.array([feature_table[r.word].complexity for r in reward_table]),
        "tag": np.array([r.token_tag for r in reward_table]),
    }
    out, notes = {}, []
    for name in NMI_FEATURES:
        with warnings.catch_warnings(record=True) as caught:
            warnings.simplefilter("always", DegenerateInputWarning)
            out[name] = normalized_mi(series[name], reward, bins=bins, normalization=normalization, y_kind="binned")
        notes.extend(f"{name}: {w.message}" for w in caught if issubclass(w.category, DegenerateInputWarning))
    return out, notes


def _mode_agreement(trajectories, feature_table):
    """Spearman between tag rankings scored with the novice and with the expert policy."""
    steps = [st for tr in trajectories for st in tr.steps]
    if not steps or not all("reward_disc_expert" in st.extra and "reward_disc_novice" in st.extra for st in steps):
        return {}
    out = {}
    tables = {m: build_reward_table(trajectories, f"reward_disc_{m}") for m in ("novice", "expert")}
    summaries = {m: summarize_pos(t, feature_table) for m, t in tables.items()}
    for label, rank_key in (("method1", "rank_m1"), ("method2", "rank_m2")):
        orders = {
            m: [r.tag for r in sorted(rows, key=lambda r: getattr(r, rank_key))]
            for m, (rows, _) in summaries.items()
        }
        out[label] = (rank_agreement(orders["novice"], orders["expert"]), orders["novice"], orders["expert"])
    return out


def build_report(
    trajectories,
    out_dir,
    *,
    vocab=None,
    bins: int = 8,
    normalization: str = "geometric",
    figure_format: str = "png",
    provenance: dict | None = None,
    stats: dict | None = None,
    reward_field: str = "reward_disc",
    config_hash: str = "",
) -> ReportResult:
    """Write CSV tables, figures and ``report.md`` into ``out_dir``."""
    if not trajectories:
        raise PipelineError("no scored trajectories to analyze")
    reward_table = build_reward_table(trajectories, reward_field)
    if not reward_table:
        raise PipelineError("scored trajectories contain no emitted words")
    feature_table = build_feature_table(reward_table, vocab)
    rows, rho = summarize_pos(reward_table, feature_table)
    other = "arithmetic" if normalization == "geometric" else "geometric"
    nmi, notes = nmi_scores(reward_table, feature_table, bins, normalization)
    nmi_alt, _ = nmi_scores(reward_table, feature_table, bins, other)
    modes = _mode_agreement(trajectories, feature_table)
    provenance = dict(provenance or {})
    if config_hash:
        provenance.setdefault("config_hash", config_hash)

    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    files = []
    _write_csv(out / "reward_table.csv",
               ["trajectory_id", "step_index", "token_surface", "token_tag", "raw_reward", "normalized_reward"],
               reward_table, config_hash)
    _write_csv(out / "feature_table.csv", ["token_surface", "token_tag", "n_w", "complexity"],
               [(f.surface, f.tag, f.n_w, f.complexity) for f in feature_table.values()], config_hash)
    _write_csv(out / "pos_summary.csv",
               ["tag", "n_s", "avg_m1", "avg_m2", "rank_m1", "rank_m2"],
               [(r.tag, r.n_s, r.avg_m1, r.avg_m2, r.rank_m1, r.rank_m2) for r in rows], config_hash)
    _write_csv(out / "mi_scores.csv", ["characteristic", "nmi", "normalization", "bins"],
               [(k, nmi[k], normalization, bins) for k in NMI_FEATURES], config_hash)
    files += [out / n for n in ("reward_table.csv", "feature_table.csv", "pos_summary.csv", "mi_scores.csv")]
    files += pos_figures(rows, out / "figures", figure_format, config_hash)

    text = _markdown(rows, rho, nmi, nmi_alt, normalization, other, bins, modes, notes,
                     reward_table, feature_table, trajectories, provenance, stats or {}, figure_format)
    (out / "report.md").write_text(text)
    files.append(out / "report.md")
    return ReportResult(rows, rho, nmi, nmi_alt, modes, files, notes)


def _num(x, digits=4) -> str:
    if isinstance(x, float):
        return "nan" if math.isnan(x) else f"{x:.{digits}f}"
    return str(x)


def _markdown(rows, rho, nmi, nmi_alt, norm, other, bins, modes, notes,
              reward_table, feature_table, trajectories, provenance, stats, fmt) -> str:
    lines = ["# Discriminator reward analysis", ""]
    lines += ["## Provenance", ""]
    for k in sorted(provenance):
        lines.append(f"- {k}: `{provenance[k]}`")
    lines += ["", "## Dataset", ""]
    lengths = [len(tr.steps) for tr in trajectories]
    base = {
        "trajectories": len(trajectories),
        "transitions": int(sum(lengths)),
        "mean trajectory length": float(np.mean(lengths)),
        "word occurrences": len(reward_table),
        "distinct words": len(feature_table),
        "tags observed": len(rows),
    }
    for k, v in list(base.items()) + sorted(stats.items()):
        lines.append(f"- {k}: {_num(v)}")

    lines += ["", "## Average normalized reward per tag", ""]
    lines.append("Method 1 divides each word's summed reward by its appearance count before")
    lines.append("averaging over the tag; Method 2 does not.")
    lines += ["", "| tag | n_s | Method 1 | rank | Method 2 | rank |", "|---|---:|---:|---:|---:|---:|"]
    for r in rows:
        lines.append(f"| {r.tag} | {r.n_s} | {r.avg_m1:.6f} | {r.rank_m1} | {r.avg_m2:.6f} | {r.rank_m2} |")
    o1 = [r.tag for r in sorted(rows, key=lambda r: r.rank_m1)]
    o2 = [r.tag for r in sorted(rows, key=lambda r: r.rank_m2)]
    lines += [
        "",
        f"- Method 1 ranking: {' > '.join(o1)}",
        f"- Method 2 ranking: {' > '.join(o2)}",
        f"- Spearman agreement of the two rankings: {_num(rho)}",
        "",
        f"![Method 1](figures/pos_method1.{fmt})",
        "",
        f"![Method 2](figures/pos_method2.{fmt})",
    ]

    lines += ["", "## Normalized mutual information with the normalized reward", ""]
    lines += [f"Rewards use {bins} equal-frequency bins; counts with at most {bins} distinct values stay categorical.", ""]
    lines += [f"| characteristic | NMI ({norm}) | NMI ({other}) |", "|---|---:|---:|"]
    for k in NMI_FEATURES:
        lines.append(f"| {k} | {_num(nmi[k])} | {_num(nmi_alt[k])} |")
    for n in notes:
        lines.append(f"\n> degenerate input, {n}")

    lines += ["", "## Scoring policy comparison", ""]
    if modes:
        lines.append("The discriminator reward depends on log pi(a|s). The table compares tag rankings")
        lines.append("computed with the novice policy against rankings computed with the expert policy.")
        lines += ["", "| method | novice-policy ranking | expert-policy ranking | Spearman |", "|---|---|---|---:|"]
        for label in ("method1", "method2"):
            r, a, b = modes[label]
            lines.append(f"| {label} | {' > '.join(a)} | {' > '.join(b)} | {_num(r)} |")
    else:
        lines.append("Only one scoring policy was recorded; no comparison available.")
    lines.append("")
    return "\n".join(lines)
