"""Bar charts for the per-tag averages, rendered headless with byte-stable output."""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402

_STYLE = {
    "font.size": 9,
    "axes.spines.top": False,
    "axes.spines.right": False,
    "svg.hashsalt": "airl-interp",
    "svg.fonttype": "none",
}


def _metadata(fmt: str, note: str = "") -> dict:
    # strip timestamps and version strings so reruns give identical bytes
    if fmt == "png":
        return {"Software": None, "Description": note or None}
    if fmt == "svg":
        return {"Date": None, "Creator": None, "Description": note or None}
    if fmt == "pdf":
        return {"CreationDate": None, "ModDate": None, "Producer": None, "Creator": None, "Subject": note or None}
    return {}


def bar_chart(path, labels, values, title: str, ylabel: str, highlight=None, note: str = "") -> Path:
    """Vertical bars in the given order; ``highlight`` names one label to color differently."""
    path = Path(path)
    fmt = path.suffix.lstrip(".").lower()
    with plt.rc_context(_STYLE):
        fig, ax = plt.subplots(figsize=(6.0, 3.2), dpi=100)
        colors = ["#c44e52" if lab == highlight else "#4c72b0" for lab in labels]
        ax.bar(range(len(values)), values, color=colors)
        ax.set_xticks(range(len(labels)))
        ax.set_xticklabels(labels, rotation=45 if len(labels) > 10 else 0, ha="right" if len(labels) > 10 else "center")
        ax.set_title(title)
        ax.set_ylabel(ylabel)
        fig.tight_layout()
        fig.savefig(path, format=fmt, metadata=_metadata(fmt, note))
        plt.close(fig)
    return path


def pos_figures(rows, out_dir, fmt="png", config_hash="") -> list[Path]:
    """One chart per averaging method, tags in that method's rank order."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    paths = []
    for key, rank_key, name in (("avg_m1", "rank_m1", "method1"), ("avg_m2", "rank_m2", "method2")):
        ordered = sorted(rows, key=lambda r: getattr(r, rank_key))
        top = ordered[0].tag if ordered else None
        paths.append(bar_chart(
            out_dir / f"pos_{name}.{fmt}",
            [r.tag for r in ordered],
            [getattr(r, key) for r in ordered],
            title=f"Average normalized reward per tag ({name})",
            ylabel="average normalized reward",
            highlight=top,
            note=f"config_hash={config_hash}" if config_hash else "",
        ))
    return paths
