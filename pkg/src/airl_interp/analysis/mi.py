"""Normalized mutual information from plug-in histogram entropies."""

from __future__ import annotations

import warnings

import numpy as np

from ..errors import DataError, DegenerateInputWarning


def quantile_bins(values, bins: int) -> np.ndarray:
    """Equal-frequency bin codes in ``0 .. bins-1`` (ties share a bin)."""
    v = np.asarray(values, dtype=np.float64)
    edges = np.quantile(v, np.linspace(0.0, 1.0, bins + 1)[1:-1])
    return np.searchsorted(edges, v, side="right")


def discretize(values, bins: int, kind: str = "auto") -> np.ndarray:
    """Integer codes for a series.

    ``categorical`` keeps every distinct value as its own code. ``auto`` does the
    same for non-numeric data or numeric data with at most ``bins`` distinct
    values, and otherwise falls back to equal-frequency bins. ``binned`` always
    bins.
    """
    arr = np.asarray(values)
    numeric = np.issubdtype(arr.dtype, np.number)
    if kind == "categorical" or (kind == "auto" and (not numeric or np.unique(arr).size <= bins)):
        return np.unique(arr, return_inverse=True)[1].ravel()
    if kind not in ("auto", "binned"):
        raise ValueError(f"unknown series kind {kind!r}")
    if not numeric:
        raise DataError("cannot bin a non-numeric series")
    if bins < 2:
        raise ValueError("bins must be >= 2 for continuous series")
    return quantile_bins(arr, bins)


def _entropy(p: np.ndarray) -> float:
    p = p[p > 0]
    return float(-(p * np.log(p)).sum())


def nmi_from_joint(joint, normalization: str = "geometric") -> float:
    """NMI of a joint probability (or count) table.

    ``geometric``: I / sqrt(H(X) H(Y)); ``arithmetic``: 2 I / (H(X) + H(Y)).
    A constant marginal makes dependence undefined: returns 0 with a warning.
    """
    joint = np.asarray(joint, dtype=np.float64)
    if joint.ndim != 2 or joint.sum() <= 0 or np.any(joint < 0):
        raise DataError("joint table must be a non-negative 2-d array with positive mass")
    pxy = joint / joint.sum()
    px, py = pxy.sum(axis=1), pxy.sum(axis=0)
    hx, hy = _entropy(px), _entropy(py)
    if hx <= 0.0 or hy <= 0.0:
        warnings.warn("zero-entropy marginal; NMI reported as 0", DegenerateInputWarning, stacklevel=2)
        return 0.0
    nz = pxy > 0
    mi = float((pxy[nz] * np.log(pxy[nz] / np.outer(px, py)[nz])).sum())
    mi = max(mi, 0.0)
    if normalization == "geometric":
        return mi / np.sqrt(hx * hy)
    if normalization == "arithmetic":
        return 2.0 * mi / (hx + hy)
    raise ValueError(f"unknown normalization {normalization!r}")


def normalized_mi(x, y, bins: int = 8, normalization: str = "geometric", x_kind="auto", y_kind="auto") -> float:
    """NMI between two aligned series after discretization (see :func:`discretize`)."""
    x, y = np.asarray(x), np.asarray(y)
    if x.shape != y.shape or x.ndim != 1 or x.size == 0:
        raise DataError(f"series must be aligned, 1-d and non-empty (got {x.shape} and {y.shape})")
    cx = discretize(x, bins, x_kind)
    cy = discretize(y, bins, y_kind)
    joint = np.zeros((cx.max() + 1, cy.max() + 1))
    np.add.at(joint, (cx, cy), 1.0)
    return nmi_from_joint(joint, normalization)
