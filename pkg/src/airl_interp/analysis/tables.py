"""Per-trajectory reward normalization and per-tag aggregation.

Notation for the two averages over tag ``s``::

    method1(s) = (1/n_s) * sum_{w in V_s} (1/n_w) * sum_{tau} r_{w,tau}
    method2(s) = (1/n_s) * sum_{w in V_s}           sum_{tau} r_{w,tau}

``n_s`` counts occurrences of tag ``s`` over all trajectories, ``n_w`` counts
occurrences of word ``w = (surface, tag)``, and ``r_{w,tau}`` is the summed
normalized reward of ``w`` inside trajectory ``tau``.
"""

from __future__ import annotations

import math
from collections import defaultdict
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np
from scipy.stats import spearmanr

from ..errors import DataError


def normalize_rewards(rewards, trajectory_id=None) -> np.ndarray:
    """Softmax of one trajectory's raw rewards (max-subtracted)."""
    r = np.asarray(rewards, dtype=np.float64)
    if r.ndim != 1 or r.size == 0:
        raise DataError(f"trajectory {trajectory_id!r}: need at least one reward")
    if not np.all(np.isfinite(r)):
        raise DataError(f"trajectory {trajectory_id!r}: non-finite reward")
    e = np.exp(r - r.max())
    return e / e.sum()


class RewardRow(NamedTuple):
    trajectory_id: str
    step_index: int
    token_surface: str
    token_tag: str
    raw_reward: float
    normalized_reward: float

    @property
    def word(self) -> tuple:
        return (self.token_surface, self.token_tag)


def build_reward_table(trajectories, reward_field="reward_disc") -> list[RewardRow]:
    """One row per emitted word, rewards softmax-normalized within each trajectory.

    Steps without a token (the stop action) are not words and are left out
    before normalizing.
    """
    rows = []
    for tr in trajectories:
        steps = [(i, st) for i, st in enumerate(tr.steps) if st.token_surface is not None]
        if not steps:
            continue
        try:
            raw = [st.extra[reward_field] for _, st in steps]
        except KeyError:
            raise DataError(f"trajectory {tr.id!r} has no {reward_field!r} field; was it scored?")
        norm = normalize_rewards(raw, tr.id)
        for (i, st), r, p in zip(steps, raw, norm):
            rows.append(RewardRow(tr.id, i, st.token_surface, st.token_tag, float(r), float(p)))
    return rows


@dataclass(frozen=True)
class WordFeatures:
    surface: str
    tag: str
    n_w: int
    complexity: int


def build_feature_table(reward_table, vocab=None) -> dict:
    """Words that occur in the table, with appearance counts and character counts.

    When a vocabulary is supplied, every word must belong to it.
    """
    known = None if vocab is None else set(vocab.index)
    counts = defaultdict(int)
    for row in reward_table:
        if known is not None and row.word not in known:
            raise DataError(f"token {row.token_surface!r}/{row.token_tag} not in vocabulary")
        counts[row.word] += 1
    return {
        w: WordFeatures(w[0], w[1], n, max(1, len(w[0])))
        for w, n in sorted(counts.items())
    }


def tag_counts(reward_table) -> dict:
    n_s = defaultdict(int)
    for row in reward_table:
        n_s[row.token_tag] += 1
    return dict(sorted(n_s.items()))


def _word_totals(reward_table, feature_table):
    totals = defaultdict(float)
    for row in reward_table:
        if row.word not in feature_table:
            raise DataError(f"token {row.token_surface!r}/{row.token_tag} missing from feature table")
        totals[row.word] += row.normalized_reward
    return totals


def avg_method1(reward_table, feature_table) -> dict:
    """Per-tag average that first divides each word's total by its count."""
    totals = _word_totals(reward_table, feature_table)
    n_s = tag_counts(reward_table)
    acc = defaultdict(float)
    for w, total in totals.items():
        acc[w[1]] += total / feature_table[w].n_w
    return {s: acc[s] / n_s[s] for s in n_s}


def avg_method2(reward_table, feature_table) -> dict:
    """Per-tag average of word totals, without the per-word count division."""
    totals = _word_totals(reward_table, feature_table)
    n_s = tag_counts(reward_table)
    acc = defaultdict(float)
    for w, total in totals.items():
        acc[w[1]] += total
    return {s: acc[s] / n_s[s] for s in n_s}


def rank_tags(averages: dict) -> list:
    """Tags by descending average; equal averages fall back to tag name order."""
    return sorted(averages, key=lambda s: (-averages[s], s))


def rank_agreement(order_a, order_b) -> float:
    """Spearman correlation of two rankings over the same tags (nan if < 2 tags)."""
    tags = sorted(order_a)
    if len(tags) < 2:
        return float("nan")
    ra = {t: i for i, t in enumerate(order_a)}
    rb = {t: i for i, t in enumerate(order_b)}
    rho = spearmanr([ra[t] for t in tags], [rb[t] for t in tags]).statistic
    return float(rho)


@dataclass(frozen=True)
class PosRow:
    tag: str
    n_s: int
    avg_m1: float
    avg_m2: float
    rank_m1: int
    rank_m2: int


def summarize_pos(reward_table, feature_table) -> tuple[list, float]:
    """Rows sorted by Method-1 rank, plus the Spearman agreement of the two rankings."""
    if not reward_table:
        raise DataError("empty reward table")
    m1 = avg_method1(reward_table, feature_table)
    m2 = avg_method2(reward_table, feature_table)
    o1, o2 = rank_tags(m1), rank_tags(m2)
    r1 = {t: i + 1 for i, t in enumerate(o1)}
    r2 = {t: i + 1 for i, t in enumerate(o2)}
    n_s = tag_counts(reward_table)
    rows = [PosRow(t, n_s[t], m1[t], m2[t], r1[t], r2[t]) for t in o1]
    return rows, rank_agreement(o1, o2)


def is_close_sum(values, target=1.0, tol=1e-9) -> bool:
    return math.isclose(math.fsum(values), target, abs_tol=tol)
