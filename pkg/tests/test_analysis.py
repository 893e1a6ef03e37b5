import csv
import math
import warnings
from collections import defaultdict

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from airl_interp.analysis import (
    RewardRow,
    avg_method1,
    avg_method2,
    build_feature_table,
    build_reward_table,
    nmi_from_joint,
    normalize_rewards,
    normalized_mi,
    rank_agreement,
    rank_tags,
    summarize_pos,
)
from airl_interp.analysis.report import build_report, nmi_scores
from airl_interp.errors import DataError, DegenerateInputWarning, PipelineError
from airl_interp.trajectories import Step, Trajectory

# -- softmax normalization -------------------------------------------------------

finite = st.floats(-50.0, 50.0, allow_nan=False)


@settings(max_examples=1000)
@given(st.lists(finite, min_size=1, max_size=12), st.floats(-100.0, 100.0))
def test_normalized_rewards_are_a_shift_invariant_distribution(raw, shift):
    p = normalize_rewards(raw)
    assert np.all(p > 0)
    assert abs(math.fsum(p) - 1.0) < 1e-9
    np.testing.assert_allclose(normalize_rewards(np.array(raw) + shift), p, rtol=1e-9, atol=1e-12)


def test_normalization_of_extreme_rewards_stays_finite():
    p = normalize_rewards([1000.0, 0.0, -1000.0])
    assert np.all(np.isfinite(p)) and p[0] == pytest.approx(1.0)


def test_normalization_rejects_bad_input():
    with pytest.raises(DataError):
        normalize_rewards([])
    with pytest.raises(DataError, match="t7"):
        normalize_rewards([0.0, np.nan], "t7")


# -- the two per-tag averages ----------------------------------------------------

def rows_from(occurrences):
    """``occurrences``: (trajectory_id, surface, tag, normalized_reward) tuples."""
    return [RewardRow(t, i, w, s, 0.0, r) for i, (t, w, s, r) in enumerate(occurrences)]


def brute_force(rows):
    """Direct double loop over words and trajectories."""
    tags = sorted({r.token_tag for r in rows})
    trajs = sorted({r.trajectory_id for r in rows})
    m1, m2 = {}, {}
    for s in tags:
        n_s = sum(1 for r in rows if r.token_tag == s)
        words = sorted({r.token_surface for r in rows if r.token_tag == s})
        a1 = a2 = 0.0
        for w in words:
            n_w = sum(1 for r in rows if r.word == (w, s))
            total = 0.0
            for tau in trajs:
                total += sum(r.normalized_reward for r in rows if r.word == (w, s) and r.trajectory_id == tau)
            a1 += total / n_w
            a2 += total
        m1[s], m2[s] = a1 / n_s, a2 / n_s
    return m1, m2


def test_hand_example():
    rows = rows_from([("t1", "w1", "N", 0.25), ("t2", "w1", "N", 0.15), ("t1", "w2", "N", 0.3)])
    ft = build_feature_table(rows)
    assert avg_method1(rows, ft)["N"] == pytest.approx(0.1667, abs=1e-4)
    assert avg_method2(rows, ft)["N"] == pytest.approx(0.2333, abs=1e-4)


def test_single_occurrence_methods_coincide():
    rows = rows_from([("t", "w", "N", 0.42)])
    ft = build_feature_table(rows)
    assert avg_method1(rows, ft) == avg_method2(rows, ft) == {"N": 0.42}


instance = st.lists(
    st.tuples(
        st.sampled_from(["t0", "t1", "t2", "t3", "t4"]),
        st.sampled_from(["a", "b", "c", "d", "e", "run"]),
        st.sampled_from(["T0", "T1", "T2", "T3", "T4", "T5", "T6", "T7", "T8", "T9"]),
        st.floats(0.0, 1.0),
    ),
    min_size=1,
    max_size=50,
)


@settings(max_examples=200)
@given(instance)
def test_methods_match_brute_force(occ):
    rows = rows_from(occ)
    ft = build_feature_table(rows)
    m1, m2 = brute_force(rows)
    got1, got2 = avg_method1(rows, ft), avg_method2(rows, ft)
    assert set(got1) == set(m1) == set(got2)
    for s in m1:
        assert abs(got1[s] - m1[s]) < 1e-12
        assert abs(got2[s] - m2[s]) < 1e-12


@settings(max_examples=200)
@given(st.lists(st.tuples(st.sampled_from("NVJ"), st.floats(0.0, 1.0)), min_size=1, max_size=30))
def test_methods_are_identical_when_every_word_occurs_once(items):
    rows = rows_from([(f"t{i}", f"w{i}", tag, r) for i, (tag, r) in enumerate(items)])
    ft = build_feature_table(rows)
    assert avg_method1(rows, ft) == avg_method2(rows, ft)


def test_same_surface_with_two_tags_is_counted_separately():
    rows = rows_from([("t", "run", "NN", 0.6), ("t", "run", "VB", 0.4)])
    ft = build_feature_table(rows)
    assert set(ft) == {("run", "NN"), ("run", "VB")}
    assert avg_method1(rows, ft) == {"NN": 0.6, "VB": 0.4}


def test_word_missing_from_feature_table_is_an_error():
    rows = rows_from([("t", "w", "N", 0.5)])
    with pytest.raises(DataError):
        avg_method1(rows, {})


# -- ranking ---------------------------------------------------------------------

def test_ranking_order_and_ties():
    assert rank_tags({"A": 0.3, "B": 0.1}) == ["A", "B"]
    assert rank_tags({"B": 0.2, "A": 0.2, "C": 0.5}) == ["C", "A", "B"]


@given(st.dictionaries(st.sampled_from("ABCDEFG"), st.floats(-5, 5), min_size=1), st.floats(0.1, 10), st.floats(-3, 3))
def test_ranking_is_invariant_to_positive_affine_maps(avg, scale, offset):
    moved = {k: v * scale + offset for k, v in avg.items()}
    # only distinct values survive the map unchanged in float arithmetic
    if len(set(moved.values())) == len(set(avg.values())):
        assert rank_tags(moved) == rank_tags(avg)


def test_rank_agreement_is_spearman():
    assert rank_agreement(["A", "B", "C"], ["A", "B", "C"]) == pytest.approx(1.0)
    assert rank_agreement(["A", "B", "C"], ["C", "B", "A"]) == pytest.approx(-1.0)
    assert math.isnan(rank_agreement(["A"], ["A"]))


def test_summary_rows_are_in_method1_order():
    rows = rows_from([("t", "a", "X", 0.7), ("t", "b", "Y", 0.2), ("u", "a", "X", 0.1)])
    summary, rho = summarize_pos(rows, build_feature_table(rows))
    assert [r.rank_m1 for r in summary] == [1, 2]
    assert {r.tag: r.n_s for r in summary} == {"X": 2, "Y": 1}
    with pytest.raises(DataError):
        summarize_pos([], {})


# -- NMI -------------------------------------------------------------------------

def test_nmi_of_identical_series_is_one(rng):
    x = rng.integers(0, 5, size=500)
    assert normalized_mi(x, x) == pytest.approx(1.0, abs=1e-9)
    assert normalized_mi(x, x, normalization="arithmetic") == pytest.approx(1.0, abs=1e-9)


def test_nmi_of_independent_series_is_small():
    rng = np.random.default_rng(0)
    x, y = rng.normal(size=100_000), rng.normal(size=100_000)
    assert normalized_mi(x, y, bins=8) < 0.05


def test_nmi_two_by_two_table_by_direct_summation():
    joint = np.array([[0.4, 0.1], [0.1, 0.4]])
    mi = 2 * 0.4 * math.log(0.4 / 0.25) + 2 * 0.1 * math.log(0.1 / 0.25)
    assert mi == pytest.approx(0.19274, abs=1e-5)
    assert nmi_from_joint(joint) == pytest.approx(mi / math.log(2), abs=1e-12)
    assert nmi_from_joint(joint) == pytest.approx(0.2781, abs=1e-3)


@given(st.lists(st.tuples(st.integers(0, 4), st.integers(0, 3)), min_size=2, max_size=200))
def test_nmi_is_symmetric_and_bounded(pairs):
    x = np.array([p[0] for p in pairs])
    y = np.array([p[1] for p in pairs])
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", DegenerateInputWarning)
        a, b = normalized_mi(x, y), normalized_mi(y, x)
    assert abs(a - b) < 1e-12
    assert 0.0 <= a <= 1.0 + 1e-9


def test_constant_series_gives_zero_with_warning():
    with pytest.warns(DegenerateInputWarning):
        assert normalized_mi(np.zeros(20), np.arange(20.0)) == 0.0


def test_nmi_input_checks():
    with pytest.raises(DataError):
        normalized_mi(np.arange(3), np.arange(4))
    with pytest.raises(DataError):
        nmi_from_joint(np.array([[-1.0, 2.0]]))
    with pytest.raises(ValueError):
        nmi_from_joint(np.eye(2), normalization="max")


def test_categorical_tags_are_used_as_is():
    tags = np.array(["NN", "VB"] * 50)
    reward = np.where(tags == "NN", 1.0, 2.0) + np.linspace(0, 0.1, 100)
    assert normalized_mi(tags, reward, bins=2, y_kind="binned") == pytest.approx(1.0, abs=1e-9)


# -- report ----------------------------------------------------------------------

def scored_trajectories(seed=0, n=30):
    rng = np.random.default_rng(seed)
    words = [("can", "MD"), ("will", "MD"), ("storm", "NN"), ("run", "NN"), ("run", "VB"), ("the", "DT")]
    out = []
    for i in range(n):
        steps = []
        for _ in range(int(rng.integers(1, 6))):
            w, t = words[int(rng.integers(len(words)))]
            bonus = 1.0 if t == "MD" else 0.0
            steps.append(Step(np.zeros(2), 0, np.zeros(2), w, t, {"reward_disc": float(rng.normal() + bonus)}))
        steps.append(Step(np.zeros(2), 1, np.zeros(2), extra={"reward_disc": 5.0}))  # stop action
        out.append(Trajectory(f"traj-{i:05d}", steps, 0.0))
    return out


def read_csv(path):
    with open(path) as fh:
        lines = [ln for ln in fh if not ln.startswith("#")]
    return list(csv.DictReader(lines))


def test_reward_table_skips_stop_steps_and_sums_to_one():
    trajs = scored_trajectories()
    table = build_reward_table(trajs)
    assert all(r.token_surface is not None for r in table)
    per = defaultdict(list)
    for r in table:
        per[r.trajectory_id].append(r.normalized_reward)
    assert all(abs(math.fsum(v) - 1.0) < 1e-9 for v in per.values())


def test_unscored_trajectories_are_rejected():
    tr = Trajectory("x", [Step(np.zeros(1), 0, np.zeros(1), "a", "NN")], 0.0)
    with pytest.raises(DataError, match="scored"):
        build_reward_table([tr])


def test_report_files_and_contents(tmp_path):
    res = build_report(scored_trajectories(), tmp_path, config_hash="abc123", provenance={"seed": 0})
    names = {p.relative_to(tmp_path).as_posix() for p in res.files}
    assert {"reward_table.csv", "feature_table.csv", "pos_summary.csv", "mi_scores.csv", "report.md",
            "figures/pos_method1.png", "figures/pos_method2.png"} <= names
    pos = read_csv(tmp_path / "pos_summary.csv")
    assert list(pos[0]) == ["tag", "n_s", "avg_m1", "avg_m2", "rank_m1", "rank_m2"]
    assert pos[0]["tag"] == res.rows[0].tag
    text = (tmp_path / "report.md").read_text()
    for needle in ("Method 1", "Method 2", "Spearman", "appearances", "complexity", "abc123"):
        assert needle in text
    assert (tmp_path / "mi_scores.csv").read_text().startswith("# config_hash=abc123\n")


def test_report_nmi_matches_standalone_recomputation(tmp_path):
    res = build_report(scored_trajectories(), tmp_path, bins=4)
    rows = read_csv(tmp_path / "reward_table.csv")
    feats = {(f["token_surface"], f["token_tag"]): f for f in read_csv(tmp_path / "feature_table.csv")}
    reward = np.array([float(r["normalized_reward"]) for r in rows])
    series = {
        "appearances": np.array([int(feats[(r["token_surface"], r["token_tag"])]["n_w"]) for r in rows]),
        "complexity": np.array([int(feats[(r["token_surface"], r["token_tag"])]["complexity"]) for r in rows]),
        "tag": np.array([r["token_tag"] for r in rows]),
    }
    for name, x in series.items():
        assert res.nmi[name] == normalized_mi(x, reward, bins=4, y_kind="binned")


def test_report_is_byte_identical_on_rerun(tmp_path):
    a, b = tmp_path / "a", tmp_path / "b"
    ra = build_report(scored_trajectories(), a, figure_format="svg")
    build_report(scored_trajectories(), b, figure_format="svg")
    for p in ra.files:
        rel = p.relative_to(a)
        assert p.read_bytes() == (b / rel).read_bytes(), rel


def test_empty_input_is_a_pipeline_error_and_writes_nothing(tmp_path):
    with pytest.raises(PipelineError):
        build_report([], tmp_path / "out")
    assert not (tmp_path / "out").exists()


def test_nmi_notes_report_degenerate_characteristics():
    rows = rows_from([("t", "w", "N", 0.5), ("u", "w", "N", 0.5)])
    _, notes = nmi_scores(rows, build_feature_table(rows), bins=2)
    assert notes and all("NMI reported as 0" in n for n in notes)
