import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from airl_interp.airl import (
    AirlBatch,
    AirlConfig,
    Discriminator,
    TransitionSet,
    airl_reward,
    balanced_accuracy,
    disc_logit,
    disc_loss,
    f_value,
    score_trajectories,
    score_trajectory,
    train_airl,
)
from airl_interp.env import GridWorld
from airl_interp.errors import ContractError, NumericError
from airl_interp.numkit import sigmoid
from airl_interp.rl import Policy, collect_trajectories, uniform_policy

from conftest import central_diff, rel_err


def random_disc(seed, state_dim=5, actions=3, gamma=0.9, hidden=(7,)):
    """A discriminator with non-zero output layers so ``f`` is not trivially 0."""
    disc = Discriminator.init(state_dim, actions, gamma, hidden, seed=seed)
    rng = np.random.default_rng(seed + 1)
    for net in (disc.g, disc.h):
        net.weights[-1].data[...] = rng.normal(size=net.weights[-1].shape)
        net.biases[-1].data[...] = rng.normal(size=net.biases[-1].shape)
    return disc


def random_transitions(rng, n, state_dim=5, actions=3):
    return (
        rng.normal(size=(n, state_dim)),
        rng.integers(0, actions, size=n),
        rng.normal(size=(n, state_dim)),
    )


@given(st.integers(0, 2**31 - 1))
def test_f_is_g_plus_discounted_potential_difference(seed):
    rng = np.random.default_rng(seed)
    disc = random_disc(seed % 1000, gamma=float(rng.uniform(0.1, 0.99)))
    s, a, s2 = random_transitions(rng, 6)
    onehot = np.eye(3)[a]
    g = disc.g.predict(np.concatenate([s, onehot], axis=1))[:, 0]
    manual = g + disc.gamma * disc.h.predict(s2)[:, 0] - disc.h.predict(s)[:, 0]
    np.testing.assert_allclose(f_value(disc, s, a, s2), manual, rtol=0, atol=1e-12)
    assert f_value(disc, s[0], a[0], s2[0]) == pytest.approx(manual[0], abs=1e-12)


def test_fresh_discriminator_outputs_zero(rng):
    disc = Discriminator.init(5, 3, 0.9, (8,), seed=0)
    s, a, s2 = random_transitions(rng, 10)
    assert np.all(disc.f(s, a, s2) == 0.0)


@given(st.integers(0, 2**31 - 1), st.floats(-10.0, 10.0))
def test_logit_matches_naive_probability_form(seed, gap):
    rng = np.random.default_rng(seed)
    disc = random_disc(seed % 1000)
    s, a, s2 = random_transitions(rng, 1)
    f = disc.f(s, a, s2)[0]
    log_pi = f - gap  # so that f - log pi == gap, |gap| <= 10
    naive = np.exp(f) / (np.exp(f) + np.exp(log_pi))
    z = disc_logit(disc, s[0], a[0], s2[0], log_pi)
    assert abs(sigmoid(np.array(z)) - naive) < 1e-9
    assert abs(z - (np.log(naive) - np.log1p(-naive))) < 1e-9


def test_probability_is_exactly_half_when_f_equals_log_pi(rng):
    disc = random_disc(3)
    s, a, s2 = random_transitions(rng, 20)
    f = disc.f(s, a, s2)
    z = disc_logit(disc, s, a, s2, f)
    assert np.all(z == 0.0)
    assert np.all(sigmoid(z) == 0.5)


def test_reward_equals_logit(rng):
    disc = random_disc(4)
    s, a, s2 = random_transitions(rng, 8)
    lp = np.log(rng.uniform(0.05, 1.0, size=8))
    np.testing.assert_array_equal(airl_reward(disc, s, a, s2, lp), disc_logit(disc, s, a, s2, lp))


def test_logit_rejects_non_finite_log_pi(rng):
    disc = random_disc(0)
    s, a, s2 = random_transitions(rng, 2)
    with pytest.raises(NumericError):
        disc_logit(disc, s, a, s2, np.array([0.0, -np.inf]))


def test_discriminator_rejects_mismatched_shapes(rng):
    disc = random_disc(0)
    s, a, s2 = random_transitions(rng, 3)
    with pytest.raises(ContractError):
        disc.f(s, a[:2], s2)
    with pytest.raises(ContractError):
        disc.f(s[:, :4], a, s2[:, :4])
    with pytest.raises(ContractError):
        disc.f(s, np.array([0, 1, 3]), s2)


def _batch(rng, disc, n_e=5, n_n=4):
    e = TransitionSet(*random_transitions(rng, n_e))
    n = TransitionSet(*random_transitions(rng, n_n))
    return AirlBatch(e, n, np.log(rng.uniform(0.1, 1, n_e)), np.log(rng.uniform(0.1, 1, n_n)))


def test_disc_loss_matches_naive_cross_entropy(rng):
    disc = random_disc(5)
    b = _batch(rng, disc)
    d_e = sigmoid(disc_logit(disc, b.expert.states, b.expert.actions, b.expert.next_states, b.expert_log_pi))
    d_n = sigmoid(disc_logit(disc, b.novice.states, b.novice.actions, b.novice.next_states, b.novice_log_pi))
    naive = -(np.log(d_e).sum() + np.log(1 - d_n).sum()) / 9
    assert disc_loss(disc, b).item() == pytest.approx(naive, rel=1e-12)


def test_disc_loss_gradient_matches_finite_differences(rng):
    disc = random_disc(6)
    b = _batch(rng, disc)
    disc.zero_grad()
    disc_loss(disc, b).backward()
    for p in disc.parameters():
        assert rel_err(p.grad, central_diff(lambda: disc_loss(disc, b).item(), p.data)) < 1e-6


def test_disc_loss_needs_both_classes(rng):
    disc = random_disc(0)
    b = _batch(rng, disc)
    empty = TransitionSet(b.novice.states[:0], b.novice.actions[:0], b.novice.next_states[:0])
    with pytest.raises(ContractError):
        disc_loss(disc, AirlBatch(b.expert, empty, b.expert_log_pi, np.zeros(0)))


# -- training ---------------------------------------------------------------------

def grid_setup(n=40):
    env = GridWorld(width=3, height=3, goal=(2, 2), start_cells=((0, 0),), max_steps=8)
    expert = Policy.init(env.state_dim, 4, (8,), seed=0)
    return env, expert, collect_trajectories(expert, env, n, seed=1)


def test_zero_iterations_is_chance_level():
    env, _, trajs = grid_setup()
    out = train_airl(trajs, env, AirlConfig(iterations=0))
    assert out.curves == []
    ts = TransitionSet.from_trajectories(trajs)
    rand = TransitionSet.from_trajectories(collect_trajectories(uniform_policy(env.state_dim, 4), env, 40, seed=9))
    assert balanced_accuracy(out.discriminator, out.novice, ts, rand) == 0.5


def test_training_records_one_curve_row_per_iteration():
    env, _, trajs = grid_setup()
    out = train_airl(trajs, env, AirlConfig(iterations=4, episodes_per_iter=3, disc_hidden=(4,), novice_hidden=(4,)))
    assert [r["iteration"] for r in out.curves] == [0, 1, 2, 3]
    assert all(np.isfinite(r["disc_loss"]) and 0 <= r["disc_accuracy"] <= 1 for r in out.curves)


def test_training_is_reproducible():
    env, _, trajs = grid_setup()
    cfg = AirlConfig(iterations=3, episodes_per_iter=3, disc_hidden=(4,), novice_hidden=(4,), seed=7)
    a, b = train_airl(trajs, env, cfg), train_airl(trajs, env, cfg)
    np.testing.assert_array_equal(a.discriminator.g.flat_weights(), b.discriminator.g.flat_weights())
    np.testing.assert_array_equal(a.novice.net.flat_weights(), b.novice.net.flat_weights())
    assert a.curves == b.curves


def test_generator_is_never_updated():
    env, expert, trajs = grid_setup()
    before = expert.net.flat_weights()
    train_airl(trajs, env, AirlConfig(iterations=3, episodes_per_iter=3), generator=expert)
    np.testing.assert_array_equal(expert.net.flat_weights(), before)


def test_gamma_mismatch_and_empty_input_are_rejected():
    env, _, trajs = grid_setup()
    with pytest.raises(ContractError, match="gamma"):
        train_airl(trajs, env, AirlConfig(gamma=0.5))
    with pytest.raises(ContractError):
        train_airl([], env, AirlConfig())


def test_score_trajectory_requires_one_log_prob_per_step():
    env, expert, trajs = grid_setup(2)
    disc = Discriminator.init(env.state_dim, 4, 0.9, (4,), seed=0)
    tr = trajs[0]
    with pytest.raises(ContractError):
        score_trajectory(disc, tr, np.zeros(len(tr.steps) + 1))
    with pytest.raises(ContractError):
        score_trajectory(disc, tr, None)
    assert len(score_trajectory(disc, tr, np.zeros(len(tr.steps)))) == len(tr.steps)


def test_score_trajectories_attaches_both_policy_variants():
    env, expert, trajs = grid_setup(3)
    disc = random_disc(1, state_dim=env.state_dim, actions=4)
    novice = Policy.init(env.state_dim, 4, (8,), seed=5)
    score_trajectories(disc, trajs, novice, expert, mode="expert")
    for tr in trajs:
        lp = expert.log_prob_of(tr.states(), tr.actions())
        expected = disc_logit(disc, tr.states(), tr.actions(), tr.next_states(), lp)
        assert [st.extra["reward_disc"] for st in tr.steps] == [float(x) for x in expected]
        assert all(st.extra["reward_disc_expert"] == st.extra["reward_disc"] for st in tr.steps)
        assert all("reward_disc_novice" in st.extra for st in tr.steps)
    with pytest.raises(ContractError):
        score_trajectories(disc, trajs, novice, None, mode="expert")
