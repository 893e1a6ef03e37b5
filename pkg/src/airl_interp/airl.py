"""Adversarial IRL: discriminator ``f = g(s, a) + gamma * h(s') - h(s)`` against a novice.

The discriminator probability is ``exp(f) / (exp(f) + pi(a|s))``. Everything
here works with its logit, ``f - log pi(a|s)``, so ``exp(f)`` is never formed.
The novice is rewarded with that same logit, ``log D - log(1 - D)``.
"""

from __future__ import annotations

import copy
import logging
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .errors import ContractError, NumericError, TrainingError
from .numkit import Mlp, Tensor, forward, make_optimizer
from .rl import Policy, _env_copies, rollout_batch

log = logging.getLogger(__name__)


def one_hot(actions, n) -> np.ndarray:
    actions = np.asarray(actions, dtype=np.int64)
    out = np.zeros((actions.size, n))
    out[np.arange(actions.size), actions.ravel()] = 1.0
    return out


class Discriminator:
    """``g`` scores (state, one-hot action); ``h`` is the shaping potential on states."""

    def __init__(self, g: Mlp, h: Mlp, gamma: float, action_count: int):
        if g.out_dim != 1 or h.out_dim != 1:
            raise ContractError("g and h must each output one scalar")
        if g.in_dim != h.in_dim + action_count:
            raise ContractError(
                f"g input width {g.in_dim} != state width {h.in_dim} + actions {action_count}"
            )
        if not 0.0 < gamma < 1.0:
            raise ValueError(f"gamma must lie in (0, 1), got {gamma}")
        self.g, self.h = g, h
        self.gamma = float(gamma)
        self.action_count = int(action_count)

    @classmethod
    def init(cls, state_dim, action_count, gamma, hidden=(32,), seed=0) -> "Discriminator":
        """Random hidden layers, zero output layers: ``f`` starts identically 0."""
        ss = np.random.SeedSequence(seed).generate_state(2)
        g = Mlp.init([state_dim + action_count, *hidden, 1], seed=int(ss[0]))
        h = Mlp.init([state_dim, *hidden, 1], seed=int(ss[1]))
        for net in (g, h):
            net.weights[-1].data[...] = 0.0
        return cls(g, h, gamma, action_count)

    @property
    def state_dim(self) -> int:
        return self.h.in_dim

    def parameters(self):
        return self.g.parameters() + self.h.parameters()

    def zero_grad(self):
        self.g.zero_grad()
        self.h.zero_grad()

    def _check(self, states, actions, next_states):
        states = np.atleast_2d(np.asarray(states, dtype=np.float64))
        next_states = np.atleast_2d(np.asarray(next_states, dtype=np.float64))
        actions = np.atleast_1d(np.asarray(actions, dtype=np.int64))
        if states.shape[-1] != self.state_dim or next_states.shape != states.shape:
            raise ContractError(
                f"state shapes {states.shape} / {next_states.shape} do not match "
                f"discriminator state width {self.state_dim}"
            )
        if actions.shape != (states.shape[0],):
            raise ContractError(f"{actions.shape[0]} actions for {states.shape[0]} states")
        if actions.min() < 0 or actions.max() >= self.action_count:
            raise ContractError("action index outside the discriminator's action set")
        return states, actions, next_states

    def f_tensor(self, states, actions, next_states) -> Tensor:
        s, a, s2 = self._check(states, actions, next_states)
        sa = np.concatenate([s, one_hot(a, self.action_count)], axis=1)
        g = forward(self.g, sa).reshape(-1)
        h_s = forward(self.h, s).reshape(-1)
        h_s2 = forward(self.h, s2).reshape(-1)
        return g + h_s2 * self.gamma - h_s

    def f(self, states, actions, next_states) -> np.ndarray:
        s, a, s2 = self._check(states, actions, next_states)
        sa = np.concatenate([s, one_hot(a, self.action_count)], axis=1)
        g = self.g.predict(sa)[:, 0]
        return g + self.gamma * self.h.predict(s2)[:, 0] - self.h.predict(s)[:, 0]

    def copy(self) -> "Discriminator":
        return Discriminator(self.g.copy(), self.h.copy(), self.gamma, self.action_count)


def f_value(disc: Discriminator, s, a, s_next):
    """``g(s, a) + gamma * h(s') - h(s)``; scalar for a single transition."""
    out = disc.f(s, a, s_next)
    return float(out[0]) if np.ndim(a) == 0 else out


def _checked_log_pi(log_pi):
    log_pi = np.asarray(log_pi, dtype=np.float64)
    if not np.all(np.isfinite(log_pi)):
        raise NumericError("log pi(a|s) must be finite")
    return log_pi


def disc_logit(disc: Discriminator, s, a, s_next, log_pi):
    """``logit(D) = f - log pi(a|s)``; apply a sigmoid for the probability."""
    log_pi = _checked_log_pi(log_pi)
    f = disc.f(s, a, s_next)
    if not np.all(np.isfinite(f)):
        raise NumericError("non-finite discriminator output")
    out = f - log_pi
    return float(out[0]) if np.ndim(a) == 0 else out


def airl_reward(disc: Discriminator, s, a, s_next, log_pi):
    """Novice reward ``log D - log(1 - D)``, identical to :func:`disc_logit`."""
    return disc_logit(disc, s, a, s_next, log_pi)


@dataclass
class TransitionSet:
    states: np.ndarray
    actions: np.ndarray
    next_states: np.ndarray

    def __len__(self):
        return len(self.actions)

    @classmethod
    def from_trajectories(cls, trajectories) -> "TransitionSet":
        steps = [st for tr in trajectories for st in tr.steps]
        if not steps:
            raise ContractError("no transitions")
        return cls(
            np.stack([st.s for st in steps]),
            np.array([st.a for st in steps], dtype=np.int64),
            np.stack([st.s_next for st in steps]),
        )

    @classmethod
    def from_rollouts(cls, rollouts) -> "TransitionSet":
        return cls(
            np.concatenate([r.states for r in rollouts]),
            np.concatenate([r.actions for r in rollouts]),
            np.concatenate([r.next_states for r in rollouts]),
        )

    def take(self, idx) -> "TransitionSet":
        return TransitionSet(self.states[idx], self.actions[idx], self.next_states[idx])


@dataclass
class AirlBatch:
    """Labelled transitions: expert = 1, novice = 0.

    ``expert_log_pi`` / ``novice_log_pi`` hold ``log pi(a|s)`` under the
    current novice policy for each transition of the matching set.
    """

    expert: TransitionSet
    novice: TransitionSet
    expert_log_pi: np.ndarray
    novice_log_pi: np.ndarray


def disc_loss(disc: Discriminator, batch: AirlBatch) -> Tensor:
    """Mean binary cross-entropy of ``sigmoid(logit)`` against provenance labels."""
    if len(batch.expert) == 0 or len(batch.novice) == 0:
        raise ContractError("discriminator batch needs both expert and novice transitions")
    e, n = batch.expert, batch.novice
    lp_e = _checked_log_pi(batch.expert_log_pi)
    lp_n = _checked_log_pi(batch.novice_log_pi)
    z_e = disc.f_tensor(e.states, e.actions, e.next_states) - lp_e
    z_n = disc.f_tensor(n.states, n.actions, n.next_states) - lp_n
    # -log sigmoid(z) = softplus(-z);  -log(1 - sigmoid(z)) = softplus(z)
    total = (-z_e).softplus().sum() + z_n.softplus().sum()
    return total / float(len(e) + len(n))


def balanced_accuracy(disc: Discriminator, policy: Policy, positives: TransitionSet, negatives: TransitionSet) -> float:
    """Mean of the per-class hit rates; a logit > 0 predicts "expert"."""
    z_pos = disc_logit(
        disc, positives.states, positives.actions, positives.next_states,
        policy.log_prob_of(positives.states, positives.actions),
    )
    z_neg = disc_logit(
        disc, negatives.states, negatives.actions, negatives.next_states,
        policy.log_prob_of(negatives.states, negatives.actions),
    )
    return 0.5 * (float(np.mean(z_pos > 0)) + float(np.mean(z_neg <= 0)))


@dataclass
class AirlConfig:
    iterations: int = 200
    episodes_per_iter: int = 16
    disc_updates: int = 1
    novice_updates: int = 1
    disc_batch: int = 256
    disc_learning_rate: float = 0.003
    novice_learning_rate: float = 0.01
    optimizer: str = "adam"
    disc_hidden: tuple = (32,)
    novice_hidden: tuple = (32,)
    novice_entropy_coef: float = 0.0
    gamma: float = 0.9
    seed: int = 0

    def __post_init__(self):
        if self.iterations < 0 or self.episodes_per_iter < 1:
            raise ValueError("iterations must be >= 0 and episodes_per_iter >= 1")
        if self.disc_updates < 1 or self.novice_updates < 0:
            raise ValueError("disc_updates must be >= 1 and novice_updates >= 0")


@dataclass
class AirlResult:
    discriminator: Discriminator
    novice: Policy
    curves: list = field(default_factory=list)


class AirlDivergence(TrainingError):
    def __init__(self, message, curves):
        super().__init__(message)
        self.curves = curves


def _reward_to_go(rewards, gamma):
    out = np.zeros_like(rewards)
    acc = 0.0
    for t in range(len(rewards) - 1, -1, -1):
        acc = rewards[t] + gamma * acc
        out[t] = acc
    return out


def novice_pg_loss(policy: Policy, rollouts, rewards, gamma, entropy_coef=0.0) -> Tensor:
    """REINFORCE on discounted reward-to-go with a normalized batch baseline."""
    returns = np.concatenate([_reward_to_go(r, gamma) for r in rewards])
    adv = returns - returns.mean()
    std = adv.std()
    if std > 1e-12:
        adv = adv / std
    data = TransitionSet.from_rollouts(rollouts)
    table = policy.log_prob_table_tensor(data.states)
    logp = table.pick(data.actions)
    loss = -(logp * adv).sum() / float(len(rollouts))
    if entropy_coef:
        entropy = -(table.exp() * table).sum(axis=-1).mean()
        loss = loss - entropy * entropy_coef
    return loss


def train_airl(
    expert_trajectories,
    env,
    cfg: AirlConfig,
    generator: Optional[Policy] = None,
) -> AirlResult:
    """Alternate novice rollouts, discriminator steps and novice policy-gradient steps.

    ``generator`` replaces the learner as the source of "novice" rollouts and
    log-probabilities (it is never updated); passing the expert gives the
    expert-vs-expert control.
    """
    if not expert_trajectories:
        raise ContractError("expert trajectory set is empty")
    if abs(env.gamma - cfg.gamma) > 0:
        raise ContractError(f"AIRL gamma {cfg.gamma} differs from environment gamma {env.gamma}")
    rng = np.random.default_rng(cfg.seed)
    seeds = rng.integers(0, 2**62, size=3)
    disc = Discriminator.init(env.state_dim, env.action_count, cfg.gamma, cfg.disc_hidden, seed=int(seeds[0]))
    novice = Policy.init(env.state_dim, env.action_count, cfg.novice_hidden, seed=int(seeds[1]))
    actor = generator if generator is not None else novice
    disc_opt = make_optimizer(cfg.optimizer, disc.parameters(), cfg.disc_learning_rate, seed=cfg.seed)
    nov_opt = make_optimizer(cfg.optimizer, novice.net, cfg.novice_learning_rate, seed=cfg.seed)
    expert = TransitionSet.from_trajectories(expert_trajectories)
    envs = _env_copies(copy.deepcopy(env), cfg.episodes_per_iter)
    curves = []

    for it in range(cfg.iterations):
        ep_seeds = rng.integers(0, 2**62, size=cfg.episodes_per_iter)
        rollouts = rollout_batch(actor, envs, ep_seeds)
        nov = TransitionSet.from_rollouts(rollouts)

        for _ in range(cfg.disc_updates):
            ie = rng.integers(0, len(expert), size=min(cfg.disc_batch, len(expert)))
            iN = rng.integers(0, len(nov), size=min(cfg.disc_batch, len(nov)))
            e_b, n_b = expert.take(ie), nov.take(iN)
            batch = AirlBatch(
                e_b, n_b,
                actor.log_prob_of(e_b.states, e_b.actions),
                actor.log_prob_of(n_b.states, n_b.actions),
            )
            loss = disc_loss(disc, batch)
            if not np.isfinite(loss.item()):
                raise AirlDivergence(f"non-finite discriminator loss at iteration {it}", curves)
            disc.zero_grad()
            loss.backward()
            disc_opt.step()

        lp_e = actor.log_prob_of(e_b.states, e_b.actions)
        lp_n = actor.log_prob_of(n_b.states, n_b.actions)
        acc = 0.5 * (
            float(np.mean(disc_logit(disc, e_b.states, e_b.actions, e_b.next_states, lp_e) > 0))
            + float(np.mean(disc_logit(disc, n_b.states, n_b.actions, n_b.next_states, lp_n) <= 0))
        )

        if generator is None:
            for _ in range(cfg.novice_updates):
                rewards = [
                    airl_reward(disc, r.states, r.actions, r.next_states,
                                novice.log_prob_of(r.states, r.actions))
                    for r in rollouts
                ]
                pg = novice_pg_loss(novice, rollouts, rewards, cfg.gamma, cfg.novice_entropy_coef)
                if not np.isfinite(pg.item()):
                    raise AirlDivergence(f"non-finite novice loss at iteration {it}", curves)
                novice.net.zero_grad()
                pg.backward()
                nov_opt.step()

        rec = {
            "iteration": it,
            "disc_loss": loss.item(),
            "disc_accuracy": acc,
            "novice_return": float(np.mean([
                r.discounted_return if env.report_discounted else r.episode_return for r in rollouts
            ])),
        }
        curves.append(rec)
        if (it + 1) % 50 == 0:
            log.info("airl it=%d disc_acc=%.3f novice_return=%.3f", it + 1, acc, rec["novice_return"])
    return AirlResult(disc, novice, curves)


def score_trajectory(disc: Discriminator, trajectory, policy_log_probs) -> list[float]:
    """One discriminator reward per transition of ``trajectory``."""
    if policy_log_probs is None or len(policy_log_probs) != len(trajectory.steps):
        raise ContractError(
            f"trajectory {trajectory.id!r}: need one log-probability per step "
            f"({len(trajectory.steps)} steps)"
        )
    if any(lp is None for lp in policy_log_probs):
        raise ContractError(f"trajectory {trajectory.id!r}: missing log-probability")
    r = airl_reward(disc, trajectory.states(), trajectory.actions(), trajectory.next_states(), np.asarray(policy_log_probs, dtype=np.float64))
    return [float(x) for x in np.atleast_1d(r)]


def score_trajectories(disc: Discriminator, trajectories, novice: Policy, expert: Optional[Policy] = None, mode="novice"):
    """Attach discriminator rewards to every step (in place) and return the trajectories.

    ``reward_disc`` / ``log_pi`` use the policy selected by ``mode``; when the
    expert is given, both variants are also stored as
    ``reward_disc_novice`` and ``reward_disc_expert``.
    """
    if mode not in ("novice", "expert"):
        raise ValueError(f"unknown scoring mode {mode!r}")
    if mode == "expert" and expert is None:
        raise ContractError("expert-policy scoring needs the expert policy")
    for tr in trajectories:
        s, a = tr.states(), tr.actions()
        lp_nov = novice.log_prob_of(s, a)
        r_nov = score_trajectory(disc, tr, lp_nov)
        variants = {"novice": (lp_nov, r_nov)}
        if expert is not None:
            lp_exp = expert.log_prob_of(s, a)
            variants["expert"] = (lp_exp, score_trajectory(disc, tr, lp_exp))
        lp, rw = variants[mode]
        for t, st in enumerate(tr.steps):
            st.extra["reward_disc"] = rw[t]
            st.extra["log_pi"] = float(lp[t])
            if expert is not None:
                st.extra["reward_disc_novice"] = variants["novice"][1][t]
                st.extra["reward_disc_expert"] = variants["expert"][1][t]
    return trajectories
