"""Expert training with the self-critical policy-gradient loss.

For one episode with sampled actions ``y_s`` and the greedy decode ``y_g`` of
the same instance, the loss is::

    L = (R(y_g) - R(y_s)) * sum_t log pi(y_s[t] | state_t)

with ``R`` the undiscounted episode reward (ROUGE in the token env). The
reward difference is a constant, so the gradient only flows through the
log-probabilities. Descending ``L`` raises the likelihood of a sampled
sequence that beat the greedy one (``R(y_s) > R(y_g)`` makes the factor
negative) and lowers it otherwise.
"""

from __future__ import annotations

import copy
import logging
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .errors import ContractError, TrainingError
from .numkit import Mlp, Tensor, forward, make_optimizer
from .trajectories import Step, Trajectory

log = logging.getLogger(__name__)


class Policy:
    """Softmax policy over an MLP's logits."""

    def __init__(self, net: Mlp, temperature: float = 1.0):
        if not temperature > 0:
            raise ValueError("temperature must be positive")
        self.net = net
        self.temperature = float(temperature)

    @classmethod
    def init(cls, state_dim, action_count, hidden=(32,), seed=0, temperature=1.0) -> "Policy":
        return cls(Mlp.init([state_dim, *hidden, action_count], seed=seed), temperature)

    @property
    def action_count(self) -> int:
        return self.net.out_dim

    def copy(self) -> "Policy":
        return Policy(self.net.copy(), self.temperature)

    def logits(self, states) -> np.ndarray:
        z = self.net.predict(states) / self.temperature
        if not np.all(np.isfinite(z)):
            raise TrainingError("non-finite policy logits")
        return z

    def log_probs(self, states) -> np.ndarray:
        """Full ``[N, A]`` log-probability table (no graph)."""
        z = self.logits(states)
        z = z - z.max(axis=-1, keepdims=True)
        return z - np.log(np.exp(z).sum(axis=-1, keepdims=True))

    def log_prob_of(self, states, actions) -> np.ndarray:
        lp = self.log_probs(np.atleast_2d(states))
        return lp[np.arange(len(lp)), np.asarray(actions, dtype=np.int64)]

    def log_prob_tensor(self, states, actions) -> Tensor:
        """Differentiable ``log pi(a_i | s_i)`` for each row."""
        logp = (forward(self.net, states) / self.temperature).log_softmax(axis=-1)
        return logp.pick(actions)

    def log_prob_table_tensor(self, states) -> Tensor:
        return (forward(self.net, states) / self.temperature).log_softmax(axis=-1)


def _sample_index(p: np.ndarray, u: float) -> int:
    return min(int(np.searchsorted(np.cumsum(p), u * p.sum(), side="right")), len(p) - 1)


@dataclass
class Rollout:
    """One episode: per-step arrays plus returns."""

    seed: int
    states: np.ndarray
    actions: np.ndarray
    next_states: np.ndarray
    rewards: np.ndarray
    log_probs: np.ndarray
    tokens: list
    gamma: float

    def __len__(self):
        return len(self.actions)

    @property
    def episode_return(self) -> float:
        return float(self.rewards.sum())

    @property
    def discounted_return(self) -> float:
        return float(np.sum(self.rewards * self.gamma ** np.arange(len(self.rewards))))


def _env_copies(env, n):
    return [env] + [copy.deepcopy(env) for _ in range(n - 1)]


def rollout_batch(policy: Policy, envs, seeds, greedy=False) -> list[Rollout]:
    """Run one episode per seed, stepping environments in lockstep.

    Episode ``i`` resets ``envs[i]`` with ``seeds[i]`` and samples actions from
    its own generator seeded by ``[seeds[i], 1]``, so results do not depend on
    batch composition. Greedy decoding breaks ties by the lowest action index
    (``np.argmax`` semantics).
    """
    n = len(seeds)
    if len(envs) < n:
        raise ContractError("need one environment per seed")
    rngs = [np.random.default_rng([int(s), 1]) for s in seeds]
    cur = [envs[i].reset(int(seeds[i])) for i in range(n)]
    buf = [{"s": [], "a": [], "s2": [], "r": [], "lp": [], "tok": []} for _ in range(n)]
    active = list(range(n))
    while active:
        lp_all = policy.log_probs(np.stack([cur[i] for i in active]))
        still = []
        for row, i in enumerate(active):
            lp = lp_all[row]
            if greedy:
                a = int(np.argmax(lp))
            else:
                a = _sample_index(np.exp(lp), rngs[i].random())
            tr = envs[i].step(a)
            b = buf[i]
            b["s"].append(tr.state)
            b["a"].append(a)
            b["s2"].append(tr.next_state)
            b["r"].append(tr.reward)
            b["lp"].append(lp[a])
            b["tok"].append(tr.token)
            cur[i] = tr.next_state
            if not tr.done:
                still.append(i)
        active = still
    out = []
    for i in range(n):
        b = buf[i]
        out.append(
            Rollout(
                seed=int(seeds[i]),
                states=np.stack(b["s"]),
                actions=np.array(b["a"], dtype=np.int64),
                next_states=np.stack(b["s2"]),
                rewards=np.array(b["r"], dtype=np.float64),
                log_probs=np.array(b["lp"], dtype=np.float64),
                tokens=b["tok"],
                gamma=envs[i].gamma,
            )
        )
    return out


def sample_sequence(policy: Policy, env, seed: int) -> Rollout:
    """Sample one episode from ``softmax(logits)``, recording per-step log-probs."""
    return rollout_batch(policy, [env], [seed])[0]


def greedy_sequence(policy: Policy, env, seed: int) -> Rollout:
    """Argmax decode of the instance selected by ``seed`` (ties -> lowest index)."""
    return rollout_batch(policy, [env], [seed], greedy=True)[0]


@dataclass
class EpisodePair:
    """Sampled and greedy decodes of one input, for the self-critical loss.

    ``log_probs`` is a differentiable tensor of the sampled actions'
    log-probabilities, one entry per sampled step.
    """

    sampled: Rollout
    greedy: Rollout
    log_probs: Tensor
    input: object = None
    reference: object = None

    def __post_init__(self):
        if self.log_probs.shape != (len(self.sampled),):
            raise ContractError("one log-probability per sampled step is required")


def make_pair(policy: Policy, env, seed: int) -> EpisodePair:
    env.reset(seed)
    inp = list(env.article) if hasattr(env, "article") else env.cell
    ref = list(env.reference) if hasattr(env, "reference") else None
    sampled = sample_sequence(policy, env, seed)
    greedy = greedy_sequence(policy, env, seed)
    log_probs = policy.log_prob_tensor(sampled.states, sampled.actions)
    return EpisodePair(sampled, greedy, log_probs, input=inp, reference=ref)


def episode_reward(rollout: Rollout) -> float:
    return rollout.episode_return


def self_critical_loss(pair: EpisodePair, reward_fn: Callable = episode_reward) -> Tensor:
    """``(R(greedy) - R(sampled)) * sum(log_probs)`` as a differentiable scalar."""
    coef = float(reward_fn(pair.greedy)) - float(reward_fn(pair.sampled))
    return pair.log_probs.sum() * coef


def self_critical_batch_loss(policy, sampled, greedy, reward_fn=episode_reward, entropy_coef=0.0):
    """Mean self-critical loss over episodes, minus an optional entropy bonus.

    Equals the average of :func:`self_critical_loss` over the pairs when
    ``entropy_coef == 0``.
    """
    states = np.concatenate([r.states for r in sampled])
    actions = np.concatenate([r.actions for r in sampled])
    coef = np.concatenate(
        [np.full(len(s), float(reward_fn(g)) - float(reward_fn(s))) for s, g in zip(sampled, greedy)]
    )
    table = policy.log_prob_table_tensor(states)
    logp = table.pick(actions)
    loss = (logp * coef).sum() / float(len(sampled))
    if entropy_coef:
        entropy = -(table.exp() * table).sum(axis=-1).mean()
        loss = loss - entropy * entropy_coef
    return loss


@dataclass
class ExpertConfig:
    iterations: int = 500
    batch_size: int = 16
    learning_rate: float = 0.01
    optimizer: str = "adam"
    momentum: float = 0.0
    entropy_coef: float = 0.01
    hidden: tuple = (32,)
    temperature: float = 1.0
    eval_episodes: int = 64
    eval_every: int = 50
    min_improvement: float = 1.0
    seed: int = 0

    def __post_init__(self):
        if self.iterations < 0 or self.batch_size < 1:
            raise ValueError("iterations must be >= 0 and batch_size >= 1")
        if self.learning_rate < 0:
            raise ValueError("learning_rate must be >= 0")


@dataclass
class ExpertResult:
    policy: Policy
    curves: list = field(default_factory=list)
    mean_return: float = float("nan")
    random_baseline: float = float("nan")
    beats_baseline: bool = False


def evaluate(policy: Policy, env, episodes: int, seed: int, greedy=False, discounted=False) -> float:
    """Mean episode return over ``episodes`` seeded instances."""
    seeds = np.random.default_rng(seed).integers(0, 2**62, size=episodes)
    envs = _env_copies(copy.deepcopy(env), min(episodes, 64))
    vals = []
    for start in range(0, episodes, len(envs)):
        chunk = seeds[start : start + len(envs)]
        for r in rollout_batch(policy, envs, chunk, greedy=greedy):
            vals.append(r.discounted_return if discounted else r.episode_return)
    return float(np.mean(vals))


def uniform_policy(state_dim, action_count) -> Policy:
    """All-zero network: uniform action distribution everywhere."""
    net = Mlp.init([state_dim, action_count], seed=0)
    for p in net.parameters():
        p.data[...] = 0.0
    return Policy(net)


def train_expert(env, cfg: ExpertConfig) -> ExpertResult:
    """Fit an expert policy with the self-critical loss.

    Each iteration draws ``batch_size`` instances, decodes each twice (sampled
    and greedy), and takes one optimizer step on the batch loss. A learning
    rate of zero leaves the weights untouched.
    """
    rng = np.random.default_rng(cfg.seed)
    policy = Policy.init(env.state_dim, env.action_count, cfg.hidden, seed=int(rng.integers(2**62)), temperature=cfg.temperature)
    opt = None
    if cfg.learning_rate > 0:
        opt = make_optimizer(cfg.optimizer, policy.net, cfg.learning_rate, cfg.momentum, cfg.seed)
    envs = _env_copies(copy.deepcopy(env), cfg.batch_size)
    discounted = env.report_discounted
    eval_seed = int(rng.integers(2**62))
    curves = []
    for it in range(cfg.iterations):
        seeds = rng.integers(0, 2**62, size=cfg.batch_size)
        sampled = rollout_batch(policy, envs, seeds)
        greedy = rollout_batch(policy, envs, seeds, greedy=True)
        loss = self_critical_batch_loss(policy, sampled, greedy, entropy_coef=cfg.entropy_coef)
        if not np.isfinite(loss.item()):
            raise TrainingError(f"non-finite loss at iteration {it}", layer=None)
        if opt is not None:
            policy.net.zero_grad()
            loss.backward()
            opt.step()
        rec = {
            "iteration": it,
            "loss": loss.item(),
            "sampled_return": float(np.mean([r.episode_return for r in sampled])),
            "greedy_return": float(np.mean([r.episode_return for r in greedy])),
        }
        curves.append(rec)
        if cfg.eval_every and (it + 1) % cfg.eval_every == 0:
            log.info("expert it=%d sampled=%.3f greedy=%.3f", it + 1, rec["sampled_return"], rec["greedy_return"])
    mean_ret = evaluate(policy, env, cfg.eval_episodes, eval_seed, discounted=discounted)
    baseline = evaluate(uniform_policy(env.state_dim, env.action_count), env, cfg.eval_episodes, eval_seed, discounted=discounted)
    beats = mean_ret > baseline * cfg.min_improvement if baseline > 0 else mean_ret > baseline
    return ExpertResult(policy, curves, mean_ret, baseline, bool(beats))


def rollout_to_trajectory(ro: Rollout, traj_id: str, config_hash: str = "") -> Trajectory:
    steps = []
    for t in range(len(ro)):
        tok = ro.tokens[t]
        steps.append(
            Step(
                s=ro.states[t],
                a=int(ro.actions[t]),
                s_next=ro.next_states[t],
                token_surface=None if tok is None else tok.surface,
                token_tag=None if tok is None else tok.tag,
            )
        )
    return Trajectory(traj_id, steps, ro.episode_return, config_hash)


def collect_trajectories(policy: Policy, env, count: int, seed: int, greedy=False, config_hash="") -> list[Trajectory]:
    """``count`` episodes in (s, a, s') form with per-step token metadata.

    Per-episode seeds come from ``seed`` alone, so the output is identical
    however the work is batched.
    """
    if count < 1:
        raise ContractError("count must be >= 1")
    seeds = np.random.default_rng(seed).integers(0, 2**62, size=count)
    envs = _env_copies(copy.deepcopy(env), min(count, 64))
    out = []
    for start in range(0, count, len(envs)):
        chunk = seeds[start : start + len(envs)]
        for k, ro in enumerate(rollout_batch(policy, envs, chunk, greedy=greedy)):
            out.append(rollout_to_trajectory(ro, f"traj-{start + k:05d}", config_hash))
    return out
