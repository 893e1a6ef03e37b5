"""Deterministic navigation gridworld with one-hot cell features."""

from __future__ import annotations

import numpy as np

from ..errors import ContractError
from .base import MdpSpec, Transition

# (dx, dy); y grows downward
MOVES = ((0, -1), (0, 1), (-1, 0), (1, 0))
ACTION_NAMES = ("up", "down", "left", "right")


class GridWorld:
    """Four-action grid. Moves into walls or off the board leave the agent in place.

    Every step pays ``step_penalty`` except the one that enters the goal, which
    pays ``goal_reward`` and ends the episode. Episodes are also cut at
    ``max_steps``.
    """

    action_count = 4
    report_discounted = True

    def __init__(
        self,
        width=5,
        height=5,
        goal=(4, 4),
        walls=(),
        start_cells=((0, 0),),
        step_penalty=-0.01,
        goal_reward=1.0,
        max_steps=30,
        gamma=0.9,
    ):
        if width < 1 or height < 1 or max_steps < 1:
            raise ValueError("width, height and max_steps must be positive")
        self.width, self.height = int(width), int(height)
        self.goal = tuple(goal)
        self.walls = frozenset(tuple(w) for w in walls)
        self.start_cells = tuple(tuple(c) for c in start_cells)
        self.step_penalty = float(step_penalty)
        self.goal_reward = float(goal_reward)
        self.max_steps = int(max_steps)
        if not self._inside(self.goal):
            raise ValueError(f"goal {self.goal} outside the grid")
        if self.goal in self.walls:
            raise ValueError("goal cell is a wall")
        if not self.start_cells:
            raise ValueError("at least one start cell is required")
        for c in self.start_cells:
            if not self._inside(c) or c in self.walls or c == self.goal:
                raise ValueError(f"invalid start cell {c}")
        self.spec = MdpSpec(
            state_dim=self.width * self.height,
            action_count=4,
            gamma=gamma,
            initial_distribution=self._sample_start,
        )
        self.gamma = self.spec.gamma
        self.state_dim = self.spec.state_dim
        self._cell = None
        self._t = 0
        self._done = True

    # -- geometry ------------------------------------------------------------
    def _inside(self, cell):
        x, y = cell
        return 0 <= x < self.width and 0 <= y < self.height

    def cells(self):
        return [
            (x, y)
            for y in range(self.height)
            for x in range(self.width)
            if (x, y) not in self.walls
        ]

    def encode(self, cell) -> np.ndarray:
        v = np.zeros(self.state_dim)
        v[cell[1] * self.width + cell[0]] = 1.0
        return v

    def decode(self, features) -> tuple:
        i = int(np.argmax(features))
        return (i % self.width, i // self.width)

    def move(self, cell, action):
        """Pure transition: ``(next_cell, reward, reached_goal)``."""
        if not 0 <= action < 4:
            raise ContractError(f"action {action} outside [0, 4)")
        dx, dy = MOVES[action]
        nxt = (cell[0] + dx, cell[1] + dy)
        if not self._inside(nxt) or nxt in self.walls:
            nxt = cell
        if nxt == self.goal:
            return nxt, self.goal_reward, True
        return nxt, self.step_penalty, False

    # -- episode API ---------------------------------------------------------
    def _sample_start(self, rng):
        return self.start_cells[int(rng.integers(len(self.start_cells)))]

    @property
    def done(self) -> bool:
        return self._done

    @property
    def cell(self):
        return self._cell

    def reset(self, seed=None) -> np.ndarray:
        self._cell = self._sample_start(np.random.default_rng(seed))
        self._t = 0
        self._done = False
        return self.encode(self._cell)

    def step(self, action) -> Transition:
        if self._done:
            raise ContractError("step() called on a finished episode; call reset() first")
        state = self.encode(self._cell)
        nxt, reward, at_goal = self.move(self._cell, int(action))
        self._cell = nxt
        self._t += 1
        self._done = at_goal or self._t >= self.max_steps
        return Transition(state, int(action), self.encode(nxt), reward, self._done)


def optimal_start_values(env: GridWorld) -> dict:
    """Optimal expected discounted return from each start cell.

    Finite-horizon backward induction over ``max_steps`` with the env's gamma,
    so truncation is modelled exactly.
    """
    cells = env.cells()
    value = {c: 0.0 for c in cells}
    for _ in range(env.max_steps):
        new = {}
        for c in cells:
            if c == env.goal:
                new[c] = 0.0
                continue
            best = -np.inf
            for a in range(4):
                nxt, r, at_goal = env.move(c, a)
                q = r + (0.0 if at_goal else env.gamma * value[nxt])
                best = max(best, q)
            new[c] = best
        value = new
    return {c: value[c] for c in env.start_cells}


def optimal_mean_return(env: GridWorld) -> float:
    """Mean over the (uniform) start distribution of the optimal start value."""
    vals = optimal_start_values(env)
    return float(np.mean([vals[c] for c in env.start_cells]))
