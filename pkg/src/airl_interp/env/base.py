from __future__ import annotations

from dataclasses import dataclass
from typing import Any, Callable, Optional

import numpy as np


@dataclass(frozen=True)
class MdpSpec:
    """Static description of an environment: widths, action set, discount, start sampler."""

    state_dim: int
    action_count: int
    gamma: float
    initial_distribution: Callable[[np.random.Generator], Any]

    def __post_init__(self):
        if not 0.0 < self.gamma < 1.0:
            raise ValueError(f"gamma must lie in (0, 1), got {self.gamma}")
        if self.action_count < 2:
            raise ValueError(f"action_count must be >= 2, got {self.action_count}")


@dataclass(frozen=True)
class Transition:
    state: np.ndarray
    action: int
    next_state: np.ndarray
    reward: float
    done: bool
    # token env only: the (surface, tag) emitted by ``action``; None for the stop action
    token: Optional[Any] = None
