from .base import MdpSpec, Transition
from .gridworld import GridWorld, optimal_mean_return, optimal_start_values
from .rouge import lcs_length, rouge_l, rouge_l_score, rouge_n, rouge_n_score
from .tokens import DEFAULT_TAGS, Grammar, Token, TokenGenEnv, Vocabulary, build_vocabulary

__all__ = [
    "DEFAULT_TAGS",
    "Grammar",
    "GridWorld",
    "MdpSpec",
    "Token",
    "TokenGenEnv",
    "Transition",
    "Vocabulary",
    "build_vocabulary",
    "lcs_length",
    "optimal_mean_return",
    "optimal_start_values",
    "rouge_l",
    "rouge_l_score",
    "rouge_n",
    "rouge_n_score",
]
