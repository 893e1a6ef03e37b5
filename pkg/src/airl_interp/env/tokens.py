"""Synthetic article -> summary token generation task.

Each vocabulary entry is a ``(surface, tag)`` pair, so the same surface with
two tags is two distinct words. The grammar draws an article of tagged tokens
and derives the reference summary from it: walking the article left to right,
each not-yet-used token is kept with a per-tag inclusion probability. A
probability of 1 makes a tag "required"; 0/1-only settings give a fully
deterministic reference.

The agent writes the summary one token per step. Its last action is either
the stop token or the token that fills ``max_summary_len``; only that final
step is rewarded, with ROUGE against the reference.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path
from typing import NamedTuple

import numpy as np

from ..errors import ContractError, DataError
from .base import MdpSpec, Transition
from .rouge import rouge_l_score, rouge_n_score

DEFAULT_TAGS = ("NN", "NNS", "VB", "MD", "RB", "DT", "PRP", "SYM")

# hand-picked surfaces for readable reports; "run" is both NN and VB on purpose
_WORDS = {
    "NN": ["run", "report", "city", "court", "storm", "deal", "minister", "game",
           "market", "election", "border", "season"],
    "NNS": ["reports", "cities", "voters", "prices", "players", "officials", "troops",
            "schools", "flights", "talks", "fans", "rates"],
    "VB": ["run", "say", "win", "vote", "cut", "announce", "approve", "deny", "warn",
           "raise", "face", "accept"],
    "MD": ["can", "will", "may", "must", "could", "would", "should", "might", "shall",
           "ought", "need", "dare"],
    "RB": ["very", "also", "quickly", "still", "nearly", "abroad", "recently", "later",
           "already", "sharply", "soon", "officially"],
    "DT": ["the", "a", "an", "this", "that", "each", "every", "some", "any", "no",
           "these", "those"],
    "PRP": ["he", "she", "it", "they", "we", "you", "i", "them", "him", "her", "us", "me"],
    "SYM": ["$", "%", "#", "&", "@", "+", "=", "*", "~", "^", "/", "|"],
}
_CONSONANTS = "bcdfghjklmnprstvz"
_VOWELS = "aeiou"


class Token(NamedTuple):
    surface: str
    tag: str


class Vocabulary:
    def __init__(self, tokens):
        self.tokens = [Token(*t) for t in tokens]
        self.index = {}
        for i, t in enumerate(self.tokens):
            if t in self.index:
                raise DataError(f"duplicate vocabulary entry {t.surface!r}/{t.tag}")
            self.index[t] = i
        if not self.tokens:
            raise DataError("empty vocabulary")

    def __len__(self):
        return len(self.tokens)

    def __getitem__(self, i) -> Token:
        return self.tokens[i]

    @property
    def tags(self) -> list[str]:
        return sorted({t.tag for t in self.tokens})

    def ids_with_tag(self, tag) -> list[int]:
        return [i for i, t in enumerate(self.tokens) if t.tag == tag]

    def save(self, path, config_hash: str = "") -> None:
        head = f"# config_hash={config_hash}\n" if config_hash else ""
        Path(path).write_text(head + "".join(f"{t.surface}\t{t.tag}\n" for t in self.tokens))

    @classmethod
    def load(cls, path) -> "Vocabulary":
        tokens = []
        for lineno, line in enumerate(Path(path).read_text().splitlines(), start=1):
            # comments start with '#' and have no tab ('#' is itself a SYM surface)
            if not line.strip() or (line.startswith("#") and "\t" not in line):
                continue
            parts = line.split("\t")
            if len(parts) != 2 or not parts[0] or not parts[1]:
                raise DataError(f"{path}: expected 'surface<TAB>tag'", line=lineno)
            tokens.append(Token(parts[0], parts[1]))
        return cls(tokens)


def _pseudo_word(rng, length):
    pools = (_CONSONANTS, _VOWELS)
    return "".join(pools[k % 2][int(rng.integers(len(pools[k % 2])))] for k in range(length))


def build_vocabulary(tags=DEFAULT_TAGS, tokens_per_tag=8, seed=0) -> Vocabulary:
    """Vocabulary with ``tokens_per_tag`` entries for every tag.

    Known tags draw from built-in word lists; other tags (e.g. a 36-tag set)
    get seeded pseudo-words of varying length.
    """
    rng = np.random.default_rng(seed)
    tokens = []
    for tag in tags:
        words = list(_WORDS.get(tag, []))[:tokens_per_tag]
        seen = set(words)
        while len(words) < tokens_per_tag:
            w = _pseudo_word(rng, int(rng.integers(2, 10)))
            if w not in seen:
                seen.add(w)
                words.append(w)
        tokens.extend(Token(w, tag) for w in words)
    return Vocabulary(tokens)


@dataclass
class Grammar:
    """Seeded generator of (article, reference) token-id sequences."""

    vocab: Vocabulary
    article_len: int = 12
    max_summary_len: int = 6
    inclusion: dict = field(default_factory=dict)
    tag_weights: dict = field(default_factory=dict)

    def __post_init__(self):
        tags = self.vocab.tags
        for name, table in (("inclusion", self.inclusion), ("tag_weights", self.tag_weights)):
            unknown = set(table) - set(tags)
            if unknown:
                raise ValueError(f"{name} names unknown tags {sorted(unknown)}")
        if not any(self.inclusion.get(t, 0.0) > 0 for t in tags):
            raise ValueError("at least one tag needs a positive inclusion probability")
        weights = np.array([float(self.tag_weights.get(t, 1.0)) for t in tags])
        if np.any(weights < 0) or weights.sum() <= 0:
            raise ValueError("tag_weights must be non-negative with a positive sum")
        self._tags = tags
        self._tag_p = weights / weights.sum()
        self._by_tag = [self.vocab.ids_with_tag(t) for t in tags]

    @property
    def deterministic(self) -> bool:
        return all(p in (0.0, 1.0) for p in self.inclusion.values())

    def sample(self, rng: np.random.Generator) -> tuple[list[int], list[int]]:
        for _ in range(1000):
            tag_idx = rng.choice(len(self._tags), size=self.article_len, p=self._tag_p)
            article = [int(rng.choice(self._by_tag[k])) for k in tag_idx]
            reference = []
            for tok in article:
                if len(reference) >= self.max_summary_len:
                    break
                if tok in reference:
                    continue
                p = float(self.inclusion.get(self.vocab[tok].tag, 0.0))
                if p >= 1.0 or (p > 0.0 and rng.random() < p):
                    reference.append(tok)
            if reference:
                return article, reference
        raise ContractError("grammar failed to produce a non-empty reference in 1000 draws")


class TokenGenEnv:
    """Write a summary of a sampled article, one vocabulary token per step.

    Actions ``0 .. len(vocab)-1`` emit that token; action ``len(vocab)`` stops.
    State features are ``[bag-of-tokens counts of the summary so far,
    mean one-hot of the article]`` (width ``2 * len(vocab)``).
    """

    report_discounted = False

    def __init__(self, grammar: Grammar, gamma=0.9, rouge="rouge1"):
        if rouge not in ("rouge1", "rouge2", "rougeL"):
            raise ValueError(f"unknown ROUGE variant {rouge!r}")
        self.grammar = grammar
        self.vocab = grammar.vocab
        self.rouge = rouge
        self.max_summary_len = grammar.max_summary_len
        self.max_steps = grammar.max_summary_len
        self.stop_action = len(self.vocab)
        self.action_count = len(self.vocab) + 1
        self.spec = MdpSpec(
            state_dim=2 * len(self.vocab),
            action_count=self.action_count,
            gamma=gamma,
            initial_distribution=grammar.sample,
        )
        self.gamma = self.spec.gamma
        self.state_dim = self.spec.state_dim
        self.article = []
        self.reference = []
        self.summary = []
        self._article_vec = np.zeros(len(self.vocab))
        self._done = True

    @property
    def done(self) -> bool:
        return self._done

    def score(self, summary) -> float:
        """Episode reward: ROUGE F1 of ``summary`` against the current reference."""
        if self.rouge == "rougeL":
            return rouge_l_score(summary, self.reference).f1
        n = 1 if self.rouge == "rouge1" else 2
        return rouge_n_score(summary, self.reference, n).f1

    def encode(self, summary) -> np.ndarray:
        bag = np.bincount(np.asarray(summary, dtype=np.int64), minlength=len(self.vocab))
        return np.concatenate([bag.astype(np.float64), self._article_vec])

    def reset(self, seed=None) -> np.ndarray:
        self.article, self.reference = self.grammar.sample(np.random.default_rng(seed))
        counts = np.bincount(np.asarray(self.article), minlength=len(self.vocab))
        self._article_vec = counts / len(self.article)
        self.summary = []
        self._done = False
        return self.encode(self.summary)

    def step(self, action) -> Transition:
        if self._done:
            raise ContractError("step() called on a finished episode; call reset() first")
        action = int(action)
        if not 0 <= action < self.action_count:
            raise ContractError(f"action {action} outside [0, {self.action_count})")
        state = self.encode(self.summary)
        token = None
        if action != self.stop_action:
            self.summary.append(action)
            token = self.vocab[action]
        self._done = action == self.stop_action or len(self.summary) >= self.max_summary_len
        reward = self.score(self.summary) if self._done else 0.0
        return Transition(state, action, self.encode(self.summary), reward, self._done, token)
