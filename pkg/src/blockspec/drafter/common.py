from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


@dataclass
class Counters:
    """Invocation accounting: network forwards, full LM-head projections,
    and sequential correction-head steps."""

    net_calls: int = 0
    head_calls: int = 0
    dhead_steps: int = 0

    def reset(self) -> None:
        self.net_calls = self.head_calls = self.dhead_steps = 0


@dataclass
class DraftBlock:
    anchor: int
    tokens: np.ndarray
    q: np.ndarray
    final_logits: np.ndarray
    block_input: list[int] = field(default_factory=list)
    base_logits: np.ndarray | None = None
    correction: np.ndarray | None = None
    hidden: np.ndarray | None = None
    states: list = field(default_factory=list)

    @property
    def gamma(self) -> int:
        return len(self.tokens)


def sample_index(p: np.ndarray, rng: np.random.Generator) -> int:
    """Inverse-CDF draw from an (unnormalized) probability row; one uniform per call."""
    cdf = np.cumsum(p)
    u = rng.random() * cdf[-1]
    idx = int(np.searchsorted(cdf, u, side="right"))
    idx = min(idx, len(p) - 1)
    # searchsorted can only land on a zero-mass entry through rounding at the top
    while p[idx] <= 0:
        idx -= 1
    return idx


def pick_token(logits: np.ndarray, greedy: bool, rng: np.random.Generator | None, forbid=()) -> int:
    """Argmax (ties to the lowest id) or a softmax sample, never a forbidden id."""
    row = np.array(logits, dtype=np.float64)
    if forbid:
        row[sorted(forbid)] = -np.inf
    if greedy:
        return int(np.argmax(row))
    if rng is None:
        raise ValueError("sampling requires an rng")
    probs = np.exp(row - row.max())
    return sample_index(probs / probs.sum(), rng)
