from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..drafter.common import sample_index


class ContractViolation(RuntimeError):
    """A drafted token had zero probability under the distribution it was drawn from."""


@dataclass
class VerifyResult:
    accepted_count: int
    bonus_token: int
    flags: list[bool]
    accepted_tokens: list[int]

    @property
    def next_anchor(self) -> int:
        return self.bonus_token

    @property
    def advance(self) -> int:
        return self.accepted_count + 1

    @property
    def emitted(self) -> list[int]:
        return self.accepted_tokens + [self.bonus_token]


def _result(draft, a: int, bonus: int) -> VerifyResult:
    gamma = len(draft)
    return VerifyResult(a, int(bonus), [i < a for i in range(gamma)], [int(t) for t in draft[:a]])


def verify_greedy(draft, target_logits: np.ndarray) -> VerifyResult:
    """Accept the longest prefix agreeing with the target argmax (ties to lowest id)."""
    draft = np.asarray(draft, dtype=np.int64)
    target_logits = np.asarray(target_logits)
    if target_logits.ndim != 2 or target_logits.shape[0] != len(draft) + 1:
        raise ValueError(f"need {len(draft) + 1} logit rows for {len(draft)} draft tokens, got {target_logits.shape}")
    best = np.argmax(target_logits, axis=1)
    a = 0
    while a < len(draft) and draft[a] == best[a]:
        a += 1
    return _result(draft, a, best[a])


def residual_distribution(p: np.ndarray, q: np.ndarray) -> np.ndarray:
    """``normalize(max(0, p - q))``; falls back to ``p`` when the residual is empty."""
    r = np.maximum(p - q, 0.0)
    total = r.sum()
    return r / total if total > 0 else p


def verify_stochastic(draft, q: np.ndarray, p: np.ndarray, rng: np.random.Generator) -> VerifyResult:
    """Lossless rejection rule.

    Accept draft token ``x_i`` with probability ``min(1, p_i(x_i) / q_i(x_i))``;
    on the first rejection emit a sample from the residual and stop. If every
    token survives, the bonus token is drawn from ``p[gamma]``.
    """
    draft = np.asarray(draft, dtype=np.int64)
    gamma = len(draft)
    if q.shape[0] != gamma or p.shape[0] != gamma + 1 or q.shape[1] != p.shape[1]:
        raise ValueError(f"shape mismatch: draft {gamma}, q {q.shape}, p {p.shape}")
    for i, x in enumerate(draft):
        qx = q[i, x]
        if qx <= 0:
            raise ContractViolation(f"draft token {x} at position {i} has zero draft probability")
        ratio = p[i, x] / qx
        if ratio >= 1.0 or rng.random() < ratio:
            continue
        return _result(draft, i, sample_index(residual_distribution(p[i], q[i]), rng))
    return _result(draft, gamma, sample_index(p[gamma], rng))
