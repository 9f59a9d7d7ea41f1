"""Exact path enumeration of speculative sampling over tabular models.

Every draft sample, accept/reject decision and residual/bonus draw is
expanded with its exact probability, giving the distribution over the first
``horizon`` emitted tokens. Comparing it with the target's own
autoregressive distribution measures how far verification is from lossless.
"""

from __future__ import annotations

from collections import defaultdict
from typing import Sequence

import numpy as np

from ..lm.tabular import TabularTarget
from .verify import residual_distribution

MAX_VOCAB = 8
MAX_GAMMA = 3
MAX_HORIZON = 4


class EnumerationCapError(ValueError):
    pass


def _check_caps(V: int, gamma: int, horizon: int) -> None:
    if V > MAX_VOCAB or gamma > MAX_GAMMA or horizon > MAX_HORIZON:
        raise EnumerationCapError(
            f"enumeration limited to V<={MAX_VOCAB}, gamma<={MAX_GAMMA}, horizon<={MAX_HORIZON}; "
            f"got V={V}, gamma={gamma}, horizon={horizon}"
        )
    if gamma < 1 or horizon < 1:
        raise ValueError("gamma and horizon must be positive")


def target_sequence_distribution(target: TabularTarget, prompt: Sequence[int], horizon: int) -> dict[tuple, float]:
    out: dict[tuple, float] = {(): 1.0}
    for _ in range(horizon):
        nxt: dict[tuple, float] = defaultdict(float)
        for seq, pr in out.items():
            row = target.next_dist(list(prompt) + list(seq))
            for tok in np.flatnonzero(row):
                nxt[seq + (int(tok),)] += pr * row[tok]
        out = nxt
    return dict(out)


def cycle_outcomes(target: TabularTarget, drafter: TabularTarget, prefix: list[int], gamma: int) -> dict[tuple, float]:
    """Distribution of the tokens one draft-then-verify cycle emits after ``prefix``."""
    out: dict[tuple, float] = defaultdict(float)

    def walk(drafted: list[int], mass: float) -> None:
        ctx = prefix + drafted
        q = drafter.next_dist(ctx)
        p = target.next_dist(ctx)
        residual = None
        for x in np.flatnonzero(q):
            x = int(x)
            accept = min(1.0, p[x] / q[x])
            m = mass * q[x]
            if accept > 0:
                if len(drafted) + 1 == gamma:
                    bonus = target.next_dist(ctx + [x])
                    for y in np.flatnonzero(bonus):
                        out[tuple(drafted) + (x, int(y))] += m * accept * bonus[y]
                else:
                    walk(drafted + [x], m * accept)
            if accept < 1:
                if residual is None:
                    residual = residual_distribution(p, q)
                for y in np.flatnonzero(residual):
                    out[tuple(drafted) + (int(y),)] += m * (1.0 - accept) * residual[y]

    walk([], 1.0)
    return dict(out)


def speculative_sequence_distribution(
    target: TabularTarget,
    drafter: TabularTarget,
    gamma: int,
    horizon: int,
    prompt: Sequence[int],
) -> dict[tuple, float]:
    memo: dict[tuple, dict[tuple, float]] = {}

    def dist(prefix: tuple, remaining: int) -> dict[tuple, float]:
        key = (prefix[-max(target.order, drafter.order) :], remaining)
        if key in memo:
            return memo[key]
        out: dict[tuple, float] = defaultdict(float)
        for emitted, pr in cycle_outcomes(target, drafter, list(prefix), gamma).items():
            head = emitted[:remaining]
            if len(head) == remaining:
                out[head] += pr
                continue
            for tail, pt in dist(prefix + head, remaining - len(head)).items():
                out[head + tail] += pr * pt
        memo[key] = dict(out)
        return memo[key]

    return dist(tuple(int(t) for t in prompt), horizon)


def total_variation(a: dict, b: dict) -> float:
    keys = set(a) | set(b)
    return float(0.5 * sum(abs(a.get(k, 0.0) - b.get(k, 0.0)) for k in keys))


def enumerate_losslessness(
    target: TabularTarget,
    drafter: TabularTarget,
    gamma: int,
    horizon: int,
    prompt: Sequence[int] | None = None,
) -> float:
    """TV distance between speculative output and target output over ``horizon`` tokens."""
    _check_caps(target.vocab_size, gamma, horizon)
    if drafter.vocab_size != target.vocab_size:
        raise ValueError("drafter and target vocabularies differ")
    if prompt is None:
        regular = [t for t in range(target.vocab_size) if t not in target.reserved]
        prompt = [regular[0]] * max(target.order, drafter.order)
    spec = speculative_sequence_distribution(target, drafter, gamma, horizon, prompt)
    ref = target_sequence_distribution(target, prompt, horizon)
    return total_variation(spec, ref)


def adversarial_drafter(target: TabularTarget) -> TabularTarget:
    """Puts all mass on the target's least likely token in every context."""
    V = target.vocab_size
    table = np.zeros_like(target.table)
    regular = np.array([t for t in range(V) if t not in target.reserved])
    for idx, row in enumerate(target.table):
        table[idx, regular[np.argmin(row[regular])]] = 1.0
    return TabularTarget(table, target.order, target.reserved, target.start)
