from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from typing import Sequence

import numpy as np

from ..drafter.common import pick_token, sample_index
from ..numerics import softmax_np
from .verify import verify_greedy, verify_stochastic

TEMPERATURES = (0, 1)


@dataclass
class SpecMetrics:
    method: str
    gamma: int
    temperature: int
    cycles: int = 0
    tokens: int = 0
    tau_mean: float = 0.0
    # tau_hist[a] = number of cycles that accepted exactly a draft tokens
    tau_hist: list[int] = field(default_factory=list)
    net_calls: int = 0
    head_calls: int = 0
    seed: int | None = None
    verify_calls: int = 0

    def record(self, accepted: int) -> None:
        if not self.tau_hist:
            self.tau_hist = [0] * (self.gamma + 1)
        self.tau_hist[accepted] += 1
        self.cycles += 1

    def finalize(self) -> None:
        if self.cycles:
            self.tau_mean = sum((a + 1) * n for a, n in enumerate(self.tau_hist)) / self.cycles

    def merge(self, other: SpecMetrics) -> None:
        if not self.tau_hist:
            self.tau_hist = [0] * (self.gamma + 1)
        self.tau_hist = [a + b for a, b in zip(self.tau_hist, other.tau_hist or [0] * (self.gamma + 1))]
        self.cycles += other.cycles
        self.tokens += other.tokens
        self.net_calls += other.net_calls
        self.head_calls += other.head_calls
        self.verify_calls += other.verify_calls
        self.finalize()

    def to_dict(self) -> dict:
        keys = ("method", "gamma", "temperature", "cycles", "tokens", "tau_mean", "tau_hist", "net_calls", "head_calls", "seed")
        d = asdict(self)
        return {k: d[k] for k in keys}

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True)


def _gamma_for(drafter, gamma: int | None) -> int:
    if gamma is not None:
        return gamma
    cfg = getattr(drafter, "cfg", None)
    if cfg is not None and hasattr(cfg, "block_size"):
        return cfg.block_size - 1
    raise ValueError("gamma must be given for this drafter")


def decode_loop(
    target,
    drafter,
    prompt: Sequence[int],
    max_new: int,
    temperature: int = 0,
    rng: np.random.Generator | None = None,
    gamma: int | None = None,
    seed: int | None = None,
    cached: bool = True,
    stop_token: int | None = None,
) -> tuple[list[int], SpecMetrics]:
    """Draft, verify, append accepted tokens plus the bonus; repeat.

    Context features for newly verified positions come out of the same
    verification pass. Returns the full sequence (prompt included, truncated to
    ``len(prompt) + max_new``) and the run's metrics. Each cycle's advance
    is counted before truncation.
    """
    if temperature not in TEMPERATURES:
        raise ValueError(f"temperature must be one of {TEMPERATURES}")
    if temperature == 1 and rng is None:
        raise ValueError("temperature 1 needs an rng")
    gamma = _gamma_for(drafter, gamma)
    greedy = temperature == 0
    session = target.session(prompt, cached=cached)
    counters = getattr(drafter, "counters", None)
    start_net = counters.net_calls if counters else 0
    start_head = counters.head_calls if counters else 0
    metrics = SpecMetrics(getattr(drafter, "method", type(drafter).__name__), gamma, temperature, seed=seed)
    limit = len(prompt) + max_new
    while len(session.tokens) < limit:
        block = drafter.propose(session.tokens, session.features, gamma, greedy, rng)
        logits = session.verify(list(block.tokens))
        metrics.verify_calls += 1
        if greedy:
            res = verify_greedy(block.tokens, logits)
        else:
            res = verify_stochastic(block.tokens, block.q, softmax_np(logits), rng)
        session.commit(res.accepted_tokens, res.bonus_token)
        metrics.record(res.accepted_count)
        if stop_token is not None and stop_token in res.emitted:
            break
    out = session.tokens[:limit]
    if stop_token is not None and stop_token in out[len(prompt) :]:
        out = out[: out.index(stop_token, len(prompt)) + 1]
    metrics.tokens = len(out) - len(prompt)
    if counters:
        metrics.net_calls = counters.net_calls - start_net
        metrics.head_calls = counters.head_calls - start_head
    metrics.finalize()
    return out, metrics


def ar_decode(
    target,
    prompt: Sequence[int],
    max_new: int,
    temperature: int = 0,
    rng: np.random.Generator | None = None,
    cached: bool = True,
) -> list[int]:
    """Plain autoregressive decoding of the target (the reference output)."""
    session = target.session(prompt, cached=cached)
    limit = len(prompt) + max_new
    while len(session.tokens) < limit:
        row = session.verify([])[0]
        tok = pick_token(row, True, None) if temperature == 0 else sample_index(softmax_np(row), rng)
        session.commit([], tok)
    return session.tokens
