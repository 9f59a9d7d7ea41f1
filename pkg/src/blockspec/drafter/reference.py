"""Drafters with known behaviour, for bounds checks and exact oracles."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..numerics import softmax_np
from .common import Counters, DraftBlock, pick_token, sample_index


@dataclass
class OracleDrafter:
    """Drafts with the target itself, so every draft token is accepted."""

    target: object
    counters: Counters = field(default_factory=Counters)
    method: str = "oracle"

    def propose(self, tokens, features, gamma: int, greedy: bool, rng) -> DraftBlock:
        prefix = list(tokens)
        drafted: list[int] = []
        q = []
        for _ in range(gamma):
            row = self.target.verify_pass(prefix, drafted)[-1]
            self.counters.net_calls += 1
            self.counters.head_calls += 1
            tok = pick_token(row, greedy, rng)
            drafted.append(tok)
            q.append(softmax_np(row))
        q = np.stack(q)
        with np.errstate(divide="ignore"):
            logits = np.log(q)
        return DraftBlock(anchor=prefix[-1], tokens=np.asarray(drafted), q=q, final_logits=logits)


@dataclass
class ConstantDrafter:
    """Always proposes ``token`` with probability one."""

    token: int
    vocab_size: int
    counters: Counters = field(default_factory=Counters)
    method: str = "constant"

    def propose(self, tokens, features, gamma: int, greedy: bool, rng) -> DraftBlock:
        self.counters.net_calls += 1
        self.counters.head_calls += 1
        q = np.zeros((gamma, self.vocab_size))
        q[:, self.token] = 1.0
        with np.errstate(divide="ignore"):
            logits = np.log(q)
        return DraftBlock(anchor=int(tokens[-1]), tokens=np.full(gamma, self.token), q=q, final_logits=logits)


@dataclass
class TabularDrafter:
    """Autoregressive drafter backed by an n-gram table (``TabularTarget``)."""

    table: object
    counters: Counters = field(default_factory=Counters)
    method: str = "tabular"

    def propose(self, tokens, features, gamma: int, greedy: bool, rng) -> DraftBlock:
        seq = list(tokens)
        drafted, q = [], []
        for _ in range(gamma):
            row = self.table.next_dist(seq)
            self.counters.net_calls += 1
            self.counters.head_calls += 1
            tok = int(np.argmax(row)) if greedy else sample_index(row, rng)
            seq.append(tok)
            drafted.append(tok)
            q.append(row)
        q = np.stack(q)
        with np.errstate(divide="ignore"):
            logits = np.log(q)
        return DraftBlock(anchor=int(tokens[-1]), tokens=np.asarray(drafted), q=q, final_logits=logits)
