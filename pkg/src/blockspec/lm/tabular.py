"""Exact n-gram targets (order 1 or 2) used as losslessness oracles and toy sources."""

from __future__ import annotations

import hashlib
from pathlib import Path
from typing import Sequence

import numpy as np

from .vocab import ReservedTokenError

ROW_TOL = 1e-12


class TabularTarget:
    """``p(next | last n tokens)`` stored as a ``(V**n, V)`` table.

    ``reserved`` ids may never appear in a queried context and carry zero
    probability in every row. ``start`` is the distribution of each of the
    first ``n`` tokens when sampling from scratch.
    """

    def __init__(
        self,
        table: np.ndarray,
        order: int,
        reserved: Sequence[int] = (),
        start: np.ndarray | None = None,
    ):
        if order not in (1, 2):
            raise ValueError("order must be 1 or 2")
        table = np.asarray(table, dtype=np.float64)
        V = table.shape[-1]
        table = table.reshape(V**order, V)
        if np.any(table < 0):
            raise ValueError("negative probability in table")
        self.reserved = frozenset(int(r) for r in reserved)
        if self.reserved and np.any(table[:, sorted(self.reserved)] != 0):
            raise ValueError("reserved ids must have zero probability")
        live = [i for i in range(V**order) if not self._ctx_has_reserved(i, V, order)]
        sums = table[live].sum(axis=1)
        if np.any(np.abs(sums - 1.0) > ROW_TOL):
            raise ValueError("table rows must sum to 1")
        self.table = table
        self.order = order
        self.vocab_size = V
        if start is None:
            start = np.zeros(V)
            regular = [t for t in range(V) if t not in self.reserved]
            start[regular] = 1.0 / len(regular)
        self.start = np.asarray(start, dtype=np.float64)

    def _ctx_has_reserved(self, idx: int, V: int, order: int) -> bool:
        for _ in range(order):
            if idx % V in self.reserved:
                return True
            idx //= V
        return False

    def context_index(self, context: Sequence[int]) -> int:
        idx = 0
        for t in context:
            t = int(t)
            if not 0 <= t < self.vocab_size or t in self.reserved:
                raise ReservedTokenError(f"context token {t} is reserved or out of range")
            idx = idx * self.vocab_size + t
        return idx

    def next_dist(self, prefix: Sequence[int]) -> np.ndarray:
        if len(prefix) < self.order:
            raise ValueError(f"prefix shorter than model order {self.order}")
        return self.table[self.context_index(prefix[-self.order :])]

    # decode-loop target protocol ------------------------------------------

    def verify_pass(self, prefix: Sequence[int], draft: Sequence[int]) -> np.ndarray:
        """Log-probability rows for each draft position plus the bonus position."""
        seq = list(prefix) + list(draft)
        n = len(prefix)
        rows = np.stack([self.next_dist(seq[: n + i]) for i in range(len(draft) + 1)])
        with np.errstate(divide="ignore"):
            return np.log(rows)

    def session(self, prompt: Sequence[int], cached: bool = True) -> TabularSession:
        return TabularSession(self, prompt)

    # sampling ----------------------------------------------------------------

    def sample(self, length: int, rng: np.random.Generator, prompt: Sequence[int] = ()) -> list[int]:
        seq = list(prompt)
        while len(seq) < min(self.order, length):
            seq.append(int(rng.choice(self.vocab_size, p=self.start)))
        while len(seq) < length:
            seq.append(int(rng.choice(self.vocab_size, p=self.next_dist(seq))))
        return seq

    # serialization -----------------------------------------------------------

    def save(self, path: str | Path) -> None:
        lines = [
            f"# tabular order={self.order} vocab={self.vocab_size} "
            f"reserved={','.join(str(r) for r in sorted(self.reserved))}",
            "start " + " ".join(repr(float(p)) for p in self.start),
        ]
        V = self.vocab_size
        for idx in range(V**self.order):
            if self._ctx_has_reserved(idx, V, self.order):
                continue
            ctx = np.unravel_index(idx, (V,) * self.order)
            lines.append(" ".join(str(int(c)) for c in ctx) + " " + " ".join(repr(float(p)) for p in self.table[idx]))
        Path(path).write_text("\n".join(lines) + "\n")

    @classmethod
    def load(cls, path: str | Path) -> TabularTarget:
        text = Path(path).read_text().splitlines()
        header = dict(kv.split("=", 1) for kv in text[0].lstrip("# ").split()[1:])
        order, V = int(header["order"]), int(header["vocab"])
        reserved = [int(r) for r in header["reserved"].split(",") if r]
        start = np.array([float(x) for x in text[1].split()[1:]])
        table = np.zeros((V**order, V))
        for line in text[2:]:
            if not line.strip():
                continue
            fields = line.split()
            ctx = [int(x) for x in fields[:order]]
            idx = int(np.ravel_multi_index(ctx, (V,) * order))
            table[idx] = [float(x) for x in fields[order:]]
        return cls(_fill_reserved_rows(table, V, order, frozenset(reserved)), order, reserved, start)

    def digest(self) -> str:
        return hashlib.sha256(self.table.tobytes() + bytes([self.order])).hexdigest()


class TabularSession:
    features = None

    def __init__(self, model: TabularTarget, prompt: Sequence[int]):
        model.next_dist(prompt)
        self.model = model
        self.tokens = [int(t) for t in prompt]

    def verify(self, draft: Sequence[int]) -> np.ndarray:
        return self.model.verify_pass(self.tokens, draft)

    def commit(self, accepted: Sequence[int], bonus: int) -> None:
        self.tokens.extend(int(t) for t in accepted)
        self.tokens.append(int(bonus))


def tabular_next_dist(model: TabularTarget, prefix: Sequence[int]) -> np.ndarray:
    return model.next_dist(prefix)


def _fill_reserved_rows(table: np.ndarray, V: int, order: int, reserved: frozenset[int]) -> np.ndarray:
    # rows whose context contains a reserved id are never queried; keep them valid anyway
    for idx in range(V**order):
        j, hit = idx, False
        for _ in range(order):
            hit |= (j % V) in reserved
            j //= V
        if hit:
            row = np.zeros(V)
            regular = [t for t in range(V) if t not in reserved]
            row[regular] = 1.0 / len(regular)
            table[idx] = row
    return table


def random_tabular(
    V: int, order: int, rng: np.random.Generator, concentration: float = 1.0, reserved: Sequence[int] = ()
) -> TabularTarget:
    reserved = frozenset(reserved)
    regular = [t for t in range(V) if t not in reserved]
    table = np.zeros((V**order, V))
    table[:, regular] = rng.dirichlet(np.full(len(regular), concentration), size=V**order)
    return TabularTarget(_fill_reserved_rows(table, V, order, reserved), order, reserved)


def uniform_tabular(V: int, order: int = 1) -> TabularTarget:
    return TabularTarget(np.full((V**order, V), 1.0 / V), order)


def cycle_tabular(V: int, cycle: Sequence[int] | None = None, reserved: Sequence[int] = ()) -> TabularTarget:
    """Deterministic order-1 target: each cycle token is followed by the next one."""
    reserved = frozenset(reserved)
    cycle = list(cycle) if cycle is not None else [t for t in range(V) if t not in reserved]
    table = np.zeros((V, V))
    for i, tok in enumerate(cycle):
        table[tok, cycle[(i + 1) % len(cycle)]] = 1.0
    others = [t for t in range(V) if t not in reserved and t not in cycle]
    for tok in others:
        table[tok, cycle[0]] = 1.0
    start = np.zeros(V)
    start[cycle] = 1.0 / len(cycle)
    return TabularTarget(_fill_reserved_rows(table, V, 1, reserved), 1, reserved, start)


def words_tabular(
    V: int,
    n_words: int,
    word_len: int,
    rng: np.random.Generator,
    reserved: Sequence[int] = (),
    word_probs: Sequence[float] | None = None,
) -> TabularTarget:
    """Order-1 "word" language: words use disjoint tokens, so within a word the
    next token is deterministic; after a word's last token the next word is drawn
    from ``word_probs``. Every block that crosses a word boundary has strong
    intra-block dependence.
    """
    reserved = frozenset(reserved)
    regular = [t for t in range(V) if t not in reserved]
    if n_words * word_len > len(regular):
        raise ValueError("not enough regular tokens for the requested words")
    chosen = rng.permutation(regular)[: n_words * word_len].reshape(n_words, word_len)
    probs = np.full(n_words, 1.0 / n_words) if word_probs is None else np.asarray(word_probs, dtype=float)
    probs = probs / probs.sum()
    table = np.zeros((V, V))
    for w in chosen:
        for a, b in zip(w[:-1], w[1:]):
            table[a, b] = 1.0
        table[w[-1], chosen[:, 0]] = probs
    used = set(chosen.reshape(-1).tolist())
    for tok in regular:
        if tok not in used:
            table[tok, chosen[:, 0]] = probs
    start = np.zeros(V)
    start[chosen[:, 0]] = probs
    target = TabularTarget(_fill_reserved_rows(table, V, 1, reserved), 1, reserved, start)
    target.words = chosen
    return target
