"""Training corpora sampled from the target, their context features, and block batches."""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path
from typing import Iterator, Sequence

import numpy as np

from ..drafter.common import sample_index
from ..lm.tabular import TabularTarget
from ..lm.vocab import ReservedTokenError, Vocabulary
from ..numerics import no_grad, softmax_np

CORPUS_HEADER = "# blockspec corpus"


@dataclass
class TrainBatch:
    """One batch of blocks: padded context features plus block ground truth.

    ``contexts[n, :offsets[n]]`` holds the target features of the prefix
    before the anchor ``seq[offsets[n]]``; later rows are padding.
    """

    contexts: np.ndarray
    ctx_mask: np.ndarray
    anchors: np.ndarray
    targets: np.ndarray
    offsets: np.ndarray
    seq_ids: np.ndarray

    @property
    def size(self) -> int:
        return len(self.anchors)

    def last_features(self) -> np.ndarray:
        """Feature row right before each anchor, ``(N, d)``."""
        return self.contexts[np.arange(self.size), self.offsets - 1]


# ------------------------------------------------------------------- corpora


def sample_corpus(target, n: int, length: int, rng: np.random.Generator) -> np.ndarray:
    """``n`` sequences of ``length`` tokens (bos first) sampled at temperature 1."""
    if n < 0 or length < 1:
        raise ValueError("need n >= 0 and length >= 1")
    bos = target.vocab.bos_id if hasattr(target, "vocab") else None
    if isinstance(target, TabularTarget):
        return np.array([target.sample(length, rng) for _ in range(n)], dtype=np.int64).reshape(n, length)
    out = np.full((n, length), bos, dtype=np.int64)
    if n == 0 or length == 1:
        return out
    with no_grad():
        present: list = []
        logits, _ = target.forward(out[:, :1], present=present)
        kv = present
        for t in range(1, length):
            probs = softmax_np(logits.data[:, -1])
            out[:, t] = [sample_index(p, rng) for p in probs]
            if t == length - 1:
                break
            present = []
            logits, _ = target.forward(out[:, t : t + 1], past=kv, present=present)
            kv = present
    return out


def compute_features(target, seqs: np.ndarray, chunk: int = 64) -> np.ndarray:
    """Target context features ``(N, T, d)`` for equal-length sequences."""
    seqs = np.atleast_2d(np.asarray(seqs, dtype=np.int64))
    out = []
    with no_grad():
        for i in range(0, len(seqs), chunk):
            out.append(target.forward(seqs[i : i + chunk])[1].data)
    if not out:
        return np.zeros((0, seqs.shape[1], target.cfg.d_model))
    return np.concatenate(out, axis=0)


def write_corpus(path: str | Path, seqs: np.ndarray, meta: dict | None = None) -> None:
    """Line-delimited token ids under a one-line ``key=value`` header."""
    fields = " ".join(f"{k}={v}" for k, v in sorted((meta or {}).items()))
    lines = [f"{CORPUS_HEADER} {fields}".rstrip()]
    lines += [" ".join(str(int(t)) for t in row) for row in seqs]
    Path(path).write_text("\n".join(lines) + "\n")


def read_corpus(path: str | Path) -> tuple[np.ndarray, dict]:
    text = Path(path).read_text().splitlines()
    if not text or not text[0].startswith(CORPUS_HEADER):
        raise ValueError(f"{path}: missing corpus header")
    meta = dict(f.split("=", 1) for f in text[0][len(CORPUS_HEADER) :].split())
    rows = [[int(t) for t in line.split()] for line in text[1:] if line.strip()]
    if rows and len({len(r) for r in rows}) != 1:
        raise ValueError(f"{path}: sequences have different lengths")
    return np.array(rows, dtype=np.int64).reshape(len(rows), -1), meta


# ------------------------------------------------------------------- batches


def validate_corpus(seqs: np.ndarray, vocab: Vocabulary, block_size: int) -> None:
    seqs = np.asarray(seqs)
    if seqs.ndim != 2 or len(seqs) == 0:
        raise ValueError("corpus must be a non-empty (N, T) array")
    if seqs.shape[1] < block_size + 1:
        raise ValueError(f"sequences of length {seqs.shape[1]} cannot hold a block of {block_size} after a prefix")
    body = seqs[:, 1:]
    if np.isin(body, sorted(vocab.reserved)).any():
        raise ReservedTokenError("corpus continuations contain reserved token ids")


def make_batch(
    seqs: np.ndarray, features: np.ndarray, seq_ids: Sequence[int], offsets: Sequence[int], block_size: int
) -> TrainBatch:
    seq_ids = np.asarray(seq_ids, dtype=np.int64)
    offsets = np.asarray(offsets, dtype=np.int64)
    if (offsets < 1).any() or (offsets + block_size > seqs.shape[1]).any():
        raise ValueError("block offsets must leave a non-empty prefix and fit the block inside the sequence")
    Tc = int(offsets.max())
    N, d = len(seq_ids), features.shape[-1]
    contexts = np.zeros((N, Tc, d))
    mask = np.zeros((N, Tc), dtype=bool)
    for n, (s, t) in enumerate(zip(seq_ids, offsets)):
        contexts[n, :t] = features[s, :t]
        mask[n, :t] = True
    targets = np.stack([seqs[s, t + 1 : t + block_size] for s, t in zip(seq_ids, offsets)])
    return TrainBatch(contexts, mask, seqs[seq_ids, offsets], targets, offsets, seq_ids)


class BlockSampler:
    """Endless stream of batches; each epoch visits every sequence once, in a
    fresh random order, at a fresh uniformly drawn block offset."""

    def __init__(
        self,
        seqs: np.ndarray,
        features: np.ndarray,
        block_size: int,
        batch_size: int,
        rng: np.random.Generator,
        vocab: Vocabulary,
    ):
        validate_corpus(seqs, vocab, block_size)
        if features.shape[:2] != seqs.shape:
            raise ValueError(f"features {features.shape[:2]} do not cover sequences {seqs.shape}")
        self.seqs = np.asarray(seqs, dtype=np.int64)
        self.features = features
        self.block_size = block_size
        self.batch_size = batch_size
        self.rng = rng
        self._queue: list[tuple[int, int]] = []

    def _refill(self) -> None:
        N, T = self.seqs.shape
        order = self.rng.permutation(N)
        offsets = self.rng.integers(1, T - self.block_size + 1, size=N)
        self._queue.extend(zip(order.tolist(), offsets.tolist()))

    def next_batch(self) -> TrainBatch:
        while len(self._queue) < self.batch_size:
            self._refill()
        picked, self._queue = self._queue[: self.batch_size], self._queue[self.batch_size :]
        ids, offs = zip(*picked)
        return make_batch(self.seqs, self.features, ids, offs, self.block_size)

    def __iter__(self) -> Iterator[TrainBatch]:
        while True:
            yield self.next_batch()


def all_blocks(seqs: np.ndarray, features: np.ndarray, block_size: int, stride: int = 1) -> Iterator[TrainBatch]:
    """Every valid block of every sequence, one batch per sequence (for held-out evaluation)."""
    T = seqs.shape[1]
    offsets = np.arange(1, T - block_size + 1, stride)
    for s in range(len(seqs)):
        yield make_batch(seqs, features, [s] * len(offsets), offsets, block_size)
