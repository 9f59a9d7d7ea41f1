"""Composite differentiable operations built on :class:`Tensor`."""

from __future__ import annotations

from typing import Sequence

import numpy as np

from .tensor import ShapeError, Tensor, as_tensor

ACTIVATIONS = ("silu", "sigmoid", "tanh", "log_softmax")


def affine(x: Tensor, W: Tensor, b: Tensor | None = None) -> Tensor:
    """Return ``x @ W + b``; ``x`` may carry any number of leading batch axes."""
    x, W = as_tensor(x), as_tensor(W)
    if x.ndim == 1:
        x = x.reshape(1, -1)
        squeeze = True
    else:
        squeeze = False
    if x.shape[-1] != W.shape[0]:
        raise ShapeError(f"affine: input dim {x.shape[-1]} != weight rows {W.shape[0]}")
    if b is not None and as_tensor(b).shape[-1] != W.shape[1]:
        raise ShapeError(f"affine: bias dim {as_tensor(b).shape[-1]} != weight cols {W.shape[1]}")
    out = x @ W
    if b is not None:
        out = out + b
    return out.reshape(-1) if squeeze else out


def activation(x: Tensor, kind: str) -> Tensor:
    x = as_tensor(x)
    if not np.all(np.isfinite(x.data)):
        raise FloatingPointError(f"non-finite input to {kind}")
    if kind == "silu":
        return x.silu()
    if kind == "sigmoid":
        return x.sigmoid()
    if kind == "tanh":
        return x.tanh()
    if kind == "log_softmax":
        return x.log_softmax(axis=-1)
    raise ValueError(f"unknown activation {kind!r}; expected one of {ACTIVATIONS}")


def rms_norm(x: Tensor, gain: Tensor, eps: float = 1e-6) -> Tensor:
    inv = ((x * x).mean(axis=-1, keepdims=True) + eps).pow(-0.5)
    return x * inv * gain


def embedding(table: Tensor, ids) -> Tensor:
    ids = np.asarray(ids, dtype=np.int64)
    if ids.size and (ids.min() < 0 or ids.max() >= table.shape[0]):
        raise IndexError(f"token id out of range for embedding of size {table.shape[0]}")
    return table[ids]


def weighted_cross_entropy(logits: Tensor, targets: Sequence[int], weights: Sequence[float]) -> Tensor:
    """Weighted mean of per-row negative log-likelihoods.

    ``logits`` has shape ``(..., P, V)``; ``targets`` and ``weights`` match the
    leading ``(..., P)`` axes. Returns ``sum(w * nll) / sum(w)``.
    """
    logits = as_tensor(logits)
    targets = np.asarray(targets, dtype=np.int64)
    weights = np.asarray(weights, dtype=np.float64)
    V = logits.shape[-1]
    rows = logits.reshape(-1, V)
    t = targets.reshape(-1)
    w = np.broadcast_to(weights, targets.shape).reshape(-1)
    if rows.shape[0] == 0:
        raise ValueError("weighted_cross_entropy: no positions")
    if rows.shape[0] != t.shape[0]:
        raise ShapeError(f"weighted_cross_entropy: {rows.shape[0]} rows vs {t.shape[0]} targets")
    if np.any(w < 0):
        raise ValueError("weighted_cross_entropy: negative weight")
    total = w.sum()
    if total <= 0:
        raise ValueError("weighted_cross_entropy: weights sum to zero")
    if t.min() < 0 or t.max() >= V:
        raise IndexError("weighted_cross_entropy: target outside vocabulary")
    logp = rows.log_softmax(axis=-1)
    picked = logp[np.arange(t.shape[0]), t]
    return -(picked * (w / total)).sum()
