"""Transformer building blocks shared by the target and the block drafter."""

from __future__ import annotations

import numpy as np

from ..numerics import ParamSet, Tensor, affine, concat, rms_norm

NEG_INF = -1e9


def init_linear(rng: np.random.Generator, fan_in: int, fan_out: int, scale: float = 1.0) -> np.ndarray:
    return rng.normal(0.0, scale / np.sqrt(fan_in), size=(fan_in, fan_out))


def add_attention_params(params: ParamSet, prefix: str, d: int, rng: np.random.Generator, out_scale: float) -> None:
    params.add(f"{prefix}.norm", np.ones(d))
    for name in ("wq", "wk", "wv"):
        params.add(f"{prefix}.{name}", init_linear(rng, d, d))
    params.add(f"{prefix}.wo", init_linear(rng, d, d, out_scale))


def add_mlp_params(params: ParamSet, prefix: str, d: int, hidden: int, rng: np.random.Generator, out_scale: float) -> None:
    params.add(f"{prefix}.norm", np.ones(d))
    params.add(f"{prefix}.w_in", init_linear(rng, d, hidden))
    params.add(f"{prefix}.b_in", np.zeros(hidden))
    params.add(f"{prefix}.w_out", init_linear(rng, hidden, d, out_scale))


def split_heads(x: Tensor, n_heads: int) -> Tensor:
    N, T, d = x.shape
    return x.reshape(N, T, n_heads, d // n_heads).transpose(0, 2, 1, 3)


def merge_heads(x: Tensor) -> Tensor:
    N, H, T, dh = x.shape
    return x.transpose(0, 2, 1, 3).reshape(N, T, H * dh)


def attention(
    params: ParamSet,
    prefix: str,
    xq: Tensor,
    xkv: Tensor,
    n_heads: int,
    mask: np.ndarray | None,
    past: tuple[np.ndarray, np.ndarray] | None = None,
    present: list | None = None,
) -> Tensor:
    """Multi-head attention of normalized queries ``xq`` over keys/values ``xkv``.

    ``mask`` is boolean, broadcastable to ``(N, 1, Tq, Tk)``; False entries are
    excluded. Inputs are expected to be normalized already. ``past`` holds
    cached per-head keys/values that are prepended to the fresh ones; when
    ``present`` is a list the full key/value arrays are appended to it.
    """
    q = split_heads(affine(xq, params[f"{prefix}.wq"]), n_heads)
    k = split_heads(affine(xkv, params[f"{prefix}.wk"]), n_heads)
    v = split_heads(affine(xkv, params[f"{prefix}.wv"]), n_heads)
    if past is not None:
        k = concat([Tensor(past[0]), k], axis=2)
        v = concat([Tensor(past[1]), v], axis=2)
    if present is not None:
        present.append((k.data, v.data))
    dh = q.shape[-1]
    scores = (q @ k.swapaxes(-1, -2)) * (1.0 / np.sqrt(dh))
    if mask is not None:
        scores = scores + np.where(mask, 0.0, NEG_INF)
    weights = scores.softmax(axis=-1)
    return affine(merge_heads(weights @ v), params[f"{prefix}.wo"])


def mlp(params: ParamSet, prefix: str, x: Tensor) -> Tensor:
    h = rms_norm(x, params[f"{prefix}.norm"])
    return affine(affine(h, params[f"{prefix}.w_in"], params[f"{prefix}.b_in"]).silu(), params[f"{prefix}.w_out"])


def causal_mask(T: int) -> np.ndarray:
    return np.tril(np.ones((T, T), dtype=bool))
