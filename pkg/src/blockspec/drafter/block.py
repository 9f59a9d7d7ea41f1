"""Parallel block drafter with a causal logit-correction head.

The backbone turns ``[anchor, MASK, ..., MASK]`` plus the target's context
features into hidden states for the whole block in one pass; the frozen
target LM head maps them to base logits. The correction head then walks the
block left to right: a GRU summarizes the embeddings of tokens drafted so
far and a rank-``r`` bottleneck turns ``[H_i; S_{i-1}]`` into a logit
residual, so the sequential part never touches the full LM head.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..lm import layers
from ..lm.vocab import ReservedTokenError, Vocabulary
from ..numerics import ParamSet, ShapeError, Tensor, affine, concat, embedding, no_grad, rms_norm, softmax_np
from .common import Counters, DraftBlock, pick_token

GRU_GATES = ("z", "r", "h")


@dataclass(frozen=True)
class DrafterConfig:
    vocab_size: int = 64
    mask_id: int = 63
    bos_id: int = 62
    d_model: int = 64
    ctx_dim: int = 64
    n_layers: int = 2
    n_heads: int = 2
    block_size: int = 8
    d_state: int = 32
    rank: int = 16
    mlp_mult: int = 2
    # the GRU reads rows of the drafter's own input embedding table
    gru_input: str = "drafter_embed"
    # backbone wiring: block queries attend over [projected context ; block]
    backbone_wiring: str = "ctx_concat_block_kv"

    @property
    def vocab(self) -> Vocabulary:
        return Vocabulary(self.vocab_size, self.mask_id, self.bos_id)

    @property
    def gamma(self) -> int:
        return self.block_size - 1


@dataclass
class CausalState:
    """GRU summary ``S_i`` of the drafted tokens at positions ``1..i``."""

    vector: np.ndarray
    position: int

    @classmethod
    def initial(cls, d_state: int) -> CausalState:
        return cls(np.zeros(d_state), 0)


def build_masked_block(anchor: int, block_size: int, vocab: Vocabulary) -> list[int]:
    if block_size < 2:
        raise ValueError("block size must be at least 2")
    if not 0 <= int(anchor) < vocab.size or int(anchor) in vocab.reserved:
        raise ReservedTokenError(f"anchor {anchor} is reserved or out of range")
    return [int(anchor)] + [vocab.mask_id] * (block_size - 1)


def init_block_drafter(
    cfg: DrafterConfig,
    lm_head: Tensor,
    rng: np.random.Generator,
    embed_init: np.ndarray | None = None,
) -> ParamSet:
    """Fresh drafter parameters; ``lm_head`` is shared and registered frozen.

    The correction output matrix ``head.w2`` starts at zero so the untrained
    head reproduces the backbone distribution exactly.
    """
    d, V, ds, r = cfg.d_model, cfg.vocab_size, cfg.d_state, cfg.rank
    if lm_head.shape != (d, V):
        raise ShapeError(f"lm_head shape {lm_head.shape} does not match ({d}, {V})")
    out_scale = 1.0 / np.sqrt(2 * cfg.n_layers)
    p = ParamSet()
    p.add("embed", embed_init.copy() if embed_init is not None else rng.normal(0.0, 1.0, size=(V, d)))
    p.add("backbone.ctx_proj", layers.init_linear(rng, cfg.ctx_dim, d))
    p.add("backbone.block_pos", rng.normal(0.0, 0.1, size=(cfg.block_size, d)))
    for i in range(cfg.n_layers):
        layers.add_attention_params(p, f"backbone.layer{i}.attn", d, rng, out_scale)
        layers.add_mlp_params(p, f"backbone.layer{i}.mlp", d, cfg.mlp_mult * d, rng, out_scale)
    p.add("backbone.final_norm", np.ones(d))
    for g in GRU_GATES:
        p.add(f"head.gru.w_{g}", layers.init_linear(rng, d, ds))
        p.add(f"head.gru.u_{g}", layers.init_linear(rng, ds, ds))
        p.add(f"head.gru.b_{g}", np.zeros(ds))
    p.add("head.w1", layers.init_linear(rng, d + ds, r))
    p.add("head.b1", np.zeros(r))
    p.add("head.w2", np.zeros((r, V)))
    p.add("lm_head", lm_head, frozen=True)
    return p


def backbone_param_names(params: ParamSet) -> list[str]:
    return ["embed"] + params.names("backbone.")


def head_param_names(params: ParamSet) -> list[str]:
    return params.names("head.")


# --------------------------------------------------------------------- backbone


def backbone_forward(
    params: ParamSet,
    cfg: DrafterConfig,
    context: Tensor | np.ndarray,
    blocks: np.ndarray,
    ctx_mask: np.ndarray | None = None,
) -> Tensor:
    """Hidden states ``(N, B, d)`` for every block position in one pass.

    ``context`` is ``(N, Tc, ctx_dim)`` (or ``(Tc, ctx_dim)`` for one block);
    ``ctx_mask`` marks valid context rows when sequences are padded.
    """
    blocks = np.atleast_2d(np.asarray(blocks, dtype=np.int64))
    C = context if isinstance(context, Tensor) else Tensor(context)
    if C.ndim == 2:
        C = C.reshape(1, *C.shape)
    N, B = blocks.shape
    if C.shape[0] != N:
        raise ShapeError(f"context batch {C.shape[0]} != block batch {N}")
    if C.shape[1] == 0:
        raise ValueError("context features must be non-empty")
    if C.shape[2] != cfg.ctx_dim:
        raise ShapeError(f"context dim {C.shape[2]} != configured {cfg.ctx_dim}")
    if B != cfg.block_size:
        raise ShapeError(f"block length {B} != configured block size {cfg.block_size}")
    Tc = C.shape[1]
    if ctx_mask is None:
        ctx_mask = np.ones((N, Tc), dtype=bool)
    mask = np.concatenate([ctx_mask, np.ones((N, B), dtype=bool)], axis=1)[:, None, None, :]

    h = embedding(params["embed"], blocks) + params["backbone.block_pos"]
    ctx = affine(C, params["backbone.ctx_proj"])
    for i in range(cfg.n_layers):
        a = f"backbone.layer{i}.attn"
        x = rms_norm(h, params[f"{a}.norm"])
        kv = concat([ctx, x], axis=1)
        h = h + layers.attention(params, a, x, kv, cfg.n_heads, mask)
        h = h + layers.mlp(params, f"backbone.layer{i}.mlp", h)
    return rms_norm(h, params["backbone.final_norm"])


def base_logits(H: Tensor, lm_head: Tensor) -> Tensor:
    """Full-vocabulary projection of every block position in one matmul."""
    return H @ lm_head


# ------------------------------------------------------------------------ head


def gru_step(params: ParamSet, S: Tensor, E: Tensor) -> Tensor:
    """``S' = (1 - z) * S + z * h~`` with reset gate applied before ``U_h``."""
    p = params
    z = (affine(E, p["head.gru.w_z"]) + affine(S, p["head.gru.u_z"]) + p["head.gru.b_z"]).sigmoid()
    r = (affine(E, p["head.gru.w_r"]) + affine(S, p["head.gru.u_r"]) + p["head.gru.b_r"]).sigmoid()
    cand = (affine(E, p["head.gru.w_h"]) + affine(r * S, p["head.gru.u_h"]) + p["head.gru.b_h"]).tanh()
    return (1.0 - z) * S + z * cand


def correction_logits(params: ParamSet, H_i: Tensor, S_prev: Tensor) -> Tensor:
    """``W2 · silu(W1 [H_i; S_prev] + b1)``."""
    hidden = affine(concat([H_i, S_prev], axis=-1), params["head.w1"], params["head.b1"]).silu()
    return affine(hidden, params["head.w2"])


def correction_flops(d_model: int, d_state: int, rank: int, vocab_size: int) -> int:
    """Multiply-accumulates per position for the rank-``r`` correction."""
    return (d_model + d_state) * rank + rank * vocab_size


def full_head_flops(d_model: int, vocab_size: int) -> int:
    return d_model * vocab_size


# ----------------------------------------------------------------------- rollout


def block_rollout(
    params: ParamSet,
    cfg: DrafterConfig,
    features: np.ndarray,
    anchor: int,
    greedy: bool,
    rng: np.random.Generator | None,
    use_head: bool = True,
    counters: Counters | None = None,
) -> DraftBlock:
    """Draft ``B - 1`` tokens after ``anchor``.

    One backbone forward and one batched LM-head projection, then per
    position: correction from the previous causal state, pick the token from
    the corrected distribution, fold its embedding into the state.
    """
    block = build_masked_block(anchor, cfg.block_size, cfg.vocab)
    with no_grad():
        H = backbone_forward(params, cfg, features, np.asarray([block]))
        base = base_logits(H, params["lm_head"]).data[0, 1:]
        if counters is not None:
            counters.net_calls += 1
            counters.head_calls += 1
        Hd = H.data[0]
        gamma = cfg.block_size - 1
        tokens = np.zeros(gamma, dtype=np.int64)
        corrections = np.zeros_like(base)
        S = Tensor(np.zeros((1, cfg.d_state)))
        states = [CausalState(S.data[0].copy(), 0)]
        embed = params["embed"]
        for i in range(gamma):
            if use_head:
                corrections[i] = correction_logits(params, Tensor(Hd[i + 1][None]), S).data[0]
                if counters is not None:
                    counters.dhead_steps += 1
            tok = pick_token(base[i] + corrections[i], greedy, rng, forbid=cfg.vocab.reserved)
            tokens[i] = tok
            if use_head and i < gamma - 1:
                S = gru_step(params, S, embed[np.array([tok])])
                states.append(CausalState(S.data[0].copy(), i + 1))
    final = base + corrections
    return DraftBlock(
        anchor=int(anchor),
        block_input=block,
        tokens=tokens,
        base_logits=base,
        correction=corrections,
        final_logits=final,
        q=softmax_np(_forbid(final, cfg.vocab.reserved)),
        hidden=Hd,
        states=states,
    )


def _forbid(logits: np.ndarray, reserved) -> np.ndarray:
    out = logits.copy()
    out[..., sorted(reserved)] = -np.inf
    return out


@dataclass
class BlockDrafter:
    """Backbone plus optional correction head behind the decode-loop drafter API."""

    params: ParamSet
    cfg: DrafterConfig
    use_head: bool = True
    counters: Counters = field(default_factory=Counters)

    @property
    def method(self) -> str:
        return "block+head" if self.use_head else "block"

    def propose(self, tokens, features, gamma: int, greedy: bool, rng) -> DraftBlock:
        if gamma != self.cfg.block_size - 1:
            raise ValueError(f"block drafter drafts exactly {self.cfg.block_size - 1} tokens, asked for {gamma}")
        if features is None or len(features) == 0:
            raise ValueError("block drafter needs target context features")
        return block_rollout(self.params, self.cfg, features, tokens[-1], greedy, rng, self.use_head, self.counters)

    def head_params(self) -> int:
        return sum(self.params[n].size for n in head_param_names(self.params))

    def backbone_params(self) -> int:
        return sum(self.params[n].size for n in backbone_param_names(self.params))
