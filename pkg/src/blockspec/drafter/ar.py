"""Sequential feature-level drafter used as the autoregressive baseline.

Each step runs one small residual network over ``[norm(h); Embed(x)]`` and
then the full target LM head, so drafting ``gamma`` tokens costs ``gamma``
(net, head) pairs.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..lm import layers
from ..lm.vocab import Vocabulary
from ..numerics import ParamSet, ShapeError, Tensor, affine, concat, embedding, no_grad, rms_norm, softmax_np
from .common import Counters, DraftBlock, pick_token


@dataclass(frozen=True)
class ARConfig:
    vocab_size: int = 64
    mask_id: int = 63
    bos_id: int = 62
    d_model: int = 64
    ctx_dim: int = 64
    hidden: int = 128

    @property
    def vocab(self) -> Vocabulary:
        return Vocabulary(self.vocab_size, self.mask_id, self.bos_id)


def init_ar_drafter(
    cfg: ARConfig, lm_head: Tensor, rng: np.random.Generator, embed_init: np.ndarray | None = None
) -> ParamSet:
    d = cfg.d_model
    if lm_head.shape != (d, cfg.vocab_size):
        raise ShapeError(f"lm_head shape {lm_head.shape} does not match ({d}, {cfg.vocab_size})")
    p = ParamSet()
    p.add("embed", embed_init.copy() if embed_init is not None else rng.normal(0.0, 1.0, size=(cfg.vocab_size, d)))
    p.add("ar.ctx_proj", layers.init_linear(rng, cfg.ctx_dim, d))
    p.add("ar.norm", np.ones(d))
    p.add("ar.w_in", layers.init_linear(rng, 2 * d, cfg.hidden))
    p.add("ar.b_in", np.zeros(cfg.hidden))
    p.add("ar.w_out", layers.init_linear(rng, cfg.hidden, d, 0.5))
    p.add("ar.final_norm", np.ones(d))
    p.add("lm_head", lm_head, frozen=True)
    return p


def ar_initial_state(params: ParamSet, last_features: Tensor) -> Tensor:
    return affine(last_features, params["ar.ctx_proj"])


def ar_step(params: ParamSet, h: Tensor, token_ids) -> Tensor:
    x = concat([rms_norm(h, params["ar.norm"]), embedding(params["embed"], token_ids)], axis=-1)
    return h + affine(affine(x, params["ar.w_in"], params["ar.b_in"]).silu(), params["ar.w_out"])


def ar_logits(params: ParamSet, h: Tensor) -> Tensor:
    return rms_norm(h, params["ar.final_norm"]) @ params["lm_head"]


def ar_teacher_forced(params: ParamSet, last_features: Tensor, anchors, tokens: np.ndarray) -> Tensor:
    """Logits ``(N, gamma, V)`` when step ``k`` consumes the given token ``k - 1``.

    ``tokens`` is ``(N, gamma)``; only its first ``gamma - 1`` columns are read.
    """
    tokens = np.atleast_2d(tokens)
    h = ar_initial_state(params, last_features)
    prev = np.asarray(anchors, dtype=np.int64)
    out = []
    for k in range(tokens.shape[1]):
        h = ar_step(params, h, prev)
        out.append(ar_logits(params, h).reshape(h.shape[0], 1, -1))
        prev = tokens[:, k]
    return concat(out, axis=1)


def ar_rollout(
    params: ParamSet,
    cfg: ARConfig,
    features: np.ndarray,
    anchor: int,
    gamma: int,
    greedy: bool,
    rng: np.random.Generator | None,
    counters: Counters | None = None,
) -> DraftBlock:
    if gamma < 1:
        raise ValueError("gamma must be at least 1")
    with no_grad():
        last = Tensor(features[-1:] if len(features) else np.zeros((1, cfg.ctx_dim)))
        h = ar_initial_state(params, last)
        tok = int(anchor)
        tokens = np.zeros(gamma, dtype=np.int64)
        logits = np.zeros((gamma, cfg.vocab_size))
        for k in range(gamma):
            h = ar_step(params, h, np.array([tok]))
            logits[k] = ar_logits(params, h).data[0]
            if counters is not None:
                counters.net_calls += 1
                counters.head_calls += 1
            tok = pick_token(logits[k], greedy, rng, forbid=cfg.vocab.reserved)
            tokens[k] = tok
    masked = logits.copy()
    masked[:, sorted(cfg.vocab.reserved)] = -np.inf
    return DraftBlock(anchor=int(anchor), tokens=tokens, q=softmax_np(masked), final_logits=logits)


@dataclass
class ARDrafter:
    params: ParamSet
    cfg: ARConfig
    counters: Counters = field(default_factory=Counters)
    method: str = "ar"

    def propose(self, tokens, features, gamma: int, greedy: bool, rng) -> DraftBlock:
        feats = features if features is not None else np.zeros((0, self.cfg.ctx_dim))
        return ar_rollout(self.params, self.cfg, feats, tokens[-1], gamma, greedy, rng, self.counters)
