"""Tiny causal transformer target exposing next-token logits and context features."""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from ..numerics import ParamSet, Tensor, embedding, load_arrays, no_grad, rms_norm, save_params
from . import layers
from .vocab import ReservedTokenError, Vocabulary


@dataclass(frozen=True)
class TransformerConfig:
    vocab_size: int = 64
    mask_id: int = 63
    bos_id: int = 62
    d_model: int = 64
    n_layers: int = 2
    n_heads: int = 2
    max_ctx: int = 256
    mlp_mult: int = 4
    # which hidden states become the context features handed to the drafter
    feature_layer: str = "final_pre_head"

    @property
    def vocab(self) -> Vocabulary:
        return Vocabulary(self.vocab_size, self.mask_id, self.bos_id)


def init_target_params(cfg: TransformerConfig, rng: np.random.Generator) -> ParamSet:
    d, V = cfg.d_model, cfg.vocab_size
    out_scale = 1.0 / np.sqrt(2 * cfg.n_layers)
    p = ParamSet()
    p.add("embed", rng.normal(0.0, 1.0, size=(V, d)))
    p.add("pos", rng.normal(0.0, 0.1, size=(cfg.max_ctx, d)))
    for i in range(cfg.n_layers):
        layers.add_attention_params(p, f"layer{i}.attn", d, rng, out_scale)
        layers.add_mlp_params(p, f"layer{i}.mlp", d, cfg.mlp_mult * d, rng, out_scale)
    p.add("final_norm", np.ones(d))
    p.add("lm_head", layers.init_linear(rng, d, V))
    return p


class TinyTransformer:
    def __init__(self, cfg: TransformerConfig, params: ParamSet):
        self.cfg = cfg
        self.vocab = cfg.vocab
        self.params = params
        # reserved ids (mask, bos) are never emitted: they get a constant -1e9 logit
        self.reserved_bias = np.zeros(cfg.vocab_size)
        self.reserved_bias[sorted(self.vocab.reserved)] = layers.NEG_INF

    @classmethod
    def init(cls, cfg: TransformerConfig, rng: np.random.Generator) -> TinyTransformer:
        return cls(cfg, init_target_params(cfg, rng))

    @property
    def vocab_size(self) -> int:
        return self.cfg.vocab_size

    @property
    def lm_head(self) -> Tensor:
        return self.params["lm_head"]

    def freeze(self) -> None:
        for name in list(self.params):
            self.params.freeze(name)

    # ---------------------------------------------------------------- forward

    def forward(
        self,
        tokens: np.ndarray,
        past: list[tuple[np.ndarray, np.ndarray]] | None = None,
        present: list | None = None,
    ) -> tuple[Tensor, Tensor]:
        """Batched forward. ``tokens`` is ``(N, T)``; returns logits ``(N, T, V)``
        and features ``(N, T, d)`` (hidden states right before the LM head).

        With ``past`` (per-layer cached keys/values) the tokens continue a cached
        prefix; ``present`` collects the extended per-layer keys/values.
        """
        tokens = np.atleast_2d(np.asarray(tokens, dtype=np.int64))
        N, T = tokens.shape
        start = 0 if not past else past[0][0].shape[2]
        if start + T > self.cfg.max_ctx:
            raise ValueError(f"sequence length {start + T} exceeds max_ctx {self.cfg.max_ctx}")
        if tokens.size and (tokens.min() < 0 or tokens.max() >= self.cfg.vocab_size):
            raise ReservedTokenError(f"token id outside vocabulary of size {self.cfg.vocab_size}")
        p = self.params
        h = embedding(p["embed"], tokens) + p["pos"][np.arange(start, start + T)]
        mask = np.tri(T, start + T, k=start, dtype=bool)
        for i in range(self.cfg.n_layers):
            a = f"layer{i}.attn"
            x = rms_norm(h, p[f"{a}.norm"])
            h = h + layers.attention(
                p, a, x, x, self.cfg.n_heads, mask, past=past[i] if past else None, present=present
            )
            h = h + layers.mlp(p, f"layer{i}.mlp", h)
        feats = rms_norm(h, p["final_norm"])
        return feats @ p["lm_head"] + self.reserved_bias, feats

    def _check_prefix(self, prefix: Sequence[int]) -> None:
        if len(prefix) == 0:
            raise ValueError("prefix must be non-empty")
        if int(prefix[0]) != self.cfg.bos_id:
            raise ValueError("prefix must begin with the bos token")
        self.vocab.check_ids(prefix)

    def target_forward(self, prefix: Sequence[int]) -> tuple[np.ndarray, np.ndarray]:
        """Logits ``(T, V)`` and context features ``(T, d)`` for every prefix position."""
        self._check_prefix(prefix)
        with no_grad():
            logits, feats = self.forward(np.asarray(prefix)[None])
        return logits.data[0], feats.data[0]

    def session(self, prompt: Sequence[int], cached: bool = True) -> TransformerSession:
        return TransformerSession(self, prompt, cached=cached)

    def verify_pass(self, prefix: Sequence[int], draft: Sequence[int]) -> np.ndarray:
        """One forward over ``prefix + draft``: logits rows for each draft position
        plus the bonus position."""
        self.vocab.check_regular(draft)
        logits, _ = self.target_forward(list(prefix) + list(draft))
        return logits[len(prefix) - 1 :]

    # ------------------------------------------------------------ persistence

    def save(self, path: str | Path) -> None:
        path = Path(path)
        save_params(self.params, path)
        path.with_suffix(".json").write_text(json.dumps(asdict(self.cfg), indent=2, sort_keys=True))

    @classmethod
    def load(cls, path: str | Path) -> TinyTransformer:
        path = Path(path)
        cfg = TransformerConfig(**json.loads(path.with_suffix(".json").read_text()))
        arrays = load_arrays(path)
        params = ParamSet()
        for name, arr in arrays.items():
            params.add(name, arr.astype(np.float64))
        return cls(cfg, params)

    def digest(self) -> str:
        return self.params.digest()


class TransformerSession:
    """Committed-prefix state for draft-then-verify decoding.

    ``tokens`` is the verified prefix; ``features`` holds the context features
    of every verified position except the last one (the anchor, whose hidden
    state only appears once the next verification pass consumes it). With
    ``cached=True`` the keys/values of those positions are kept so that each
    verification forward only runs over ``[anchor] + draft``.
    """

    def __init__(self, model: TinyTransformer, prompt: Sequence[int], cached: bool = True):
        model._check_prefix(prompt)
        self.model = model
        self.cached = cached
        self.tokens = [int(t) for t in prompt]
        self._kv: list[tuple[np.ndarray, np.ndarray]] | None = None
        self._pending: tuple[list, np.ndarray] | None = None
        if len(self.tokens) > 1:
            with no_grad():
                present: list = []
                _, feats = model.forward(np.asarray(self.tokens[:-1])[None], present=present)
            self.features = feats.data[0]
            self._kv = present
        else:
            self.features = np.zeros((0, model.cfg.d_model))

    def verify(self, draft: Sequence[int]) -> np.ndarray:
        """Target logits ``(len(draft) + 1, V)`` for the draft positions and the bonus."""
        self.model.vocab.check_regular(draft)
        if not self.cached:
            logits, feats = self.model.target_forward(self.tokens + list(draft))
            n = len(self.tokens)
            self._pending = (None, feats[n - 1 :])
            return logits[n - 1 :]
        with no_grad():
            present: list = []
            logits, feats = self.model.forward(
                np.asarray([self.tokens[-1], *draft])[None], past=self._kv, present=present
            )
        self._pending = (present, feats.data[0])
        return logits.data[0]

    def commit(self, accepted: Sequence[int], bonus: int) -> None:
        """Append the accepted draft tokens and the bonus token to the prefix."""
        if self._pending is None:
            raise RuntimeError("commit() without a preceding verify()")
        present, new_feats = self._pending
        a = len(accepted)
        # anchor + accepted draft positions are now verified and have features
        self.features = np.concatenate([self.features, new_feats[: a + 1]], axis=0)
        if present is not None:
            keep = len(self.tokens) + a
            self._kv = [(k[:, :, :keep], v[:, :, :keep]) for k, v in present]
        self.tokens.extend(int(t) for t in accepted)
        self.tokens.append(int(bonus))
        self._pending = None


def target_forward(model: TinyTransformer, prefix: Sequence[int]) -> tuple[np.ndarray, np.ndarray]:
    return model.target_forward(prefix)


def verify_logits_for_block(model, prefix: Sequence[int], draft: Sequence[int]) -> np.ndarray:
    """Target next-token logits at each draft position plus the bonus position."""
    return model.verify_pass(prefix, draft)
