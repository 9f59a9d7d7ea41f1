from __future__ import annotations

import math

import numpy as np

from .params import ParamSet


def clip_grad_norm(grads: list[np.ndarray], max_norm: float) -> float:
    """Scale ``grads`` in place so their global L2 norm is at most ``max_norm``.

    Returns the norm before clipping.
    """
    total = math.sqrt(sum(float(np.sum(g * g)) for g in grads))
    if max_norm > 0 and total > max_norm:
        scale = max_norm / (total + 1e-12)
        for g in grads:
            g *= scale
    return total


class Optimizer:
    """SGD, Adam or AdamW over the trainable entries of a :class:`ParamSet`.

    Parameters without a gradient are treated as having a zero gradient.
    Frozen parameters are never touched.
    """

    def __init__(
        self,
        params: ParamSet,
        lr: float = 1e-3,
        kind: str = "adamw",
        betas: tuple[float, float] = (0.9, 0.999),
        eps: float = 1e-8,
        weight_decay: float = 0.0,
        clip_norm: float = 1.0,
    ):
        if kind not in ("sgd", "adam", "adamw"):
            raise ValueError(f"unknown optimizer kind {kind!r}")
        self.params = params
        self.lr = lr
        self.kind = kind
        self.betas = betas
        self.eps = eps
        self.weight_decay = weight_decay
        self.clip_norm = clip_norm
        self.t = 0
        self._m: dict[str, np.ndarray] = {}
        self._v: dict[str, np.ndarray] = {}
        self.last_grad_norm = 0.0

    def zero_grad(self) -> None:
        self.params.zero_grad()

    def step(self, lr: float | None = None) -> None:
        lr = self.lr if lr is None else lr
        trainable = self.params.trainable()
        grads = [
            np.array(t.grad, dtype=np.float64) if t.grad is not None else np.zeros_like(t.data)
            for _, t in trainable
        ]
        self.last_grad_norm = clip_grad_norm(grads, self.clip_norm)
        self.t += 1
        b1, b2 = self.betas
        for (name, t), g in zip(trainable, grads):
            if self.kind == "sgd":
                t.data = t.data - lr * g
                continue
            m = self._m.get(name)
            if m is None:
                m = self._m[name] = np.zeros_like(t.data)
                self._v[name] = np.zeros_like(t.data)
            v = self._v[name]
            if self.kind == "adam" and self.weight_decay:
                g = g + self.weight_decay * t.data
            m *= b1
            m += (1 - b1) * g
            v *= b2
            v += (1 - b2) * g * g
            m_hat = m / (1 - b1**self.t)
            v_hat = v / (1 - b2**self.t)
            update = m_hat / (np.sqrt(v_hat) + self.eps)
            if self.kind == "adamw" and self.weight_decay:
                update = update + self.weight_decay * t.data
            t.data = t.data - lr * update


def cosine_lr(step: int, total: int, base_lr: float, warmup_ratio: float = 0.04) -> float:
    """Linear warmup over ``warmup_ratio * total`` steps, then cosine decay to zero."""
    warmup = max(1, int(round(warmup_ratio * total))) if warmup_ratio > 0 else 0
    if step < warmup:
        return base_lr * (step + 1) / warmup
    progress = (step - warmup) / max(1, total - warmup)
    return 0.5 * base_lr * (1.0 + math.cos(math.pi * min(1.0, progress)))
