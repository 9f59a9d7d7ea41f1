from __future__ import annotations

from typing import Callable, Sequence

import numpy as np

from .tensor import Tensor


def grad_check(
    f: Callable[[], Tensor],
    params: Sequence[Tensor],
    eps: float = 1e-5,
    max_coords: int | None = 64,
    rng: np.random.Generator | None = None,
) -> float:
    """Compare autodiff gradients of scalar ``f()`` against central differences.

    Returns max |autodiff - fd| / max(1, |fd|) over the checked coordinates.
    At most ``max_coords`` coordinates are sampled per parameter.
    """
    rng = rng or np.random.default_rng(0)
    for p in params:
        p.data = np.ascontiguousarray(p.data)
        p.grad = None
    out = f()
    if out.size != 1:
        raise ValueError("grad_check needs a scalar-valued function")
    out.backward()
    analytic = [np.zeros_like(p.data) if p.grad is None else p.grad.copy() for p in params]

    worst = 0.0
    for p, g in zip(params, analytic):
        flat = p.data.reshape(-1)
        n = flat.size
        coords = np.arange(n) if max_coords is None or n <= max_coords else rng.choice(n, max_coords, replace=False)
        for i in coords:
            orig = flat[i]
            flat[i] = orig + eps
            up = f().item()
            flat[i] = orig - eps
            down = f().item()
            flat[i] = orig
            fd = (up - down) / (2 * eps)
            err = abs(g.reshape(-1)[i] - fd) / max(1.0, abs(fd))
            worst = max(worst, err)
    for p in params:
        p.grad = None
    return worst
