"""Block-level losses and the two ways of building causal states during training."""

from __future__ import annotations

import numpy as np

from ..drafter.block import DrafterConfig, correction_logits, gru_step
from ..numerics import ParamSet, Tensor, embedding, stack, weighted_cross_entropy


def block_losses(
    base_logits: Tensor, final_logits: Tensor, targets: np.ndarray, weights: np.ndarray
) -> tuple[Tensor, Tensor]:
    """Position-weighted cross entropy of the base and the corrected logits.

    Logits are ``(N, gamma, V)``, targets ``(N, gamma)``, weights ``(gamma,)``.
    """
    targets = np.asarray(targets, dtype=np.int64)
    if base_logits.shape != final_logits.shape:
        raise ValueError(f"base {base_logits.shape} and final {final_logits.shape} logits differ in shape")
    w = np.broadcast_to(np.asarray(weights, dtype=np.float64), targets.shape)
    return (
        weighted_cross_entropy(base_logits, targets, w),
        weighted_cross_entropy(final_logits, targets, w),
    )


def causal_states_tf(params: ParamSet, cfg: DrafterConfig, tokens: np.ndarray) -> list[Tensor]:
    """Teacher-forced states ``[S_0, ..., S_{gamma-1}]`` for ground truth ``(N, gamma)``.

    ``S_0 = 0`` and ``S_i = gru(S_{i-1}, Embed(y_i))``. State ``i`` only ever
    reads ``y_1..y_i``.
    """
    tokens = np.atleast_2d(np.asarray(tokens, dtype=np.int64))
    N, gamma = tokens.shape
    S = Tensor(np.zeros((N, cfg.d_state)))
    states = [S]
    for i in range(gamma - 1):
        S = gru_step(params, S, embedding(params["embed"], tokens[:, i]))
        states.append(S)
    return states


def causal_states_ttt(
    params: ParamSet,
    cfg: DrafterConfig,
    H: Tensor,
    base: Tensor,
    rng: np.random.Generator | None = None,
) -> tuple[list[Tensor], np.ndarray]:
    """States built from the drafter's own greedy picks, as at inference time.

    ``H`` is ``(N, gamma, d)`` and ``base`` the matching ``(N, gamma, V)`` base
    logits. Position ``i`` takes the argmax of its current corrected logits
    (reserved ids excluded) and feeds that token into the GRU. Token choice
    is not differentiated. ``rng`` is unused: picks are greedy.
    """
    N, gamma, _ = H.shape
    reserved = sorted(cfg.vocab.reserved)
    S = Tensor(np.zeros((N, cfg.d_state)))
    states = [S]
    picks = np.zeros((N, gamma), dtype=np.int64)
    for i in range(gamma):
        row = base.data[:, i] + correction_logits(params, Tensor(H.data[:, i]), Tensor(S.data)).data
        row[:, reserved] = -np.inf
        picks[:, i] = np.argmax(row, axis=1)
        if i < gamma - 1:
            S = gru_step(params, S, embedding(params["embed"], picks[:, i]))
            states.append(S)
    return states, picks


def corrected_logits(params: ParamSet, H: Tensor, base: Tensor, states: list[Tensor]) -> Tensor:
    """``base + W2 silu(W1 [H_i; S_{i-1}] + b1)`` for all positions at once."""
    S = stack(states, axis=1)
    return base + correction_logits(params, H, S)


def draft_positions(H: Tensor) -> Tensor:
    """Drop the anchor row: hidden states of the ``B - 1`` draft positions."""
    return H[:, 1:]


def combined_loss(loss_base: Tensor, loss_final: Tensor, lam: float) -> Tensor:
    return loss_final * (1.0 - lam) + loss_base * lam

