"""Training loops: block drafter modes, the sequential baseline, and the toy target."""

from __future__ import annotations

import csv
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from ..drafter.ar import ARConfig, ARDrafter, ar_teacher_forced, init_ar_drafter
from ..drafter.block import BlockDrafter, DrafterConfig, backbone_forward, base_logits, head_param_names, init_block_drafter
from ..drafter.bundle import save_bundle
from ..lm.transformer import TinyTransformer, TransformerConfig
from ..numerics import Optimizer, ParamSet, Tensor, cosine_lr, no_grad, weighted_cross_entropy
from .data import BlockSampler, TrainBatch, all_blocks
from .losses import block_losses, causal_states_tf, causal_states_ttt, combined_loss, corrected_logits, draft_positions
from .schedule import CurriculumSchedule, position_weights

log = logging.getLogger(__name__)

BLOCK_MODES = ("tf+curr", "tf", "ttt", "backbone-only")
MODES = BLOCK_MODES + ("eagle-ar-baseline",)
CURVE_COLUMNS = ("step", "lambda", "loss_base", "loss_final", "loss_combined")


@dataclass
class LossRecord:
    step: int
    lam: float
    loss_base: float
    loss_final: float
    loss_combined: float
    lr: float = 0.0
    grad_norm: float = 0.0

    def row(self) -> list:
        return [self.step, repr(self.lam), repr(self.loss_base), repr(self.loss_final), repr(self.loss_combined)]


@dataclass
class TrainResult:
    mode: str
    drafter: object
    records: list[LossRecord] = field(default_factory=list)
    bundle_path: Path | None = None
    bundle_digest: str | None = None


def _check_finite(rec: LossRecord, batch: TrainBatch) -> None:
    vals = (rec.loss_base, rec.loss_final, rec.loss_combined)
    if not all(math.isfinite(v) for v in vals):
        raise FloatingPointError(
            f"non-finite loss at step {rec.step}: base={rec.loss_base} final={rec.loss_final} "
            f"combined={rec.loss_combined} lambda={rec.lam} offsets={batch.offsets.tolist()}"
        )


def block_logits(
    params: ParamSet, cfg: DrafterConfig, batch: TrainBatch, states: str = "tf"
) -> tuple[Tensor, Tensor]:
    """Base and final logits ``(N, gamma, V)`` for a batch.

    ``states`` picks how the causal states are built: ``"tf"`` from the
    ground truth, ``"ttt"`` from the drafter's own greedy picks, ``"none"``
    to skip the head (final logits are then the base logits).
    """
    blocks = np.concatenate(
        [batch.anchors[:, None], np.full((batch.size, cfg.block_size - 1), cfg.mask_id)], axis=1
    )
    H = draft_positions(backbone_forward(params, cfg, batch.contexts, blocks, batch.ctx_mask))
    base = base_logits(H, params["lm_head"])
    if states == "none":
        return base, base
    if states == "tf":
        S = causal_states_tf(params, cfg, batch.targets)
    elif states == "ttt":
        S, _ = causal_states_ttt(params, cfg, H, base)
    else:
        raise ValueError(f"unknown state mode {states!r}")
    return base, corrected_logits(params, H, base, S)


def mode_lambda(mode: str, sched: CurriculumSchedule) -> float:
    if mode == "tf+curr":
        return sched.value
    if mode in ("tf", "ttt"):
        return 0.0
    if mode == "backbone-only":
        return 1.0
    raise ValueError(f"unknown training mode {mode!r}")


def train_step(
    params: ParamSet,
    cfg: DrafterConfig,
    batch: TrainBatch,
    sched: CurriculumSchedule,
    opt: Optimizer,
    mode: str = "tf+curr",
    lr: float | None = None,
) -> LossRecord:
    """One optimizer step on ``(1 - lambda) L_final + lambda L_base``; advances the schedule."""
    lam = mode_lambda(mode, sched)
    states = {"ttt": "ttt", "backbone-only": "none"}.get(mode, "tf")
    opt.zero_grad()
    base, final = block_logits(params, cfg, batch, states)
    l_base, l_final = block_losses(base, final, batch.targets, position_weights(cfg.gamma))
    loss = combined_loss(l_base, l_final, lam)
    rec = LossRecord(sched.step, lam, l_base.item(), l_final.item(), loss.item())
    _check_finite(rec, batch)
    loss.backward()
    opt.step(lr)
    rec.lr = opt.lr if lr is None else lr
    rec.grad_norm = opt.last_grad_norm
    sched.advance()
    return rec


def ar_train_step(params: ParamSet, cfg: ARConfig, batch: TrainBatch, opt: Optimizer, lr: float | None = None) -> LossRecord:
    """Teacher-forced step for the sequential baseline (same position weights)."""
    opt.zero_grad()
    logits = ar_teacher_forced(params, Tensor(batch.last_features()), batch.anchors, batch.targets)
    gamma = batch.targets.shape[1]
    loss = weighted_cross_entropy(logits, batch.targets, np.broadcast_to(position_weights(gamma), batch.targets.shape))
    v = loss.item()
    rec = LossRecord(0, 0.0, v, v, v)
    _check_finite(rec, batch)
    loss.backward()
    opt.step(lr)
    rec.lr = opt.lr if lr is None else lr
    rec.grad_norm = opt.last_grad_norm
    return rec


def write_curves(path: str | Path, records: list[LossRecord]) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(CURVE_COLUMNS)
        for r in records:
            w.writerow(r.row())


def read_curves(path: str | Path) -> list[dict]:
    with open(path, newline="") as fh:
        return [{k: float(v) for k, v in row.items()} for row in csv.DictReader(fh)]


def train_run(
    target: TinyTransformer,
    seqs: np.ndarray,
    features: np.ndarray,
    mode: str,
    cfg: DrafterConfig | ARConfig | None = None,
    steps: int = 600,
    batch_size: int = 16,
    lr: float = 3e-3,
    seed: int = 0,
    warmup_ratio: float = 0.04,
    weight_decay: float = 0.0,
    clip_norm: float = 1.0,
    out_dir: str | Path | None = None,
    checkpoint_every: int = 0,
    ar_gamma: int = 7,
) -> TrainResult:
    """Train one drafter in one mode; optionally write ``curves.csv`` and ``drafter.bundle``.

    The sequential baseline drafts ``ar_gamma`` tokens per block. The
    curriculum horizon is ``steps - 1`` so the first logged step has
    ``lambda = 1`` and the last has ``lambda = 0``.
    """
    if mode not in MODES:
        raise ValueError(f"unknown training mode {mode!r}; choose from {MODES}")
    if steps < 1:
        raise ValueError("steps must be positive")
    rng = np.random.default_rng(seed)
    target.freeze()
    tcfg = target.cfg
    embed = target.params["embed"].data
    if mode == "eagle-ar-baseline":
        cfg = cfg or ARConfig(tcfg.vocab_size, tcfg.mask_id, tcfg.bos_id, tcfg.d_model, tcfg.d_model)
        params = init_ar_drafter(cfg, target.lm_head, rng, embed_init=embed)
        drafter = ARDrafter(params, cfg)
        block_size = ar_gamma + 1
    else:
        cfg = cfg or DrafterConfig(tcfg.vocab_size, tcfg.mask_id, tcfg.bos_id, tcfg.d_model, tcfg.d_model)
        params = init_block_drafter(cfg, target.lm_head, rng, embed_init=embed)
        drafter = BlockDrafter(params, cfg, use_head=mode != "backbone-only")
        block_size = cfg.block_size
        if mode == "backbone-only":
            for name in head_param_names(params):
                params.freeze(name)
    sampler = BlockSampler(seqs, features, block_size, batch_size, rng, tcfg.vocab)
    opt = Optimizer(params, lr=lr, kind="adamw", weight_decay=weight_decay, clip_norm=clip_norm)
    sched = CurriculumSchedule(max(1, steps - 1))
    out = Path(out_dir) if out_dir is not None else None
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)
    result = TrainResult(mode, drafter)
    for step in range(steps):
        step_lr = cosine_lr(step, steps, lr, warmup_ratio)
        batch = sampler.next_batch()
        if mode == "eagle-ar-baseline":
            rec = ar_train_step(params, cfg, batch, opt, step_lr)
            rec.step = step
        else:
            rec = train_step(params, cfg, batch, sched, opt, mode, step_lr)
        result.records.append(rec)
        if step % 100 == 0 or step == steps - 1:
            log.info("%s step %d lambda %.3f base %.4f final %.4f", mode, step, rec.lam, rec.loss_base, rec.loss_final)
        if out is not None and checkpoint_every and (step + 1) % checkpoint_every == 0 and step + 1 < steps:
            save_bundle(out / f"drafter.step{step + 1}.bundle", drafter, target.digest(), {"mode": mode, "step": step + 1})
    if out is not None:
        write_curves(out / "curves.csv", result.records)
        result.bundle_path = out / "drafter.bundle"
        result.bundle_digest = save_bundle(
            result.bundle_path, drafter, target.digest(), {"mode": mode, "steps": steps, "seed": seed}
        )
    return result


# ---------------------------------------------------------------- evaluation


def heldout_losses(
    params: ParamSet, cfg: DrafterConfig, seqs: np.ndarray, features: np.ndarray, stride: int = 1
) -> tuple[float, float]:
    """Teacher-forced ``(L_base, L_final)`` averaged over every block of a held-out set."""
    w = position_weights(cfg.gamma)
    tot_b = tot_f = 0.0
    n = 0
    with no_grad():
        for batch in all_blocks(seqs, features, cfg.block_size, stride):
            base, final = block_logits(params, cfg, batch, "tf")
            lb, lf = block_losses(base, final, batch.targets, w)
            tot_b += lb.item() * batch.size
            tot_f += lf.item() * batch.size
            n += batch.size
    return tot_b / n, tot_f / n


# ------------------------------------------------------------------- target


def lm_loss(model: TinyTransformer, seqs: np.ndarray) -> Tensor:
    """Mean next-token cross entropy over every position after the first."""
    logits, _ = model.forward(seqs[:, :-1])
    targets = seqs[:, 1:]
    return weighted_cross_entropy(logits, targets, np.ones(targets.shape))


def train_target_lm(
    source,
    cfg: TransformerConfig,
    steps: int = 300,
    batch_size: int = 16,
    seq_len: int = 64,
    lr: float = 3e-3,
    seed: int = 0,
) -> tuple[TinyTransformer, list[float]]:
    """Fit a toy transformer to sequences ``[bos] + source.sample(...)`` drawn fresh each step."""
    rng = np.random.default_rng(seed)
    model = TinyTransformer.init(cfg, rng)
    opt = Optimizer(model.params, lr=lr, kind="adamw")
    losses = []
    for step in range(steps):
        seqs = np.array([[cfg.bos_id] + source.sample(seq_len - 1, rng) for _ in range(batch_size)])
        opt.zero_grad()
        loss = lm_loss(model, seqs)
        if not math.isfinite(loss.item()):
            raise FloatingPointError(f"non-finite target loss at step {step}")
        loss.backward()
        opt.step(cosine_lr(step, steps, lr))
        losses.append(loss.item())
    model.params.zero_grad()
    model.freeze()
    return model, losses

