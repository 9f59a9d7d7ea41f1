"""Desk-scale pipeline: word-structured source, distilled toy target, corpora, paired evaluation."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from .lm.tabular import TabularTarget, words_tabular
from .lm.transformer import TinyTransformer, TransformerConfig
from .specdec.decode import SpecMetrics, decode_loop
from .trainer.data import compute_features, sample_corpus
from .trainer.train import TrainResult, heldout_losses, train_run, train_target_lm

log = logging.getLogger(__name__)


@dataclass
class ToySetup:
    source: TabularTarget
    target: TinyTransformer
    train_seqs: np.ndarray
    train_feats: np.ndarray
    eval_seqs: np.ndarray
    eval_feats: np.ndarray
    target_losses: list[float] = field(default_factory=list)

    def prompts(self, prompt_len: int) -> list[list[int]]:
        return [list(map(int, row[:prompt_len])) for row in self.eval_seqs]


def build_toy_setup(
    seed: int = 0,
    n_words: int = 8,
    word_len: int = 4,
    d_model: int = 64,
    target_steps: int = 300,
    seq_len: int = 64,
    n_train: int = 256,
    n_eval: int = 16,
) -> ToySetup:
    """Word-language source, a transformer fitted to it, and corpora sampled from that transformer.

    Words use disjoint tokens, so inside a word the continuation is fixed while
    each word boundary is a fresh random choice: drafts that cross a boundary
    need the tokens drafted before them to stay consistent.
    """
    cfg = TransformerConfig(d_model=d_model, max_ctx=max(128, seq_len))
    reserved = sorted(cfg.vocab.reserved)
    source = words_tabular(cfg.vocab_size, n_words, word_len, np.random.default_rng(seed), reserved=reserved)
    target, losses = train_target_lm(source, cfg, steps=target_steps, seq_len=seq_len, seed=seed)
    train_seqs = sample_corpus(target, n_train, seq_len, np.random.default_rng(seed + 1))
    eval_seqs = sample_corpus(target, n_eval, seq_len, np.random.default_rng(seed + 2))
    return ToySetup(
        source,
        target,
        train_seqs,
        compute_features(target, train_seqs),
        eval_seqs,
        compute_features(target, eval_seqs),
        losses,
    )


def evaluate_tau(
    target,
    drafter,
    prompts: list[list[int]],
    max_new: int,
    temperature: int = 1,
    seed: int = 0,
    gamma: int | None = None,
) -> SpecMetrics:
    """Decode every prompt; prompt ``i`` uses rng seed ``seed + i`` so different drafters see paired randomness."""
    total: SpecMetrics | None = None
    for i, prompt in enumerate(prompts):
        rng = np.random.default_rng(seed + i) if temperature == 1 else None
        _, m = decode_loop(target, drafter, prompt, max_new, temperature, rng, gamma=gamma, seed=seed)
        if total is None:
            total = m
        else:
            total.merge(m)
    if total is None:
        raise ValueError("no prompts to evaluate")
    return total


@dataclass
class ModeOutcome:
    mode: str
    seed: int
    tau: float
    heldout_base: float
    heldout_final: float
    result: TrainResult


def run_mode(
    setup: ToySetup,
    mode: str,
    seed: int,
    steps: int = 300,
    prompt_len: int = 8,
    max_new: int = 48,
    eval_stride: int = 4,
    **train_kw,
) -> ModeOutcome:
    res = train_run(setup.target, setup.train_seqs, setup.train_feats, mode, steps=steps, seed=seed, **train_kw)
    metrics = evaluate_tau(setup.target, res.drafter, setup.prompts(prompt_len), max_new, 1, seed=1000 * seed)
    if mode == "eagle-ar-baseline":
        lb = lf = float("nan")
    else:
        lb, lf = heldout_losses(res.drafter.params, res.drafter.cfg, setup.eval_seqs, setup.eval_feats, eval_stride)
    log.info("mode %s seed %d tau %.3f heldout base %.4f final %.4f", mode, seed, metrics.tau_mean, lb, lf)
    return ModeOutcome(mode, seed, metrics.tau_mean, lb, lf, res)
