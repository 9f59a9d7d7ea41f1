"""Drafters: the parallel block drafter with correction head, the AR baseline,
and reference drafters with known behaviour."""

from .ar import ARConfig, ARDrafter, ar_rollout, ar_teacher_forced, init_ar_drafter
from .block import (
    BlockDrafter,
    CausalState,
    DrafterConfig,
    backbone_forward,
    base_logits,
    build_masked_block,
    correction_flops,
    correction_logits,
    block_rollout,
    full_head_flops,
    gru_step,
    init_block_drafter,
)
from .bundle import TargetMismatchError, load_bundle, read_bundle_header, save_bundle
from .common import Counters, DraftBlock, pick_token, sample_index
from .reference import ConstantDrafter, OracleDrafter, TabularDrafter

__all__ = [
    "ARConfig",
    "ARDrafter",
    "BlockDrafter",
    "CausalState",
    "ConstantDrafter",
    "Counters",
    "DraftBlock",
    "DrafterConfig",
    "OracleDrafter",
    "TabularDrafter",
    "TargetMismatchError",
    "ar_rollout",
    "ar_teacher_forced",
    "backbone_forward",
    "base_logits",
    "build_masked_block",
    "correction_flops",
    "correction_logits",
    "block_rollout",
    "full_head_flops",
    "gru_step",
    "init_ar_drafter",
    "init_block_drafter",
    "load_bundle",
    "pick_token",
    "read_bundle_header",
    "sample_index",
    "save_bundle",
]
