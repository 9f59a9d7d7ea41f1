"""Draft-then-verify decoding: verification rules, the decode loop, and the
exact losslessness oracle."""

from .decode import TEMPERATURES, SpecMetrics, ar_decode, decode_loop
from .enumerate import (
    EnumerationCapError,
    adversarial_drafter,
    cycle_outcomes,
    enumerate_losslessness,
    speculative_sequence_distribution,
    target_sequence_distribution,
    total_variation,
)
from .verify import ContractViolation, VerifyResult, residual_distribution, verify_greedy, verify_stochastic

__all__ = [
    "TEMPERATURES",
    "ContractViolation",
    "EnumerationCapError",
    "SpecMetrics",
    "VerifyResult",
    "adversarial_drafter",
    "ar_decode",
    "cycle_outcomes",
    "decode_loop",
    "enumerate_losslessness",
    "residual_distribution",
    "speculative_sequence_distribution",
    "target_sequence_distribution",
    "total_variation",
    "verify_greedy",
    "verify_stochastic",
]
