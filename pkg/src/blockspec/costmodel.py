"""Closed-form latency and speedup algebra for draft-then-verify decoding.

``eta = tau * L_target / (T_draft + T_verify)``: tokens per cycle times the
target's per-token latency, over the wall-clock of one cycle. Sequential
drafters pay ``gamma`` (net, head) pairs per cycle; block drafters pay one
block-level forward and one LM-head projection, plus the correction loop
when the head is enabled.
"""

from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path

# acceptance length and end-to-end speedup reported for two published drafters
REPORTED = {
    "eagle3": {"tau": 4.86, "eta": 3.28},
    "dflash": {"tau": 4.03, "eta": 3.42},
}
# relative changes of the block+head drafter over the parallel-only drafter
REPORTED_TAU_GAIN = 0.166
REPORTED_LATENCY_GAIN = 0.028
REPORTED_SPEEDUP_GAIN = 0.123
# correction-loop latency before and after kernel fusion, milliseconds
HEAD_LATENCY_UNFUSED_MS = 2.64
HEAD_LATENCY_FUSED_MS = 1.20

AR_METHODS = ("ar", "eagle-ar-baseline")


@dataclass
class LatencyProfile:
    """Component latencies in seconds."""

    t_net: float = 0.0
    t_head: float = 0.0
    t_net_block: float = 0.0
    t_head_block: float = 0.0
    t_dhead: float = 0.0
    t_tree: float = 0.0
    T_verify: float = 0.0
    L_target: float = 1.0

    def __post_init__(self):
        for k, v in asdict(self).items():
            if not math.isfinite(v) or v < 0:
                raise ValueError(f"latency {k} must be finite and non-negative, got {v}")
        if self.L_target <= 0:
            raise ValueError("L_target must be positive")

    def to_json(self) -> str:
        return json.dumps(asdict(self), sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> LatencyProfile:
        return cls(**json.loads(text))


@dataclass
class SpeedupReport:
    method: str
    gamma: int | None
    tau: float
    T_draft: float
    T_verify: float
    L_target: float
    L_spec: float
    eta: float
    breakdown: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return asdict(self)


def ar_draft_cost(gamma: int, profile: LatencyProfile, with_tree: bool = False) -> float:
    if gamma < 1:
        raise ValueError("gamma must be at least 1")
    cost = gamma * (profile.t_net + profile.t_head)
    return cost + profile.t_tree if with_tree else cost


def par_draft_cost(profile: LatencyProfile, with_head: bool = True) -> float:
    cost = profile.t_net_block + profile.t_head_block
    return cost + profile.t_dhead if with_head else cost


def speedup(
    tau: float,
    T_draft: float,
    T_verify: float,
    L_target: float,
    gamma: int | None = None,
    method: str = "",
    breakdown: dict | None = None,
) -> SpeedupReport:
    if not tau >= 1.0 or (gamma is not None and tau > gamma + 1):
        bound = "" if gamma is None else f", {gamma + 1}"
        raise ValueError(f"tau={tau} outside [1{bound}]")
    if T_draft < 0 or T_verify < 0:
        raise ValueError("latencies must be non-negative")
    if T_draft + T_verify <= 0 or L_target <= 0:
        raise ValueError("cycle latency and L_target must be positive")
    cycle = T_draft + T_verify
    return SpeedupReport(
        method, gamma, tau, T_draft, T_verify, L_target, cycle / tau, tau * L_target / cycle, dict(breakdown or {})
    )


def implied_cycle_ratio(tau: float, eta: float) -> float:
    """Back-solve ``(T_draft + T_verify) / L_target`` from an observed ``(tau, eta)``."""
    if eta <= 0:
        raise ValueError("eta must be positive")
    return tau / eta


def speedup_ratio(tau_ratio: float, latency_ratio: float) -> float:
    """Predicted speedup ratio of two methods from their tau ratio and cycle-latency ratio."""
    return tau_ratio / latency_ratio


def method_report(method: str, tau: float, gamma: int, profile: LatencyProfile) -> SpeedupReport:
    """Cost a measured method under ``profile``: sequential for AR drafters, block otherwise."""
    if method in AR_METHODS:
        T_draft = ar_draft_cost(gamma, profile)
        parts = {"net": gamma * profile.t_net, "head": gamma * profile.t_head}
    else:
        with_head = method == "block+head"
        T_draft = par_draft_cost(profile, with_head)
        parts = {"net": profile.t_net_block, "head": profile.t_head_block, "dhead": profile.t_dhead if with_head else 0.0}
    parts["verify"] = profile.T_verify
    return speedup(tau, T_draft, profile.T_verify, profile.L_target, gamma, method, parts)


CALIBRATION_COLUMNS = ("method", "source", "gamma", "tau", "eta", "cycle_ratio")


def calibration_report(measured, profile: LatencyProfile) -> list[dict]:
    """Predicted speedup per measured run, next to the published (tau, eta) pairs.

    ``measured`` holds objects with ``method``, ``gamma`` and ``tau_mean``
    (e.g. ``SpecMetrics``). ``cycle_ratio`` is ``(T_draft + T_verify) /
    L_target``: predicted from the profile for measured rows and back-solved
    from ``tau / eta`` for published rows.
    """
    rows = []
    for m in measured:
        rep = method_report(m.method, m.tau_mean, m.gamma, profile)
        rows.append(
            {
                "method": m.method,
                "source": "predicted",
                "gamma": m.gamma,
                "tau": rep.tau,
                "eta": rep.eta,
                "cycle_ratio": (rep.T_draft + rep.T_verify) / rep.L_target,
            }
        )
    for name, vals in REPORTED.items():
        rows.append(
            {
                "method": name,
                "source": "reported",
                "gamma": None,
                "tau": vals["tau"],
                "eta": vals["eta"],
                "cycle_ratio": implied_cycle_ratio(vals["tau"], vals["eta"]),
            }
        )
    return rows


def rows_to_csv(rows: list[dict], columns=CALIBRATION_COLUMNS) -> str:
    buf = io.StringIO()
    w = csv.DictWriter(buf, fieldnames=list(columns), lineterminator="\n")
    w.writeheader()
    for r in rows:
        w.writerow({k: "" if r.get(k) is None else r.get(k) for k in columns})
    return buf.getvalue()


def write_report(path: str | Path, rows: list[dict]) -> None:
    path = Path(path)
    if path.suffix == ".csv":
        path.write_text(rows_to_csv(rows))
    else:
        path.write_text(json.dumps(rows, indent=2, sort_keys=True) + "\n")
