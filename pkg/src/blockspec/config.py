"""Run configuration stored as a flat ``key=value`` text file."""

from __future__ import annotations

import os
from dataclasses import asdict, dataclass, fields, replace
from pathlib import Path

from .drafter.block import DrafterConfig
from .lm.transformer import TransformerConfig

OUT_ENV = "BLOCKSPEC_OUT"
RUN_MODES = ("tf+curr", "tf", "ttt", "backbone-only", "eagle-ar-baseline")


def default_out_root() -> Path:
    return Path(os.environ.get(OUT_ENV, "runs"))


@dataclass(frozen=True)
class RunConfig:
    seed: int = 0
    vocab_size: int = 64
    d_model: int = 64
    n_layers: int = 2
    n_heads: int = 2
    block_size: int = 8
    d_state: int = 32
    rank: int = 16
    temperature: int = 1
    mode: str = "tf+curr"
    steps: int = 300
    batch_size: int = 16
    lr: float = 3e-3
    warmup_ratio: float = 0.04
    weight_decay: float = 0.0
    clip_norm: float = 1.0
    out: str = "runs"

    def __post_init__(self):
        if self.block_size < 2:
            raise ValueError("block_size must be at least 2")
        if self.temperature not in (0, 1):
            raise ValueError("temperature must be 0 or 1")
        if self.mode not in RUN_MODES:
            raise ValueError(f"mode must be one of {RUN_MODES}, got {self.mode!r}")

    @property
    def gamma(self) -> int:
        return self.block_size - 1

    def drafter_config(self) -> DrafterConfig:
        return DrafterConfig(
            vocab_size=self.vocab_size,
            mask_id=self.vocab_size - 1,
            bos_id=self.vocab_size - 2,
            d_model=self.d_model,
            ctx_dim=self.d_model,
            n_layers=self.n_layers,
            n_heads=self.n_heads,
            block_size=self.block_size,
            d_state=self.d_state,
            rank=self.rank,
        )

    def target_config(self) -> TransformerConfig:
        return TransformerConfig(
            vocab_size=self.vocab_size,
            mask_id=self.vocab_size - 1,
            bos_id=self.vocab_size - 2,
            d_model=self.d_model,
            n_layers=self.n_layers,
            n_heads=self.n_heads,
        )

    def with_updates(self, **kw) -> RunConfig:
        return replace(self, **{k: v for k, v in kw.items() if v is not None})

    # ------------------------------------------------------------- text form

    def to_text(self) -> str:
        items = dict(asdict(self), gamma=self.gamma)
        return "".join(f"{k}={_fmt(v)}\n" for k, v in items.items())

    @classmethod
    def from_text(cls, text: str) -> RunConfig:
        types = {f.name: f.type for f in fields(cls)}
        values: dict = {}
        gamma = None
        for lineno, line in enumerate(text.splitlines(), 1):
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            if "=" not in line:
                raise ValueError(f"config line {lineno}: expected key=value, got {line!r}")
            key, raw = (s.strip() for s in line.split("=", 1))
            if key == "gamma":
                gamma = int(raw)
                continue
            if key not in types:
                raise ValueError(f"config line {lineno}: unknown key {key!r}")
            values[key] = _parse(types[key], raw)
        cfg = cls(**values)
        if gamma is not None and gamma != cfg.gamma:
            raise ValueError(f"gamma={gamma} contradicts block_size={cfg.block_size} (gamma must be block_size - 1)")
        return cfg

    def save(self, path: str | Path) -> None:
        Path(path).write_text(self.to_text())

    @classmethod
    def load(cls, path: str | Path) -> RunConfig:
        return cls.from_text(Path(path).read_text())


def _fmt(v) -> str:
    return repr(v) if isinstance(v, float) else str(v)


def _parse(kind: str, raw: str):
    if kind == "int":
        return int(raw)
    if kind == "float":
        return float(raw)
    return raw
