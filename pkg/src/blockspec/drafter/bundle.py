"""Drafter bundle files: JSON header (kind, config, target hash) + checkpoint.

Layout: magic ``BSDB``, u32 header length, UTF-8 JSON header, then the
numerics checkpoint of every drafter parameter except the shared LM head.
"""

from __future__ import annotations

import hashlib
import io
import json
import struct
from dataclasses import asdict
from pathlib import Path

import numpy as np

from ..numerics import ParamSet, read_checkpoint, write_checkpoint
from .ar import ARConfig, ARDrafter
from .block import BlockDrafter, DrafterConfig

BUNDLE_MAGIC = b"BSDB"


class TargetMismatchError(RuntimeError):
    pass


def bundle_bytes(drafter, target_hash: str, extra: dict | None = None) -> bytes:
    if isinstance(drafter, BlockDrafter):
        kind, cfg = "block", asdict(drafter.cfg)
        header = {"kind": kind, "config": cfg, "use_head": drafter.use_head}
    elif isinstance(drafter, ARDrafter):
        header = {"kind": "ar", "config": asdict(drafter.cfg)}
    else:
        raise TypeError(f"cannot bundle drafter of type {type(drafter).__name__}")
    header["target_hash"] = target_hash
    if extra:
        header["extra"] = extra
    raw = json.dumps(header, sort_keys=True).encode("utf-8")
    buf = io.BytesIO()
    buf.write(BUNDLE_MAGIC)
    buf.write(struct.pack("<I", len(raw)))
    buf.write(raw)
    arrays = {n: t.data for n, t in drafter.params.items() if n != "lm_head"}
    write_checkpoint(buf, arrays)
    return buf.getvalue()


def save_bundle(path: str | Path, drafter, target_hash: str, extra: dict | None = None) -> str:
    """Write the bundle; returns its sha256."""
    data = bundle_bytes(drafter, target_hash, extra)
    Path(path).write_bytes(data)
    return hashlib.sha256(data).hexdigest()


def read_bundle_header(path: str | Path) -> dict:
    with open(path, "rb") as fh:
        return _read_header(fh)


def _read_header(fh) -> dict:
    if fh.read(4) != BUNDLE_MAGIC:
        raise ValueError("not a drafter bundle (bad magic)")
    (n,) = struct.unpack("<I", fh.read(4))
    return json.loads(fh.read(n).decode("utf-8"))


def load_bundle(path: str | Path, target):
    """Rebuild the drafter around ``target``'s LM head; refuses a foreign target."""
    with open(path, "rb") as fh:
        header = _read_header(fh)
        arrays = read_checkpoint(fh)
    if header["target_hash"] != target.digest():
        raise TargetMismatchError(
            f"bundle was trained against target {header['target_hash'][:12]}, "
            f"got {target.digest()[:12]}"
        )
    params = ParamSet()
    for name, arr in arrays.items():
        params.add(name, arr.astype(np.float64))
    params.add("lm_head", target.lm_head, frozen=True)
    if header["kind"] == "block":
        return BlockDrafter(params, DrafterConfig(**header["config"]), use_head=header["use_head"])
    if header["kind"] == "ar":
        return ARDrafter(params, ARConfig(**header["config"]))
    raise ValueError(f"unknown bundle kind {header['kind']!r}")
