from __future__ import annotations

import hashlib
import io
import struct
from pathlib import Path
from typing import Iterator

import numpy as np

from .tensor import Tensor

CHECKPOINT_MAGIC = b"BSCK"
CHECKPOINT_VERSION = 1


class ParamSet:
    """Named parameters with per-parameter frozen flags.

    Frozen parameters are stored with ``requires_grad=False`` so no gradient
    reaches them, and optimizers skip them.
    """

    def __init__(self):
        self._params: dict[str, Tensor] = {}
        self._frozen: set[str] = set()

    def add(self, name: str, value, frozen: bool = False) -> Tensor:
        if name in self._params:
            raise KeyError(f"duplicate parameter name {name!r}")
        t = value if isinstance(value, Tensor) else Tensor(value)
        t.name = name
        if frozen:
            self._frozen.add(name)
        else:
            t.requires_grad = True
        self._params[name] = t
        return t

    def freeze(self, name: str) -> None:
        self._frozen.add(name)
        self._params[name].requires_grad = False
        self._params[name].grad = None

    def is_frozen(self, name: str) -> bool:
        return name in self._frozen

    def __getitem__(self, name: str) -> Tensor:
        return self._params[name]

    def __contains__(self, name: str) -> bool:
        return name in self._params

    def __iter__(self) -> Iterator[str]:
        return iter(self._params)

    def __len__(self) -> int:
        return len(self._params)

    def items(self):
        return self._params.items()

    def names(self, prefix: str = "") -> list[str]:
        return [n for n in self._params if n.startswith(prefix)]

    def trainable(self) -> list[tuple[str, Tensor]]:
        return [(n, t) for n, t in self._params.items() if n not in self._frozen]

    def zero_grad(self) -> None:
        for t in self._params.values():
            t.grad = None

    def count(self, prefix: str = "") -> int:
        return sum(t.size for n, t in self._params.items() if n.startswith(prefix))

    def snapshot(self) -> dict[str, np.ndarray]:
        return {n: t.data.copy() for n, t in self._params.items()}

    def subset(self, prefix: str) -> ParamSet:
        """A view sharing the same tensors for every name under ``prefix``."""
        out = ParamSet()
        for n, t in self._params.items():
            if n.startswith(prefix):
                out._params[n] = t
                if n in self._frozen:
                    out._frozen.add(n)
        return out

    def to_bytes(self, names: list[str] | None = None) -> bytes:
        buf = io.BytesIO()
        write_checkpoint(buf, {n: self._params[n].data for n in (names or list(self._params))})
        return buf.getvalue()

    def digest(self) -> str:
        return hashlib.sha256(self.to_bytes()).hexdigest()


def write_checkpoint(fh, arrays: dict[str, np.ndarray]) -> None:
    """Write the flat little-endian checkpoint format.

    Layout: magic, u32 version, u32 count, then per parameter
    u32 name length, name bytes (utf-8), u32 rank, u32 dims..., float32 data.
    """
    fh.write(CHECKPOINT_MAGIC)
    fh.write(struct.pack("<II", CHECKPOINT_VERSION, len(arrays)))
    for name, arr in arrays.items():
        raw = name.encode("utf-8")
        arr = np.asarray(arr)
        fh.write(struct.pack("<I", len(raw)))
        fh.write(raw)
        fh.write(struct.pack("<I", arr.ndim))
        fh.write(struct.pack(f"<{arr.ndim}I", *arr.shape))
        fh.write(np.ascontiguousarray(arr, dtype="<f4").tobytes())


def read_checkpoint(fh) -> dict[str, np.ndarray]:
    if fh.read(4) != CHECKPOINT_MAGIC:
        raise ValueError("not a checkpoint file (bad magic)")
    version, count = struct.unpack("<II", fh.read(8))
    if version != CHECKPOINT_VERSION:
        raise ValueError(f"unsupported checkpoint version {version}")
    out: dict[str, np.ndarray] = {}
    for _ in range(count):
        (n,) = struct.unpack("<I", fh.read(4))
        name = fh.read(n).decode("utf-8")
        (rank,) = struct.unpack("<I", fh.read(4))
        dims = struct.unpack(f"<{rank}I", fh.read(4 * rank)) if rank else ()
        size = int(np.prod(dims)) if dims else 1
        data = np.frombuffer(fh.read(4 * size), dtype="<f4")
        if data.size != size:
            raise ValueError(f"truncated checkpoint at parameter {name!r}")
        out[name] = data.reshape(dims).astype(np.float32)
    return out


def save_params(params: ParamSet, path: str | Path) -> None:
    Path(path).write_bytes(params.to_bytes())


def load_arrays(path: str | Path) -> dict[str, np.ndarray]:
    with open(path, "rb") as fh:
        return read_checkpoint(fh)
