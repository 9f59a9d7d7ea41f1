from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable


class ReservedTokenError(ValueError):
    """A reserved id (mask/bos) or out-of-range id appeared where it is not allowed."""


@dataclass(frozen=True)
class Vocabulary:
    size: int = 64
    mask_id: int = 63
    bos_id: int = 62

    def __post_init__(self):
        if self.mask_id == self.bos_id:
            raise ValueError("mask_id and bos_id must differ")
        for rid in (self.mask_id, self.bos_id):
            if not 0 <= rid < self.size:
                raise ValueError(f"reserved id {rid} outside vocabulary of size {self.size}")

    @property
    def reserved(self) -> frozenset[int]:
        return frozenset((self.mask_id, self.bos_id))

    @property
    def regular(self) -> list[int]:
        return [t for t in range(self.size) if t not in self.reserved]

    def check_ids(self, ids: Iterable[int]) -> None:
        for t in ids:
            if not 0 <= int(t) < self.size:
                raise ReservedTokenError(f"token id {t} outside vocabulary of size {self.size}")

    def check_regular(self, ids: Iterable[int]) -> None:
        for t in ids:
            t = int(t)
            if not 0 <= t < self.size or t in self.reserved:
                raise ReservedTokenError(f"token id {t} is reserved or out of range")
