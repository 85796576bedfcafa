"""Offload pattern: the per-loop device placement vector.

One bit per offload-eligible loop, 1 = run on the destination device,
0 = stay on the CPU. Patterns are the unit of measurement and the search
genotype; the fingerprint keys measurement caches and replay traces.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass

from .model import OFFLOAD_DEVICES, ProgramModel, parallelizable_loops


@dataclass(frozen=True)
class OffloadPattern:
    device: str
    genes: tuple[int, ...]

    def __post_init__(self) -> None:
        if self.device not in OFFLOAD_DEVICES:
            raise ValueError(f"unknown offload device '{self.device}'")
        if any(g not in (0, 1) for g in self.genes):
            raise ValueError("genes must be 0/1 bits")

    @classmethod
    def all_cpu(cls, device: str, n_genes: int) -> "OffloadPattern":
        return cls(device=device, genes=(0,) * n_genes)

    @classmethod
    def single(cls, device: str, n_genes: int, position: int) -> "OffloadPattern":
        genes = [0] * n_genes
        genes[position] = 1
        return cls(device=device, genes=tuple(genes))

    @classmethod
    def from_loop_ids(cls, device: str, model: ProgramModel,
                      loop_ids: set[str] | frozenset[str]) -> "OffloadPattern":
        eligible = parallelizable_loops(model)
        unknown = loop_ids - set(eligible)
        if unknown:
            raise ValueError(f"loops {sorted(unknown)} are not offload-eligible")
        return cls(device=device,
                   genes=tuple(1 if lid in loop_ids else 0 for lid in eligible))

    @property
    def bitstring(self) -> str:
        return "".join(str(g) for g in self.genes)

    def fingerprint(self) -> str:
        """Hex digest identifying (device, placement vector)."""
        return hashlib.sha256(f"{self.device}:{self.bitstring}".encode("ascii")).hexdigest()

    def offloaded_ids(self, model: ProgramModel) -> list[str]:
        eligible = parallelizable_loops(model)
        if len(eligible) != len(self.genes):
            raise ValueError(
                f"pattern has {len(self.genes)} genes but model has "
                f"{len(eligible)} offload-eligible loops")
        return [lid for lid, g in zip(eligible, self.genes) if g]

    def is_all_cpu(self) -> bool:
        return not any(self.genes)
