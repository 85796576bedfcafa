"""Static narrowing analytics for FPGA offload candidates.

Expensive-to-measure destinations cannot afford evolutionary search, so
candidates are narrowed first: rank offload-eligible loops by arithmetic
intensity (ops per byte touched), keep only well-trip-counted loops, and
drop anything whose estimated logic usage exceeds the device capacity.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

from .model import LoopStatement, MachineProfile, ProgramModel

DEFAULT_TOP_K = 4
DEFAULT_MIN_ITERATIONS = 1000


@dataclass(frozen=True)
class CandidateScore:
    loop_id: str
    arithmetic_intensity: float
    iteration_count: int
    resource_fraction: float
    passed_resource_check: bool
    degenerate: bool = False  # zero bytes touched: intensity is +inf

    def to_dict(self) -> dict:
        return {
            "loop_id": self.loop_id,
            "arithmetic_intensity": self.arithmetic_intensity,
            "iteration_count": self.iteration_count,
            "resource_fraction": self.resource_fraction,
            "passed_resource_check": self.passed_resource_check,
            "degenerate": self.degenerate,
        }


def arithmetic_intensity(loop: LoopStatement) -> float:
    """Total arithmetic operations per unique byte accessed.

    A loop touching zero bytes has no meaningful ratio; it orders as +inf
    and is flagged degenerate in CandidateScore.
    """
    total_ops = loop.per_iteration_ops * loop.iteration_count
    if loop.bytes_accessed == 0:
        return math.inf if total_ops > 0 else 0.0
    return total_ops / loop.bytes_accessed


def score_loop(loop: LoopStatement, capacity: float) -> CandidateScore:
    intensity = arithmetic_intensity(loop)
    return CandidateScore(
        loop_id=loop.id,
        arithmetic_intensity=intensity,
        iteration_count=loop.iteration_count,
        resource_fraction=loop.fpga_resource_estimate,
        passed_resource_check=loop.fpga_resource_estimate <= capacity,
        degenerate=loop.bytes_accessed == 0 and loop.per_iteration_ops * loop.iteration_count > 0,
    )


def narrow_candidates(model: ProgramModel, profile: MachineProfile,
                      k: int = DEFAULT_TOP_K,
                      min_iterations: int = DEFAULT_MIN_ITERATIONS) -> list[CandidateScore]:
    """Top-k offload-eligible loops by intensity, after both filters.

    Loops below the trip-count floor or above the resource capacity are
    dropped; ties in intensity break by document order. May return fewer
    than k.
    """
    if k < 1:
        raise ValueError("k must be >= 1")
    capacity = profile.fpga_resource_capacity_fraction
    scored = [score_loop(l, capacity) for l in model.loops if l.parallelizable]
    survivors = [
        s for s in scored
        if s.iteration_count >= min_iterations and s.passed_resource_check
    ]
    # sorted() is stable, so equal intensities keep document order
    survivors.sort(key=lambda s: -s.arithmetic_intensity)
    return survivors[:k]
