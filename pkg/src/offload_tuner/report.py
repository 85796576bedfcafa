"""Search result containers and their structured / table rendering.

Reports are plain data: everything needed to reproduce and compare runs
(seed, config echo, baseline and best measurements, improvement ratios,
transfer plan, per-generation history) serialized as stable JSON so two
identically-seeded runs produce byte-identical files.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

from .model import ProgramModel
from .runner import EvaluatedPattern

SEARCH_REPORT_SCHEMA = "offload-tuner/search-report/v1"
ORCHESTRATION_REPORT_SCHEMA = "offload-tuner/orchestration-report/v1"


@dataclass(frozen=True)
class PatternOutcome:
    """One measured placement, flattened for reporting."""

    device: str
    genes: list[int]
    offloaded_loop_ids: list[str]
    fingerprint: str
    elapsed_sec: float
    energy_watt_sec: float
    mean_watts: float
    timed_out: bool
    failed: bool
    evaluation_value: float

    @classmethod
    def from_evaluated(cls, ev: EvaluatedPattern, model: ProgramModel) -> "PatternOutcome":
        m = ev.measurement
        return cls(
            device=ev.pattern.device,
            genes=list(ev.pattern.genes),
            offloaded_loop_ids=ev.pattern.offloaded_ids(model),
            fingerprint=ev.fingerprint,
            elapsed_sec=m.elapsed_sec,
            energy_watt_sec=m.energy_watt_sec,
            mean_watts=m.mean_watts,
            timed_out=m.timed_out,
            failed=ev.failed,
            evaluation_value=ev.value.value,
        )

    def to_dict(self) -> dict:
        return {
            "device": self.device,
            "genes": self.genes,
            "offloaded_loop_ids": self.offloaded_loop_ids,
            "fingerprint": self.fingerprint,
            "elapsed_sec": self.elapsed_sec,
            "energy_watt_sec": self.energy_watt_sec,
            "mean_watts": self.mean_watts,
            "timed_out": self.timed_out,
            "failed": self.failed,
            "evaluation_value": self.evaluation_value,
        }


@dataclass(frozen=True)
class SearchReport:
    """Outcome of one destination's search."""

    destination: str
    seed: int | None
    config: dict
    baseline: PatternOutcome
    best: PatternOutcome
    transfer_plan: list[dict]
    history: list[dict]
    backend_calls: int
    distinct_patterns: int
    failures: int
    notes: str = ""

    @property
    def improvement_time(self) -> float:
        return self.baseline.elapsed_sec / self.best.elapsed_sec

    @property
    def improvement_energy(self) -> float:
        return self.baseline.energy_watt_sec / self.best.energy_watt_sec

    def to_dict(self) -> dict:
        return {
            "schema": SEARCH_REPORT_SCHEMA,
            "destination": self.destination,
            "seed": self.seed,
            "config": self.config,
            "baseline": self.baseline.to_dict(),
            "best": self.best.to_dict(),
            "improvement": {
                "time_ratio": self.improvement_time,
                "energy_ratio": self.improvement_energy,
            },
            "transfer_plan": self.transfer_plan,
            "history": self.history,
            "measurements": {
                "backend_calls": self.backend_calls,
                "distinct_patterns": self.distinct_patterns,
                "failures": self.failures,
            },
            "notes": self.notes,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n"

    def render_table(self) -> str:
        b, best = self.baseline, self.best
        rows = [
            ("", "elapsed_sec", "energy_watt_sec", "mean_watts", "eval_value"),
            ("baseline", f"{b.elapsed_sec:.6g}", f"{b.energy_watt_sec:.6g}",
             f"{b.mean_watts:.6g}", f"{b.evaluation_value:.6g}"),
            ("best", f"{best.elapsed_sec:.6g}", f"{best.energy_watt_sec:.6g}",
             f"{best.mean_watts:.6g}", f"{best.evaluation_value:.6g}"),
        ]
        widths = [max(len(r[i]) for r in rows) for i in range(len(rows[0]))]
        lines = [f"destination: {self.destination}   seed: {self.seed}"]
        lines += ["  ".join(cell.ljust(w) for cell, w in zip(row, widths)).rstrip()
                  for row in rows]
        lines.append(f"best pattern: {''.join(str(g) for g in best.genes) or '(none)'}"
                     f"  offloaded: {', '.join(best.offloaded_loop_ids) or '(none)'}")
        lines.append(f"improvement: time {self.improvement_time:.3g}x, "
                     f"energy {self.improvement_energy:.3g}x")
        if best.timed_out:
            lines.append("warning: best pattern timed out")
        if self.notes:
            lines.append(f"notes: {self.notes}")
        return "\n".join(lines) + "\n"


@dataclass(frozen=True)
class OrchestrationReport:
    """Mixed-environment outcome: per-destination reports plus the pick."""

    destinations: list[SearchReport]
    chosen_destination: str | None
    stop_reason: str
    skipped: list[dict] = field(default_factory=list)
    requirement: dict = field(default_factory=dict)
    seed: int | None = None

    @property
    def chosen(self) -> SearchReport | None:
        for rep in self.destinations:
            if rep.destination == self.chosen_destination:
                return rep
        return None

    def to_dict(self) -> dict:
        return {
            "schema": ORCHESTRATION_REPORT_SCHEMA,
            "seed": self.seed,
            "requirement": self.requirement,
            "destinations": [r.to_dict() for r in self.destinations],
            "chosen_destination": self.chosen_destination,
            "stop_reason": self.stop_reason,
            "skipped": self.skipped,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n"

    def render_table(self) -> str:
        lines = [f"stop reason: {self.stop_reason}   chosen: {self.chosen_destination}"]
        for rep in self.destinations:
            marker = "*" if rep.destination == self.chosen_destination else " "
            lines.append(
                f" {marker} {rep.destination:<12} value {rep.best.evaluation_value:.6g}  "
                f"time {rep.best.elapsed_sec:.6g}s  energy {rep.best.energy_watt_sec:.6g} W·s")
        for item in self.skipped:
            lines.append(f"   {item['device']:<12} skipped: {item['reason']}")
        return "\n".join(lines) + "\n"
