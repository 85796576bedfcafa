"""Mixed-environment offloading: pick one destination among many.

Destinations are tried cheapest-to-verify first (many-core CPU, then GPU,
then FPGA). When an earlier stage already satisfies the user requirement,
the remaining, more expensive verifications are skipped; otherwise the
destination with the highest evaluation value wins, ties going to the
earlier-tried device.
"""

from __future__ import annotations

import logging
import random
from dataclasses import dataclass

from sklearn.base import BaseEstimator, clone

from .backends import MeasurementBackend
from .fpga import FpgaFlowSearch
from .ga import GeneticPatternSearch
from .model import MachineProfile, OFFLOAD_DEVICES, ProgramModel
from .pattern import OffloadPattern
from .report import OrchestrationReport, SearchReport

log = logging.getLogger(__name__)

TRY_ORDER = OFFLOAD_DEVICES  # manycore_cpu, gpu, fpga


@dataclass(frozen=True)
class UserRequirement:
    """What counts as "good enough" to stop verifying further devices.

    All set criteria must hold. With no criteria set the orchestrator
    never stops early.
    """

    target_speedup: float | None = None
    max_energy_watt_sec: float | None = None
    min_evaluation_value: float | None = None

    @classmethod
    def none(cls) -> "UserRequirement":
        return cls()

    @classmethod
    def parse(cls, text: str) -> "UserRequirement":
        """Parse "speedup=2,energy=500,value=0.05" or "none"."""
        text = text.strip()
        if text.lower() in ("", "none"):
            return cls.none()
        kwargs: dict[str, float] = {}
        names = {"speedup": "target_speedup", "energy": "max_energy_watt_sec",
                 "value": "min_evaluation_value"}
        for part in text.split(","):
            if "=" not in part:
                raise ValueError(f"bad requirement item '{part}': expected key=value")
            key, _, raw = part.partition("=")
            key = key.strip().lower()
            if key not in names:
                raise ValueError(
                    f"unknown requirement '{key}' (use speedup, energy, or value)")
            try:
                kwargs[names[key]] = float(raw)
            except ValueError:
                raise ValueError(f"requirement '{key}' needs a number, got '{raw}'") from None
        req = cls(**kwargs)
        if req.target_speedup is not None and req.target_speedup < 1:
            raise ValueError("speedup requirement must be >= 1")
        return req

    def is_set(self) -> bool:
        return any(v is not None for v in (
            self.target_speedup, self.max_energy_watt_sec, self.min_evaluation_value))

    def satisfied_by(self, report: SearchReport) -> bool:
        if not self.is_set():
            return False
        if self.target_speedup is not None:
            if report.improvement_time < self.target_speedup:
                return False
        if self.max_energy_watt_sec is not None:
            if report.best.energy_watt_sec > self.max_energy_watt_sec:
                return False
        if self.min_evaluation_value is not None:
            if report.best.evaluation_value < self.min_evaluation_value:
                return False
        return True

    def to_dict(self) -> dict:
        return {
            "target_speedup": self.target_speedup,
            "max_energy_watt_sec": self.max_energy_watt_sec,
            "min_evaluation_value": self.min_evaluation_value,
        }


class MixedEnvironmentOrchestrator(BaseEstimator):
    """Run the staged destination search and select the final placement.

    `ga_search` and `fpga_search` are prototypes cloned per destination;
    leave them None for spec-default searchers. A destination whose search
    raises is recorded as skipped rather than aborting the whole run.
    """

    def __init__(self, requirement: UserRequirement | None = None,
                 ga_search: GeneticPatternSearch | None = None,
                 fpga_search: FpgaFlowSearch | None = None,
                 backend: MeasurementBackend | None = None, store=None,
                 per_destination_budget_sec: float | None = None,
                 random_state: int | None = None):
        self.requirement = requirement
        self.ga_search = ga_search
        self.fpga_search = fpga_search
        self.backend = backend
        self.store = store
        self.per_destination_budget_sec = per_destination_budget_sec
        self.random_state = random_state

    def _searcher_for(self, device: str, seed: int):
        if device == "fpga":
            proto = self.fpga_search if self.fpga_search is not None else FpgaFlowSearch()
            searcher = clone(proto)
        else:
            proto = self.ga_search if self.ga_search is not None else GeneticPatternSearch()
            searcher = clone(proto)
            searcher.set_params(device=device)
        searcher.set_params(random_state=seed,
                            max_wall_sec=self.per_destination_budget_sec)
        if self.backend is not None:
            searcher.set_params(backend=self.backend)
        if self.store is not None:
            searcher.set_params(store=self.store)
        return searcher

    def fit(self, model: ProgramModel, profile: MachineProfile) -> "MixedEnvironmentOrchestrator":
        requirement = self.requirement if self.requirement is not None else UserRequirement.none()
        available = profile.offload_devices()
        if not available:
            raise ValueError("machine profile contains no offload device")
        seed = (self.random_state if self.random_state is not None
                else random.SystemRandom().randrange(2 ** 32))

        reports: list[SearchReport] = []
        skipped: list[dict] = []
        stop_reason = "all_tried"
        for device in TRY_ORDER:
            if device not in available:
                skipped.append({"device": device, "reason": "not_in_profile"})
                continue
            searcher = self._searcher_for(device, seed)
            try:
                searcher.fit(model, profile)
            except Exception as exc:  # record and move on; one bad stage is not fatal
                log.warning("search for %s failed: %s", device, exc)
                skipped.append({"device": device, "reason": f"search_failed: {exc}"})
                continue
            reports.append(searcher.report_)
            if requirement.satisfied_by(searcher.report_):
                stop_reason = "requirement_met"
                for later in TRY_ORDER[TRY_ORDER.index(device) + 1:]:
                    if later in available:
                        skipped.append({"device": later,
                                        "reason": "requirement_met_earlier"})
                break

        chosen: SearchReport | None = None
        for rep in reports:  # tried order; strict > keeps the earlier device on ties
            if chosen is None or rep.best.evaluation_value > chosen.best.evaluation_value:
                chosen = rep

        self.seed_ = seed
        self.reports_ = reports
        self.stop_reason_ = stop_reason
        self.chosen_destination_ = chosen.destination if chosen else None
        self.best_report_ = chosen
        self.best_pattern_ = (OffloadPattern(chosen.best.device, tuple(chosen.best.genes))
                              if chosen else None)
        self.report_ = OrchestrationReport(
            destinations=reports,
            chosen_destination=self.chosen_destination_,
            stop_reason=stop_reason,
            skipped=skipped,
            requirement=requirement.to_dict(),
            seed=seed,
        )
        return self
