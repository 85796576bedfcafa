"""Shared pattern-evaluation machinery for the search layers.

Wraps a measurement backend with fingerprint caching (in memory, plus an
optional persistent store), transfer-plan construction, failure-to-penalty
conversion, and backend-call accounting. Distinct patterns are measured at
most once per search; duplicates hit the cache.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

from .backends import BackendRequest, MeasurementBackend, MeasurementFailure
from .fitness import EvaluationValue, Measurement, evaluation_value
from .model import MachineProfile, ProgramModel, model_digest
from .pattern import OffloadPattern
from .transfers import plan_transfers


@dataclass(frozen=True)
class EvaluatedPattern:
    pattern: OffloadPattern
    measurement: Measurement
    value: EvaluationValue
    failed: bool = False

    @property
    def fingerprint(self) -> str:
        return self.pattern.fingerprint()


class PatternEvaluator:
    """Measure patterns through a backend with caching and accounting."""

    def __init__(self, model: ProgramModel, profile: MachineProfile,
                 backend: MeasurementBackend,
                 time_exponent: float = -0.5, power_exponent: float = -0.5,
                 store=None):
        self.model = model
        self.profile = profile
        self.backend = backend
        self.time_exponent = time_exponent
        self.power_exponent = power_exponent
        self.store = store
        self._digest = model_digest(model) if store is not None else None
        self._memory: dict[str, tuple[Measurement, bool]] = {}
        self.backend_calls = 0
        self.failures = 0

    @property
    def distinct_patterns(self) -> int:
        return len(self._memory)

    def _measure(self, pattern: OffloadPattern) -> tuple[Measurement, bool]:
        plan = plan_transfers(self.model, pattern)
        request = BackendRequest(model=self.model, pattern=pattern,
                                 transfer_plan=plan, profile=self.profile)
        try:
            return self.backend.measure(request), False
        except MeasurementFailure:
            idle = self.profile.device(pattern.device).idle_watts
            return Measurement.penalty(max(idle, 1e-9), self.backend.rule), True

    def _finish(self, pattern: OffloadPattern,
                measurement: Measurement, failed: bool) -> EvaluatedPattern:
        value = evaluation_value(measurement, self.time_exponent, self.power_exponent)
        return EvaluatedPattern(pattern=pattern, measurement=measurement,
                                value=value, failed=failed)

    def evaluate(self, pattern: OffloadPattern) -> EvaluatedPattern:
        fp = pattern.fingerprint()
        if fp in self._memory:
            return self._finish(pattern, *self._memory[fp])
        if self.store is not None:
            stored = self.store.get(self._digest, pattern.device, fp,
                                    self.backend.backend_id)
            if stored is not None:
                self._memory[fp] = (stored, False)
                return self._finish(pattern, stored, False)
        measurement, failed = self._measure(pattern)
        self.backend_calls += 1
        if failed:
            self.failures += 1
        self._memory[fp] = (measurement, failed)
        if self.store is not None and not failed:
            self.store.put(self._digest, pattern.device, fp,
                           self.backend.backend_id, measurement)
        return self._finish(pattern, measurement, failed)

    def evaluate_many(self, patterns: list[OffloadPattern]) -> list[EvaluatedPattern]:
        """Evaluate a batch, using backend parallelism for uncached patterns.

        Results come back in input order regardless of completion order, so
        seeded searches stay deterministic.
        """
        workers = getattr(self.backend, "parallelism", 1)
        if workers <= 1:
            return [self.evaluate(p) for p in patterns]
        pending: dict[str, OffloadPattern] = {}
        for p in patterns:
            fp = p.fingerprint()
            if fp not in self._memory and fp not in pending:
                if self.store is not None and self.store.get(
                        self._digest, p.device, fp, self.backend.backend_id) is not None:
                    continue
                pending[fp] = p
        if pending:
            with ThreadPoolExecutor(max_workers=workers) as pool:
                futures = {fp: pool.submit(self._measure, p)
                           for fp, p in pending.items()}
            for fp, fut in futures.items():
                measurement, failed = fut.result()
                self.backend_calls += 1
                if failed:
                    self.failures += 1
                self._memory[fp] = (measurement, failed)
                if self.store is not None and not failed:
                    self.store.put(self._digest, pending[fp].device, fp,
                                   self.backend.backend_id, measurement)
        return [self.evaluate(p) for p in patterns]
