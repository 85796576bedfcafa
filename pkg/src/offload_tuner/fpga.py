"""Two-round FPGA offload search over narrowed candidates.

FPGA measurement is orders of magnitude more expensive than GPU trials
(each pattern implies a long synthesis), so instead of an evolutionary
search the flow narrows candidates statically, measures each survivor as
a single-loop pattern, and only combines the ones that beat the CPU-only
baseline in a small second round. The run budget is therefore bounded by
1 + k + combination_limit backend calls.
"""

from __future__ import annotations

import itertools
import random
import time

from sklearn.base import BaseEstimator

from .analysis import DEFAULT_MIN_ITERATIONS, DEFAULT_TOP_K, narrow_candidates
from .backends import MeasurementBackend, SimulatedBackend
from .fitness import TimeoutRule
from .model import MachineProfile, ProgramModel, parallelizable_loops
from .pattern import OffloadPattern
from .report import PatternOutcome, SearchReport
from .runner import EvaluatedPattern, PatternEvaluator
from .transfers import plan_transfers


class FpgaFlowSearch(BaseEstimator):
    """Narrow, measure singles, combine improvers, pick the argmax.

    Round 1 measures each narrowed candidate alone; candidates whose
    evaluation value strictly beats the baseline's are "improvers".
    Round 2 measures pairs (then triples) of improvers in descending
    sum-of-round-1-value order, subject to the summed resource estimate
    fitting the device capacity, capped at combination_limit patterns.
    The final pick is the argmax evaluation value over baseline, round 1,
    and round 2.
    """

    def __init__(self, k: int = DEFAULT_TOP_K,
                 min_iterations: int = DEFAULT_MIN_ITERATIONS,
                 combination_limit: int = 6,
                 time_exponent: float = -0.5, power_exponent: float = -0.5,
                 timeout_sec: float = 180.0, penalty_sec: float = 1000.0,
                 backend: MeasurementBackend | None = None, store=None,
                 max_wall_sec: float | None = None,
                 random_state: int | None = None):
        self.k = k
        self.min_iterations = min_iterations
        self.combination_limit = combination_limit
        self.time_exponent = time_exponent
        self.power_exponent = power_exponent
        self.timeout_sec = timeout_sec
        self.penalty_sec = penalty_sec
        self.backend = backend
        self.store = store
        self.max_wall_sec = max_wall_sec
        self.random_state = random_state

    device = "fpga"

    def config_echo(self) -> dict:
        return {k: v for k, v in self.get_params(deep=False).items()
                if k not in ("backend", "store")}

    def fit(self, model: ProgramModel, profile: MachineProfile) -> "FpgaFlowSearch":
        if self.k < 1:
            raise ValueError("k must be >= 1")
        if self.combination_limit < 0:
            raise ValueError("combination_limit must be >= 0")
        profile.device("fpga")
        rule = TimeoutRule(timeout_sec=self.timeout_sec, penalty_sec=self.penalty_sec)
        backend = self.backend if self.backend is not None else SimulatedBackend(rule)
        seed = (self.random_state if self.random_state is not None
                else random.SystemRandom().randrange(2 ** 32))
        evaluator = PatternEvaluator(model, profile, backend,
                                     self.time_exponent, self.power_exponent,
                                     store=self.store)
        eligible = parallelizable_loops(model)
        n_genes = len(eligible)
        capacity = profile.fpga_resource_capacity_fraction
        started = time.monotonic()

        baseline_ev = evaluator.evaluate(OffloadPattern.all_cpu("fpga", n_genes))
        candidates = narrow_candidates(model, profile, self.k, self.min_iterations)
        self.candidates_ = candidates

        history: list[dict] = []
        measured: list[EvaluatedPattern] = [baseline_ev]
        notes = ""

        round1: list[tuple[EvaluatedPattern, float]] = []  # (evaluated, resource)
        for cand in candidates:
            if self._out_of_budget(started):
                notes = "stopped during round 1: wall budget exhausted"
                break
            pattern = OffloadPattern.from_loop_ids("fpga", model, {cand.loop_id})
            ev = evaluator.evaluate(pattern)
            measured.append(ev)
            round1.append((ev, cand.resource_fraction))
            history.append({
                "round": 1,
                "pattern": pattern.bitstring,
                "loop_ids": [cand.loop_id],
                "value": ev.value.value,
            })

        improvers = [(ev, res) for ev, res in round1
                     if ev.value.value > baseline_ev.value.value]
        for combo in self._combinations(improvers, capacity):
            if self._out_of_budget(started):
                notes = "stopped during round 2: wall budget exhausted"
                break
            loop_ids = set().union(*(set(ev.pattern.offloaded_ids(model))
                                     for ev, _ in combo))
            pattern = OffloadPattern.from_loop_ids("fpga", model, loop_ids)
            ev = evaluator.evaluate(pattern)
            measured.append(ev)
            history.append({
                "round": 2,
                "pattern": pattern.bitstring,
                "loop_ids": sorted(loop_ids),
                "value": ev.value.value,
            })

        best = max(measured, key=lambda e: e.value.value)
        if not candidates:
            notes = "no offload found: no candidates survived narrowing"

        fpga_dev = profile.device("fpga")
        budget = {
            "measurements": evaluator.backend_calls,
            "per_measurement_overhead_sec": fpga_dev.measurement_overhead_sec,
            "estimated_overhead_sec": evaluator.backend_calls * fpga_dev.measurement_overhead_sec,
        }

        self.seed_ = seed
        self.model_ = model
        self.baseline_measurement_ = baseline_ev.measurement
        self.baseline_value_ = baseline_ev.value
        self.best_pattern_ = best.pattern
        self.best_measurement_ = best.measurement
        self.best_value_ = best.value
        self.history_ = history
        self.n_backend_calls_ = evaluator.backend_calls
        self.n_distinct_patterns_ = evaluator.distinct_patterns
        self.n_failures_ = evaluator.failures
        self.report_ = SearchReport(
            destination="fpga",
            seed=seed,
            config={**self.config_echo(), "run_budget": budget},
            baseline=PatternOutcome.from_evaluated(baseline_ev, model),
            best=PatternOutcome.from_evaluated(best, model),
            transfer_plan=plan_transfers(model, best.pattern).to_dicts(),
            history=history,
            backend_calls=evaluator.backend_calls,
            distinct_patterns=evaluator.distinct_patterns,
            failures=evaluator.failures,
            notes=notes,
        )
        return self

    def _out_of_budget(self, started: float) -> bool:
        return (self.max_wall_sec is not None
                and (time.monotonic() - started) > self.max_wall_sec)

    def _combinations(self, improvers: list[tuple[EvaluatedPattern, float]],
                      capacity: float) -> list[tuple]:
        """Pairs then triples of improvers, best round-1 sums first.

        Combinations whose summed resource estimate exceeds the device
        capacity are skipped; the feasible list is capped at
        combination_limit.
        """
        feasible = []
        for size in (2, 3):
            sized = []
            for combo in itertools.combinations(range(len(improvers)), size):
                total_value = sum(improvers[i][0].value.value for i in combo)
                total_resource = sum(improvers[i][1] for i in combo)
                if total_resource <= capacity:
                    sized.append((-total_value, combo))
            sized.sort()
            feasible.extend(tuple(improvers[i] for i in combo) for _, combo in sized)
        return feasible[:self.combination_limit]
