"""Genetic-algorithm search over GPU / many-core offload patterns.

A pattern is a bit vector over the offload-eligible loops (1 = run on the
destination device). Each individual is measured in the verification
environment and scored by the combined time/power evaluation value, so the
population drifts toward fast, low-power placements. Expensive duplicate
measurements are avoided via fingerprint caching, and a fixed seed makes
the whole search reproducible bit for bit with the simulated backend.
"""

from __future__ import annotations

import math
import random
import time

from sklearn.base import BaseEstimator

from .backends import MeasurementBackend, SimulatedBackend
from .fitness import TimeoutRule
from .model import MachineProfile, OFFLOAD_DEVICES, ProgramModel, parallelizable_loops
from .pattern import OffloadPattern
from .report import PatternOutcome, SearchReport
from .runner import EvaluatedPattern, PatternEvaluator
from .transfers import plan_transfers


def roulette_index(fitnesses: list[float], rng: random.Random) -> int:
    """One fitness-proportional draw; returns the selected index."""
    for f in fitnesses:
        if not (f > 0 and math.isfinite(f)):
            raise ValueError("roulette selection requires positive finite fitnesses")
    total = sum(fitnesses)
    pick = rng.random() * total
    acc = 0.0
    for i, f in enumerate(fitnesses):
        acc += f
        if pick < acc:
            return i
    return len(fitnesses) - 1


def select_parents(individuals: list[tuple[int, ...]], fitnesses: list[float],
                   n_pairs: int, rng: random.Random) -> list[tuple[tuple[int, ...], tuple[int, ...]]]:
    """Roulette-wheel parent pairs, fitness-proportional with replacement."""
    if len(individuals) != len(fitnesses):
        raise ValueError("individuals and fitnesses must have equal length")
    pairs = []
    for _ in range(n_pairs):
        a = individuals[roulette_index(fitnesses, rng)]
        b = individuals[roulette_index(fitnesses, rng)]
        pairs.append((a, b))
    return pairs


def crossover_mutate(parent_a: tuple[int, ...], parent_b: tuple[int, ...],
                     crossover_rate: float, mutation_rate: float,
                     rng: random.Random) -> tuple[tuple[int, ...], tuple[int, ...]]:
    """Single-point crossover followed by per-gene bit flips."""
    if len(parent_a) != len(parent_b):
        raise ValueError("parents must have equal gene length")
    n = len(parent_a)
    if n >= 2 and rng.random() < crossover_rate:
        cut = rng.randrange(1, n)
        child_a = parent_a[:cut] + parent_b[cut:]
        child_b = parent_b[:cut] + parent_a[cut:]
    else:
        child_a, child_b = parent_a, parent_b

    def mutate(genes: tuple[int, ...]) -> tuple[int, ...]:
        return tuple(1 - g if rng.random() < mutation_rate else g for g in genes)

    return mutate(child_a), mutate(child_b)


def _prefer_clean(current: EvaluatedPattern | None,
                  candidate: EvaluatedPattern) -> EvaluatedPattern | None:
    if current is None or candidate.value.value > current.value.value:
        return candidate
    return current


class GeneticPatternSearch(BaseEstimator):
    """Evolve offload patterns for one destination device.

    Parameters mirror a textbook generational GA (the method itself fixes
    none of them): fitness-proportional selection, single-point crossover,
    per-gene mutation, elitism. The all-CPU individual is injected into the
    initial population so the baseline is always measured and improvement
    ratios are well defined.

    After fit, `best_pattern_` is the highest-valued pattern over every
    measured individual (timed-out and failed patterns are only eligible
    when nothing clean was measured), and `report_` holds the full
    SearchReport.
    """

    def __init__(self, device: str = "gpu", population_size: int = 20,
                 generations: int = 20, crossover_rate: float = 0.9,
                 mutation_rate: float = 0.05, elitism_count: int = 1,
                 time_exponent: float = -0.5, power_exponent: float = -0.5,
                 timeout_sec: float = 180.0, penalty_sec: float = 1000.0,
                 backend: MeasurementBackend | None = None, store=None,
                 max_wall_sec: float | None = None,
                 random_state: int | None = None):
        self.device = device
        self.population_size = population_size
        self.generations = generations
        self.crossover_rate = crossover_rate
        self.mutation_rate = mutation_rate
        self.elitism_count = elitism_count
        self.time_exponent = time_exponent
        self.power_exponent = power_exponent
        self.timeout_sec = timeout_sec
        self.penalty_sec = penalty_sec
        self.backend = backend
        self.store = store
        self.max_wall_sec = max_wall_sec
        self.random_state = random_state

    def _check_params(self, profile: MachineProfile) -> None:
        if self.device not in OFFLOAD_DEVICES:
            raise ValueError(f"device must be one of {OFFLOAD_DEVICES}, got '{self.device}'")
        profile.device(self.device)
        if self.population_size < 2:
            raise ValueError("population_size must be >= 2")
        if self.generations < 1:
            raise ValueError("generations must be >= 1")
        for name in ("crossover_rate", "mutation_rate"):
            rate = getattr(self, name)
            if not 0.0 <= rate <= 1.0:
                raise ValueError(f"{name} must be in [0, 1]")
        if not 0 <= self.elitism_count <= self.population_size:
            raise ValueError("elitism_count must be in [0, population_size]")

    def config_echo(self) -> dict:
        params = {k: v for k, v in self.get_params(deep=False).items()
                  if k not in ("backend", "store")}
        return params

    def fit(self, model: ProgramModel, profile: MachineProfile) -> "GeneticPatternSearch":
        self._check_params(profile)
        rule = TimeoutRule(timeout_sec=self.timeout_sec, penalty_sec=self.penalty_sec)
        backend = self.backend if self.backend is not None else SimulatedBackend(rule)
        seed = (self.random_state if self.random_state is not None
                else random.SystemRandom().randrange(2 ** 32))
        rng = random.Random(seed)
        evaluator = PatternEvaluator(model, profile, backend,
                                     self.time_exponent, self.power_exponent,
                                     store=self.store)
        eligible = parallelizable_loops(model)
        n_genes = len(eligible)
        baseline_pattern = OffloadPattern.all_cpu(self.device, n_genes)

        history: list[dict] = []
        best_clean: EvaluatedPattern | None = None
        best_any: EvaluatedPattern | None = None
        notes = ""

        if n_genes == 0:
            baseline_ev = evaluator.evaluate(baseline_pattern)
            best_any = baseline_ev
            if not (baseline_ev.measurement.timed_out or baseline_ev.failed):
                best_clean = baseline_ev
            notes = "nothing to offload: model has no offload-eligible loops"
        else:
            population: list[tuple[int, ...]] = [baseline_pattern.genes]
            while len(population) < self.population_size:
                population.append(tuple(1 if rng.random() < 0.5 else 0
                                        for _ in range(n_genes)))
            started = time.monotonic()
            for generation in range(self.generations):
                patterns = [OffloadPattern(self.device, genes) for genes in population]
                evaluated = evaluator.evaluate_many(patterns)
                for ev in evaluated:
                    best_any = _prefer_clean(best_any, ev)
                    if not (ev.measurement.timed_out or ev.failed):
                        best_clean = _prefer_clean(best_clean, ev)
                gen_best = max(evaluated, key=lambda e: e.value.value)
                history.append({
                    "generation": generation,
                    "evaluated": len(evaluated),
                    "best_value": gen_best.value.value,
                    "best_pattern": gen_best.pattern.bitstring,
                })
                if generation == self.generations - 1:
                    break
                if self.max_wall_sec is not None and (
                        time.monotonic() - started) > self.max_wall_sec:
                    notes = f"stopped after generation {generation}: wall budget exhausted"
                    break
                population = self._next_generation(evaluated, rng)
            baseline_ev = evaluator.evaluate(baseline_pattern)

        best = best_clean if best_clean is not None else best_any
        assert best is not None

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
            destination=self.device,
            seed=seed,
            config=self.config_echo(),
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

    def _next_generation(self, evaluated: list[EvaluatedPattern],
                         rng: random.Random) -> list[tuple[int, ...]]:
        ranked = sorted(evaluated, key=lambda e: -e.value.value)  # stable
        next_pop = [ev.pattern.genes for ev in ranked[:self.elitism_count]]
        individuals = [ev.pattern.genes for ev in evaluated]
        fitnesses = [ev.value.value for ev in evaluated]
        while len(next_pop) < self.population_size:
            (pa, pb), = select_parents(individuals, fitnesses, 1, rng)
            child_a, child_b = crossover_mutate(
                pa, pb, self.crossover_rate, self.mutation_rate, rng)
            next_pop.append(child_a)
            if len(next_pop) < self.population_size:
                next_pop.append(child_b)
        return next_pop
