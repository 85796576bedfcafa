"""Measurement backends: run one offload pattern, return a Measurement.

The simulated backend is a deterministic cost model standing in for a real
verification machine; the replay backend serves pre-recorded traces keyed
by pattern fingerprint; the external backend shells out to an operator
command that performs the actual run and power capture.
"""

from __future__ import annotations

import hashlib
import json
import os
import shlex
import subprocess
import tempfile
import threading
from abc import ABC, abstractmethod
from dataclasses import dataclass
from pathlib import Path

from .fitness import Measurement, PowerSample, TimeoutRule, parse_power_trace
from .model import MachineProfile, ProgramModel, parallelizable_loops
from .pattern import OffloadPattern
from .transfers import AFTER, BEFORE, TransferPlan

CPU_COMPUTE = "cpu_compute"
DEVICE_COMPUTE = "device_compute"
TRANSFER = "transfer"

_STEP_EPS = 1e-9  # strict-increase nudge between step-trace plateaus


class MeasurementFailure(RuntimeError):
    """The backend could not produce a measurement for this pattern."""


@dataclass(frozen=True)
class BackendRequest:
    model: ProgramModel
    pattern: OffloadPattern
    transfer_plan: TransferPlan
    profile: MachineProfile

    def __post_init__(self) -> None:
        n = len(parallelizable_loops(self.model))
        if len(self.pattern.genes) != n:
            raise ValueError(
                f"pattern has {len(self.pattern.genes)} genes but model has "
                f"{n} offload-eligible loops")


@dataclass(frozen=True)
class SimulatedPhase:
    kind: str
    duration_sec: float
    watts: float


class MeasurementBackend(ABC):
    """Uniform interface over the verification environment."""

    rule: TimeoutRule
    parallelism: int = 1

    @property
    @abstractmethod
    def backend_id(self) -> str:
        """Stable identifier used in persistent cache keys."""

    @abstractmethod
    def measure(self, request: BackendRequest) -> Measurement:
        """Run the pattern once and return its Measurement.

        Raises MeasurementFailure when no measurement could be taken.
        """


def per_loop_cpu_seconds(model: ProgramModel) -> dict[str, float]:
    """CPU seconds attributed to each loop.

    Loops with an explicit cpu_time_sec keep it; the rest share the
    remaining baseline proportionally to iteration_count * per_iteration_ops,
    so the shares always sum to baseline_cpu_time_sec.
    """
    explicit = {l.id: l.cpu_time_sec for l in model.loops if l.cpu_time_sec is not None}
    remaining = model.baseline_cpu_time_sec - sum(explicit.values())
    if remaining < -1e-12:
        raise ValueError("explicit cpu_time_sec values exceed baseline_cpu_time_sec")
    implicit = [l for l in model.loops if l.cpu_time_sec is None]
    out = dict(explicit)
    if implicit:
        weights = {l.id: l.iteration_count * l.per_iteration_ops for l in implicit}
        total = sum(weights.values())
        for l in implicit:
            share = weights[l.id] / total if total > 0 else 1.0 / len(implicit)
            out[l.id] = max(remaining, 0.0) * share
    return out


def simulate_phases(request: BackendRequest) -> list[SimulatedPhase]:
    """Sequential phase breakdown of one run under the cost model.

    Whole-server power: CPU phases run at cpu active watts, device compute
    and transfers at the destination device's active watts (which may be
    lower than the CPU's). Each transfer entry costs size/bandwidth plus
    latency once.
    """
    model, pattern, plan, profile = (request.model, request.pattern,
                                     request.transfer_plan, request.profile)
    cpu = profile.device("cpu")
    dev = profile.device(pattern.device)
    offloaded = set(pattern.offloaded_ids(model))
    loop_seconds = per_loop_cpu_seconds(model)

    def transfer_phase(entry) -> SimulatedPhase:
        size = model.variable(entry.variable).size_bytes
        duration = size / dev.transfer_bandwidth_bytes_per_sec + dev.transfer_latency_sec
        return SimulatedPhase(TRANSFER, duration, dev.active_watts)

    phases = [transfer_phase(e) for e in plan.at(None, BEFORE)]
    for loop in model.loops:
        phases += [transfer_phase(e) for e in plan.at(loop.id, BEFORE)]
        t_cpu = loop_seconds[loop.id]
        if loop.id in offloaded:
            phases.append(SimulatedPhase(
                DEVICE_COMPUTE, t_cpu / dev.speedup_for(loop.id), dev.active_watts))
        else:
            phases.append(SimulatedPhase(CPU_COMPUTE, t_cpu, cpu.active_watts))
        phases += [transfer_phase(e) for e in plan.at(loop.id, AFTER)]
    phases += [transfer_phase(e) for e in plan.at(None, AFTER)]
    return phases


def step_trace(phases: list[SimulatedPhase]) -> list[PowerSample]:
    """Piecewise-constant power trace matching a phase list.

    Consecutive equal-watts phases merge into one plateau; plateau edges
    are nudged apart so timestamps stay strictly increasing while the
    trapezoidal integral matches the exact phase energy to ~1e-12.
    """
    merged: list[list[float]] = []  # [duration, watts]
    for ph in phases:
        if ph.duration_sec <= 0:
            continue
        if merged and merged[-1][1] == ph.watts:
            merged[-1][0] += ph.duration_sec
        else:
            merged.append([ph.duration_sec, ph.watts])
    samples: list[PowerSample] = []
    t = 0.0
    for duration, watts in merged:
        if duration > 2 * _STEP_EPS:
            start = t if not samples else t + _STEP_EPS
            samples.append(PowerSample(start, watts))
            samples.append(PowerSample(t + duration, watts))
        t += duration
    if not samples:
        total = sum(d for d, _ in merged)
        mean = sum(d * w for d, w in merged) / total if total > 0 else 0.0
        samples = [PowerSample(0.0, mean), PowerSample(max(total, _STEP_EPS), mean)]
    return samples


class SimulatedBackend(MeasurementBackend):
    """Deterministic verification-environment stand-in."""

    def __init__(self, rule: TimeoutRule | None = None, parallelism: int = 1):
        self.rule = rule or TimeoutRule()
        self.parallelism = parallelism

    @property
    def backend_id(self) -> str:
        return "simulated"

    def measure(self, request: BackendRequest) -> Measurement:
        phases = simulate_phases(request)
        raw_elapsed = sum(p.duration_sec for p in phases)
        if raw_elapsed <= 0:
            raise MeasurementFailure("simulated run has zero total duration")
        return Measurement.from_samples(raw_elapsed, step_trace(phases), self.rule)


class ReplayBackend(MeasurementBackend):
    """Serve recorded runs from a directory of fingerprint-named traces.

    Layout: `<dir>/index.json` maps pattern fingerprint -> elapsed_sec and
    `<dir>/<fingerprint>.csv` holds the matching power trace.
    """

    def __init__(self, directory: str | Path, rule: TimeoutRule | None = None):
        self.directory = Path(directory)
        self.rule = rule or TimeoutRule()
        index_path = self.directory / "index.json"
        if not index_path.is_file():
            raise ValueError(f"replay directory '{self.directory}' has no index.json")
        self.index: dict[str, float] = json.loads(index_path.read_text(encoding="utf-8"))

    @property
    def backend_id(self) -> str:
        return f"replay:{self.directory.resolve()}"

    def measure(self, request: BackendRequest) -> Measurement:
        fp = request.pattern.fingerprint()
        if fp not in self.index:
            raise MeasurementFailure(
                f"no recorded run for pattern {request.pattern.bitstring} "
                f"(fingerprint {fp[:12]}...)")
        trace_path = self.directory / f"{fp}.csv"
        if not trace_path.is_file():
            raise MeasurementFailure(f"missing trace file '{trace_path}'")
        samples = parse_power_trace(trace_path)
        return Measurement.from_samples(float(self.index[fp]), samples, self.rule)


class ExternalCommandBackend(MeasurementBackend):
    """Run an operator-supplied command for each measurement.

    The command template may use `{pattern_file}` (a JSON description of
    the placement) and `{trace_out}` (where it must write a power trace);
    it must print the elapsed seconds on stdout. OFFLOAD_TUNER_TIMEOUT_SEC
    is exported so wrappers can enforce the budget themselves.
    """

    def __init__(self, command: str, rule: TimeoutRule | None = None,
                 parallelism: int = 1):
        if not command.strip():
            raise ValueError("external backend requires a non-empty command template")
        self.command = command
        self.rule = rule or TimeoutRule()
        self.parallelism = max(1, parallelism)
        self._slots = threading.Semaphore(self.parallelism)

    @property
    def backend_id(self) -> str:
        digest = hashlib.sha256(self.command.encode("utf-8")).hexdigest()[:12]
        return f"external:{digest}"

    def measure(self, request: BackendRequest) -> Measurement:
        with self._slots, tempfile.TemporaryDirectory(prefix="offload-tuner-") as tmp:
            pattern_file = Path(tmp) / "pattern.json"
            trace_out = Path(tmp) / "trace.csv"
            pattern_file.write_text(json.dumps({
                "device": request.pattern.device,
                "genes": list(request.pattern.genes),
                "eligible_loop_ids": parallelizable_loops(request.model),
                "offloaded_loop_ids": request.pattern.offloaded_ids(request.model),
            }, indent=2) + "\n", encoding="utf-8")
            argv = [tok.format(pattern_file=str(pattern_file), trace_out=str(trace_out))
                    for tok in shlex.split(self.command)]
            env = dict(os.environ, OFFLOAD_TUNER_TIMEOUT_SEC=str(self.rule.timeout_sec))
            try:
                proc = subprocess.run(argv, capture_output=True, text=True, env=env)
            except OSError as exc:
                raise MeasurementFailure(f"cannot run '{argv[0]}': {exc}") from exc
            if proc.returncode != 0:
                raise MeasurementFailure(
                    f"command exited {proc.returncode}: {proc.stderr.strip()[:200]}")
            lines = [ln for ln in proc.stdout.splitlines() if ln.strip()]
            try:
                elapsed = float(lines[-1])
            except (IndexError, ValueError):
                raise MeasurementFailure(
                    f"command stdout did not end with elapsed seconds: {proc.stdout!r}")
            if not trace_out.is_file():
                raise MeasurementFailure("command did not write the power trace file")
            try:
                samples = parse_power_trace(trace_out)
            except ValueError as exc:
                raise MeasurementFailure(str(exc)) from exc
            return Measurement.from_samples(elapsed, samples, self.rule)
