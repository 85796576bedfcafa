"""Energy integration and the combined time/power evaluation value.

A measured run is scored as elapsed^a * mean_watts^b (defaults a = b = -1/2),
so shorter and lower-power runs score higher. Runs that blow the verification
time budget are recorded with a fixed penalty time so they rank poorly
without stalling the search.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path

import numpy as np

DEFAULT_TIME_EXPONENT = -0.5
DEFAULT_POWER_EXPONENT = -0.5


@dataclass(frozen=True)
class PowerSample:
    """One whole-server power reading at t_sec seconds into the run."""

    t_sec: float
    watts: float


@dataclass(frozen=True)
class TimeoutRule:
    """Verification time budget and the penalty time recorded past it."""

    timeout_sec: float = 180.0
    penalty_sec: float = 1000.0


def integrate_energy(samples: list[PowerSample] | tuple[PowerSample, ...],
                     elapsed_sec: float) -> float:
    """Trapezoidal watt-seconds over [0, elapsed_sec].

    The first and last sample values are held constant out to the interval
    edges, so a single sample integrates as a constant trace.
    """
    if not samples:
        raise ValueError("integrate_energy requires at least one power sample")
    if elapsed_sec <= 0:
        raise ValueError("elapsed_sec must be positive")
    times = [s.t_sec for s in samples]
    watts = [s.watts for s in samples]
    for i, (t, w) in enumerate(zip(times, watts)):
        if w < 0:
            raise ValueError(f"sample {i}: watts must be nonnegative")
        if t < 0 or t > elapsed_sec:
            raise ValueError(f"sample {i}: t_sec {t} outside [0, {elapsed_sec}]")
        if i > 0 and t <= times[i - 1]:
            raise ValueError(f"sample {i}: timestamps must be strictly increasing")
    if times[0] > 0:
        times.insert(0, 0.0)
        watts.insert(0, watts[0])
    if times[-1] < elapsed_sec:
        times.append(elapsed_sec)
        watts.append(watts[-1])
    return float(np.trapezoid(watts, times))


def apply_timeout(raw_elapsed_sec: float, rule: TimeoutRule | None = None) -> tuple[float, bool]:
    """Return (recorded elapsed, timed_out) under the penalty rule.

    Exactly hitting the budget is not a timeout; only strictly exceeding it is.
    """
    rule = rule or TimeoutRule()
    if raw_elapsed_sec <= 0:
        raise ValueError("raw_elapsed_sec must be positive")
    if raw_elapsed_sec > rule.timeout_sec:
        return rule.penalty_sec, True
    return raw_elapsed_sec, False


def constant_trace(watts: float, elapsed_sec: float) -> tuple[PowerSample, PowerSample]:
    return (PowerSample(0.0, watts), PowerSample(elapsed_sec, watts))


@dataclass(frozen=True)
class Measurement:
    """Outcome of one verification run: time, power trace, derived energy."""

    elapsed_sec: float
    samples: tuple[PowerSample, ...]
    energy_watt_sec: float
    mean_watts: float
    timed_out: bool = False

    @classmethod
    def from_samples(cls, raw_elapsed_sec: float,
                     samples: list[PowerSample] | tuple[PowerSample, ...],
                     rule: TimeoutRule | None = None) -> "Measurement":
        """Build a Measurement from a raw run, applying the timeout rule.

        A timed-out run is recorded as the penalty time at a constant power
        equal to the mean watts observed up to the timeout cut.
        """
        rule = rule or TimeoutRule()
        elapsed, timed_out = apply_timeout(raw_elapsed_sec, rule)
        if timed_out:
            window = min(raw_elapsed_sec, rule.timeout_sec)
            observed = [s for s in samples if s.t_sec <= window] or [samples[0]]
            mean = integrate_energy(observed, window) / window
            trace = constant_trace(mean, elapsed)
            return cls(
                elapsed_sec=elapsed,
                samples=trace,
                energy_watt_sec=mean * elapsed,
                mean_watts=mean,
                timed_out=True,
            )
        energy = integrate_energy(samples, elapsed)
        return cls(
            elapsed_sec=elapsed,
            samples=tuple(samples),
            energy_watt_sec=energy,
            mean_watts=energy / elapsed,
            timed_out=False,
        )

    @classmethod
    def penalty(cls, watts: float, rule: TimeoutRule | None = None) -> "Measurement":
        """Stand-in for a failed run: penalty time at a constant power."""
        rule = rule or TimeoutRule()
        trace = constant_trace(watts, rule.penalty_sec)
        return cls(
            elapsed_sec=rule.penalty_sec,
            samples=trace,
            energy_watt_sec=watts * rule.penalty_sec,
            mean_watts=watts,
            timed_out=True,
        )


@dataclass(frozen=True)
class EvaluationValue:
    """Scalar goodness of a measured pattern; larger is better."""

    value: float
    time_exponent: float = DEFAULT_TIME_EXPONENT
    power_exponent: float = DEFAULT_POWER_EXPONENT


def evaluation_value(m: Measurement,
                     time_exponent: float = DEFAULT_TIME_EXPONENT,
                     power_exponent: float = DEFAULT_POWER_EXPONENT) -> EvaluationValue:
    """elapsed^a * mean_watts^b with operator-configurable exponents."""
    if m.elapsed_sec <= 0:
        raise ValueError("evaluation requires positive elapsed time")
    if m.mean_watts <= 0:
        raise ValueError("evaluation requires positive mean power")
    value = m.elapsed_sec ** time_exponent * m.mean_watts ** power_exponent
    return EvaluationValue(value=value, time_exponent=time_exponent,
                           power_exponent=power_exponent)


def parse_power_trace(path: str | Path) -> list[PowerSample]:
    """Read a `t_sec,watts` CSV power trace."""
    p = Path(path)
    with p.open(newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or [c.strip() for c in header] != ["t_sec", "watts"]:
            raise ValueError(f"power trace '{p}': expected header 't_sec,watts'")
        samples = []
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != 2:
                raise ValueError(f"power trace '{p}' line {lineno}: expected two columns")
            try:
                samples.append(PowerSample(float(row[0]), float(row[1])))
            except ValueError as exc:
                raise ValueError(f"power trace '{p}' line {lineno}: {exc}") from exc
    if not samples:
        raise ValueError(f"power trace '{p}': no samples")
    return samples


def write_power_trace(samples: list[PowerSample] | tuple[PowerSample, ...],
                      path: str | Path) -> None:
    lines = ["t_sec,watts"]
    lines += [f"{s.t_sec},{s.watts}" for s in samples]
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")
