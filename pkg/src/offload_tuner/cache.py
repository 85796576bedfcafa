"""Persistent measurement cache: append-only JSONL keyed by fingerprint.

Records are keyed (model digest, device, gene fingerprint, backend id) so
editing the model or switching backends invalidates entries rather than
serving stale measurements. A truncated trailing record (e.g. from a
killed process) is skipped with a warning on load. CLI invocations take
an exclusive lock file so concurrent runs fail fast instead of corrupting
the file.
"""

from __future__ import annotations

import json
import logging
import os
from pathlib import Path

from .fitness import Measurement, PowerSample, integrate_energy

log = logging.getLogger(__name__)


class CacheLockedError(RuntimeError):
    """Another process holds the cache lock."""


def _measurement_to_dict(m: Measurement) -> dict:
    return {
        "elapsed_sec": m.elapsed_sec,
        "timed_out": m.timed_out,
        "samples": [[s.t_sec, s.watts] for s in m.samples],
    }


def _measurement_from_dict(obj: dict) -> Measurement:
    samples = tuple(PowerSample(float(t), float(w)) for t, w in obj["samples"])
    elapsed = float(obj["elapsed_sec"])
    energy = integrate_energy(samples, elapsed)
    return Measurement(
        elapsed_sec=elapsed,
        samples=samples,
        energy_watt_sec=energy,
        mean_watts=energy / elapsed,
        timed_out=bool(obj["timed_out"]),
    )


class MeasurementStore:
    """Load-on-open, append-on-put measurement cache."""

    def __init__(self, path: str | Path):
        self.path = Path(path)
        self._records: dict[tuple[str, str, str, str], Measurement] = {}
        if self.path.exists():
            self._load()

    def _load(self) -> None:
        lines = self.path.read_text(encoding="utf-8").splitlines()
        for lineno, line in enumerate(lines, start=1):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
                key = (obj["model_digest"], obj["device"],
                       obj["fingerprint"], obj["backend_id"])
                self._records[key] = _measurement_from_dict(obj["measurement"])
            except (json.JSONDecodeError, KeyError, TypeError, ValueError) as exc:
                if lineno == len(lines):
                    log.warning("cache '%s': skipping corrupt trailing record (%s)",
                                self.path, exc)
                    continue
                raise ValueError(
                    f"cache '{self.path}' line {lineno} is corrupt: {exc}") from exc

    def __len__(self) -> int:
        return len(self._records)

    def get(self, model_digest: str, device: str, fingerprint: str,
            backend_id: str) -> Measurement | None:
        return self._records.get((model_digest, device, fingerprint, backend_id))

    def put(self, model_digest: str, device: str, fingerprint: str,
            backend_id: str, measurement: Measurement) -> None:
        key = (model_digest, device, fingerprint, backend_id)
        if key in self._records:
            return
        self._records[key] = measurement
        record = {
            "model_digest": model_digest,
            "device": device,
            "fingerprint": fingerprint,
            "backend_id": backend_id,
            "measurement": _measurement_to_dict(measurement),
        }
        with self.path.open("a", encoding="utf-8") as fh:
            fh.write(json.dumps(record, sort_keys=True) + "\n")


class CacheLock:
    """Exclusive lock-file guard around a cache path."""

    def __init__(self, cache_path: str | Path):
        self.lock_path = Path(str(cache_path) + ".lock")
        self._fd: int | None = None

    def __enter__(self) -> "CacheLock":
        try:
            self._fd = os.open(self.lock_path, os.O_CREAT | os.O_EXCL | os.O_WRONLY)
        except FileExistsError:
            raise CacheLockedError(
                f"cache is locked by another process (remove '{self.lock_path}' "
                f"if that process is gone)") from None
        os.write(self._fd, str(os.getpid()).encode("ascii"))
        return self

    def __exit__(self, *exc_info) -> None:
        if self._fd is not None:
            os.close(self._fd)
            self._fd = None
        try:
            self.lock_path.unlink()
        except FileNotFoundError:
            pass
