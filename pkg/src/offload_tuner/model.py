"""Application and machine models consumed by the search layers.

The searchable application is a declarative loop-nest forest with profiled
per-loop quantities and per-variable access traces; the machine profile
describes the host CPU plus the offload destinations available in the
verification environment. Both are loaded from strict JSON documents
(unknown keys rejected) so that a malformed input fails loudly before any
search starts.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

OFFLOAD_DEVICES = ("manycore_cpu", "gpu", "fpga")
DEVICES = ("cpu",) + OFFLOAD_DEVICES

ACCESS_KINDS = ("read", "write")


class ModelError(ValueError):
    """Base class for model-file problems."""


class ParseError(ModelError):
    """The document is not syntactically or structurally well formed."""


class ValidationError(ModelError):
    """The document parsed but violates a model invariant."""


@dataclass(frozen=True)
class LoopStatement:
    """One loop statement with its profiled attributes.

    `parent` is None for forest roots. `fpga_resource_estimate` is the
    fraction of device logic (flip-flop / lookup-table budget) the loop
    would occupy if synthesized alone. `cpu_time_sec`, when given,
    overrides the baseline-partition estimate of the loop's CPU share.
    """

    id: str
    parent: str | None = None
    parallelizable: bool = False
    iteration_count: int = 0
    per_iteration_ops: float = 0.0
    bytes_accessed: float = 0.0
    fpga_resource_estimate: float = 0.0
    cpu_time_sec: float | None = None


@dataclass(frozen=True)
class Variable:
    """A named array with its program-order use sites.

    `accesses` is an ordered tuple of (loop id, "read"|"write") pairs; the
    order is the textual program order of the use sites.
    """

    name: str
    size_bytes: int
    accesses: tuple[tuple[str, str], ...] = ()


@dataclass(frozen=True)
class DeviceProfile:
    """Power and transfer characteristics of one execution device."""

    idle_watts: float
    active_watts: float
    default_speedup: float = 1.0
    loop_speedups: dict[str, float] = field(default_factory=dict)
    transfer_bandwidth_bytes_per_sec: float = 1e9
    transfer_latency_sec: float = 0.0
    measurement_overhead_sec: float = 0.0

    def speedup_for(self, loop_id: str) -> float:
        return self.loop_speedups.get(loop_id, self.default_speedup)


@dataclass(frozen=True)
class MachineProfile:
    """Per-device entries plus the FPGA resource-capacity threshold."""

    devices: dict[str, DeviceProfile]
    fpga_resource_capacity_fraction: float = 0.8

    def device(self, name: str) -> DeviceProfile:
        try:
            return self.devices[name]
        except KeyError:
            raise ValidationError(f"device '{name}' missing from machine profile") from None

    def offload_devices(self) -> list[str]:
        return [d for d in OFFLOAD_DEVICES if d in self.devices]


@dataclass(frozen=True)
class ProgramModel:
    """The searchable application: loop forest, variables, CPU baseline."""

    loops: tuple[LoopStatement, ...]
    variables: tuple[Variable, ...]
    baseline_cpu_time_sec: float

    def loop(self, loop_id: str) -> LoopStatement:
        return self._by_id[loop_id]

    def variable(self, name: str) -> Variable:
        return self._var_by_name[name]

    @property
    def _by_id(self) -> dict[str, LoopStatement]:
        return {l.id: l for l in self.loops}

    @property
    def _var_by_name(self) -> dict[str, Variable]:
        return {v.name: v for v in self.variables}

    def ancestors(self, loop_id: str) -> list[str]:
        """Chain [loop_id, parent, ..., root] following parent links."""
        by_id = self._by_id
        chain = [loop_id]
        cur = by_id[loop_id].parent
        while cur is not None:
            chain.append(cur)
            cur = by_id[cur].parent
        return chain

    def subtree_ids(self, loop_id: str) -> set[str]:
        """All loop ids whose ancestor chain contains loop_id (incl. itself)."""
        return {l.id for l in self.loops if loop_id in self.ancestors(l.id)}


def parallelizable_loops(model: ProgramModel) -> list[str]:
    """Ids of offload-eligible loops in document order (gene positions)."""
    return [l.id for l in model.loops if l.parallelizable]


# ---------------------------------------------------------------------------
# Loading / saving
# ---------------------------------------------------------------------------

_LOOP_KEYS = {
    "id", "parent", "parallelizable", "iteration_count",
    "per_iteration_ops", "bytes_accessed", "fpga_resource_estimate",
    "cpu_time_sec",
}
_VARIABLE_KEYS = {"name", "size_bytes", "accesses"}
_MODEL_KEYS = {"loops", "variables", "baseline_cpu_time_sec"}
_DEVICE_KEYS = {
    "idle_watts", "active_watts", "default_speedup", "loop_speedups",
    "transfer_bandwidth_bytes_per_sec", "transfer_latency_sec",
    "measurement_overhead_sec",
}
_PROFILE_KEYS = set(DEVICES) | {"fpga_resource_capacity_fraction"}


def _reject_unknown(obj: dict, allowed: set[str], where: str) -> None:
    unknown = sorted(set(obj) - allowed)
    if unknown:
        raise ParseError(f"{where}: unknown key(s) {unknown}")


def _require(obj: dict, key: str, where: str) -> Any:
    if key not in obj:
        raise ParseError(f"{where}: missing required key '{key}'")
    return obj[key]


def _load_json(path: str | Path, what: str) -> dict:
    p = Path(path)
    try:
        raw = p.read_text(encoding="utf-8")
    except OSError as exc:
        raise ParseError(f"cannot read {what} '{p}': {exc}") from exc
    try:
        doc = json.loads(raw)
    except json.JSONDecodeError as exc:
        raise ParseError(f"{what} '{p}' is not valid JSON: {exc}") from exc
    if not isinstance(doc, dict):
        raise ParseError(f"{what} '{p}': top level must be an object")
    return doc


def _loop_from_obj(obj: Any, index: int) -> LoopStatement:
    where = f"loops[{index}]"
    if not isinstance(obj, dict):
        raise ParseError(f"{where}: must be an object")
    _reject_unknown(obj, _LOOP_KEYS, where)
    loop_id = _require(obj, "id", where)
    if not isinstance(loop_id, str) or not loop_id:
        raise ValidationError(f"{where}: field 'id' must be a non-empty string")
    parallelizable = _require(obj, "parallelizable", where)
    if not isinstance(parallelizable, bool):
        raise ValidationError(f"loop '{loop_id}': field 'parallelizable' must be a boolean")
    parent = obj.get("parent")
    if parent is not None and not isinstance(parent, str):
        raise ValidationError(f"loop '{loop_id}': field 'parent' must be a string or null")
    iteration_count = obj.get("iteration_count", 0)
    if not isinstance(iteration_count, int) or isinstance(iteration_count, bool) or iteration_count < 0:
        raise ValidationError(f"loop '{loop_id}': field 'iteration_count' must be a nonnegative integer")
    per_iteration_ops = _nonneg_number(obj.get("per_iteration_ops", 0.0), f"loop '{loop_id}'", "per_iteration_ops")
    bytes_accessed = _nonneg_number(obj.get("bytes_accessed", 0.0), f"loop '{loop_id}'", "bytes_accessed")
    resource = _nonneg_number(obj.get("fpga_resource_estimate", 0.0), f"loop '{loop_id}'", "fpga_resource_estimate")
    if resource > 1.0:
        raise ValidationError(f"loop '{loop_id}': field 'fpga_resource_estimate' must be in [0, 1]")
    cpu_time = obj.get("cpu_time_sec")
    if cpu_time is not None:
        cpu_time = _nonneg_number(cpu_time, f"loop '{loop_id}'", "cpu_time_sec")
    return LoopStatement(
        id=loop_id,
        parent=parent,
        parallelizable=parallelizable,
        iteration_count=iteration_count,
        per_iteration_ops=per_iteration_ops,
        bytes_accessed=bytes_accessed,
        fpga_resource_estimate=resource,
        cpu_time_sec=cpu_time,
    )


def _nonneg_number(value: Any, where: str, name: str) -> float:
    if not isinstance(value, (int, float)) or isinstance(value, bool) or value < 0:
        raise ValidationError(f"{where}: field '{name}' must be a nonnegative number")
    return float(value)


def _variable_from_obj(obj: Any, index: int, loop_ids: set[str]) -> Variable:
    where = f"variables[{index}]"
    if not isinstance(obj, dict):
        raise ParseError(f"{where}: must be an object")
    _reject_unknown(obj, _VARIABLE_KEYS, where)
    name = _require(obj, "name", where)
    if not isinstance(name, str) or not name:
        raise ValidationError(f"{where}: field 'name' must be a non-empty string")
    size = _require(obj, "size_bytes", where)
    if not isinstance(size, int) or isinstance(size, bool) or size <= 0:
        raise ValidationError(f"variable '{name}': field 'size_bytes' must be a positive integer")
    raw_accesses = _require(obj, "accesses", where)
    if not isinstance(raw_accesses, list):
        raise ValidationError(f"variable '{name}': field 'accesses' must be an array")
    accesses = []
    for j, pair in enumerate(raw_accesses):
        if (not isinstance(pair, list)) or len(pair) != 2:
            raise ValidationError(f"variable '{name}': accesses[{j}] must be a [loop_id, kind] pair")
        loop_id, kind = pair
        if loop_id not in loop_ids:
            raise ValidationError(f"variable '{name}': accesses[{j}] references unknown loop '{loop_id}'")
        if kind not in ACCESS_KINDS:
            raise ValidationError(f"variable '{name}': accesses[{j}] kind must be 'read' or 'write'")
        accesses.append((loop_id, kind))
    return Variable(name=name, size_bytes=size, accesses=tuple(accesses))


def validate_model(model: ProgramModel) -> None:
    """Check every ProgramModel invariant, naming the offending field."""
    if not model.loops:
        raise ValidationError("model must contain at least one loop")
    if not (isinstance(model.baseline_cpu_time_sec, (int, float))
            and model.baseline_cpu_time_sec > 0):
        raise ValidationError("field 'baseline_cpu_time_sec' must be a positive number")
    seen: set[str] = set()
    for loop in model.loops:
        if loop.id in seen:
            raise ValidationError(f"loop id '{loop.id}' is not unique")
        seen.add(loop.id)
    for loop in model.loops:
        if loop.parent is not None and loop.parent not in seen:
            raise ValidationError(f"loop '{loop.id}': parent '{loop.parent}' is not a known loop id")
    # parent chains must terminate (acyclic)
    for loop in model.loops:
        visited = set()
        cur: str | None = loop.id
        by_id = {l.id: l for l in model.loops}
        while cur is not None:
            if cur in visited:
                raise ValidationError(f"loop '{loop.id}': parent chain contains a cycle via '{cur}'")
            visited.add(cur)
            cur = by_id[cur].parent
    names: set[str] = set()
    for var in model.variables:
        if var.name in names:
            raise ValidationError(f"variable name '{var.name}' is not unique")
        names.add(var.name)
        for loop_id, _kind in var.accesses:
            if loop_id not in seen:
                raise ValidationError(f"variable '{var.name}': access references unknown loop '{loop_id}'")


def load_model(path: str | Path) -> ProgramModel:
    """Load and validate a program-model document."""
    doc = _load_json(path, "model file")
    _reject_unknown(doc, _MODEL_KEYS, "model")
    raw_loops = _require(doc, "loops", "model")
    raw_vars = _require(doc, "variables", "model")
    baseline = _require(doc, "baseline_cpu_time_sec", "model")
    if not isinstance(raw_loops, list):
        raise ParseError("model: 'loops' must be an array")
    if not isinstance(raw_vars, list):
        raise ParseError("model: 'variables' must be an array")
    loops = tuple(_loop_from_obj(o, i) for i, o in enumerate(raw_loops))
    loop_ids = {l.id for l in loops}
    variables = tuple(_variable_from_obj(o, i, loop_ids) for i, o in enumerate(raw_vars))
    if not isinstance(baseline, (int, float)) or isinstance(baseline, bool) or baseline <= 0:
        raise ValidationError("field 'baseline_cpu_time_sec' must be a positive number")
    model = ProgramModel(loops=loops, variables=variables, baseline_cpu_time_sec=float(baseline))
    validate_model(model)
    return model


def model_to_dict(model: ProgramModel) -> dict:
    loops = []
    for l in model.loops:
        obj: dict[str, Any] = {
            "id": l.id,
            "parent": l.parent,
            "parallelizable": l.parallelizable,
            "iteration_count": l.iteration_count,
            "per_iteration_ops": l.per_iteration_ops,
            "bytes_accessed": l.bytes_accessed,
            "fpga_resource_estimate": l.fpga_resource_estimate,
        }
        if l.cpu_time_sec is not None:
            obj["cpu_time_sec"] = l.cpu_time_sec
        loops.append(obj)
    return {
        "loops": loops,
        "variables": [
            {"name": v.name, "size_bytes": v.size_bytes,
             "accesses": [[lid, kind] for lid, kind in v.accesses]}
            for v in model.variables
        ],
        "baseline_cpu_time_sec": model.baseline_cpu_time_sec,
    }


def save_model(model: ProgramModel, path: str | Path) -> None:
    """Write a model document that load_model reads back identically."""
    Path(path).write_text(
        json.dumps(model_to_dict(model), indent=2, sort_keys=True) + "\n",
        encoding="utf-8",
    )


def model_digest(model: ProgramModel) -> str:
    """Stable content hash of the validated field set (cache key part)."""
    canonical = json.dumps(model_to_dict(model), sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(canonical.encode("utf-8")).hexdigest()


def _device_from_obj(obj: Any, name: str) -> DeviceProfile:
    where = f"profile device '{name}'"
    if not isinstance(obj, dict):
        raise ParseError(f"{where}: must be an object")
    _reject_unknown(obj, _DEVICE_KEYS, where)
    idle = _nonneg_number(_require(obj, "idle_watts", where), where, "idle_watts")
    active = _nonneg_number(_require(obj, "active_watts", where), where, "active_watts")
    if active < idle:
        raise ValidationError(f"{where}: active_watts must be >= idle_watts")
    speedup = obj.get("default_speedup", 1.0)
    if not isinstance(speedup, (int, float)) or isinstance(speedup, bool) or speedup <= 0:
        raise ValidationError(f"{where}: field 'default_speedup' must be a positive number")
    raw_ls = obj.get("loop_speedups", {})
    if not isinstance(raw_ls, dict):
        raise ValidationError(f"{where}: field 'loop_speedups' must be an object")
    loop_speedups = {}
    for lid, s in raw_ls.items():
        if not isinstance(s, (int, float)) or isinstance(s, bool) or s <= 0:
            raise ValidationError(f"{where}: loop_speedups['{lid}'] must be a positive number")
        loop_speedups[str(lid)] = float(s)
    bandwidth = obj.get("transfer_bandwidth_bytes_per_sec", 1e9)
    if not isinstance(bandwidth, (int, float)) or isinstance(bandwidth, bool) or bandwidth <= 0:
        raise ValidationError(f"{where}: field 'transfer_bandwidth_bytes_per_sec' must be positive")
    latency = _nonneg_number(obj.get("transfer_latency_sec", 0.0), where, "transfer_latency_sec")
    overhead = _nonneg_number(obj.get("measurement_overhead_sec", 0.0), where, "measurement_overhead_sec")
    return DeviceProfile(
        idle_watts=idle,
        active_watts=active,
        default_speedup=float(speedup),
        loop_speedups=loop_speedups,
        transfer_bandwidth_bytes_per_sec=float(bandwidth),
        transfer_latency_sec=latency,
        measurement_overhead_sec=overhead,
    )


def profile_from_dict(doc: dict) -> MachineProfile:
    """Build and validate a MachineProfile from an in-memory document."""
    _reject_unknown(doc, _PROFILE_KEYS, "profile")
    devices = {name: _device_from_obj(doc[name], name) for name in DEVICES if name in doc}
    if "cpu" not in devices:
        raise ValidationError("profile: device 'cpu' is required")
    capacity = doc.get("fpga_resource_capacity_fraction", 0.8)
    if not isinstance(capacity, (int, float)) or isinstance(capacity, bool) or not (0 < capacity <= 1):
        raise ValidationError("profile: field 'fpga_resource_capacity_fraction' must be in (0, 1]")
    return MachineProfile(devices=devices, fpga_resource_capacity_fraction=float(capacity))


def load_profile(path: str | Path) -> MachineProfile:
    """Load and validate a machine-profile document."""
    return profile_from_dict(_load_json(path, "profile file"))
