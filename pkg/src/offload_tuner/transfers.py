"""Hoisted, batched host<->device variable transfers for an offload pattern.

A contiguous offloaded loop nest (a "region") runs entirely on the device,
so copies can only be placed around loops outside it. Each needed copy is
hoisted to the highest enclosing loop whose subtree cannot invalidate it:
a host-to-device copy must not skip over CPU writes to the variable, a
device-to-host copy must not defer past CPU uses, and neither may clobber
fresher data produced by a different offloaded region. Entries sharing an
anchor and position form one batch.
"""

from __future__ import annotations

from dataclasses import dataclass

from .model import ProgramModel, parallelizable_loops
from .pattern import OffloadPattern

HOST_TO_DEVICE = "host_to_device"
DEVICE_TO_HOST = "device_to_host"
BEFORE = "before"
AFTER = "after"

@dataclass(frozen=True)
class TransferEntry:
    """One batched copy; anchor None means program top."""
    variable: str
    direction: str
    anchor: str | None
    position: str

    def to_dict(self) -> dict:
        return {
            "variable": self.variable,
            "direction": self.direction,
            "anchor": self.anchor,
            "position": self.position,
        }


@dataclass(frozen=True)
class TransferPlan:
    entries: tuple[TransferEntry, ...] = ()

    def __len__(self) -> int:
        return len(self.entries)

    def at(self, anchor: str | None, position: str) -> list[TransferEntry]:
        return [e for e in self.entries if e.anchor == anchor and e.position == position]

    def to_dicts(self) -> list[dict]:
        return [e.to_dict() for e in self.entries]


@dataclass(frozen=True)
class _Site:
    pos: int
    loop: str
    kind: str
    region: str | None  # offloaded region root, None = runs on CPU


def _lowest_common_loop(chain_a: list[str], chain_b: list[str]) -> str | None:
    """Lowest shared ancestor loop of two chains, or None."""
    in_b = set(chain_b)
    for node in chain_a:  # chains run leaf -> root, so first hit is lowest
        if node in in_b:
            return node
    return None


def plan_transfers(model: ProgramModel, pattern: OffloadPattern) -> TransferPlan:
    """Compute the batched transfer schedule for one placement vector."""
    eligible = parallelizable_loops(model)
    if len(pattern.genes) != len(eligible):
        raise ValueError(
            f"pattern has {len(pattern.genes)} genes but model has "
            f"{len(eligible)} offload-eligible loops")
    offloaded = {lid for lid, g in zip(eligible, pattern.genes) if g}
    if not offloaded:
        return TransferPlan(())

    parent = {l.id: l.parent for l in model.loops}
    chains: dict[str, list[str]] = {}
    for l in model.loops:
        chain = [l.id]
        while parent[chain[-1]] is not None:
            chain.append(parent[chain[-1]])
        chains[l.id] = chain
    chain_sets = {lid: set(c) for lid, c in chains.items()}

    # A loop nested under an offloaded ancestor runs on the device with it;
    # its region root is the topmost offloaded loop on its chain.
    region_of: dict[str, str | None] = {}
    for lid, chain in chains.items():
        top = None
        for node in chain:
            if node in offloaded:
                top = node
        region_of[lid] = top

    entries: list[TransferEntry] = []
    seen: set[tuple] = set()

    def emit(variable: str, direction: str, anchor: str | None, position: str) -> None:
        key = (variable, direction, anchor, position)
        if key not in seen:
            seen.add(key)
            entries.append(TransferEntry(variable, direction, anchor, position))

    for var in model.variables:
        sites = [_Site(i, lid, kind, region_of[lid])
                 for i, (lid, kind) in enumerate(var.accesses)]
        if not sites:
            continue
        regions: dict[str, list[_Site]] = {}
        for s in sites:
            if s.region is not None:
                regions.setdefault(s.region, []).append(s)

        for region, rsites in regions.items():
            first = rsites[0]
            if first.kind == "read" and _host_data_reaches(sites, region, first.pos,
                                                           chains, chain_sets):
                anchor = _hoist(sites, region, chains[region], chain_sets,
                                direction=HOST_TO_DEVICE)
                emit(var.name, HOST_TO_DEVICE, anchor, BEFORE)
            writes = [s for s in rsites if s.kind == "write"]
            if writes and _cpu_consumer_reaches(sites, region, writes,
                                                chains, chain_sets):
                anchor = _hoist(sites, region, chains[region], chain_sets,
                                direction=DEVICE_TO_HOST)
                emit(var.name, DEVICE_TO_HOST, anchor, AFTER)

    return TransferPlan(tuple(entries))


def _host_data_reaches(sites: list[_Site], region: str, entry_pos: int,
                       chains: dict[str, list[str]],
                       chain_sets: dict[str, set[str]]) -> bool:
    """Can the host copy be the freshest version at some entry to `region`?

    True when the last write on the straight path to the first entry is a
    CPU write (or there is none, i.e. the initial host value), or when a
    CPU write cycles back to a re-entry with no device write in between.
    Otherwise the device already holds fresher data and a copy-in would
    clobber it.
    """
    writes_before = [s for s in sites if s.kind == "write" and s.pos < entry_pos]
    if not writes_before or writes_before[-1].region is None:
        return True
    for w in (s for s in sites if s.kind == "write" and s.region is None):
        cycle = _lowest_common_loop(chains[w.loop], chains[region])
        if cycle is None:
            continue
        segment = [s for s in sites
                   if cycle in chain_sets[s.loop]
                   and (s.pos > w.pos or s.pos < entry_pos)]
        if not any(s.kind == "write" and s.region is not None for s in segment):
            return True
    return False


def _cpu_consumer_reaches(sites: list[_Site], region: str, writes: list[_Site],
                          chains: dict[str, list[str]],
                          chain_sets: dict[str, set[str]]) -> bool:
    """Does any CPU read observe data written on the device in `region`?

    A write from another region or a CPU write in between supersedes the
    value, killing the flow; later writes from the same region do not
    (they are the same staged result).
    """
    cpu_reads = [s for s in sites if s.kind == "read" and s.region is None]
    for w in writes:
        for r in cpu_reads:
            if r.pos > w.pos:
                between = [s for s in sites if w.pos < s.pos < r.pos]
                if not any(s.kind == "write" and s.region != region for s in between):
                    return True
            cycle = _lowest_common_loop(chains[r.loop], chains[region])
            if cycle is None:
                continue
            segment = [s for s in sites
                       if cycle in chain_sets[s.loop]
                       and (s.pos > w.pos or s.pos < r.pos)]
            if not any(s.kind == "write" and s.region != region for s in segment):
                return True
    return False


def _hoist(sites: list[_Site], region: str, region_chain: list[str],
           chain_sets: dict[str, set[str]], direction: str) -> str | None:
    """Highest safe anchor for a transfer serving `region`.

    Walk from the region root toward program top; stop before the first
    level whose subtree contains an access that would invalidate the
    hoisted copy. Returns None for program top.
    """
    anchor: str | None = region  # region root is always a safe anchor
    for candidate in region_chain[1:] + [None]:
        if candidate is None:
            scope = sites
        else:
            scope = [s for s in sites if candidate in chain_sets[s.loop]]
        if direction == HOST_TO_DEVICE:
            blocked = any(s.kind == "write" and s.region != region for s in scope)
        else:
            blocked = any(s.region != region for s in scope)
        if blocked:
            break
        anchor = candidate
    return anchor
