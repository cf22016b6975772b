"""Road network topology: segments, boundaries, routes, and the cloverleaf.

Geometry is deliberately simple: straight segments with per-lane successor
connections. Lane 0 is the rightmost (slow) lane; higher indices are passing
lanes. A cloverleaf interchange is generated from four identical carriageways
(EB, SB, WB, NB), each a chain

    approach -> pre -> weave -> post -> exit

with a direct ("outer") ramp leaving the approach for right turns and a loop
ramp for left turns. The weave segment carries one auxiliary right lane that
begins at the loop merge and ends as the next loop's off-ramp, which is what
produces the characteristic weaving conflict; similarly the outer ramp feeds
an auxiliary lane that runs down the exit arm. Every lane therefore either
continues somewhere or ends at an exit boundary - there are no trap lanes.

Routes are ordered segment sequences. For each (route, segment, lane) the
RouteTable precomputes how far the vehicle may keep that lane before it stops
serving the route, plus the direction of the required change; the engine uses
these tables for mandatory lane changes ahead of diverges and at auxiliary
lane ends.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

# Neighbor search horizon (used by the engine's leader/follower queries).
LOOKAHEAD_M = 1000.0
MAX_HOPS = 3

MAINLINE = "mainline"
OFF_RAMP = "off-ramp"
LOOP_RAMP = "loop-ramp"


@dataclass(frozen=True)
class Connection:
    to_segment: int
    to_lane: int


@dataclass
class RoadSegment:
    id: int
    name: str
    length: float
    lane_count: int
    kind: str = MAINLINE
    # lane index -> outgoing connections (first entry = default continuation)
    connections: dict[int, tuple[Connection, ...]] = field(default_factory=dict)

    def __post_init__(self):
        if self.length <= 0.0:
            raise ValueError(f"segment {self.name!r}: length must be strictly positive")
        if self.lane_count < 1:
            raise ValueError(f"segment {self.name!r}: lane_count must be >= 1")


@dataclass(frozen=True)
class EntryBoundary:
    """Arrival point on a segment lane.

    ``share`` is this boundary's relative weight when a network-total
    inflow rate is split across entries; shares need not sum to one.
    """

    segment: int
    lane: int
    share: float = 1.0


@dataclass(frozen=True)
class ExitBoundary:
    segment: int


@dataclass(frozen=True)
class Detector:
    segment: int
    position: float
    name: str


class RoadNetwork:
    """Immutable-after-construction container with derived lookup tables."""

    def __init__(self, segments, entries, exits, detectors=(),
                 entry_movements: Optional[dict] = None):
        self.segments: list[RoadSegment] = list(segments)
        self.entries: tuple[EntryBoundary, ...] = tuple(entries)
        self.exits: tuple[ExitBoundary, ...] = tuple(exits)
        self.detectors: tuple[Detector, ...] = tuple(detectors)
        # entry segment id -> {movement name -> route (tuple of segment ids)}
        self.entry_movements: dict[int, dict[str, tuple[int, ...]]] = entry_movements or {}
        self._exit_ids = {e.segment for e in self.exits}
        self._validate()
        self.predecessors = self._build_predecessors()
        self.mainline_ids = tuple(s.id for s in self.segments if s.kind == MAINLINE)
        self.mainline_lane_m = float(sum(
            self.segments[i].length * self.segments[i].lane_count for i in self.mainline_ids))
        # density-flow measurement region: every mainline segment
        self.measured_ids = self.mainline_ids
        self.measured_lane_m = self.mainline_lane_m

    # -- queries ------------------------------------------------------------

    def segment(self, seg_id: int) -> RoadSegment:
        return self.segments[seg_id]

    def is_exit(self, seg_id: int) -> bool:
        return seg_id in self._exit_ids

    def continuation(self, seg_id: int, lane: int, next_seg: int) -> Optional[int]:
        """Lane index reached in next_seg when leaving (seg_id, lane), if any."""
        for conn in self.segments[seg_id].connections.get(lane, ()):
            if conn.to_segment == next_seg:
                return conn.to_lane
        return None

    def default_next(self, seg_id: int) -> Optional[Connection]:
        """Default continuation: first connection of the leftmost connected lane."""
        seg = self.segments[seg_id]
        for lane in range(seg.lane_count - 1, -1, -1):
            conns = seg.connections.get(lane, ())
            if conns:
                return conns[0]
        return None

    def default_path(self, seg_id: int) -> tuple[int, ...]:
        """Greedy default route from seg_id to an exit (used for route repair)."""
        path = [seg_id]
        seen = {seg_id}
        cur = seg_id
        while not self.is_exit(cur):
            conn = self.default_next(cur)
            if conn is None or conn.to_segment in seen:
                raise ValueError(f"no default path to an exit from segment {self.segments[seg_id].name!r}")
            cur = conn.to_segment
            seen.add(cur)
            path.append(cur)
        return tuple(path)

    # -- construction helpers -------------------------------------------------

    def _validate(self):
        n = len(self.segments)
        for i, seg in enumerate(self.segments):
            if seg.id != i:
                raise ValueError(f"segment ids must be dense indices; segment {seg.name!r} has id {seg.id} at position {i}")
            for lane, conns in seg.connections.items():
                if not 0 <= lane < seg.lane_count:
                    raise ValueError(f"segment {seg.name!r}: connection from nonexistent lane {lane}")
                for c in conns:
                    if not 0 <= c.to_segment < n:
                        raise ValueError(f"segment {seg.name!r}: connection to unknown segment {c.to_segment}")
                    if not 0 <= c.to_lane < self.segments[c.to_segment].lane_count:
                        raise ValueError(
                            f"segment {seg.name!r}: connection to nonexistent lane {c.to_lane} "
                            f"of segment {self.segments[c.to_segment].name!r}")
            if not self.is_exit(seg.id) and not any(seg.connections.get(l) for l in range(seg.lane_count)):
                raise ValueError(f"segment {seg.name!r} is a dead end but not an exit boundary")
        for e in self.entries:
            if not 0 <= e.segment < n or not 0 <= e.lane < self.segments[e.segment].lane_count:
                raise ValueError(f"entry boundary references nonexistent segment/lane: {e}")
            if not e.share > 0.0:
                raise ValueError(f"entry boundary share must be positive: {e}")
        for x in self.exits:
            if not 0 <= x.segment < n:
                raise ValueError(f"exit boundary references nonexistent segment: {x}")
        for d in self.detectors:
            if not 0 <= d.segment < n:
                raise ValueError(f"detector {d.name!r} references nonexistent segment {d.segment}")
            if not 0.0 <= d.position <= self.segments[d.segment].length:
                raise ValueError(f"detector {d.name!r} position outside its segment")
        if self.entries and not self.exits:
            raise ValueError("network has entries but no exit boundaries")
        for e in self.entries:
            if not self._reaches_exit(e.segment, e.lane):
                raise ValueError(
                    f"entry at segment {self.segments[e.segment].name!r} lane {e.lane} cannot reach any exit")

    def _reaches_exit(self, seg_id: int, lane: int) -> bool:
        return bool(self.reachable_exits(seg_id, lane))

    def reachable_exits(self, seg_id: int, lane: int) -> set[int]:
        """Exit segments reachable via connections plus lateral lane moves."""
        seen = set()
        stack = [(seg_id, lane)]
        exits = set()
        while stack:
            s, l = stack.pop()
            if (s, l) in seen:
                continue
            seen.add((s, l))
            if self.is_exit(s):
                exits.add(s)
            seg = self.segments[s]
            for dl in (-1, 1):
                if 0 <= l + dl < seg.lane_count:
                    stack.append((s, l + dl))
            for c in seg.connections.get(l, ()):
                stack.append((c.to_segment, c.to_lane))
        return exits

    def _build_predecessors(self) -> dict[tuple[int, int], tuple[tuple[int, int], ...]]:
        preds: dict[tuple[int, int], list[tuple[int, int]]] = {}
        for seg in self.segments:
            for lane, conns in seg.connections.items():
                for c in conns:
                    preds.setdefault((c.to_segment, c.to_lane), []).append((seg.id, lane))
        return {k: tuple(v) for k, v in preds.items()}


# ---------------------------------------------------------------------------
# Routes
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class RouteInfo:
    """Per-route lane-validity tables.

    dist_invalid[pos][lane]: distance from the start of route segment `pos`
    to the point where a vehicle keeping that lane stops serving the route
    (inf if the lane serves the route indefinitely / to the exit).
    change_dir[pos][lane]: -1/+1 direction of the required lane change, 0 when
    no change is ever required from that lane.
    """

    segments: tuple[int, ...]
    position_of: dict[int, int]
    dist_invalid: tuple[np.ndarray, ...]
    change_dir: tuple[np.ndarray, ...]

    def next_segment(self, pos: int) -> Optional[int]:
        return self.segments[pos + 1] if pos + 1 < len(self.segments) else None


class RouteTable:
    """Caches RouteInfo for every distinct path used in a simulation."""

    def __init__(self, network: RoadNetwork):
        self.network = network
        self._cache: dict[tuple[int, ...], RouteInfo] = {}

    def info(self, path: tuple[int, ...]) -> RouteInfo:
        cached = self._cache.get(path)
        if cached is None:
            cached = self._build(path)
            self._cache[path] = cached
        return cached

    def _build(self, path: tuple[int, ...]) -> RouteInfo:
        net = self.network
        if len(set(path)) != len(path):
            raise ValueError("routes must not repeat segments")
        for prev, nxt in zip(path, path[1:]):
            if not any(net.continuation(prev, lane, nxt) is not None
                       for lane in range(net.segments[prev].lane_count)):
                raise ValueError(
                    f"route hop {net.segments[prev].name!r} -> {net.segments[nxt].name!r} "
                    "has no lane-level connection")
        n = len(path)
        dist = [np.full(net.segments[s].lane_count, np.inf) for s in path]
        dirs = [np.zeros(net.segments[s].lane_count, dtype=np.int8) for s in path]
        for pos in range(n - 1, -1, -1):
            seg = net.segments[path[pos]]
            nxt = path[pos + 1] if pos + 1 < n else None
            if nxt is None:
                continue  # terminal segment: every lane may run to the boundary
            valid_lanes = [l for l in range(seg.lane_count)
                           if net.continuation(path[pos], l, nxt) is not None]
            inherited = np.zeros(seg.lane_count, dtype=np.int8)
            for lane in range(seg.lane_count):
                nxt_lane = net.continuation(path[pos], lane, nxt)
                if nxt_lane is None:
                    dist[pos][lane] = seg.length
                    nearest = min(valid_lanes, key=lambda v: (abs(v - lane), v))
                    dirs[pos][lane] = 1 if nearest > lane else -1
                else:
                    downstream = dist[pos + 1][nxt_lane]
                    dist[pos][lane] = seg.length + downstream
                    inherited[lane] = dirs[pos + 1][nxt_lane]
            # a requirement that only binds beyond the next hop is kept
            # solely where acting on it now is possible and not harmful:
            # the adjacent lane must reach the same next segment and stay
            # valid at least as far.  Otherwise the flag re-materialises
            # once the vehicle arrives at the segment where it can act.
            for lane in range(seg.lane_count):
                d0 = int(inherited[lane])
                if d0 == 0:
                    continue
                nb = lane + d0
                if (0 <= nb < seg.lane_count
                        and net.continuation(path[pos], nb, nxt) is not None
                        and dist[pos][nb] >= dist[pos][lane]):
                    dirs[pos][lane] = d0
        return RouteInfo(segments=tuple(path),
                         position_of={s: i for i, s in enumerate(path)},
                         dist_invalid=tuple(dist), change_dir=tuple(dirs))


# ---------------------------------------------------------------------------
# Cloverleaf generator
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class CloverleafGeometry:
    """Parametric cloverleaf: two crossing dual carriageways, 8 ramps."""

    arm_length_m: float = 2000.0
    lanes_per_direction: int = 2
    ramp_length_m: float = 250.0       # direct (outer) right-turn ramps
    loop_length_m: float = 280.0       # loop left-turn ramps
    weave_length_m: float = 200.0      # auxiliary-lane section between loop ramps
    separation_length_m: float = 150.0  # approach-diverge to weave / weave to exit merge

    def __post_init__(self):
        for name in ("arm_length_m", "ramp_length_m", "loop_length_m",
                     "weave_length_m", "separation_length_m"):
            if getattr(self, name) <= 0.0:
                raise ValueError(f"cloverleaf geometry: {name} must be strictly positive")
        if self.lanes_per_direction < 1:
            raise ValueError("cloverleaf geometry: lanes_per_direction must be >= 1")


CARRIAGEWAYS = ("EB", "SB", "WB", "NB")
# heading after a right turn (via the direct outer ramp)
RIGHT_TURN = {"EB": "SB", "SB": "WB", "WB": "NB", "NB": "EB"}
# heading after a left turn (via the loop ramp)
LEFT_TURN = {"EB": "NB", "NB": "WB", "WB": "SB", "SB": "EB"}

MOVEMENTS = ("straight", "right", "left")


def build_cloverleaf(geometry: CloverleafGeometry = CloverleafGeometry()) -> RoadNetwork:
    """Generate the interchange network with entries, exits, routes, detectors."""
    g = geometry
    L = g.lanes_per_direction
    segments: list[RoadSegment] = []
    ids: dict[str, int] = {}

    def add(name, length, lane_count, kind=MAINLINE) -> int:
        seg = RoadSegment(id=len(segments), name=name, length=length,
                          lane_count=lane_count, kind=kind)
        segments.append(seg)
        ids[name] = seg.id
        return seg.id

    for d in CARRIAGEWAYS:
        add(f"{d}.approach", g.arm_length_m, L)
        add(f"{d}.pre", g.separation_length_m, L)
        add(f"{d}.weave", g.weave_length_m, L + 1)
        add(f"{d}.post", g.separation_length_m, L)
        add(f"{d}.exit", g.arm_length_m, L + 1)
        add(f"{d}.outer", g.ramp_length_m, 1, kind=OFF_RAMP)
        add(f"{d}.loop", g.loop_length_m, 1, kind=LOOP_RAMP)

    def connect(name, lane, to_name, to_lane):
        seg = segments[ids[name]]
        conns = seg.connections.get(lane, ())
        seg.connections[lane] = conns + (Connection(ids[to_name], to_lane),)

    for d in CARRIAGEWAYS:
        for i in range(L):
            connect(f"{d}.approach", i, f"{d}.pre", i)
        connect(f"{d}.approach", 0, f"{d}.outer", 0)      # right-turn diverge
        for i in range(L):
            connect(f"{d}.pre", i, f"{d}.weave", i + 1)
        connect(f"{d}.weave", 0, f"{d}.loop", 0)          # aux lane ends in the loop
        for i in range(1, L + 1):
            connect(f"{d}.weave", i, f"{d}.post", i - 1)
        for i in range(L):
            connect(f"{d}.post", i, f"{d}.exit", i + 1)
        connect(f"{d}.outer", 0, f"{RIGHT_TURN[d]}.exit", 0)   # merge lane runs to the exit arm
        connect(f"{d}.loop", 0, f"{LEFT_TURN[d]}.weave", 0)    # loop lands on the aux weave lane

    entries = tuple(EntryBoundary(ids[f"{d}.approach"], lane)
                    for d in CARRIAGEWAYS for lane in range(L))
    exits = tuple(ExitBoundary(ids[f"{d}.exit"]) for d in CARRIAGEWAYS)
    # stations on the interchange core, where merging and weaving interact;
    # these segments also define the density-flow measurement region
    detectors = tuple(
        Detector(ids[f"{d}.{part}"], length / 2.0, f"{d}.{part}.det")
        for d in CARRIAGEWAYS
        for part, length in (("pre", g.separation_length_m),
                             ("weave", g.weave_length_m),
                             ("post", g.separation_length_m)))

    entry_movements: dict[int, dict[str, tuple[int, ...]]] = {}
    for d in CARRIAGEWAYS:
        r = RIGHT_TURN[d]
        lt = LEFT_TURN[d]
        entry_movements[ids[f"{d}.approach"]] = {
            "straight": (ids[f"{d}.approach"], ids[f"{d}.pre"], ids[f"{d}.weave"],
                         ids[f"{d}.post"], ids[f"{d}.exit"]),
            "right": (ids[f"{d}.approach"], ids[f"{d}.outer"], ids[f"{r}.exit"]),
            "left": (ids[f"{d}.approach"], ids[f"{d}.pre"], ids[f"{d}.weave"],
                     ids[f"{d}.loop"], ids[f"{lt}.weave"], ids[f"{lt}.post"],
                     ids[f"{lt}.exit"]),
        }

    net = RoadNetwork(segments, entries, exits, detectors, entry_movements)

    # interchange guarantee: every entry reaches every exit
    exit_ids = {x.segment for x in net.exits}
    for e in net.entries:
        reached = net.reachable_exits(e.segment, e.lane)
        if reached != exit_ids:
            missing = ", ".join(segments[s].name for s in sorted(exit_ids - reached))
            raise ValueError(f"cloverleaf generator bug: entry {segments[e.segment].name!r} "
                             f"lane {e.lane} cannot reach exits: {missing}")
    return net
