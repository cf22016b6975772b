"""Time-stepped multi-lane simulation engine.

State is kept in flat numpy arrays indexed by vehicle slot (grow-only; freed
slots stay dead), plus per-(segment, lane) queues of slots sorted by position.
Each step:

  1. neighbor pass   - in-lane leaders vectorized per queue, queue heads walk
                       across segment boundaries along their route
  2. crash check     - non-positive front gap aborts the run
  3. lane changes    - MOBIL, evaluated in one batched controller call;
                       mandatory changes (route-driven) every step, the
                       discretionary scan staggered over a period
  4. longitudinal    - one batched controller evaluation, ballistic update
  5. transitions     - boundary crossings, route repair, exits, detectors
  6. insertion       - Poisson arrivals per entry lane, gap-gated

Accelerations stored per vehicle are realized (v' - v)/dt values from the last
update; they feed the constant-acceleration heuristic and the MOBIL baselines
of the following step.
"""

from __future__ import annotations

import bisect
import math
from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np

from . import model
from .model import LaneChangeContext, LaneChangeDirection
from .network import LOOKAHEAD_M, MAX_HOPS, RoadNetwork, RouteTable
from .params import ControllerParams, FleetSpec, THETA_NAMES
from .sampling import arrival_stream, sample_theta, vehicle_stream

MOVEMENT_NAMES = ("straight", "right", "left")

_PARAM_FIELDS = THETA_NAMES + ("b_safe",)

# a vehicle counts as pinned at its merge deadline when it is at standstill
# this close to the point where its lane stops serving the route
GIVE_UP_RANGE_M = 60.0
_STANDSTILL_V = 0.5


class CrashError(RuntimeError):
    """Raised when a front gap becomes non-positive (vehicles overlap)."""

    def __init__(self, time: float, slots):
        self.time = float(time)
        self.slots = tuple(int(s) for s in slots)
        super().__init__(f"collision at t={time:.3f}s involving slots {self.slots}")


@dataclass
class SimulationConfig:
    """Run-level knobs; the fleet distribution comes in via FleetSpec.

    Inflow rates are network totals, split across the entry boundaries in
    proportion to their shares (equal by default).
    """

    fleet: FleetSpec
    seed: int = 0
    dt: float = 0.05
    duration_s: float = 120.0
    demand_profile: str = "constant"        # "constant" | "ramp"
    inflow_vph: float = 4400.0              # network total (constant profile)
    ramp_from_vph: float = 2000.0           # network totals (ramp profile)
    ramp_to_vph: float = 12000.0
    turn_fractions: tuple = (0.5, 0.25, 0.25)   # straight, right, left
    mandatory_zone_m: float = 500.0
    lane_change_period_s: float = 1.0
    lane_change_cooldown_s: float = 2.0
    flow_window_s: float = 10.0
    entry_gap_factor: float = 1.0
    merge_give_up_s: float = 45.0
    lcps_per_vehicle: bool = False
    record_events: bool = False

    def __post_init__(self):
        if self.dt <= 0.0:
            raise ValueError(f"dt must be strictly positive, got {self.dt}")
        if self.duration_s <= 0.0:
            raise ValueError(f"duration_s must be strictly positive, got {self.duration_s}")
        if self.demand_profile not in ("constant", "ramp"):
            raise ValueError(f"unknown demand_profile {self.demand_profile!r}")
        if self.inflow_vph < 0.0 or self.ramp_from_vph < 0.0 or self.ramp_to_vph < 0.0:
            raise ValueError("inflow rates must be non-negative")
        f = tuple(float(v) for v in self.turn_fractions)
        if len(f) != 3 or any(v < 0.0 for v in f) or abs(sum(f) - 1.0) > 1e-9:
            raise ValueError(f"turn_fractions must be 3 non-negative values summing to 1, got {self.turn_fractions}")
        self.turn_fractions = f
        if self.mandatory_zone_m <= 0.0:
            raise ValueError("mandatory_zone_m must be strictly positive")
        if self.lane_change_period_s < self.dt:
            raise ValueError("lane_change_period_s must be at least dt")
        if self.lane_change_cooldown_s < 0.0:
            raise ValueError("lane_change_cooldown_s must be non-negative")
        if self.flow_window_s <= 0.0:
            raise ValueError("flow_window_s must be strictly positive")
        if self.entry_gap_factor <= 0.0:
            raise ValueError("entry_gap_factor must be strictly positive")
        if self.merge_give_up_s <= 0.0:
            raise ValueError("merge_give_up_s must be strictly positive")


@dataclass
class MetricsRecord:
    """Aggregate outputs of one run.

    The scalar fields are flat and CSV-friendly (to_dict); the per-window
    density-flow samples back the fundamental-diagram view and satisfy
    max_throughput_vph == max(window_flows_vph) whenever any window completed.
    Density is instantaneous vehicles per km per lane over the measured
    region, sampled at the window midpoint; the paired flow is the window's
    generalized (Edie) flow -- total distance traveled per lane-km per hour,
    i.e. the window average of density * mean speed -- in vehicles per hour
    per lane.
    """

    duration_s: float
    n_inserted: int
    n_exited: int
    n_active_end: int
    n_pending_end: int
    vehicle_seconds: float
    lane_changes: int
    mandatory_lane_changes: int
    lcps: float
    mean_abs_acc: float
    max_throughput_vph: float
    throughput_time_s: float
    density_at_peak: float
    mean_density: float
    route_repairs: int
    crashed: bool = False
    crash_time: float = math.nan
    window_flows_vph: tuple = ()
    window_densities: tuple = ()

    def to_dict(self) -> dict:
        return {
            "duration_s": self.duration_s,
            "n_inserted": self.n_inserted,
            "n_exited": self.n_exited,
            "n_active_end": self.n_active_end,
            "n_pending_end": self.n_pending_end,
            "vehicle_seconds": self.vehicle_seconds,
            "lane_changes": self.lane_changes,
            "mandatory_lane_changes": self.mandatory_lane_changes,
            "lcps": self.lcps,
            "mean_abs_acc": self.mean_abs_acc,
            "max_throughput_vph": self.max_throughput_vph,
            "throughput_time_s": self.throughput_time_s,
            "density_at_peak": self.density_at_peak,
            "mean_density": self.mean_density,
            "route_repairs": self.route_repairs,
            "crashed": int(self.crashed),
            "crash_time": self.crash_time,
        }


@dataclass
class _Pending:
    params: ControllerParams
    movement: str
    arrival_index: int


@dataclass
class _Candidate:
    slot: int
    direction: int              # -1 toward slower, +1 toward faster
    mandatory: bool
    new_leader: int             # slot or -1
    new_leader_gap: float
    new_follower: int           # slot or -1
    new_follower_backdist: float  # gap_f = backdist + x_ego - len_ego
    old_follower: int           # slot or -1


class Simulation:
    def __init__(self, network: RoadNetwork, config: SimulationConfig,
                 audit_hook: Optional[Callable[["Simulation"], None]] = None):
        self.network = network
        self.config = config
        self.audit_hook = audit_hook
        self.route_table = RouteTable(network)
        self.t = 0.0
        self.step_index = 0

        self._seg_len = np.array([s.length for s in network.segments])
        self._lane_count = np.array([s.lane_count for s in network.segments])
        self._is_mainline = np.zeros(len(network.segments), dtype=bool)
        self._is_mainline[list(network.mainline_ids)] = True
        self._is_measured = np.zeros(len(network.segments), dtype=bool)
        self._is_measured[list(network.measured_ids)] = True

        self._queue_keys = [(s.id, l) for s in network.segments for l in range(s.lane_count)]
        self.queues: dict[tuple[int, int], list[int]] = {k: [] for k in self._queue_keys}

        self._cap = 256
        self.n_slots = 0
        self._alloc(self._cap)

        # routes are interned: per-vehicle route_idx points into these lists
        self._route_paths: list[tuple[int, ...]] = []
        self._route_infos: list = []
        self._route_id_of: dict[tuple[int, ...], int] = {}

        # arrivals: total inflow split across entries by their shares
        self._entries = list(network.entries)
        total_share = sum(e.share for e in self._entries)
        self._entry_share = [e.share / total_share for e in self._entries] if total_share else []
        self._arrival_rng = [arrival_stream(config.seed, k) for k in range(len(self._entries))]
        self._arrival_seq = [0] * len(self._entries)
        self._pending: list[list[_Pending]] = [[] for _ in self._entries]
        self._next_arrival = [self._draw_headway(k, 0.0) for k in range(len(self._entries))]

        # counters and accumulators
        self.n_inserted = 0
        self.n_exited = 0
        self.lane_changes = 0
        self.mandatory_lane_changes = 0
        self.route_repairs = 0
        self.vehicle_seconds = 0.0
        self._abs_acc_sum = 0.0
        self._veh_steps = 0
        self.events: list[tuple] = []

        window = config.flow_window_s
        self._n_windows = max(int(math.floor(config.duration_s / window + 1e-9)), 0)
        self._det_counts = np.zeros((len(network.detectors), self._n_windows), dtype=np.int64)
        self._density_times = [(w + 0.5) * window for w in range(self._n_windows)]
        self._density_samples: list[float] = []
        self._flow_samples: list[float] = []
        self._window_dist: list[float] = []
        self._lc_period_steps = max(int(round(config.lane_change_period_s / config.dt)), 1)
        self._coop_follower: list[int] = []
        self._coop_gap: list[float] = []
        self._coop_dv: list[float] = []

    # -- storage ------------------------------------------------------------

    def _alloc(self, cap: int):
        self.x = np.zeros(cap)
        self.v = np.zeros(cap)
        self.acc = np.zeros(cap)
        self.seg = np.zeros(cap, dtype=np.int32)
        self.lane = np.zeros(cap, dtype=np.int32)
        self.alive = np.zeros(cap, dtype=bool)
        self.route_idx = np.zeros(cap, dtype=np.int32)
        self.route_pos = np.zeros(cap, dtype=np.int32)
        self.cooldown_until = np.zeros(cap)
        self.dist_inv = np.full(cap, np.inf)   # from segment start, current lane
        self.mand_dir = np.zeros(cap, dtype=np.int8)
        self.stuck_since = np.full(cap, np.inf)  # standstill-at-the-wall clock
        self.p = {name: np.zeros(cap) for name in _PARAM_FIELDS}

    def _grow(self):
        old = self._cap
        self._cap = old * 2

        def wider(a):
            out = np.zeros(self._cap, dtype=a.dtype)
            out[:old] = a
            return out

        self.x, self.v, self.acc = wider(self.x), wider(self.v), wider(self.acc)
        self.seg, self.lane = wider(self.seg), wider(self.lane)
        self.alive = wider(self.alive)
        self.route_idx, self.route_pos = wider(self.route_idx), wider(self.route_pos)
        self.cooldown_until = wider(self.cooldown_until)
        out = np.full(self._cap, np.inf)
        out[:old] = self.dist_inv
        self.dist_inv = out
        self.mand_dir = wider(self.mand_dir)
        out = np.full(self._cap, np.inf)
        out[:old] = self.stuck_since
        self.stuck_since = out
        self.p = {k: wider(a) for k, a in self.p.items()}

    def _intern_route(self, path: tuple[int, ...]) -> int:
        rid = self._route_id_of.get(path)
        if rid is None:
            rid = len(self._route_paths)
            self._route_paths.append(path)
            self._route_infos.append(self.route_table.info(path))
            self._route_id_of[path] = rid
        return rid

    def _route_for(self, entry_seg: int, movement: str) -> tuple[int, ...]:
        table = self.network.entry_movements.get(entry_seg)
        if table and movement in table:
            return table[movement]
        return self.network.default_path(entry_seg)

    def _refresh_route_cache(self, slot: int):
        info = self._route_infos[self.route_idx[slot]]
        pos = self.route_pos[slot]
        lane = self.lane[slot]
        self.dist_inv[slot] = info.dist_invalid[pos][lane]
        self.mand_dir[slot] = info.change_dir[pos][lane]

    # -- vehicle management ---------------------------------------------------

    def add_vehicle(self, seg: int, lane: int, x: float, v: float,
                    params: ControllerParams, route: Optional[tuple[int, ...]] = None) -> int:
        """Place a vehicle directly (used by tests and warm starts)."""
        segment = self.network.segments[seg]
        if not 0 <= lane < segment.lane_count:
            raise ValueError(f"segment {segment.name!r} has no lane {lane}")
        if not 0.0 <= x < segment.length:
            raise ValueError(f"position {x} outside segment {segment.name!r}")
        if v < 0.0:
            raise ValueError(f"speed must be non-negative, got {v}")
        if self.n_slots == self._cap:
            self._grow()
        slot = self.n_slots
        self.n_slots += 1
        self.x[slot], self.v[slot], self.acc[slot] = x, v, 0.0
        self.seg[slot], self.lane[slot] = seg, lane
        self.alive[slot] = True
        self.cooldown_until[slot] = self.t
        for name in _PARAM_FIELDS:
            self.p[name][slot] = getattr(params, name)
        path = tuple(route) if route is not None else self.network.default_path(seg)
        if path[0] != seg:
            raise ValueError("route must start at the vehicle's segment")
        self.route_idx[slot] = self._intern_route(path)
        self.route_pos[slot] = 0
        q = self.queues[(seg, lane)]
        i = bisect.bisect_left(q, x, key=lambda s: self.x[s])
        if i < len(q) and self.x[q[i]] - self.p["L"][q[i]] - x <= 0.0:
            raise ValueError("vehicle would overlap its leader")
        if i > 0 and x - params.L - self.x[q[i - 1]] <= 0.0:
            raise ValueError("vehicle would overlap its follower")
        q.insert(i, slot)
        self._refresh_route_cache(slot)
        self.n_inserted += 1
        if self.config.record_events:
            self.events.append((self.t, "insert", slot, seg, lane))
        return slot

    def _remove(self, slot: int):
        self.alive[slot] = False
        self.n_exited += 1
        if self.config.record_events:
            self.events.append((self.t, "exit", slot, int(self.seg[slot])))

    # -- arrivals --------------------------------------------------------------

    def _demand_rate(self, t: float) -> float:
        """Network-total arrival rate, veh/s."""
        cfg = self.config
        if cfg.demand_profile == "constant":
            vph = cfg.inflow_vph
        else:
            frac = min(max(t / cfg.duration_s, 0.0), 1.0)
            vph = cfg.ramp_from_vph + (cfg.ramp_to_vph - cfg.ramp_from_vph) * frac
        return vph / 3600.0

    def _draw_headway(self, k: int, t: float) -> float:
        lam = self._demand_rate(t) * self._entry_share[k]
        if lam <= 0.0:
            return math.inf
        return t + self._arrival_rng[k].exponential(1.0 / lam)

    def _queue_arrivals(self, t_now: float):
        for k in range(len(self._entries)):
            if math.isinf(self._next_arrival[k]):
                # the rate may have ramped up from zero since the last draw
                if self._demand_rate(t_now) * self._entry_share[k] > 0.0:
                    self._next_arrival[k] = self._draw_headway(k, t_now)
            while self._next_arrival[k] <= t_now:
                rng = vehicle_stream(self.config.seed, k, self._arrival_seq[k])
                theta = sample_theta(self.config.fleet, rng)
                u = rng.random()
                f = self.config.turn_fractions
                movement = "straight" if u < f[0] else ("right" if u < f[0] + f[1] else "left")
                params = ControllerParams.from_theta(theta, b_safe=self.config.fleet.b_safe)
                self._pending[k].append(_Pending(params, movement, self._arrival_seq[k]))
                self._arrival_seq[k] += 1
                self._next_arrival[k] = self._draw_headway(k, self._next_arrival[k])

    def _try_insertions(self):
        for k, entry in enumerate(self._entries):
            pending = self._pending[k]
            while pending:
                cand = pending[0]
                q = self.queues[(entry.segment, entry.lane)]
                v_init = min(cand.params.v0, cand.params.v_max)
                if q:
                    # the most upstream vehicle on the lane is the new
                    # vehicle's leader; match its speed and require the IDM
                    # equilibrium gap before releasing the arrival
                    rear = q[0]
                    v_init = min(v_init, self.v[rear])
                    gap = self.x[rear] - self.p["L"][rear]
                    needed = (self.config.entry_gap_factor
                              * model.idm_desired_gap(cand.params, v_init,
                                                      v_init - self.v[rear]))
                    if gap < needed:
                        break
                route = self._route_for(entry.segment, cand.movement)
                self.add_vehicle(entry.segment, entry.lane, 0.0, v_init, cand.params, route)
                pending.pop(0)

    # -- neighbor search ---------------------------------------------------------

    def _forward_leader(self, sid: int, lane: int, info, pos: Optional[int],
                        dist0: float) -> tuple[int, float]:
        """Nearest vehicle downstream of the end of (sid, lane).

        Follows the route continuation while it matches, then default
        connections, up to MAX_HOPS segments / LOOKAHEAD_M meters. Returns
        (slot, gap_from_reference) where dist0 is the distance from the
        reference point (ego front bumper) to the end of the current segment.
        """
        net = self.network
        dist = dist0
        hops = 0
        while hops < MAX_HOPS and dist < LOOKAHEAD_M:
            nxt = None
            if pos is not None:
                target = info.next_segment(pos)
                if target is not None:
                    nlane = net.continuation(sid, lane, target)
                    if nlane is not None:
                        nxt = (target, nlane)
                        pos = pos + 1
            if nxt is None:
                conns = net.segments[sid].connections.get(lane, ())
                if not conns:
                    return -1, math.inf
                nxt = (conns[0].to_segment, conns[0].to_lane)
                pos = None
            sid, lane = nxt
            q = self.queues[(sid, lane)]
            if q:
                leader = q[0]
                return leader, dist + self.x[leader] - self.p["L"][leader]
            dist += self._seg_len[sid]
            hops += 1
        return -1, math.inf

    def _backward_follower(self, sid: int, lane: int) -> tuple[int, float]:
        """Nearest vehicle upstream of the start of (sid, lane).

        Returns (slot, backdist); the follower's gap to a vehicle standing at
        position x in (sid, lane) is backdist + x - vehicle_length.
        """
        best_slot, best_dist = -1, math.inf
        stack = [(sid, lane, 0.0, 0)]
        while stack:
            s, l, d, hops = stack.pop()
            for ps, pl in self.network.predecessors.get((s, l), ()):
                plen = self._seg_len[ps]
                q = self.queues[(ps, pl)]
                if q:
                    cand = q[-1]
                    extra = d + plen - self.x[cand]
                    if extra < best_dist:
                        best_slot, best_dist = cand, extra
                elif hops + 1 < MAX_HOPS and d + plen < LOOKAHEAD_M:
                    stack.append((ps, pl, d + plen, hops + 1))
        return best_slot, best_dist

    def _neighbor_pass(self):
        """Fill lead_slot / lead_gap for every active vehicle."""
        self.lead_slot = np.full(self._cap, -1, dtype=np.int64)
        self.lead_gap = np.full(self._cap, np.inf)
        x, L = self.x, self.p["L"]
        for key in self._queue_keys:
            q = self.queues[key]
            if not q:
                continue
            if len(q) > 1:
                idx = np.asarray(q)
                ahead = idx[1:]
                self.lead_slot[idx[:-1]] = ahead
                self.lead_gap[idx[:-1]] = x[ahead] - L[ahead] - x[idx[:-1]]
            head = q[-1]
            info = self._route_infos[self.route_idx[head]]
            leader, gap = self._forward_leader(
                key[0], key[1], info, int(self.route_pos[head]),
                self._seg_len[key[0]] - x[head])
            self.lead_slot[head] = leader
            self.lead_gap[head] = gap

    # -- lane changes ----------------------------------------------------------

    def _target_lane_neighbors(self, slot: int, tl: int):
        """(new_leader, gap), (new_follower, backdist), old_follower for a move to lane tl."""
        sid = int(self.seg[slot])
        x_ego = self.x[slot]
        q = self.queues[(sid, tl)]
        i = bisect.bisect_right(q, x_ego, key=lambda s: self.x[s])
        if i < len(q):
            nl = q[i]
            nl_gap = self.x[nl] - self.p["L"][nl] - x_ego
        else:
            info = self._route_infos[self.route_idx[slot]]
            nl, nl_gap = self._forward_leader(sid, tl, info, int(self.route_pos[slot]),
                                              self._seg_len[sid] - x_ego)
        if i > 0:
            nf = q[i - 1]
            nf_back = -self.x[nf]
        else:
            nf, nf_back = self._backward_follower(sid, tl)
        cur_q = self.queues[(sid, int(self.lane[slot]))]
        j = cur_q.index(slot)
        of = cur_q[j - 1] if j > 0 else -1
        return (nl, nl_gap), (nf, nf_back), of

    def _collect_candidates(self) -> list[_Candidate]:
        cfg = self.config
        out = []
        n = self.n_slots
        alive = self.alive
        stagger = (self.step_index % self._lc_period_steps)
        for slot in range(n):
            if not alive[slot]:
                continue
            sid = int(self.seg[slot])
            lane = int(self.lane[slot])
            lanes_here = int(self._lane_count[sid])
            remaining = self.dist_inv[slot] - self.x[slot]
            mandatory = (self.mand_dir[slot] != 0) and (remaining < cfg.mandatory_zone_m)
            if self.t < self.cooldown_until[slot]:
                continue
            if mandatory:
                directions = (int(self.mand_dir[slot]),)
            else:
                if slot % self._lc_period_steps != stagger:
                    continue
                if lanes_here == 1:
                    continue
                directions = (-1, 1)
            info = self._route_infos[self.route_idx[slot]]
            pos = int(self.route_pos[slot])
            for d in directions:
                tl = lane + d
                if not 0 <= tl < lanes_here:
                    continue
                if not mandatory:
                    # never drift into a lane that the route is about to lose
                    if info.dist_invalid[pos][tl] - self.x[slot] < cfg.mandatory_zone_m:
                        continue
                (nl, nl_gap), (nf, nf_back), of = self._target_lane_neighbors(slot, tl)
                if nl >= 0 and nl_gap <= 0.0:
                    if mandatory:
                        self._request_cooperation(slot, nf, nf_back)
                    continue
                if nf >= 0 and nf_back + self.x[slot] - self.p["L"][slot] <= 0.0:
                    continue
                out.append(_Candidate(slot, d, mandatory, nl, nl_gap, nf, nf_back, of))
        return out

    def _request_cooperation(self, slot: int, nf: int, nf_back: float):
        """Ask the prospective follower to open a gap for a blocked merge."""
        if nf < 0:
            return
        gap_f = nf_back + self.x[slot] - self.p["L"][slot]
        if gap_f > 0.0:
            self._coop_follower.append(nf)
            self._coop_gap.append(gap_f)
            self._coop_dv.append(self.v[nf] - self.v[slot])

    def _evaluate_candidates(self, cands: list[_Candidate]) -> list[bool]:
        """Batched controller evaluation of the six MOBIL accelerations."""
        if not cands:
            return []
        rows_v, rows_gap, rows_dv, rows_lacc = [], [], [], []
        rows_actor = []
        index = []

        def push(actor, leader, gap):
            rows_actor.append(actor)
            rows_v.append(self.v[actor])
            if leader >= 0 and math.isfinite(gap):
                rows_gap.append(gap)
                rows_dv.append(self.v[actor] - self.v[leader])
                rows_lacc.append(self.acc[leader])
            else:
                rows_gap.append(math.inf)
                rows_dv.append(0.0)
                rows_lacc.append(0.0)
            return len(rows_v) - 1

        for c in cands:
            ego = c.slot
            x_ego, len_ego = self.x[ego], self.p["L"][ego]
            cur_lead = int(self.lead_slot[ego])
            cur_gap = self.lead_gap[ego]
            r_ego_now = push(ego, cur_lead, cur_gap)
            r_ego_new = push(ego, c.new_leader, c.new_leader_gap)
            if c.new_follower >= 0:
                nf_gap_new = c.new_follower_backdist + x_ego - len_ego
                r_nf_now = push(c.new_follower, int(self.lead_slot[c.new_follower]),
                                self.lead_gap[c.new_follower])
                r_nf_new = push(c.new_follower, ego, nf_gap_new)
            else:
                r_nf_now = r_nf_new = -1
            if c.old_follower >= 0:
                of_gap_new = self.lead_gap[c.old_follower] + len_ego + cur_gap
                r_of_now = push(c.old_follower, ego, self.lead_gap[c.old_follower])
                r_of_new = push(c.old_follower, cur_lead, of_gap_new)
            else:
                r_of_now = r_of_new = -1
            index.append((r_ego_now, r_ego_new, r_nf_now, r_nf_new, r_of_now, r_of_new))

        actor = np.asarray(rows_actor)
        acc_rows = model.eidm_acceleration_batch(
            np.asarray(rows_v), np.asarray(rows_gap), np.asarray(rows_dv),
            np.asarray(rows_lacc),
            self.p["v0"][actor], self.p["T"][actor], self.p["a"][actor],
            self.p["b"][actor], self.p["delta"][actor], self.p["s0"][actor],
            self.p["c"][actor])

        decisions = []
        for c, (i_en, i_ew, i_fn, i_fw, i_on, i_ow) in zip(cands, index):
            ego = c.slot
            a_ego_now, a_ego_new = acc_rows[i_en], acc_rows[i_ew]
            nf_now = acc_rows[i_fn] if i_fn >= 0 else 0.0
            nf_new = acc_rows[i_fw] if i_fw >= 0 else 0.0
            of_now = acc_rows[i_on] if i_on >= 0 else 0.0
            of_new = acc_rows[i_ow] if i_ow >= 0 else 0.0
            params = self._params_view(ego)
            ctx = LaneChangeContext(
                ego_acc_now=a_ego_now, ego_acc_new=a_ego_new,
                new_follower_acc_now=nf_now, new_follower_acc_new=nf_new,
                old_follower_acc_now=of_now, old_follower_acc_new=of_new,
                direction=(LaneChangeDirection.TOWARD_FASTER if c.direction > 0
                           else LaneChangeDirection.TOWARD_SLOWER),
                congested=bool(self.v[ego] < self.p["v_crit"][ego]))
            # the ego itself must not need more than b_safe braking after
            # the move, or the clamped accelerations make the incentive
            # comparison meaningless in two-sided emergencies
            safe = ((c.new_follower < 0) or model.mobil_safety_ok(ctx, params)) \
                and a_ego_new >= -params.b_safe
            if c.mandatory:
                ok = safe
            else:
                ok = safe and model.mobil_incentive(ctx, params)
            decisions.append(bool(ok))
        return decisions

    def _params_view(self, slot: int) -> ControllerParams:
        return ControllerParams(**{name: float(self.p[name][slot]) for name in _PARAM_FIELDS})

    def _apply_lane_change(self, c: _Candidate) -> bool:
        slot = c.slot
        sid = int(self.seg[slot])
        tl = int(self.lane[slot]) + c.direction
        q = self.queues[(sid, tl)]
        x_ego = self.x[slot]
        i = bisect.bisect_right(q, x_ego, key=lambda s: self.x[s])
        in_lane_leader = q[i] if i < len(q) else -1
        in_lane_follower = q[i - 1] if i > 0 else -1
        # neighborhood must match the evaluation snapshot (an earlier change
        # this step may have altered it); otherwise retry next period
        snap_leader = c.new_leader if (c.new_leader >= 0 and self.lane[c.new_leader] == tl
                                       and self.seg[c.new_leader] == sid) else -1
        snap_follower = c.new_follower if (c.new_follower >= 0 and self.lane[c.new_follower] == tl
                                           and self.seg[c.new_follower] == sid) else -1
        if in_lane_leader != snap_leader or in_lane_follower != snap_follower:
            return False

        old_lane = int(self.lane[slot])
        old_q = self.queues[(sid, old_lane)]
        old_leader = int(self.lead_slot[slot])
        old_gap = self.lead_gap[slot]
        old_q.remove(slot)
        q.insert(i, slot)
        self.lane[slot] = tl
        self.cooldown_until[slot] = self.t + self.config.lane_change_cooldown_s
        self._refresh_route_cache(slot)
        self.lane_changes += 1
        if c.mandatory:
            self.mandatory_lane_changes += 1
        if self.config.record_events:
            self.events.append((self.t, "lane_change", slot, sid, old_lane, tl,
                                "mandatory" if c.mandatory else "discretionary"))

        # patch the neighbor arrays for everyone whose leader changed
        len_ego = self.p["L"][slot]
        self.lead_slot[slot] = c.new_leader
        self.lead_gap[slot] = c.new_leader_gap
        if c.new_follower >= 0:
            self.lead_slot[c.new_follower] = slot
            self.lead_gap[c.new_follower] = c.new_follower_backdist + x_ego - len_ego
        if c.old_follower >= 0:
            self.lead_gap[c.old_follower] = self.lead_gap[c.old_follower] + len_ego + old_gap
            self.lead_slot[c.old_follower] = old_leader
        return True

    def _lane_change_phase(self):
        self._coop_follower: list[int] = []
        self._coop_gap: list[float] = []
        self._coop_dv: list[float] = []
        cands = self._collect_candidates()
        if not cands:
            return
        decisions = self._evaluate_candidates(cands)
        done: set[int] = set()
        for c, ok in zip(cands, decisions):
            if ok and c.slot not in done and self._apply_lane_change(c):
                done.add(c.slot)
            elif c.mandatory:
                # a blocked required change asks the target-lane follower to
                # open the gap (bounded, comfortable braking) so forced
                # merges resolve while traffic is still rolling
                self._request_cooperation(c.slot, c.new_follower,
                                          c.new_follower_backdist)

    # -- longitudinal ------------------------------------------------------------

    def _longitudinal_phase(self) -> np.ndarray:
        order = np.flatnonzero(self.alive[:self.n_slots])
        if order.size == 0:
            return order
        dt = self.config.dt
        v = self.v[order]
        gap = self.lead_gap[order]
        ls = self.lead_slot[order]
        has = ls >= 0
        ls_safe = np.where(has, ls, 0)
        lv = np.where(has, self.v[ls_safe], 0.0)
        lacc = np.where(has, self.acc[ls_safe], 0.0)
        dv = np.where(has, v - lv, 0.0)
        cmd = model.eidm_acceleration_batch(
            v, gap, dv, lacc,
            self.p["v0"][order], self.p["T"][order], self.p["a"][order],
            self.p["b"][order], self.p["delta"][order], self.p["s0"][order],
            self.p["c"][order])
        # a vehicle that still has a required lane change pending brakes
        # toward the end of its merge window (treated as a standing obstacle)
        # and creeps along the queue until a gap opens, instead of sailing
        # past its turn
        pend = np.flatnonzero(self.mand_dir[order] != 0)
        if pend.size:
            rows = order[pend]
            wall_gap = np.maximum(self.dist_inv[rows] - self.x[rows] - 2.0, 1e-3)
            near = wall_gap < self.config.mandatory_zone_m
            if np.any(near):
                pend = pend[near]
                rows = rows[near]
                wall = model.eidm_acceleration_batch(
                    v[pend], wall_gap[near], v[pend], np.zeros(rows.size),
                    self.p["v0"][rows], self.p["T"][rows], self.p["a"][rows],
                    self.p["b"][rows], self.p["delta"][rows], self.p["s0"][rows],
                    self.p["c"][rows])
                cmd[pend] = np.minimum(cmd[pend], wall)
        if self._coop_follower:
            # yield to blocked mergers: car-following response toward the
            # merger as a virtual leader, never harsher than the follower's
            # comfortable deceleration or the safe lane-change bound
            fol = np.asarray(self._coop_follower)
            pos_of = np.full(self._cap, -1)
            pos_of[order] = np.arange(order.size)
            frows = pos_of[fol]
            ok = frows >= 0
            if np.any(ok):
                fol, frows = fol[ok], frows[ok]
                yield_acc = model.idm_acceleration_batch(
                    self.v[fol], np.asarray(self._coop_gap)[ok],
                    np.asarray(self._coop_dv)[ok],
                    self.p["v0"][fol], self.p["T"][fol], self.p["a"][fol],
                    self.p["b"][fol], self.p["delta"][fol], self.p["s0"][fol])
                floor = -np.minimum(self.p["b"][fol], self.p["b_safe"][fol])
                np.minimum.at(cmd, frows, np.maximum(yield_acc, floor))
        v_new = np.clip(v + cmd * dt, 0.0, self.p["v_max"][order])
        self.x[order] = self.x[order] + 0.5 * (v + v_new) * dt
        realized = (v_new - v) / dt
        self.v[order] = v_new
        self.acc[order] = realized
        self._abs_acc_sum += float(np.abs(realized).sum())
        self._veh_steps += order.size
        self.vehicle_seconds += order.size * dt
        return order

    # -- transitions, detectors, sampling ------------------------------------------

    def _detector_phase(self, order: np.ndarray, x_prev: np.ndarray, t_new: float):
        if self._det_counts.size == 0 or order.size == 0:
            return
        w = min(int(t_new / self.config.flow_window_s), self._n_windows - 1)
        seg_of = self.seg[order]
        x_now = self.x[order]
        for di, det in enumerate(self.network.detectors):
            crossed = (seg_of == det.segment) & (x_prev < det.position) & (x_now >= det.position)
            n = int(crossed.sum())
            if n:
                self._det_counts[di, w] += n

    def _transition_phase(self):
        net = self.network
        for key in self._queue_keys:
            q = self.queues[key]
            seg_len = self._seg_len[key[0]]
            while q and self.x[q[-1]] >= seg_len:
                slot = q.pop()
                if net.is_exit(key[0]):
                    self._remove(slot)
                    continue
                info = self._route_infos[self.route_idx[slot]]
                pos = int(self.route_pos[slot])
                target = info.next_segment(pos)
                nlane = net.continuation(key[0], key[1], target) if target is not None else None
                if nlane is not None:
                    nsid = target
                    self.route_pos[slot] = pos + 1
                else:
                    conns = net.segments[key[0]].connections.get(key[1], ())
                    if not conns:
                        raise RuntimeError(
                            f"vehicle {slot} ran off the dead-end lane {key[1]} of "
                            f"segment {net.segments[key[0]].name!r}")
                    nsid, nlane = conns[0].to_segment, conns[0].to_lane
                    self.route_idx[slot] = self._intern_route(net.default_path(nsid))
                    self.route_pos[slot] = 0
                    self.route_repairs += 1
                    if self.config.record_events:
                        self.events.append((self.t, "route_repair", slot, key[0], nsid))
                self.x[slot] -= seg_len
                self.seg[slot], self.lane[slot] = nsid, nlane
                nq = self.queues[(nsid, nlane)]
                i = bisect.bisect_left(nq, self.x[slot], key=lambda s: self.x[s])
                nq.insert(i, slot)
                self._refresh_route_cache(slot)

    def _give_up_phase(self):
        """Abandon a pending turn after a long standstill at its deadline.

        Two opposing merge streams can interlock at the end of a weaving
        section (each head stopped level with the other, neither gap usable).
        Gap cooperation cannot resolve an interlock that has already reached
        standstill, so a vehicle pinned at its merge deadline for
        merge_give_up_s reroutes through its own lane's continuation -- the
        microscopic analogue of missing the turn -- and recovers downstream.
        """
        idx = np.flatnonzero(self.alive[:self.n_slots])
        if idx.size == 0:
            return
        stuck_now = ((self.mand_dir[idx] != 0)
                     & (self.v[idx] < _STANDSTILL_V)
                     & (self.dist_inv[idx] - self.x[idx] < GIVE_UP_RANGE_M))
        clock = self.stuck_since[idx]
        clock[~stuck_now] = np.inf
        fresh = stuck_now & ~np.isfinite(clock)
        clock[fresh] = self.t
        self.stuck_since[idx] = clock
        expired = idx[stuck_now
                      & (self.t - clock >= self.config.merge_give_up_s)]
        net = self.network
        for slot in expired:
            sid = int(self.seg[slot])
            lane = int(self.lane[slot])
            conns = net.segments[sid].connections.get(lane, ())
            if not conns:
                continue
            path = (sid,) + net.default_path(conns[0].to_segment)
            self.route_idx[slot] = self._intern_route(path)
            self.route_pos[slot] = 0
            self._refresh_route_cache(slot)
            self.route_repairs += 1
            self.stuck_since[slot] = np.inf
            if self.config.record_events:
                self.events.append((self.t, "route_repair", slot, sid,
                                    conns[0].to_segment))

    def _density_phase(self, t_new: float):
        # Each detector window yields one density-flow pair over the measured
        # region: density is the instantaneous vehicle count per km per lane
        # sampled at the window midpoint; flow is the generalized (Edie) flow
        # of the whole window, total distance traveled per lane-km per hour,
        # which is the window average of density * mean speed.
        lane_m = self.network.measured_lane_m
        window = self.config.flow_window_s
        dt = self.config.dt
        if lane_m > 0:
            idx = np.flatnonzero(self.alive[:self.n_slots])
            if idx.size:
                main = idx[self._is_measured[self.seg[idx]]]
                if main.size:
                    w = int((t_new - 0.5 * dt) / window)
                    while len(self._window_dist) <= w:
                        self._window_dist.append(0.0)
                    self._window_dist[w] += float(self.v[main].sum()) * dt
        while (len(self._density_samples) < len(self._density_times)
               and t_new >= self._density_times[len(self._density_samples)] - 1e-9):
            if lane_m <= 0:
                self._density_samples.append(math.nan)
                continue
            idx = np.flatnonzero(self.alive[:self.n_slots])
            if idx.size:
                main = idx[self._is_measured[self.seg[idx]]]
                self._density_samples.append(main.size / (lane_m / 1000.0))
            else:
                self._density_samples.append(0.0)
        while (len(self._flow_samples) < self._n_windows
               and (len(self._flow_samples) + 1) * window <= t_new + 1e-9):
            if lane_m <= 0:
                self._flow_samples.append(math.nan)
                continue
            w = len(self._flow_samples)
            dist = self._window_dist[w] if w < len(self._window_dist) else 0.0
            self._flow_samples.append(dist * 3600.0 / (window * lane_m))

    # -- main loop -----------------------------------------------------------------

    def step(self):
        self._neighbor_pass()
        order = np.flatnonzero(self.alive[:self.n_slots])
        if order.size:
            bad = order[self.lead_gap[order] <= 0.0]
            if bad.size:
                involved = set(bad.tolist()) | {int(self.lead_slot[s]) for s in bad}
                raise CrashError(self.t, sorted(involved))
        self._lane_change_phase()
        x_prev = self.x[order].copy() if order.size else np.empty(0)
        moved = self._longitudinal_phase()
        t_new = (self.step_index + 1) * self.config.dt
        self._detector_phase(moved, x_prev, t_new)
        self._transition_phase()
        self._give_up_phase()
        self._density_phase(t_new)
        self._queue_arrivals(t_new)
        self._try_insertions()
        self.t = t_new
        self.step_index += 1
        if self.audit_hook is not None:
            self.audit_hook(self)

    def run(self):
        n_steps = int(round(self.config.duration_s / self.config.dt))
        for _ in range(n_steps):
            self.step()

    # -- outputs --------------------------------------------------------------------

    def metrics(self, crashed: bool = False, crash_time: float = math.nan) -> MetricsRecord:
        duration = self.t if self.t > 0.0 else self.config.dt
        window = self.config.flow_window_s
        complete = min(int(self.t / window + 1e-9), self._n_windows,
                       len(self._flow_samples))
        flows: tuple = ()
        densities: tuple = ()
        if complete > 0:
            flows = tuple(self._flow_samples[:complete])
            densities = tuple(self._density_samples[:complete])
            w_star = int(np.argmax(flows))
            max_tp = float(flows[w_star])
            tp_time = (w_star + 0.5) * window
            dens_at_peak = densities[w_star]
        else:
            max_tp, tp_time, dens_at_peak = 0.0, math.nan, 0.0
        mean_dens = (float(np.mean(self._density_samples))
                     if self._density_samples else 0.0)
        if self.config.lcps_per_vehicle:
            lcps = self.lane_changes / self.vehicle_seconds if self.vehicle_seconds > 0 else 0.0
        else:
            lcps = self.lane_changes / duration
        mean_abs = self._abs_acc_sum / self._veh_steps if self._veh_steps else 0.0
        return MetricsRecord(
            duration_s=duration,
            n_inserted=self.n_inserted,
            n_exited=self.n_exited,
            n_active_end=int(self.alive[:self.n_slots].sum()),
            n_pending_end=sum(len(p) for p in self._pending),
            vehicle_seconds=self.vehicle_seconds,
            lane_changes=self.lane_changes,
            mandatory_lane_changes=self.mandatory_lane_changes,
            lcps=lcps,
            mean_abs_acc=mean_abs,
            max_throughput_vph=max_tp,
            throughput_time_s=tp_time,
            density_at_peak=dens_at_peak,
            mean_density=mean_dens,
            window_flows_vph=flows,
            window_densities=densities,
            route_repairs=self.route_repairs,
            crashed=crashed,
            crash_time=crash_time,
        )


def run_simulation(network: RoadNetwork, config: SimulationConfig,
                   audit_hook: Optional[Callable[[Simulation], None]] = None) -> MetricsRecord:
    """Run to completion; a collision yields a truncated record, not an exception."""
    sim = Simulation(network, config, audit_hook)
    try:
        sim.run()
    except CrashError as err:
        return sim.metrics(crashed=True, crash_time=err.time)
    return sim.metrics()
