"""Longitudinal car-following and lane-change decision models.

Longitudinal control is the intelligent-driver model with a constant-
acceleration-heuristic relaxation (coolness factor c): the relaxed controller
avoids overreacting to cut-ins whose projected evolution is uncritical.
Lane changes use the politeness-weighted incentive rule with an asymmetric
(keep-right) bias term that is suppressed below the congestion threshold
v_crit, gated by a safe-braking bound on the prospective new follower.

Scalar functions operate on a single vehicle and are the reference
implementation; the *_batch twins evaluate whole arrays and are what the
simulation engine calls. A no-leader situation is represented by gap = inf
(the interaction term is skipped on that branch so free-flow equilibrium is
exact).
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass

import numpy as np

# Hard physical braking floor [m/s^2]; commanded decelerations are clamped here.
B_EMERGENCY = 9.0

# Tiny threshold guarding the constant-acceleration-heuristic denominator.
_DEN_EPS = 1e-12


class CollisionGapError(ValueError):
    """Raised when a car-following context reports a non-positive gap."""


@dataclass(frozen=True)
class LongitudinalContext:
    """Ego kinematics relative to its lane leader.

    v:          ego velocity [m/s]
    gap:        bumper-to-bumper distance to the leader [m]; inf if no leader
    dv:         approach rate v_ego - v_leader [m/s]; 0 if no leader
    leader_acc: leader acceleration [m/s^2]; 0 if no leader
    """

    v: float
    gap: float
    dv: float = 0.0
    leader_acc: float = 0.0

    @classmethod
    def free_road(cls, v: float) -> "LongitudinalContext":
        return cls(v=v, gap=math.inf, dv=0.0, leader_acc=0.0)

    @property
    def has_leader(self) -> bool:
        return math.isfinite(self.gap)


class LaneChangeDirection(enum.Enum):
    TOWARD_FASTER = +1  # toward higher lane index (passing side)
    TOWARD_SLOWER = -1  # toward lower lane index (keep-right side)


@dataclass(frozen=True)
class LaneChangeContext:
    """The six accelerations entering the lane-change incentive, plus flags.

    *_now  values are the accelerations in the current configuration,
    *_new  values are the hypothetical accelerations after the ego changes lane.
    """

    ego_acc_now: float
    ego_acc_new: float
    new_follower_acc_now: float
    new_follower_acc_new: float
    old_follower_acc_now: float
    old_follower_acc_new: float
    direction: LaneChangeDirection
    congested: bool = False


def idm_desired_gap(params, v: float, dv: float) -> float:
    """Velocity-dependent desired gap s*, floored at the standstill gap s0."""
    if v < 0.0:
        raise ValueError(f"velocity must be non-negative, got {v}")
    s_star = params.s0 + v * params.T + v * dv / (2.0 * math.sqrt(params.a * params.b))
    return s_star if s_star > params.s0 else params.s0


def idm_acceleration(params, ctx: LongitudinalContext, b_emergency: float = B_EMERGENCY) -> float:
    """Car-following acceleration, clamped below at -b_emergency."""
    if ctx.gap <= 0.0:
        raise CollisionGapError(f"non-positive gap {ctx.gap} signals a collision state")
    acc = params.a * (1.0 - (ctx.v / params.v0) ** params.delta)
    if math.isfinite(ctx.gap):
        s_star = idm_desired_gap(params, ctx.v, ctx.dv)
        acc -= params.a * (s_star / ctx.gap) ** 2
    return acc if acc > -b_emergency else -b_emergency


def _cah_acceleration(params, ctx: LongitudinalContext) -> float:
    """Constant-acceleration-heuristic acceleration (finite-gap contexts only)."""
    a_eff = min(ctx.leader_acc, params.a)
    v = ctx.v
    v_l = v - ctx.dv
    if v_l * ctx.dv <= -2.0 * ctx.gap * a_eff:
        den = v_l * v_l - 2.0 * ctx.gap * a_eff
        if abs(den) > _DEN_EPS:
            return v * v * a_eff / den
        # v_l ~ 0 and a_eff ~ 0: leader effectively standing; brake to stop in gap
        return -v * v / (2.0 * ctx.gap)
    dv_pos = ctx.dv if ctx.dv > 0.0 else 0.0
    return a_eff - dv_pos * dv_pos / (2.0 * ctx.gap)


def eidm_acceleration(params, ctx: LongitudinalContext, b_emergency: float = B_EMERGENCY) -> float:
    """Relaxed (coolness-weighted) car-following acceleration.

    Equal to idm_acceleration whenever the plain controller is at least as
    permissive as the constant-acceleration heuristic, and for c = 0.
    """
    if ctx.gap <= 0.0:
        raise CollisionGapError(f"non-positive gap {ctx.gap} signals a collision state")
    a_free = params.a * (1.0 - (ctx.v / params.v0) ** params.delta)
    if not math.isfinite(ctx.gap):
        return a_free if a_free > -b_emergency else -b_emergency
    s_star = idm_desired_gap(params, ctx.v, ctx.dv)
    a_idm = a_free - params.a * (s_star / ctx.gap) ** 2
    if params.c > 0.0:
        a_cah = _cah_acceleration(params, ctx)
        if a_idm < a_cah:
            c = params.c
            b = params.b
            a_idm = (1.0 - c) * a_idm + c * (a_cah + b * math.tanh((a_idm - a_cah) / b))
    return a_idm if a_idm > -b_emergency else -b_emergency


def mobil_safety_ok(ctx: LaneChangeContext, params) -> bool:
    """Safety criterion: the new follower must not brake harder than b_safe."""
    return ctx.new_follower_acc_new >= -params.b_safe


def mobil_incentive(ctx: LaneChangeContext, params) -> bool:
    """Politeness-weighted incentive criterion with asymmetric bias.

    The switching threshold is a_delta, shifted by +a_bias for changes toward
    the faster side and -a_bias toward the slower side; below the congestion
    threshold the bias is suppressed and both directions use a_delta alone.
    """
    gain = (ctx.ego_acc_new - ctx.ego_acc_now) + params.p * (
        (ctx.new_follower_acc_new - ctx.new_follower_acc_now)
        + (ctx.old_follower_acc_new - ctx.old_follower_acc_now)
    )
    if ctx.congested:
        threshold = params.a_delta
    elif ctx.direction is LaneChangeDirection.TOWARD_FASTER:
        threshold = params.a_delta + params.a_bias
    else:
        threshold = params.a_delta - params.a_bias
    return gain > threshold


# ---------------------------------------------------------------------------
# Batched kernels (engine hot path). Semantics match the scalar functions;
# gaps must be positive or +inf (the engine validates separately and raises
# a crash on overlap).
# ---------------------------------------------------------------------------

def desired_gap_batch(v, dv, s0, T, a, b):
    s_star = s0 + v * T + v * dv / (2.0 * np.sqrt(a * b))
    return np.maximum(s_star, s0)


def idm_acceleration_batch(v, gap, dv, v0, T, a, b, delta, s0, b_emergency=B_EMERGENCY):
    finite = np.isfinite(gap)
    gap_safe = np.where(finite, gap, 1.0)
    s_star = desired_gap_batch(v, dv, s0, T, a, b)
    acc = a * (1.0 - (v / v0) ** delta)
    acc = acc - np.where(finite, a * (s_star / gap_safe) ** 2, 0.0)
    return np.maximum(acc, -b_emergency)


def eidm_acceleration_batch(v, gap, dv, leader_acc, v0, T, a, b, delta, s0, c,
                            b_emergency=B_EMERGENCY):
    finite = np.isfinite(gap)
    gap_safe = np.where(finite, gap, 1.0)
    s_star = desired_gap_batch(v, dv, s0, T, a, b)
    a_free = a * (1.0 - (v / v0) ** delta)
    a_idm = a_free - np.where(finite, a * (s_star / gap_safe) ** 2, 0.0)

    a_eff = np.minimum(leader_acc, a)
    v_l = v - dv
    den = v_l * v_l - 2.0 * gap_safe * a_eff
    den_ok = np.abs(den) > _DEN_EPS
    cah_main = np.where(den_ok, v * v * a_eff / np.where(den_ok, den, 1.0),
                        -v * v / (2.0 * gap_safe))
    dv_pos = np.maximum(dv, 0.0)
    cah_else = a_eff - dv_pos * dv_pos / (2.0 * gap_safe)
    a_cah = np.where(v_l * dv <= -2.0 * gap_safe * a_eff, cah_main, cah_else)

    relaxed = (1.0 - c) * a_idm + c * (a_cah + b * np.tanh((a_idm - a_cah) / b))
    acc = np.where((a_idm >= a_cah) | ~finite, a_idm, relaxed)
    return np.maximum(acc, -b_emergency)
