"""Controller parameter vectors, bounds, and fleet specifications.

A driver/vehicle controller is described by 13 bounded components (11 sampled,
T and c held fixed via degenerate bounds) plus the fixed safety deceleration
bound b_safe used by the lane-change safety criterion.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Union

import numpy as np

from .units import mph_to_mps

# Canonical component order for every vector/matrix in the package.
THETA_NAMES: tuple[str, ...] = (
    "v0",       # target (desired) velocity [m/s]
    "T",        # desired time headway [s] (fixed)
    "a",        # maximum acceleration [m/s^2]
    "b",        # comfortable deceleration [m/s^2]
    "delta",    # free-acceleration exponent [-]
    "s0",       # minimum bumper-to-bumper gap [m]
    "c",        # coolness factor [-] (fixed)
    "p",        # politeness factor [-]
    "a_delta",  # lane-change switching threshold [m/s^2]
    "a_bias",   # acceleration bias toward slower lanes [m/s^2]
    "v_crit",   # congestion speed threshold [m/s]
    "L",        # vehicle length [m]
    "v_max",    # maximum (mechanical) velocity [m/s]
)

# The components actually perturbed by fleet heterogeneity.
FIXED_NAMES: tuple[str, ...] = ("T", "c")
SAMPLED_NAMES: tuple[str, ...] = tuple(n for n in THETA_NAMES if n not in FIXED_NAMES)

THETA_INDEX: dict[str, int] = {name: i for i, name in enumerate(THETA_NAMES)}

DEFAULT_B_SAFE = 4.0  # m/s^2, safe-deceleration bound imposed on the new follower

# must stay strictly positive (physical scales / denominators)
_STRICT_POSITIVE = ("v0", "T", "a", "b", "delta", "s0", "v_crit", "L", "v_max")


@dataclass(frozen=True)
class ControllerParams:
    """One vehicle's full controller parameter set (SI units)."""

    v0: float
    T: float
    a: float
    b: float
    delta: float
    s0: float
    c: float
    p: float
    a_delta: float
    a_bias: float
    v_crit: float
    L: float
    v_max: float
    b_safe: float = DEFAULT_B_SAFE

    def __post_init__(self):
        for name in _STRICT_POSITIVE:
            if not getattr(self, name) > 0.0:
                raise ValueError(f"parameter {name!r} must be strictly positive, got {getattr(self, name)}")
        if not self.b_safe > 0.0:
            raise ValueError(f"parameter 'b_safe' must be strictly positive, got {self.b_safe}")
        if self.a_delta < 0.0:
            raise ValueError(f"parameter 'a_delta' must be non-negative, got {self.a_delta}")
        if not self.a_bias > 0.0:
            raise ValueError(f"parameter 'a_bias' must be strictly positive, got {self.a_bias}")
        if not (0.0 <= self.c < 1.0):
            raise ValueError(f"coolness 'c' must lie in [0, 1), got {self.c}")
        if not np.isfinite(self.p):
            raise ValueError(f"politeness 'p' must be finite, got {self.p}")

    def theta(self) -> np.ndarray:
        """The 13-component vector in canonical order."""
        return np.array([getattr(self, n) for n in THETA_NAMES], dtype=float)

    @classmethod
    def from_theta(cls, theta: np.ndarray, b_safe: float = DEFAULT_B_SAFE) -> "ControllerParams":
        theta = np.asarray(theta, dtype=float)
        if theta.shape != (len(THETA_NAMES),):
            raise ValueError(f"theta must have shape ({len(THETA_NAMES)},), got {theta.shape}")
        return cls(**{n: float(theta[i]) for i, n in enumerate(THETA_NAMES)}, b_safe=b_safe)


@dataclass(frozen=True)
class ParameterBounds:
    """Componentwise box [lower, upper] for the 13-component vector."""

    lower: np.ndarray
    upper: np.ndarray

    def __post_init__(self):
        lower = np.asarray(self.lower, dtype=float)
        upper = np.asarray(self.upper, dtype=float)
        object.__setattr__(self, "lower", lower)
        object.__setattr__(self, "upper", upper)
        n = len(THETA_NAMES)
        if lower.shape != (n,) or upper.shape != (n,):
            raise ValueError(f"bounds must have shape ({n},)")
        if not np.all(lower <= upper):
            bad = [THETA_NAMES[i] for i in np.flatnonzero(lower > upper)]
            raise ValueError(f"lower bound exceeds upper bound for: {', '.join(bad)}")

    @property
    def range(self) -> np.ndarray:
        return self.upper - self.lower

    @property
    def midpoint(self) -> np.ndarray:
        return 0.5 * (self.lower + self.upper)

    def is_fixed(self) -> np.ndarray:
        """Mask of components with degenerate (min == max) bounds."""
        return self.range == 0.0

    def component(self, name: str) -> tuple[float, float]:
        i = THETA_INDEX[name]
        return float(self.lower[i]), float(self.upper[i])

    def with_component(self, name: str, lower: float, upper: float) -> "ParameterBounds":
        i = THETA_INDEX[name]
        lo = self.lower.copy()
        hi = self.upper.copy()
        lo[i], hi[i] = lower, upper
        return ParameterBounds(lo, hi)

    def __eq__(self, other):
        if not isinstance(other, ParameterBounds):
            return NotImplemented
        return np.array_equal(self.lower, other.lower) and np.array_equal(self.upper, other.upper)


def default_bounds() -> ParameterBounds:
    """Bundled default bounds for the 13 components (speeds converted from mph)."""
    table = {
        "v0": (mph_to_mps(40.0), mph_to_mps(100.0)),
        "T": (2.0, 2.0),
        "a": (0.5, 6.5),
        "b": (4.0, 7.5),
        "delta": (3.0, 5.0),
        "s0": (3.0, 5.0),
        "c": (0.95, 0.95),
        "p": (0.0, 1.0),
        "a_delta": (0.0, 1.0),
        "a_bias": (0.2, 1.0),
        "v_crit": (mph_to_mps(40.0), mph_to_mps(65.0)),
        "L": (3.0, 16.5),
        "v_max": (mph_to_mps(70.0), mph_to_mps(150.0)),
    }
    lower = np.array([table[n][0] for n in THETA_NAMES])
    upper = np.array([table[n][1] for n in THETA_NAMES])
    return ParameterBounds(lower, upper)


SigmaLike = Union[float, np.ndarray]


@dataclass(frozen=True)
class FleetSpec:
    """Distribution of controllers across a fleet.

    Controllers are drawn componentwise normal around `theta_mean` with
    std_i = (sigma_i / 2) * (upper_i - lower_i), then capped into the bounds.
    `sigma` may be a scalar (applied to every component) or a 13-vector.
    Components with degenerate bounds have zero std and stay pinned for any
    sigma.
    """

    theta_mean: np.ndarray
    sigma: SigmaLike = 0.0
    bounds: ParameterBounds = field(default_factory=default_bounds)
    b_safe: float = DEFAULT_B_SAFE

    def __post_init__(self):
        mean = np.asarray(self.theta_mean, dtype=float)
        object.__setattr__(self, "theta_mean", mean)
        n = len(THETA_NAMES)
        if mean.shape != (n,):
            raise ValueError(f"theta_mean must have shape ({n},), got {mean.shape}")
        sigma = np.asarray(self.sigma, dtype=float)
        if sigma.ndim == 0:
            sigma = np.full(n, float(sigma))
        elif sigma.shape != (n,):
            raise ValueError(f"sigma must be a scalar or have shape ({n},), got {sigma.shape}")
        object.__setattr__(self, "sigma", sigma)
        if np.any(sigma < 0.0):
            bad = [THETA_NAMES[i] for i in np.flatnonzero(sigma < 0.0)]
            raise ValueError(f"sigma must be non-negative, offending: {', '.join(bad)}")
        below = mean < self.bounds.lower
        above = mean > self.bounds.upper
        if np.any(below | above):
            bad = [THETA_NAMES[i] for i in np.flatnonzero(below | above)]
            raise ValueError(f"theta_mean outside bounds for: {', '.join(bad)}")
        if not self.b_safe > 0.0:
            raise ValueError(f"b_safe must be strictly positive, got {self.b_safe}")

    @property
    def std(self) -> np.ndarray:
        """Componentwise standard deviation before capping."""
        return 0.5 * self.sigma * self.bounds.range

    def with_sigma(self, sigma: SigmaLike) -> "FleetSpec":
        return replace(self, sigma=sigma)

    def with_mean(self, theta_mean: np.ndarray) -> "FleetSpec":
        return replace(self, theta_mean=theta_mean)
