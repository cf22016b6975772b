"""Heterogeneous fleet sampling.

Controllers are drawn componentwise normal around the fleet mean with
std_i = (sigma_i/2) * (upper_i - lower_i) and capped into the bounds.
Fleet means themselves are drawn uniformly from a margin-shrunk box so that
roughly two pre-cap standard deviations fit inside the bounds on both sides.

Streams are derived from numpy SeedSequence keys, which makes every draw
addressable: the k-th vehicle of a run gets identical parameters no matter
when (or whether) it is actually inserted.
"""

from __future__ import annotations

import numpy as np

from .params import ControllerParams, FleetSpec, ParameterBounds, THETA_NAMES

# Stream tags (first element after the seed in SeedSequence entropy tuples).
_STREAM_ARRIVALS = 1
_STREAM_VEHICLE = 2

MEAN_MARGIN_STDS = 2.0  # margin half-width in units of the pre-cap std


def stream(*key: int) -> np.random.Generator:
    """Deterministic generator for an integer key tuple."""
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence(tuple(int(k) for k in key))))


def arrival_stream(seed: int, entry_index: int) -> np.random.Generator:
    return stream(seed, _STREAM_ARRIVALS, entry_index)


def vehicle_stream(seed: int, entry_index: int, arrival_index: int) -> np.random.Generator:
    return stream(seed, _STREAM_VEHICLE, entry_index, arrival_index)


def sample_theta(spec: FleetSpec, rng: np.random.Generator) -> np.ndarray:
    """One capped 13-component draw.

    The standard-normal variate is drawn before scaling, so for a fixed stream
    the draw depends smoothly on (theta_mean, sigma); fixed components have
    zero range and come out pinned exactly.
    """
    z = rng.standard_normal(len(THETA_NAMES))
    theta = spec.theta_mean + spec.std * z
    return np.clip(theta, spec.bounds.lower, spec.bounds.upper)


def sample_controller(spec: FleetSpec, rng: np.random.Generator) -> ControllerParams:
    return ControllerParams.from_theta(sample_theta(spec, rng), b_safe=spec.b_safe)


def sample_fleet(spec: FleetSpec, n: int, rng: np.random.Generator) -> list[ControllerParams]:
    """n independent controller draws from a single stream."""
    if n < 0:
        raise ValueError(f"fleet size must be non-negative, got {n}")
    return [sample_controller(spec, rng) for _ in range(n)]


def mean_vector_box(bounds: ParameterBounds, sigma) -> tuple[np.ndarray, np.ndarray]:
    """The admissible box for fleet means at heterogeneity sigma.

    Margin m_i = MEAN_MARGIN_STDS * (sigma_i/2) * range_i on each side; fixed
    components (zero range) keep their single admissible value. An empty box
    (margins overlapping on a non-fixed component) raises ValueError.
    """
    sigma = np.asarray(sigma, dtype=float)
    if sigma.ndim == 0:
        sigma = np.full(len(THETA_NAMES), float(sigma))
    if np.any(sigma < 0.0):
        raise ValueError("sigma must be non-negative")
    margin = MEAN_MARGIN_STDS * 0.5 * sigma * bounds.range
    lo = bounds.lower + margin
    hi = bounds.upper - margin
    if np.any(lo > hi):
        bad = [THETA_NAMES[i] for i in np.flatnonzero(lo > hi)]
        raise ValueError(
            "mean-sampling box is empty at sigma="
            f"{np.max(sigma):g} for: {', '.join(bad)} (margins overlap)")
    return lo, hi


def sample_mean_vector(bounds: ParameterBounds, sigma, rng: np.random.Generator) -> np.ndarray:
    """Uniform draw of a fleet mean from the margin-shrunk box."""
    lo, hi = mean_vector_box(bounds, sigma)
    return lo + (hi - lo) * rng.random(len(THETA_NAMES))
