"""Variance-based and one-factor-at-a-time sensitivity analysis.

The Sobol/Saltelli pipeline: draw a 2k-dimensional low-discrepancy sample,
split it into matrices A and B, build the cross matrices A_B^(i) (column i of
A replaced by B's), evaluate the model on all rows, and estimate first-order
and total-order indices

    S_i  = (1/N) sum_j f(B)_j (f(A_B^(i))_j - f(A)_j) / V
    ST_i = (1/2N) sum_j (f(A)_j - f(A_B^(i))_j)^2 / V

with percentile-bootstrap confidence intervals over row resamples. With
second_order=True the design also carries B_A^(i) matrices and closed
second-order indices are estimated from E[f(B_A^(i)) f(A_B^(j))].

OFAT sweeps use the Pearson correlation with the Wald significance test
t = r sqrt((n-2)/(1-r^2)) against a t distribution with n-2 dof.
"""

from __future__ import annotations

import json
import warnings
from dataclasses import dataclass, asdict
from typing import Callable, Optional, Sequence

import numpy as np
from scipy.stats import qmc
from scipy.stats import t as t_dist

MAX_DIMENSION = 21201  # direction-number table size of the backing generator

_DEGENERATE_REL = 1e-12  # relative variance floor below which outputs count as constant


def sobol_sequence(dimension: int, count: int, *, skip_origin: bool = True,
                   scramble: bool = False, seed=None) -> np.ndarray:
    """First `count` points of the Sobol sequence in [0, 1)^dimension.

    By default the index-0 all-zeros point is skipped, so the first returned
    point of the unscrambled sequence is (0.5, ..., 0.5). Set
    skip_origin=False to get the raw sequence from index 0 (whose leading
    2^m blocks are exactly balanced).
    """
    if not 1 <= dimension <= MAX_DIMENSION:
        raise ValueError(
            f"dimension must be in [1, {MAX_DIMENSION}], got {dimension}")
    if count < 0:
        raise ValueError(f"count must be non-negative, got {count}")
    if count == 0:
        return np.empty((0, dimension))
    engine = qmc.Sobol(d=dimension, scramble=scramble, seed=seed)
    if skip_origin:
        engine.fast_forward(1)
    with warnings.catch_warnings():
        # the power-of-two balance advisory is irrelevant for explicit counts
        warnings.filterwarnings("ignore", message=".*balance properties.*")
        return engine.random(count)


@dataclass(frozen=True)
class SobolDesign:
    """Saltelli evaluation design over a box of factor ranges.

    Row layout of matrix(): N rows of A, N rows of B, then N rows of each
    A_B^(i) in factor order, then (second-order designs only) N rows of each
    B_A^(i).
    """

    factor_names: tuple[str, ...]
    lower: np.ndarray
    upper: np.ndarray
    n: int
    a: np.ndarray
    b: np.ndarray
    ab: np.ndarray           # shape (k, N, k)
    ba: Optional[np.ndarray] = None

    @property
    def k(self) -> int:
        return len(self.factor_names)

    @property
    def n_evaluations(self) -> int:
        blocks = 2 + self.k + (self.k if self.ba is not None else 0)
        return self.n * blocks

    def matrix(self) -> np.ndarray:
        parts = [self.a, self.b, *self.ab]
        if self.ba is not None:
            parts.extend(self.ba)
        return np.vstack(parts)

    def split_outputs(self, y: np.ndarray):
        """Invert matrix(): return (f_a, f_b, f_ab[k, N], f_ba[k, N] | None)."""
        y = np.asarray(y, dtype=float).ravel()
        if y.size != self.n_evaluations:
            raise ValueError(
                f"expected {self.n_evaluations} outputs, got {y.size}")
        n, k = self.n, self.k
        f_a = y[:n]
        f_b = y[n:2 * n]
        f_ab = y[2 * n:(2 + k) * n].reshape(k, n)
        f_ba = None
        if self.ba is not None:
            f_ba = y[(2 + k) * n:].reshape(k, n)
        return f_a, f_b, f_ab, f_ba


def saltelli_design(n: int, lower: Sequence[float], upper: Sequence[float], *,
                    factor_names: Optional[Sequence[str]] = None,
                    second_order: bool = False, scramble: bool = False,
                    seed=None) -> SobolDesign:
    """Build A, B, and cross matrices from a 2k-dimensional Sobol sample."""
    lower = np.asarray(lower, dtype=float)
    upper = np.asarray(upper, dtype=float)
    if lower.ndim != 1 or lower.shape != upper.shape:
        raise ValueError("lower and upper must be 1-d arrays of equal length")
    k = lower.size
    if k < 1:
        raise ValueError("at least one factor is required")
    if np.any(lower > upper):
        raise ValueError("factor box has lower > upper")
    if n < 1:
        raise ValueError(f"sample count n must be positive, got {n}")
    if factor_names is None:
        factor_names = tuple(f"x{i}" for i in range(k))
    else:
        factor_names = tuple(factor_names)
        if len(factor_names) != k:
            raise ValueError("factor_names length does not match the box")

    u = sobol_sequence(2 * k, n, skip_origin=True, scramble=scramble, seed=seed)
    span = upper - lower
    a = lower + span * u[:, :k]
    b = lower + span * u[:, k:]
    ab = np.repeat(a[None, :, :], k, axis=0)
    for i in range(k):
        ab[i, :, i] = b[:, i]
    ba = None
    if second_order:
        ba = np.repeat(b[None, :, :], k, axis=0)
        for i in range(k):
            ba[i, :, i] = a[:, i]
    return SobolDesign(factor_names=factor_names, lower=lower, upper=upper,
                       n=n, a=a, b=b, ab=ab, ba=ba)


@dataclass(frozen=True)
class SensitivityResult:
    """Estimated indices with percentile-bootstrap confidence intervals."""

    factor_names: tuple[str, ...]
    n_samples: int
    n_evaluations: int
    first_order: tuple[float, ...]
    first_order_ci: tuple[tuple[float, float], ...]
    total_order: tuple[float, ...]
    total_order_ci: tuple[tuple[float, float], ...]
    ci_level: float = 0.95
    degenerate: bool = False
    # entries (name_i, name_j, estimate, ci_low, ci_high) for i < j
    second_order: Optional[tuple[tuple[str, str, float, float, float], ...]] = None

    def first(self, name: str) -> float:
        return self.first_order[self.factor_names.index(name)]

    def total(self, name: str) -> float:
        return self.total_order[self.factor_names.index(name)]

    def to_dict(self) -> dict:
        d = asdict(self)
        d["factor_names"] = list(self.factor_names)
        d["first_order"] = list(self.first_order)
        d["first_order_ci"] = [list(ci) for ci in self.first_order_ci]
        d["total_order"] = list(self.total_order)
        d["total_order_ci"] = [list(ci) for ci in self.total_order_ci]
        if self.second_order is not None:
            d["second_order"] = [list(e) for e in self.second_order]
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "SensitivityResult":
        second = d.get("second_order")
        if second is not None:
            second = tuple((str(a), str(b), float(s), float(lo), float(hi))
                           for a, b, s, lo, hi in second)
        return cls(
            factor_names=tuple(d["factor_names"]),
            n_samples=int(d["n_samples"]),
            n_evaluations=int(d["n_evaluations"]),
            first_order=tuple(float(x) for x in d["first_order"]),
            first_order_ci=tuple((float(lo), float(hi)) for lo, hi in d["first_order_ci"]),
            total_order=tuple(float(x) for x in d["total_order"]),
            total_order_ci=tuple((float(lo), float(hi)) for lo, hi in d["total_order_ci"]),
            ci_level=float(d.get("ci_level", 0.95)),
            degenerate=bool(d.get("degenerate", False)),
            second_order=second,
        )

    def to_json(self, **kwargs) -> str:
        return json.dumps(self.to_dict(), **kwargs)

    @classmethod
    def from_json(cls, s: str) -> "SensitivityResult":
        return cls.from_dict(json.loads(s))


def _percentile_ci(samples: np.ndarray, level: float) -> tuple[float, float]:
    alpha = 0.5 * (1.0 - level)
    lo, hi = np.quantile(samples, [alpha, 1.0 - alpha])
    return float(lo), float(hi)


def sobol_indices(design: SobolDesign, outputs: np.ndarray, *,
                  n_bootstrap: int = 1000, ci_level: float = 0.95,
                  seed: int = 0) -> SensitivityResult:
    """Estimate first/total (and optionally second) order indices.

    `outputs` must follow the row order of design.matrix(). A zero-variance
    output is reported as a flagged degenerate result (all indices 0 with
    collapsed intervals) rather than NaNs.
    """
    f_a, f_b, f_ab, f_ba = design.split_outputs(outputs)
    n, k = design.n, design.k
    stacked = np.concatenate([f_a, f_b])
    mean_f = float(np.mean(stacked))
    var_f = float(np.var(stacked))
    if not np.isfinite(var_f) or var_f <= _DEGENERATE_REL * (1.0 + mean_f * mean_f):
        zeros = tuple(0.0 for _ in range(k))
        zero_ci = tuple((0.0, 0.0) for _ in range(k))
        second = None
        if f_ba is not None:
            names = design.factor_names
            second = tuple((names[i], names[j], 0.0, 0.0, 0.0)
                           for i in range(k) for j in range(i + 1, k))
        return SensitivityResult(
            factor_names=design.factor_names, n_samples=n,
            n_evaluations=design.n_evaluations,
            first_order=zeros, first_order_ci=zero_ci,
            total_order=zeros, total_order_ci=zero_ci,
            ci_level=ci_level, degenerate=True, second_order=second)

    first = np.mean(f_b[None, :] * (f_ab - f_a[None, :]), axis=1) / var_f
    total = 0.5 * np.mean((f_a[None, :] - f_ab) ** 2, axis=1) / var_f

    rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence(seed)))
    idx = rng.integers(0, n, size=(n_bootstrap, n))
    fa_r = f_a[idx]                       # (B, N)
    fb_r = f_b[idx]
    sum_r = fa_r.sum(axis=1) + fb_r.sum(axis=1)
    sumsq_r = (fa_r ** 2).sum(axis=1) + (fb_r ** 2).sum(axis=1)
    mean_r = sum_r / (2.0 * n)
    var_r = sumsq_r / (2.0 * n) - mean_r ** 2
    var_ok = var_r > _DEGENERATE_REL * (1.0 + mean_r ** 2)
    var_safe = np.where(var_ok, var_r, 1.0)

    first_ci = []
    total_ci = []
    for i in range(k):
        fab_r = f_ab[i][idx]
        s_r = np.where(var_ok, np.mean(fb_r * (fab_r - fa_r), axis=1) / var_safe, 0.0)
        st_r = np.where(var_ok, 0.5 * np.mean((fa_r - fab_r) ** 2, axis=1) / var_safe, 0.0)
        first_ci.append(_percentile_ci(s_r, ci_level))
        total_ci.append(_percentile_ci(st_r, ci_level))

    second = None
    if f_ba is not None:
        mean_ab = float(np.mean(f_a)) * float(np.mean(f_b))
        entries = []
        for i in range(k):
            for j in range(i + 1, k):
                closed = float(np.mean(f_ba[i] * f_ab[j])) - mean_ab
                s_ij = closed / var_f - first[i] - first[j]
                fba_i_r = f_ba[i][idx]
                fab_j_r = f_ab[j][idx]
                fab_i_r = f_ab[i][idx]
                mean_ab_r = fa_r.mean(axis=1) * fb_r.mean(axis=1)
                closed_r = np.mean(fba_i_r * fab_j_r, axis=1) - mean_ab_r
                si_r = np.mean(fb_r * (fab_i_r - fa_r), axis=1)
                sj_r = np.mean(fb_r * (fab_j_r - fa_r), axis=1)
                sij_r = np.where(var_ok, (closed_r - si_r - sj_r) / var_safe, 0.0)
                lo, hi = _percentile_ci(sij_r, ci_level)
                entries.append((design.factor_names[i], design.factor_names[j],
                                float(s_ij), lo, hi))
        second = tuple(entries)

    return SensitivityResult(
        factor_names=design.factor_names, n_samples=n,
        n_evaluations=design.n_evaluations,
        first_order=tuple(float(s) for s in first),
        first_order_ci=tuple(first_ci),
        total_order=tuple(float(s) for s in total),
        total_order_ci=tuple(total_ci),
        ci_level=ci_level, degenerate=False, second_order=second)


# ---------------------------------------------------------------------------
# One-factor-at-a-time statistics
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class OfatResult:
    """Pearson correlation of a response against one swept factor."""

    factor: str
    sweep_values: tuple[float, ...]
    responses: tuple[float, ...]
    r: float
    t: float
    p_value: float
    degenerate: bool = False

    @property
    def n(self) -> int:
        return len(self.sweep_values)

    def significant(self, alpha: float = 0.05) -> bool:
        return not self.degenerate and self.p_value < alpha

    def to_dict(self) -> dict:
        d = asdict(self)
        d["sweep_values"] = list(self.sweep_values)
        d["responses"] = list(self.responses)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "OfatResult":
        return cls(factor=str(d["factor"]),
                   sweep_values=tuple(float(x) for x in d["sweep_values"]),
                   responses=tuple(float(x) for x in d["responses"]),
                   r=float(d["r"]), t=float(d["t"]), p_value=float(d["p_value"]),
                   degenerate=bool(d.get("degenerate", False)))


def pearson_wald(x, y) -> tuple[float, float, float, bool]:
    """Pearson r with the Wald t-test. Returns (r, t, p, degenerate).

    Constant inputs or responses make r undefined; those cases are reported
    as (0, 0, 1, True) so campaign code can flag them instead of averaging
    NaNs.
    """
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if x.shape != y.shape or x.ndim != 1:
        raise ValueError("x and y must be 1-d arrays of equal length")
    n = x.size
    if n < 3:
        raise ValueError(f"need at least 3 points for the Wald test, got {n}")
    xd = x - x.mean()
    yd = y - y.mean()
    sxx = float(np.dot(xd, xd))
    syy = float(np.dot(yd, yd))
    if sxx <= 0.0 or syy <= 0.0:
        return 0.0, 0.0, 1.0, True
    r = float(np.dot(xd, yd) / np.sqrt(sxx * syy))
    r = max(-1.0, min(1.0, r))
    df = n - 2
    if 1.0 - r * r <= 0.0:
        return r, np.inf if r > 0 else -np.inf, 0.0, False
    t = r * np.sqrt(df / (1.0 - r * r))
    p = 2.0 * float(t_dist.sf(abs(t), df))
    return r, float(t), p, False


def ofat_from_responses(factor: str, sweep_values, responses) -> OfatResult:
    r, t, p, degenerate = pearson_wald(sweep_values, responses)
    return OfatResult(factor=str(factor),
                      sweep_values=tuple(float(v) for v in sweep_values),
                      responses=tuple(float(v) for v in responses),
                      r=r, t=t, p_value=p, degenerate=degenerate)


def ofat_sweep(factor: str, sweep_values, evaluate: Callable[[float], float]) -> OfatResult:
    """Evaluate a model along one factor sweep and test the correlation."""
    values = [float(v) for v in sweep_values]
    responses = [float(evaluate(v)) for v in values]
    return ofat_from_responses(factor, values, responses)
