"""Campaign drivers: heterogeneity sweeps, OFAT scans, variance decomposition.

Every campaign derives per-run seeds from a single master seed and fixed
integer coordinates (kind, grid index, mean index, replicate index), so
re-running a campaign reproduces each simulation bit-for-bit regardless of
execution order or worker count. Campaign kinds:

  het-sweep    sweep a shared heterogeneity level sigma over a grid, for a few
               fixed fleet-mean vectors; each grid point runs one constant-
               inflow simulation (lane-change and acceleration metrics) and one
               inflow-ramp simulation (throughput) under the same seed, merged
               into one row.
  ofat         per-factor sigma sweeps (all other factors homogeneous) with a
               Pearson/Wald significance readout per output metric; a filtered
               summary keeps entries with p < 0.05 alongside the full table.
  sobol-het /  Saltelli designs over per-factor heterogeneity levels or over
  sobol-mean   fleet means at fixed heterogeneity, with first/total
               (optionally second) order indices per metric.
  throughput   repeated inflow-ramp runs of one fleet, keeping the per-window
               density-flow samples (fundamental-diagram data).

Sobol campaigns reuse a common simulation seed across all design rows of a
replicate, so row-to-row output differences are driven by the factors alone;
the other campaigns use independent seeds per grid point.

A run that raises is recorded in the result's ``failures`` list (with its
campaign coordinates) and the campaign continues; a collision is not a
failure — it yields a truncated record flagged by the ``crashed`` row column,
and series aggregates exclude crashed rows.
"""

from __future__ import annotations

import csv
import json
import math
import multiprocessing
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence, Union

import numpy as np

from .engine import MetricsRecord, SimulationConfig, run_simulation
from .network import CloverleafGeometry, RoadNetwork, build_cloverleaf
from .params import (FleetSpec, ParameterBounds, SAMPLED_NAMES, THETA_INDEX,
                     THETA_NAMES, DEFAULT_B_SAFE, default_bounds)
from .sampling import mean_vector_box, sample_mean_vector, stream
from .sensitivity import (OfatResult, SensitivityResult, ofat_from_responses,
                          saltelli_design, sobol_indices)

# campaign kind codes entering seed derivation
KIND_SINGLE = 0
KIND_HET = 1
KIND_OFAT = 2
KIND_SOBOL = 3
_KIND_HET_MEANS = 4
KIND_THROUGHPUT = 5

# metrics extracted from MetricsRecord as campaign responses
RESPONSE_METRICS = ("lcps", "mean_abs_acc", "max_throughput_vph")


def derive_run_seed(master_seed: int, kind: int, *indices: int) -> int:
    """Deterministic child seed for one run of a campaign."""
    ss = np.random.SeedSequence((int(master_seed), int(kind)) + tuple(int(i) for i in indices))
    return int(ss.generate_state(1)[0])


@dataclass(frozen=True)
class Scenario:
    """Network geometry plus engine knobs shared by all runs of a campaign."""

    geometry: CloverleafGeometry = field(default_factory=CloverleafGeometry)
    dt: float = 0.05
    duration_s: float = 120.0
    ramp_duration_s: float = 1200.0
    inflow_vph: float = 4400.0
    ramp_from_vph: float = 2000.0
    ramp_to_vph: float = 12000.0
    turn_fractions: tuple = (0.5, 0.25, 0.25)
    mandatory_zone_m: float = 500.0
    lane_change_period_s: float = 1.0
    lane_change_cooldown_s: float = 2.0
    flow_window_s: float = 10.0
    merge_give_up_s: float = 45.0
    lcps_per_vehicle: bool = False
    b_safe: float = DEFAULT_B_SAFE

    def network(self) -> RoadNetwork:
        return build_cloverleaf(self.geometry)

    def sim_config(self, fleet: FleetSpec, seed: int, profile: str) -> SimulationConfig:
        # ramped-demand runs need to dwell past the capacity crossing, so they
        # carry their own (longer) horizon than constant-inflow runs
        duration = self.ramp_duration_s if profile == "ramp" else self.duration_s
        return SimulationConfig(
            fleet=fleet, seed=seed, dt=self.dt, duration_s=duration,
            demand_profile=profile, inflow_vph=self.inflow_vph,
            ramp_from_vph=self.ramp_from_vph, ramp_to_vph=self.ramp_to_vph,
            turn_fractions=self.turn_fractions,
            mandatory_zone_m=self.mandatory_zone_m,
            lane_change_period_s=self.lane_change_period_s,
            lane_change_cooldown_s=self.lane_change_cooldown_s,
            flow_window_s=self.flow_window_s,
            merge_give_up_s=self.merge_give_up_s,
            lcps_per_vehicle=self.lcps_per_vehicle)


# ---------------------------------------------------------------------------
# Parallel execution (order-preserving, deterministic)
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class RunFailure:
    """Marker returned in place of a MetricsRecord when a run raised."""

    error: str


def _execute(network: RoadNetwork, config: SimulationConfig) -> Union[MetricsRecord, RunFailure]:
    try:
        return run_simulation(network, config)
    except Exception as err:  # campaign continues; failure is listed
        return RunFailure(f"{type(err).__name__}: {err}")


_WORKER_NETWORK: Optional[RoadNetwork] = None


def _init_worker(geometry: CloverleafGeometry):
    global _WORKER_NETWORK
    _WORKER_NETWORK = build_cloverleaf(geometry)


def _run_task(config: SimulationConfig) -> Union[MetricsRecord, RunFailure]:
    return _execute(_WORKER_NETWORK, config)


def run_configs(configs: Sequence[SimulationConfig], geometry: CloverleafGeometry,
                jobs: int = 1) -> list:
    """Run simulations in submission order; results line up with configs.

    Each element of the returned list is a MetricsRecord, or a RunFailure if
    that run raised.
    """
    if jobs <= 1 or len(configs) <= 1:
        net = build_cloverleaf(geometry)
        return [_execute(net, cfg) for cfg in configs]
    ctx = multiprocessing.get_context("fork")
    chunk = max(1, len(configs) // (4 * jobs))
    with ctx.Pool(jobs, initializer=_init_worker, initargs=(geometry,)) as pool:
        return pool.map(_run_task, configs, chunksize=chunk)


# ---------------------------------------------------------------------------
# Output plumbing
# ---------------------------------------------------------------------------

def prepare_output_dir(path) -> Path:
    """Create (if needed) and probe the output directory before any run starts."""
    p = Path(path)
    if p.exists() and not p.is_dir():
        raise NotADirectoryError(f"output path {p} exists and is not a directory")
    try:
        p.mkdir(parents=True, exist_ok=True)
        probe = p / ".write-probe"
        with open(probe, "w"):
            pass
        probe.unlink()
    except OSError as err:
        raise PermissionError(f"output directory {p} is not writable: {err}") from None
    return p


def write_rows_csv(path, rows: Sequence[dict], columns: Optional[Sequence[str]] = None):
    """Write dict rows with a stable column order (first-seen key order)."""
    if columns is None:
        columns = []
        seen = set()
        for row in rows:
            for key in row:
                if key not in seen:
                    seen.add(key)
                    columns.append(key)
    with open(path, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=list(columns))
        writer.writeheader()
        writer.writerows(rows)


SERIES_COLUMNS = ("x", "mean", "std", "n")


def aggregate_series(rows: Sequence[dict], x_key: str, metric: str) -> list[dict]:
    """Per-x mean / sample-std / count over non-crashed rows, sorted by x.

    Columns follow the series-file contract (x, mean, std, n); any run row
    flagged crashed is left out so truncated metrics cannot skew envelopes.
    """
    groups: dict[float, list[float]] = {}
    for row in rows:
        if row.get("crashed"):
            continue
        groups.setdefault(float(row[x_key]), []).append(float(row[metric]))
    out = []
    for x in sorted(groups):
        vals = np.asarray(groups[x], dtype=float)
        std = float(np.std(vals, ddof=1)) if vals.size > 1 else 0.0
        out.append({"x": x, "mean": float(np.mean(vals)), "std": std,
                    "n": int(vals.size)})
    return out


def write_series_csv(path, rows: Sequence[dict], x_key: str, metric: str) -> list[dict]:
    series = aggregate_series(rows, x_key, metric)
    write_rows_csv(path, series, columns=SERIES_COLUMNS)
    return series


def _clean(value):
    """NaN -> None so rows survive JSON round-trips by equality (CSV: blank)."""
    if isinstance(value, float) and math.isnan(value):
        return None
    return value


def _mean_columns(theta_mean) -> dict:
    return {f"mean_{name}": float(theta_mean[i]) for i, name in enumerate(THETA_NAMES)}


def _metric_columns(record: MetricsRecord, prefix: str = "") -> dict:
    return {f"{prefix}{k}": _clean(v) for k, v in record.to_dict().items()}


def _json_dump(path, payload):
    with open(path, "w") as fh:
        json.dump(payload, fh, indent=2)
        fh.write("\n")


# ---------------------------------------------------------------------------
# Heterogeneity sweep
# ---------------------------------------------------------------------------

# default grid: evenly spaced inside the open interval (0, 0.4]
DEFAULT_SIGMA_GRID = tuple(float(s) for s in np.round(np.linspace(0.04, 0.4, 10), 6))


def _check_sigma_grid(sigmas: Sequence[float]) -> tuple:
    sigmas = tuple(float(s) for s in sigmas)
    if not sigmas:
        raise ValueError("sigma grid must not be empty")
    bad = [s for s in sigmas if not 0.0 < s < 1.0]
    if bad:
        raise ValueError(f"sigma grid values must lie in the open interval (0, 1): {bad}")
    return sigmas


@dataclass
class HetSweepResult:
    sigmas: tuple
    means: tuple          # tuple of 13-tuples, one per fleet-mean vector
    rows: list
    failures: list

    def mean_vector(self, mean_id: int) -> np.ndarray:
        return np.asarray(self.means[mean_id], dtype=float)

    def series(self, metric: str) -> list[dict]:
        """(x, mean, std, n) rows of `metric` against sigma, crashed runs excluded."""
        return aggregate_series(self.rows, "sigma", metric)

    def responses(self, metric: str, mean_id: Optional[int] = None) -> tuple[np.ndarray, np.ndarray]:
        """(sigma, value) pairs for one metric, optionally for one mean vector."""
        xs, ys = [], []
        for row in self.rows:
            if mean_id is not None and row["mean_id"] != mean_id:
                continue
            xs.append(row["sigma"])
            ys.append(row[metric])
        return np.asarray(xs), np.asarray(ys)

    def to_dict(self) -> dict:
        return {"kind": "het-sweep", "sigmas": list(self.sigmas),
                "means": [list(m) for m in self.means],
                "rows": self.rows, "failures": self.failures}

    @classmethod
    def from_dict(cls, d: dict) -> "HetSweepResult":
        return cls(sigmas=tuple(float(s) for s in d["sigmas"]),
                   means=tuple(tuple(float(v) for v in m) for m in d["means"]),
                   rows=list(d["rows"]), failures=list(d["failures"]))

    def write(self, out_dir, prefix: str = "het_sweep") -> list[Path]:
        out = prepare_output_dir(out_dir)
        paths = [out / f"{prefix}_rows.csv"]
        write_rows_csv(paths[0], self.rows)
        for metric in RESPONSE_METRICS:
            p = out / f"{prefix}_series_{metric}.csv"
            write_series_csv(p, self.rows, "sigma", metric)
            paths.append(p)
        summary = out / f"{prefix}_result.json"
        _json_dump(summary, self.to_dict())
        paths.append(summary)
        return paths


def run_het_sweep(scenario: Scenario = Scenario(),
                  bounds: Optional[ParameterBounds] = None,
                  sigmas: Sequence[float] = DEFAULT_SIGMA_GRID,
                  n_means: int = 3, n_reps: int = 2, master_seed: int = 0,
                  jobs: int = 1) -> HetSweepResult:
    """Shared-sigma sweep: all sampled components perturbed together.

    Fleet-mean vectors are drawn once per campaign, inside the admissible box
    at the largest sigma of the grid, and reused at every grid point so each
    mean traces a full sigma series. The constant-inflow and ramp runs of a
    grid point share one seed: the pair differs only in the demand profile.
    """
    bounds = bounds if bounds is not None else default_bounds()
    sigmas = _check_sigma_grid(sigmas)
    if n_means < 1 or n_reps < 1:
        raise ValueError("n_means and n_reps must be at least 1")
    mean_rng = stream(master_seed, _KIND_HET_MEANS)
    sigma_max = max(sigmas)
    means = tuple(tuple(float(v) for v in sample_mean_vector(bounds, sigma_max, mean_rng))
                  for _ in range(n_means))

    coords = [(si, mi, rep)
              for si in range(len(sigmas))
              for mi in range(n_means)
              for rep in range(n_reps)]
    configs = []
    for si, mi, rep in coords:
        fleet = FleetSpec(np.asarray(means[mi]), sigmas[si], bounds, b_safe=scenario.b_safe)
        seed = derive_run_seed(master_seed, KIND_HET, si, mi, rep)
        configs.append(scenario.sim_config(fleet, seed, "constant"))
        configs.append(scenario.sim_config(fleet, seed, "ramp"))
    records = run_configs(configs, scenario.geometry, jobs)

    rows: list[dict] = []
    failures: list[dict] = []
    for k, (si, mi, rep) in enumerate(coords):
        const_rec, ramp_rec = records[2 * k], records[2 * k + 1]
        key = {"sigma": sigmas[si], "mean_id": mi, "seed": configs[2 * k].seed}
        failed = False
        for profile, rec in (("constant", const_rec), ("ramp", ramp_rec)):
            if isinstance(rec, RunFailure):
                failures.append({**key, "rep": rep, "profile": profile, "error": rec.error})
                failed = True
        if failed:
            continue
        row = dict(key)
        row["lcps"] = _clean(const_rec.lcps)
        row["mean_abs_acc"] = _clean(const_rec.mean_abs_acc)
        row["max_throughput_vph"] = _clean(ramp_rec.max_throughput_vph)
        row["crashed"] = int(const_rec.crashed or ramp_rec.crashed)
        row["rep"] = rep
        row.update(_mean_columns(means[mi]))
        row.update(_metric_columns(const_rec, "const_"))
        row.update(_metric_columns(ramp_rec, "ramp_"))
        rows.append(row)
    return HetSweepResult(sigmas=sigmas, means=means, rows=rows, failures=failures)


# ---------------------------------------------------------------------------
# One-factor-at-a-time
# ---------------------------------------------------------------------------

@dataclass
class OfatCampaignResult:
    factors: tuple
    sweep: tuple
    rows: list
    failures: list
    results: dict  # factor -> metric -> OfatResult

    def result(self, factor: str, metric: str) -> OfatResult:
        return self.results[factor][metric]

    def table(self, significant_only: bool = False, alpha: float = 0.05) -> list[dict]:
        """One row per (factor, metric): correlation, test statistic, p-value."""
        out = []
        for factor in self.factors:
            for metric, res in self.results[factor].items():
                if significant_only and not res.significant(alpha):
                    continue
                out.append({"factor": factor, "metric": metric, "n": res.n,
                            "r": res.r, "t": res.t, "p_value": res.p_value,
                            "degenerate": int(res.degenerate)})
        return out

    def to_dict(self) -> dict:
        return {"kind": "ofat", "factors": list(self.factors),
                "sweep": list(self.sweep), "rows": self.rows,
                "failures": self.failures,
                "results": {f: {m: r.to_dict() for m, r in by_metric.items()}
                            for f, by_metric in self.results.items()}}

    @classmethod
    def from_dict(cls, d: dict) -> "OfatCampaignResult":
        results = {f: {m: OfatResult.from_dict(r) for m, r in by_metric.items()}
                   for f, by_metric in d["results"].items()}
        return cls(factors=tuple(d["factors"]),
                   sweep=tuple(float(x) for x in d["sweep"]),
                   rows=list(d["rows"]), failures=list(d["failures"]),
                   results=results)

    def write(self, out_dir, prefix: str = "ofat") -> list[Path]:
        out = prepare_output_dir(out_dir)
        rows_path = out / f"{prefix}_rows.csv"
        write_rows_csv(rows_path, self.rows)
        table_cols = ("factor", "metric", "n", "r", "t", "p_value", "degenerate")
        full_path = out / f"{prefix}_table.csv"
        write_rows_csv(full_path, self.table(), columns=table_cols)
        sig_path = out / f"{prefix}_significant.csv"
        write_rows_csv(sig_path, self.table(significant_only=True), columns=table_cols)
        json_path = out / f"{prefix}_result.json"
        _json_dump(json_path, self.to_dict())
        return [rows_path, full_path, sig_path, json_path]


def run_ofat_campaign(scenario: Scenario = Scenario(),
                      bounds: Optional[ParameterBounds] = None,
                      factors: Optional[Sequence[str]] = None,
                      sigma_max: float = 0.4, n_points: int = 50,
                      n_reps: int = 1, master_seed: int = 0,
                      metrics: Sequence[str] = RESPONSE_METRICS,
                      jobs: int = 1) -> OfatCampaignResult:
    """Per-factor heterogeneity scan around the mid-range homogeneous fleet.

    The sweep grid is evenly spaced inside the open interval (0, sigma_max]:
    sigma = 0 carries no per-factor information, so the smallest level sits
    one grid step above it.
    """
    bounds = bounds if bounds is not None else default_bounds()
    factors = tuple(factors) if factors is not None else SAMPLED_NAMES
    unknown = [f for f in factors if f not in THETA_INDEX]
    if unknown:
        raise ValueError(f"unknown factors: {', '.join(unknown)}")
    if n_points < 3:
        raise ValueError("n_points must be at least 3 for a correlation readout")
    if not 0.0 < sigma_max < 1.0:
        raise ValueError("sigma_max must lie in the open interval (0, 1)")
    sweep = tuple(float(s) for s in np.linspace(sigma_max / n_points, sigma_max, n_points))
    theta_mid = bounds.midpoint

    coords = [(fi, pi, rep)
              for fi in range(len(factors))
              for pi in range(n_points)
              for rep in range(n_reps)]
    configs = []
    for fi, pi, rep in coords:
        sigma_vec = np.zeros(len(THETA_NAMES))
        sigma_vec[THETA_INDEX[factors[fi]]] = sweep[pi]
        fleet = FleetSpec(theta_mid, sigma_vec, bounds, b_safe=scenario.b_safe)
        seed = derive_run_seed(master_seed, KIND_OFAT, fi, pi, rep)
        configs.append(scenario.sim_config(fleet, seed, "ramp"))
    records = run_configs(configs, scenario.geometry, jobs)

    rows: list[dict] = []
    failures: list[dict] = []
    for k, (fi, pi, rep) in enumerate(coords):
        rec = records[k]
        if isinstance(rec, RunFailure):
            failures.append({"factor": factors[fi], "sigma": sweep[pi], "rep": rep,
                             "seed": configs[k].seed, "error": rec.error})
            continue
        row = {"factor": factors[fi], "sigma": sweep[pi], "mean_id": 0,
               "seed": configs[k].seed,
               "lcps": _clean(rec.lcps), "mean_abs_acc": _clean(rec.mean_abs_acc),
               "max_throughput_vph": _clean(rec.max_throughput_vph),
               "crashed": int(rec.crashed), "point_index": pi, "rep": rep}
        row.update(_metric_columns(rec))
        rows.append(row)

    by_coord = {(r["factor"], r["point_index"], r["rep"]): r for r in rows}
    results: dict = {}
    for fi, factor in enumerate(factors):
        by_metric = {}
        for metric in metrics:
            xs, ys = [], []
            for pi in range(n_points):
                vals = [by_coord[(factor, pi, rep)][metric]
                        for rep in range(n_reps)
                        if (factor, pi, rep) in by_coord]
                if vals:
                    xs.append(sweep[pi])
                    ys.append(float(np.mean(vals)))
            by_metric[metric] = ofat_from_responses(factor, xs, ys)
        results[factor] = by_metric
    return OfatCampaignResult(factors=factors, sweep=sweep, rows=rows,
                              failures=failures, results=results)


# ---------------------------------------------------------------------------
# Variance-based sensitivity campaign
# ---------------------------------------------------------------------------

@dataclass
class SobolCampaignResult:
    mode: str
    factor_names: tuple
    n: int
    rows: list
    failures: list
    results: dict  # metric -> SensitivityResult

    def result(self, metric: str) -> SensitivityResult:
        return self.results[metric]

    def indices_table(self, metric: str) -> list[dict]:
        """(factor, order, estimate, ci_low, ci_high) rows for one metric."""
        res = self.results[metric]
        out = []
        for i, name in enumerate(res.factor_names):
            lo, hi = res.first_order_ci[i]
            out.append({"factor": name, "order": "first",
                        "estimate": res.first_order[i], "ci_low": lo, "ci_high": hi})
        for i, name in enumerate(res.factor_names):
            lo, hi = res.total_order_ci[i]
            out.append({"factor": name, "order": "total",
                        "estimate": res.total_order[i], "ci_low": lo, "ci_high": hi})
        if res.second_order is not None:
            for name_i, name_j, est, lo, hi in res.second_order:
                out.append({"factor": f"{name_i}*{name_j}", "order": "second",
                            "estimate": est, "ci_low": lo, "ci_high": hi})
        return out

    def to_dict(self) -> dict:
        return {"kind": f"sobol-{self.mode}", "mode": self.mode,
                "factor_names": list(self.factor_names), "n": self.n,
                "rows": self.rows, "failures": self.failures,
                "results": {m: r.to_dict() for m, r in self.results.items()}}

    @classmethod
    def from_dict(cls, d: dict) -> "SobolCampaignResult":
        return cls(mode=str(d["mode"]), factor_names=tuple(d["factor_names"]),
                   n=int(d["n"]), rows=list(d["rows"]), failures=list(d["failures"]),
                   results={m: SensitivityResult.from_dict(r)
                            for m, r in d["results"].items()})

    def write(self, out_dir, prefix: str = "sobol") -> list[Path]:
        out = prepare_output_dir(out_dir)
        paths = [out / f"{prefix}_rows.csv"]
        write_rows_csv(paths[0], self.rows)
        idx_cols = ("factor", "order", "estimate", "ci_low", "ci_high")
        for metric in self.results:
            p = out / f"{prefix}_indices_{metric}.csv"
            write_rows_csv(p, self.indices_table(metric), columns=idx_cols)
            paths.append(p)
        json_path = out / f"{prefix}_result.json"
        _json_dump(json_path, self.to_dict())
        paths.append(json_path)
        return paths


def _design_block(row: int, n: int, k: int, names) -> str:
    if row < n:
        return "A"
    if row < 2 * n:
        return "B"
    block = (row - 2 * n) // n
    if block < k:
        return f"AB_{names[block]}"
    return f"BA_{names[block - k]}"


def run_sobol_campaign(scenario: Scenario = Scenario(),
                       bounds: Optional[ParameterBounds] = None,
                       mode: str = "het", n: int = 128,
                       sigma_max: float = 0.4, mean_sigma: float = 0.2,
                       pin: Sequence[str] = (), factors: Optional[Sequence[str]] = None,
                       second_order: bool = False, n_reps: int = 1,
                       master_seed: int = 0,
                       metrics: Sequence[str] = RESPONSE_METRICS,
                       n_bootstrap: int = 1000,
                       jobs: int = 1) -> SobolCampaignResult:
    """Saltelli campaign over heterogeneity levels or fleet means.

    mode="het":  factor i is the per-component heterogeneity sigma_i in
                 [0, sigma_max]; the fleet mean is pinned at mid-range.
    mode="mean": factor i is the fleet mean of component i inside the
                 admissible box at shared heterogeneity mean_sigma.
    Factors named in `pin` are excluded from the design and held at their
    baseline (sigma 0 / mid-range mean).
    """
    bounds = bounds if bounds is not None else default_bounds()
    base = tuple(factors) if factors is not None else SAMPLED_NAMES
    unknown = [f for f in tuple(base) + tuple(pin) if f not in THETA_INDEX]
    if unknown:
        raise ValueError(f"unknown factors: {', '.join(unknown)}")
    names = tuple(f for f in base if f not in set(pin))
    if not names:
        raise ValueError("no free factors left after pinning")
    k = len(names)
    idx = [THETA_INDEX[f] for f in names]
    theta_mid = bounds.midpoint

    if mode == "het":
        lower = np.zeros(k)
        upper = np.full(k, float(sigma_max))
    elif mode == "mean":
        box_lo, box_hi = mean_vector_box(bounds, mean_sigma)
        lower = box_lo[idx]
        upper = box_hi[idx]
    else:
        raise ValueError(f"unknown mode {mode!r} (expected 'het' or 'mean')")

    design = saltelli_design(n, lower, upper, factor_names=names,
                             second_order=second_order)
    X = design.matrix()

    def fleet_for(row: np.ndarray) -> FleetSpec:
        if mode == "het":
            sigma_vec = np.zeros(len(THETA_NAMES))
            sigma_vec[idx] = row
            return FleetSpec(theta_mid, sigma_vec, bounds, b_safe=scenario.b_safe)
        theta = theta_mid.copy()
        theta[idx] = row
        return FleetSpec(theta, float(mean_sigma), bounds, b_safe=scenario.b_safe)

    rows: list[dict] = []
    failures: list[dict] = []
    outputs = {metric: np.zeros(X.shape[0]) for metric in metrics}
    counts = np.zeros(X.shape[0], dtype=int)
    for rep in range(n_reps):
        # one shared seed per replicate: row differences are factor-driven
        seed = derive_run_seed(master_seed, KIND_SOBOL, rep)
        configs = [scenario.sim_config(fleet_for(X[r]), seed, "ramp")
                   for r in range(X.shape[0])]
        records = run_configs(configs, scenario.geometry, jobs)
        for r, rec in enumerate(records):
            block = _design_block(r, n, k, names)
            if isinstance(rec, RunFailure):
                failures.append({"row": r, "block": block, "rep": rep,
                                 "seed": seed, "error": rec.error})
                continue
            row = {"row": r, "block": block, "rep": rep, "seed": seed}
            prefix = "sigma_" if mode == "het" else "mean_"
            row.update({f"{prefix}{name}": float(X[r, j]) for j, name in enumerate(names)})
            row.update(_metric_columns(rec))
            rows.append(row)
            counts[r] += 1
            for metric in metrics:
                outputs[metric][r] += getattr(rec, metric)
    if np.any(counts == 0):
        missing = int(np.sum(counts == 0))
        raise RuntimeError(
            f"sobol campaign cannot estimate indices: {missing} design rows "
            f"failed in every replicate (see failures)")
    for metric in metrics:
        outputs[metric] /= counts

    results = {metric: sobol_indices(design, outputs[metric], n_bootstrap=n_bootstrap)
               for metric in metrics}
    return SobolCampaignResult(mode=mode, factor_names=names, n=n, rows=rows,
                               failures=failures, results=results)


# ---------------------------------------------------------------------------
# Throughput-ramp runs (fundamental-diagram data)
# ---------------------------------------------------------------------------

@dataclass
class ThroughputResult:
    sigma: float
    theta_mean: tuple
    rows: list
    fd_rows: list   # per (rep, window): density and flow samples
    failures: list

    def to_dict(self) -> dict:
        return {"kind": "throughput", "sigma": self.sigma,
                "theta_mean": list(self.theta_mean), "rows": self.rows,
                "fd_rows": self.fd_rows, "failures": self.failures}

    @classmethod
    def from_dict(cls, d: dict) -> "ThroughputResult":
        return cls(sigma=float(d["sigma"]),
                   theta_mean=tuple(float(v) for v in d["theta_mean"]),
                   rows=list(d["rows"]), fd_rows=list(d["fd_rows"]),
                   failures=list(d["failures"]))

    def write(self, out_dir, prefix: str = "throughput") -> list[Path]:
        out = prepare_output_dir(out_dir)
        rows_path = out / f"{prefix}_rows.csv"
        write_rows_csv(rows_path, self.rows)
        fd_path = out / f"{prefix}_fd.csv"
        write_rows_csv(fd_path, self.fd_rows,
                       columns=("rep", "window", "time_s", "density_veh_km_lane", "flow_vph"))
        json_path = out / f"{prefix}_result.json"
        _json_dump(json_path, self.to_dict())
        return [rows_path, fd_path, json_path]


def run_throughput(scenario: Scenario = Scenario(),
                   bounds: Optional[ParameterBounds] = None,
                   sigma: float = 0.2, theta_mean=None,
                   n_reps: int = 1, master_seed: int = 0,
                   jobs: int = 1) -> ThroughputResult:
    """Repeated inflow-ramp runs of one fleet, keeping per-window flow/density."""
    bounds = bounds if bounds is not None else default_bounds()
    if n_reps < 1:
        raise ValueError("n_reps must be at least 1")
    mean = (np.asarray(theta_mean, dtype=float) if theta_mean is not None
            else bounds.midpoint)
    fleet = FleetSpec(mean, sigma, bounds, b_safe=scenario.b_safe)
    configs = [scenario.sim_config(fleet, derive_run_seed(master_seed, KIND_THROUGHPUT, rep),
                                   "ramp")
               for rep in range(n_reps)]
    records = run_configs(configs, scenario.geometry, jobs)

    rows: list[dict] = []
    fd_rows: list[dict] = []
    failures: list[dict] = []
    for rep, rec in enumerate(records):
        if isinstance(rec, RunFailure):
            failures.append({"rep": rep, "seed": configs[rep].seed, "error": rec.error})
            continue
        row = {"sigma": float(sigma), "mean_id": 0, "seed": configs[rep].seed,
               "lcps": _clean(rec.lcps), "mean_abs_acc": _clean(rec.mean_abs_acc),
               "max_throughput_vph": _clean(rec.max_throughput_vph),
               "crashed": int(rec.crashed), "rep": rep}
        row.update(_metric_columns(rec))
        rows.append(row)
        window = scenario.flow_window_s
        for w, (flow, dens) in enumerate(zip(rec.window_flows_vph, rec.window_densities)):
            fd_rows.append({"rep": rep, "window": w, "time_s": (w + 0.5) * window,
                            "density_veh_km_lane": _clean(dens), "flow_vph": _clean(flow)})
    return ThroughputResult(sigma=float(sigma),
                            theta_mean=tuple(float(v) for v in mean),
                            rows=rows, fd_rows=fd_rows, failures=failures)


# ---------------------------------------------------------------------------
# Single run (CLI `simulate`)
# ---------------------------------------------------------------------------

def run_single(scenario: Scenario = Scenario(),
               bounds: Optional[ParameterBounds] = None,
               sigma: float = 0.2, theta_mean=None,
               profile: str = "constant", seed: int = 0) -> MetricsRecord:
    """One simulation with a mid-range (or given) fleet mean."""
    bounds = bounds if bounds is not None else default_bounds()
    mean = np.asarray(theta_mean, dtype=float) if theta_mean is not None else bounds.midpoint
    fleet = FleetSpec(mean, sigma, bounds, b_safe=scenario.b_safe)
    config = scenario.sim_config(fleet, derive_run_seed(seed, KIND_SINGLE), profile)
    network = scenario.network()
    return run_simulation(network, config)
