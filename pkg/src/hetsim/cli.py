"""Command line entry points.

    hetsim simulate        one run, metrics as JSON
    hetsim het-sweep       shared-heterogeneity sweep campaign
    hetsim ofat            per-factor heterogeneity scans
    hetsim sobol           Saltelli variance-decomposition campaign
    hetsim validate-config check a YAML config and exit

Campaign commands validate and probe the output directory before any
simulation starts, so misconfigured paths fail in seconds, not hours.
"""

from __future__ import annotations

import argparse
import json
import sys

from .config import Config, ConfigError, PRESET_NAMES, load_config
from .experiments import (prepare_output_dir, run_het_sweep, run_ofat_campaign,
                          run_single, run_sobol_campaign)


def _add_common(parser: argparse.ArgumentParser, out_required: bool):
    parser.add_argument("--config", "-c", metavar="FILE", help="YAML configuration file")
    parser.add_argument("--scale", "--preset", dest="scale", choices=PRESET_NAMES,
                        help="built-in baseline settings (desk or paper), overlaid by --config")
    parser.add_argument("--out", "-o", metavar="DIR", required=out_required,
                        help="output directory" + ("" if out_required else " (optional)"))
    parser.add_argument("--seed", type=int, default=None,
                        help="override the (master) seed")
    parser.add_argument("--jobs", "-j", type=int, default=1,
                        help="worker processes (default 1)")


def _load(args) -> Config:
    return load_config(path=args.config, preset=args.scale)


def _campaign_kwargs(cfg: Config, kind: str, args) -> dict:
    """Campaign arguments from the config (when kinds match) plus overrides."""
    kwargs = {}
    if cfg.campaign.get("kind") == kind:
        kwargs = {k: v for k, v in cfg.campaign.items() if k != "kind"}
    elif cfg.campaign.get("kind") not in (None, "single"):
        print(f"note: config campaign kind {cfg.campaign.get('kind')!r} does not match "
              f"the {kind!r} command; using command-line/default campaign settings",
              file=sys.stderr)
    if args.seed is not None:
        kwargs["master_seed"] = args.seed
    return kwargs


def cmd_simulate(args) -> int:
    cfg = _load(args)
    out = prepare_output_dir(args.out) if args.out else None
    sigma = args.sigma if args.sigma is not None else cfg.fleet_sigma
    campaign = cfg.campaign if cfg.campaign.get("kind") == "single" else {}
    profile = args.profile or campaign.get("profile", "constant")
    seed = args.seed if args.seed is not None else campaign.get("seed", 0)
    record = run_single(cfg.scenario, cfg.bounds, sigma=sigma,
                        theta_mean=cfg.fleet_mean, profile=profile, seed=seed)
    payload = json.dumps(record.to_dict(), indent=2)
    print(payload)
    if out is not None:
        path = out / "metrics.json"
        path.write_text(payload + "\n")
        print(f"wrote {path}", file=sys.stderr)
    return 0


def cmd_het_sweep(args) -> int:
    cfg = _load(args)
    out = prepare_output_dir(args.out)
    kwargs = _campaign_kwargs(cfg, "het-sweep", args)
    if args.sigmas:
        kwargs["sigmas"] = tuple(float(s) for s in args.sigmas.split(","))
    if args.n_means is not None:
        kwargs["n_means"] = args.n_means
    if args.n_reps is not None:
        kwargs["n_reps"] = args.n_reps
    result = run_het_sweep(cfg.scenario, cfg.bounds, jobs=args.jobs, **kwargs)
    paths = result.write(out)
    print(f"het-sweep: {len(result.rows)} rows "
          f"({len(result.sigmas)} sigma levels x {len(result.means)} means)")
    for p in paths:
        print(f"wrote {p}")
    return 0


def cmd_ofat(args) -> int:
    cfg = _load(args)
    out = prepare_output_dir(args.out)
    kwargs = _campaign_kwargs(cfg, "ofat", args)
    if args.factors:
        kwargs["factors"] = tuple(args.factors.split(","))
    if args.n_points is not None:
        kwargs["n_points"] = args.n_points
    if args.sigma_max is not None:
        kwargs["sigma_max"] = args.sigma_max
    if args.n_reps is not None:
        kwargs["n_reps"] = args.n_reps
    result = run_ofat_campaign(cfg.scenario, cfg.bounds, jobs=args.jobs, **kwargs)
    paths = result.write(out)
    print(f"ofat: {len(result.factors)} factors x {len(result.sweep)} points")
    for factor in result.factors:
        res = result.result(factor, "lcps")
        mark = "*" if res.significant() else " "
        print(f"  {factor:<8} lcps r={res.r:+.3f} p={res.p_value:.4f} {mark}")
    for p in paths:
        print(f"wrote {p}")
    return 0


def cmd_sobol(args) -> int:
    cfg = _load(args)
    out = prepare_output_dir(args.out)
    kwargs = _campaign_kwargs(cfg, "sobol", args)
    if args.mode is not None:
        kwargs["mode"] = args.mode
    if args.n is not None:
        kwargs["n"] = args.n
    if args.pin:
        kwargs["pin"] = tuple(args.pin.split(","))
    if args.second_order:
        kwargs["second_order"] = True
    if args.n_reps is not None:
        kwargs["n_reps"] = args.n_reps
    result = run_sobol_campaign(cfg.scenario, cfg.bounds, jobs=args.jobs, **kwargs)
    paths = result.write(out)
    print(f"sobol ({result.mode}): {len(result.factor_names)} factors, "
          f"{len(result.rows)} evaluations")
    for metric, res in result.results.items():
        ranked = sorted(zip(res.factor_names, res.first_order),
                        key=lambda t: -t[1])[:3]
        desc = ", ".join(f"{name} S1={val:.3f}" for name, val in ranked)
        print(f"  {metric}: {desc}")
    for p in paths:
        print(f"wrote {p}")
    return 0


def cmd_validate_config(args) -> int:
    try:
        cfg = load_config(path=args.config_file)
    except FileNotFoundError as err:
        print(f"error: {err}", file=sys.stderr)
        return 2
    except ConfigError as err:
        print(str(err), file=sys.stderr)
        return 2
    kind = cfg.campaign.get("kind", "single")
    print(f"configuration OK (campaign kind: {kind})")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="hetsim",
        description="heterogeneous-fleet interchange simulation and sensitivity toolkit")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", help="run one simulation and print metrics")
    _add_common(p, out_required=False)
    p.add_argument("--sigma", type=float, default=None, help="fleet heterogeneity level")
    p.add_argument("--profile", choices=("constant", "ramp"), default=None,
                   help="demand profile (default constant)")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("het-sweep", help="shared-heterogeneity sweep campaign")
    _add_common(p, out_required=True)
    p.add_argument("--sigmas", help="comma-separated sigma grid override")
    p.add_argument("--n-means", type=int, default=None)
    p.add_argument("--n-reps", type=int, default=None)
    p.set_defaults(func=cmd_het_sweep)

    p = sub.add_parser("ofat", help="one-factor-at-a-time heterogeneity scans")
    _add_common(p, out_required=True)
    p.add_argument("--factors", help="comma-separated factor names")
    p.add_argument("--n-points", type=int, default=None)
    p.add_argument("--sigma-max", type=float, default=None)
    p.add_argument("--n-reps", type=int, default=None)
    p.set_defaults(func=cmd_ofat)

    p = sub.add_parser("sobol", help="Saltelli variance-decomposition campaign")
    _add_common(p, out_required=True)
    p.add_argument("--mode", choices=("het", "mean"), default=None)
    p.add_argument("--n", type=int, default=None, help="Saltelli base sample size")
    p.add_argument("--pin", help="comma-separated factors to hold at baseline")
    p.add_argument("--second-order", action="store_true")
    p.add_argument("--n-reps", type=int, default=None)
    p.set_defaults(func=cmd_sobol)

    p = sub.add_parser("validate-config", help="validate a YAML config file")
    p.add_argument("config_file", metavar="FILE")
    p.set_defaults(func=cmd_validate_config)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as err:
        print(str(err), file=sys.stderr)
        return 2
    except (FileNotFoundError, NotADirectoryError, PermissionError, ValueError) as err:
        print(f"error: {err}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
