"""Command-line front end.

Subcommands: identify, run, compare, sweep-horizon, report.
Exit codes: 0 success, 2 configuration error, 3 solver failure, 4 infeasible.
"""

from __future__ import annotations

import argparse
import csv
import os
import sys
from dataclasses import replace

import numpy as np

from . import __version__
from .harness import compare, compute_metrics, monte_carlo, simulate
from .optim import InfeasibleError, NonconvergenceError, SizeCapError
from .scenario import ScenarioError, load_scenario, resolve_data_path, scenario_hash
from .windsim import (WindProfile, build_predictor, generate_wind, identify_arma,
                      save_fixture, variance_reduction)

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_SOLVER = 3
EXIT_INFEASIBLE = 4


def _report_header(scenario, path) -> list[str]:
    return [
        f"winddispatch {__version__}",
        f"scenario: {scenario.name} (sha256:{scenario_hash(path)})",
        f"plant: {scenario.plant} (simplified desk-scale plant, not a full "
        "aeroelastic simulation)",
        f"seeds: {','.join(str(s) for s in scenario.seeds)}",
        f"warmup discarded: {scenario.warmup_s:.0f} s",
    ]


def cmd_identify(args) -> int:
    profile = WindProfile(v_bar=args.mean_ms, T_I=args.ti,
                          L_v=args.length_scale_m)
    train = generate_wind(profile, args.duration_s, 1.0, args.seed)
    model = identify_arma(train, max_na=args.max_order, max_nc=args.max_order)
    pred = build_predictor(model)
    reductions = []
    for k in range(args.validation_seeds):
        val = generate_wind(profile, args.duration_s, 1.0, args.seed + 1000 + k)
        reductions.append(variance_reduction(model, val))
    red = float(np.mean(reductions))
    os.makedirs(os.path.dirname(os.path.abspath(args.out)), exist_ok=True)
    save_fixture(pred, args.out, comment=(
        f"identified from synthesized turbulence: mean {profile.v_bar} m/s, "
        f"TI {profile.T_I}, L {profile.L_v} m, seed {args.seed}"))
    print(f"identified ARMA({model.na},{model.nc}); innovation variance "
          f"{model.sigma_w2:.6g} (turbulence variance {profile.sigma2:.6g})")
    print(f"validation variance reduction over {args.validation_seeds} seeds: "
          f"{red:.3f}")
    print(f"fixture written to {args.out}")
    return EXIT_OK


def cmd_run(args) -> int:
    path = resolve_data_path(args.scenario, "scenarios")
    seeds = tuple(int(s) for s in args.seeds.split(",")) if args.seeds else None
    scenario = load_scenario(path, seeds_override=seeds)
    out_dir = args.out or f"out_{scenario.name}"
    os.makedirs(out_dir, exist_ok=True)
    p_rated = scenario.model.units[0].params.P_rated
    lines = _report_header(scenario, path)
    lines.append(f"controller: {scenario.controller}")
    lines.append("")
    lines.append(f"{'seed':>6} {'J_tilde':>12} {'J_P':>12} {'J_Ms':>12} {'J_Mt':>12}")
    rows = []
    for seed in scenario.seeds:
        res = simulate(scenario, seed)
        res.to_csv_dir(os.path.join(out_dir, f"seed_{seed}"))
        m = compute_metrics(res.trimmed(scenario.warmup_s, scenario.Ts), p_rated)
        rows.append(m)
        lines.append(f"{seed:>6} {m.J_tilde:>12.6f} {m.J_P:>12.6f} "
                     f"{m.J_Ms:>12.6f} {m.J_Mt:>12.6f}")
    arr = np.array([[m.J_tilde, m.J_P, m.J_Ms, m.J_Mt] for m in rows])
    mean = arr.mean(axis=0)
    lines.append(f"{'mean':>6} {mean[0]:>12.6f} {mean[1]:>12.6f} "
                 f"{mean[2]:>12.6f} {mean[3]:>12.6f}")
    report = "\n".join(lines) + "\n"
    with open(os.path.join(out_dir, "metrics.txt"), "w") as fh:
        fh.write(report)
    print(report, end="")
    return EXIT_OK


def cmd_compare(args) -> int:
    path = resolve_data_path(args.scenario, "scenarios")
    seeds = tuple(int(s) for s in args.seeds.split(",")) if args.seeds else None
    scenario = load_scenario(path, seeds_override=seeds)
    tags = [t.strip() for t in args.controllers.split(",")]
    rows = compare(tags, scenario)
    lines = _report_header(scenario, path)
    lines.append("")
    lines.append(f"{'controller':>12} {'J_tilde':>12} {'J_P':>12} "
                 f"{'J_Ms':>12} {'J_Mt':>12}")
    for row in rows:
        m = row.metrics
        if row.improvement is None:
            lines.append(f"{row.label:>12} {m.J_tilde:>12.6f} {m.J_P:>12.6f} "
                         f"{m.J_Ms:>12.6f} {m.J_Mt:>12.6f}")
        else:
            imp = row.improvement
            lines.append(f"{row.label:>12} {imp['J_tilde']:>+11.2f}% "
                         f"{imp['J_P']:>+11.2f}% {imp['J_Ms']:>+11.2f}% "
                         f"{imp['J_Mt']:>+11.2f}%")
    report = "\n".join(lines) + "\n"
    if args.out:
        os.makedirs(args.out, exist_ok=True)
        with open(os.path.join(args.out, "comparison.txt"), "w") as fh:
            fh.write(report)
    print(report, end="")
    return EXIT_OK


def cmd_sweep_horizon(args) -> int:
    path = resolve_data_path(args.scenario, "scenarios")
    seeds = tuple(int(s) for s in args.seeds.split(",")) if args.seeds else None
    scenario = load_scenario(path, seeds_override=seeds)
    horizons = [int(h) for h in args.horizons.split(",")]
    base = monte_carlo(replace(scenario, controller="scheduler"))
    rows = []
    for n_h in horizons:
        sc = replace(scenario, mpc=replace(scenario.mpc, n_h=n_h))
        mc = monte_carlo(sc)
        imp = {k: 100.0 * (base.mean.as_dict()[k] - v) / base.mean.as_dict()[k]
               if base.mean.as_dict()[k] != 0.0 else 0.0
               for k, v in mc.mean.as_dict().items()}
        rows.append((n_h, mc.mean, imp))
        print(f"N_h={n_h}: J_tilde improvement {imp['J_tilde']:+.2f}% "
              f"(J_Ms {imp['J_Ms']:+.2f}%, J_Mt {imp['J_Mt']:+.2f}%)")
    if args.out:
        os.makedirs(args.out, exist_ok=True)
        with open(os.path.join(args.out, "horizon_sweep.csv"), "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["n_h", "J_tilde", "J_P", "J_Ms", "J_Mt",
                        "impr_J_tilde_pct", "impr_J_P_pct", "impr_J_Ms_pct",
                        "impr_J_Mt_pct"])
            for n_h, m, imp in rows:
                w.writerow([n_h, m.J_tilde, m.J_P, m.J_Ms, m.J_Mt,
                            imp["J_tilde"], imp["J_P"], imp["J_Ms"], imp["J_Mt"]])
    return EXIT_OK


def cmd_report(args) -> int:
    src = args.results
    if not os.path.isdir(src):
        raise ScenarioError(f"results directory not found: {src}")
    seed_dirs = sorted(d for d in os.listdir(src)
                       if d.startswith("seed_") and os.path.isdir(os.path.join(src, d)))
    if not seed_dirs:
        raise ScenarioError(f"no seed_* run directories under {src}")
    out_dir = args.out or os.path.join(src, "figures")
    os.makedirs(out_dir, exist_ok=True)
    made = 0
    for sd in seed_dirs:
        run_dir = os.path.join(src, sd)
        pdem_path = os.path.join(run_dir, "p_dem_w.csv")
        with open(pdem_path, newline="") as fh:
            rows = list(csv.reader(fh))
        header, data = rows[0], np.array([[float(x) for x in r] for r in rows[1:]])
        ts = data[1, 0] - data[0, 0]
        grad = np.zeros_like(data)
        grad[:, 0] = data[:, 0]
        grad[1:, 1:] = np.diff(data[:, 1:], axis=0) / ts
        with open(os.path.join(out_dir, f"{sd}_p_dem_gradient_w_per_s.csv"),
                  "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["t_s"] + [h.replace("p_dem_w", "dp_dem_w_per_s")
                                  for h in header[1:]])
            for row in grad:
                w.writerow([f"{row[0]:.6g}"] + [f"{x:.10g}" for x in row[1:]])
        for fig in ("p_dem_w", "m_s_nm", "m_t_nm", "wind_ms", "farm_out_w"):
            srcf = os.path.join(run_dir, f"{fig}.csv")
            dstf = os.path.join(out_dir, f"{sd}_{fig}.csv")
            with open(srcf) as f_in, open(dstf, "w") as f_out:
                f_out.write(f_in.read())
            made += 1
    print(f"wrote {made + len(seed_dirs)} plot-data files to {out_dir}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="winddispatch",
        description="Wind-farm power dispatch simulation and MPC comparison")
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)

    p_id = sub.add_parser("identify", help="identify a wind predictor fixture")
    p_id.add_argument("--mean-ms", type=float, required=True)
    p_id.add_argument("--ti", type=float, required=True)
    p_id.add_argument("--length-scale-m", type=float, default=340.0)
    p_id.add_argument("--duration-s", type=float, default=900.0)
    p_id.add_argument("--seed", type=int, default=1)
    p_id.add_argument("--validation-seeds", type=int, default=5)
    p_id.add_argument("--max-order", type=int, default=4)
    p_id.add_argument("--out", required=True, help="fixture output path")
    p_id.set_defaults(func=cmd_identify)

    p_run = sub.add_parser("run", help="simulate a scenario, emit CSVs and metrics")
    p_run.add_argument("--scenario", required=True,
                       help="path or builtin:<name> (wt10, wt3, wt3-nopred, thanet100)")
    p_run.add_argument("--out", default=None)
    p_run.add_argument("--seeds", default=None, help="comma list overriding the file")
    p_run.set_defaults(func=cmd_run)

    p_cmp = sub.add_parser("compare", help="paired-seed controller comparison")
    p_cmp.add_argument("--scenario", required=True)
    p_cmp.add_argument("--controllers", default="scheduler,dmpc",
                       help="comma list; first is the baseline")
    p_cmp.add_argument("--out", default=None)
    p_cmp.add_argument("--seeds", default=None)
    p_cmp.set_defaults(func=cmd_compare)

    p_sw = sub.add_parser("sweep-horizon", help="controller vs scheduler over horizons")
    p_sw.add_argument("--scenario", required=True)
    p_sw.add_argument("--horizons", default="0,1,2,3")
    p_sw.add_argument("--out", default=None)
    p_sw.add_argument("--seeds", default=None)
    p_sw.set_defaults(func=cmd_sweep_horizon)

    p_rep = sub.add_parser("report", help="emit plot-data CSVs from a run directory")
    p_rep.add_argument("--results", required=True)
    p_rep.add_argument("--out", default=None)
    p_rep.set_defaults(func=cmd_report)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except ScenarioError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (ValueError, OSError) as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except InfeasibleError as exc:
        print(f"infeasible: {exc}", file=sys.stderr)
        return EXIT_INFEASIBLE
    except (NonconvergenceError, SizeCapError) as exc:
        print(f"solver failure: {exc}", file=sys.stderr)
        return EXIT_SOLVER
    except RuntimeError as exc:
        print(f"solver failure: {exc}", file=sys.stderr)
        return EXIT_SOLVER


if __name__ == "__main__":
    sys.exit(main())
