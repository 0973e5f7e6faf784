"""Command-line experiment runner.

Subcommands: mixing, simulate, homogenize, heavy-traffic, stationary,
sojourn, hitting, martingale-check.  Exit code 0 when every verdict passes,
1 when any verdict fails, 2 on configuration or usage errors.
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

import numpy as np

from . import config as cfgmod
from . import experiments as xp
from .errors import MobnetError
from .mobility import mixing_deviation, mixing_time
from .network import EVENT_NAMES, simulate_open
from .report import ExperimentReport, render_csv, write_report


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="mobnet",
        description="Simulation experiments for a mobile-user network under processor sharing",
    )
    sub = parser.add_subparsers(dest="command", required=True)
    for name in (
        "mixing",
        "simulate",
        "homogenize",
        "heavy-traffic",
        "stationary",
        "sojourn",
        "hitting",
        "martingale-check",
    ):
        p = sub.add_parser(name)
        p.add_argument("--config", required=True, help="TOML config file")
        p.add_argument("--out", default="out", help="output directory for CSV reports")
        p.add_argument("--seed", type=int, default=None, help="override [rng] seed")
        p.add_argument("--reps", type=int, default=None, help="override replication count")
        p.add_argument("--threads", type=int, default=1, help="worker threads for chunks")
        p.add_argument("--format", choices=["csv"], default="csv")
    return parser


def _reps(cfg, args, default=2000) -> int:
    if args.reps is not None:
        return int(args.reps)
    return int(cfgmod.get(cfg, "experiment", "reps", default))


def _run_mixing(cfg, args, seed) -> ExperimentReport:
    profile = cfgmod.mobility_from_config(cfg)
    eps_grid = cfgmod.get(cfg, "experiment", "eps_grid", [0.2, 0.1, 0.05, 0.02, 0.01])
    rows = []
    for eps in eps_grid:
        tau = mixing_time(profile, float(eps))
        rows.append((float(eps), tau, mixing_deviation(profile, tau)))
    report = ExperimentReport(
        experiment="mixing", config={"eps_grid": list(map(float, eps_grid))}, seed=seed
    )
    report.replication_tables["tau"] = (["eps", "tau", "delta_at_tau"], rows)
    report.aggregates["pi"] = " ".join(repr(v) for v in profile.pi)
    report.aggregates["gamma"] = profile.gamma
    return report


def _run_simulate(cfg, args, seed) -> ExperimentReport:
    profile = cfgmod.mobility_from_config(cfg)
    params = cfgmod.params_from_config(cfg, profile, section="network")
    initial = np.asarray(cfgmod.require(cfg, "simulate", "initial"), dtype=np.int64)
    horizon = float(cfgmod.require(cfg, "simulate", "horizon"))
    sample_grid = np.asarray(
        cfgmod.get(cfg, "simulate", "sample_grid", np.linspace(0, horizon, 101).tolist()),
        dtype=float,
    )
    want_events = bool(cfgmod.get(cfg, "simulate", "events", False))
    path, events = simulate_open(params, initial, horizon, seed, return_events=True)
    states = path.values(sample_grid)
    rows = [
        tuple([float(t)] + [float(v) for v in states[i]]) for i, t in enumerate(sample_grid)
    ]
    report = ExperimentReport(
        experiment="simulate",
        config={"initial": initial.tolist(), "horizon": horizon},
        seed=seed,
    )
    header = ["t"] + [f"x_{k + 1}" for k in range(profile.K)]
    report.replication_tables["path"] = (header, rows)
    if want_events:
        erows = [
            (float(t), EVENT_NAMES[int(kind)], int(a), int(b))
            for (t, kind, a, b) in events
        ]
        report.replication_tables["events"] = (
            ["t", "event_type", "node_from", "node_to"], erows,
        )
    report.aggregates["n_events"] = len(path.event_times) - 1
    return report


def _run_homogenize(cfg, args, seed) -> ExperimentReport:
    profile = cfgmod.mobility_from_config(cfg)
    params = cfgmod.params_from_config(cfg, profile, section="network")
    totals = cfgmod.get(cfg, "experiment", "initial_totals", [500, 2000])
    node = int(cfgmod.get(cfg, "experiment", "initial_node", 0))
    states = []
    for tot in totals:
        y = np.zeros(profile.K, dtype=np.int64)
        y[node] = int(tot)
        states.append(y)
    eps_grid = cfgmod.get(cfg, "experiment", "eps_grid", [0.3, 0.2, 0.1])
    return xp.run_homogenization(
        profile, params, states, [float(e) for e in eps_grid],
        _reps(cfg, args), seed, threads=args.threads,
    )


def _run_heavy_traffic(cfg, args, seed) -> ExperimentReport:
    profile = cfgmod.mobility_from_config(cfg)
    ladder = cfgmod.ladder_from_config(cfg, profile)
    t_grid = cfgmod.get(cfg, "experiment", "t_grid", [0.2, 0.4, 0.6, 0.8, 1.0])
    eps = float(cfgmod.get(cfg, "experiment", "eps_excursion", 0.4))
    return xp.run_heavy_traffic(
        ladder,
        [float(t) for t in t_grid],
        eps,
        _reps(cfg, args),
        seed,
        threads=args.threads,
        ks_threshold=float(cfgmod.get(cfg, "experiment", "ks_threshold", 0.05)),
        collapse_threshold=float(cfgmod.get(cfg, "experiment", "collapse_threshold", 0.10)),
        excursion_reps=cfgmod.get(cfg, "experiment", "excursion_reps", None),
        oracle_paths=int(cfgmod.get(cfg, "experiment", "oracle_paths", 2000)),
    )


def _run_stationary(cfg, args, seed) -> ExperimentReport:
    profile = cfgmod.mobility_from_config(cfg)
    ladder = cfgmod.ladder_from_config(cfg, profile)
    cycles = int(cfgmod.get(cfg, "experiment", "cycles", 20000))
    r_max = int(cfgmod.get(cfg, "experiment", "r_max", 2))
    return xp.run_stationary(ladder, r_max, cycles, seed, threads=args.threads)


def _run_sojourn(cfg, args, seed) -> ExperimentReport:
    profile = cfgmod.mobility_from_config(cfg)
    ladder = cfgmod.ladder_from_config(cfg, profile)
    b = float(cfgmod.get(cfg, "experiment", "b", 1.0))
    mode = cfgmod.get(cfg, "experiment", "mode", "both")
    return xp.run_sojourn(
        ladder, b, _reps(cfg, args), seed, threads=args.threads, mode=mode
    )


def _run_hitting(cfg, args, seed) -> ExperimentReport:
    profile = cfgmod.mobility_from_config(cfg)
    params = cfgmod.params_from_config(cfg, profile, section="network")
    phi_grid = cfgmod.get(cfg, "experiment", "phi_grid", [50, 100, 200, 400])
    delta = float(cfgmod.get(cfg, "experiment", "delta", 0.12))
    t = float(cfgmod.get(cfg, "experiment", "t", 8.0))
    return xp.run_hitting_diagnostics(
        params, [int(p) for p in phi_grid], delta, t, _reps(cfg, args), seed,
        threads=args.threads,
    )


def _run_martingale(cfg, args, seed) -> ExperimentReport:
    profile = cfgmod.mobility_from_config(cfg)
    initial = cfgmod.get(cfg, "experiment", "initial", None)
    if initial is None:
        total = int(cfgmod.get(cfg, "experiment", "initial_total", 20))
        initial = np.zeros(profile.K, dtype=np.int64)
        initial[0] = total
    c_values = cfgmod.get(cfg, "experiment", "c_values", [0.5, 1.0, 1.5])
    t_values = cfgmod.get(cfg, "experiment", "t_values", [0.5, 1.0, 2.0])
    return xp.run_martingale_check(
        profile, initial, c_values, t_values, _reps(cfg, args, default=10000), seed
    )


_RUNNERS = {
    "mixing": _run_mixing,
    "simulate": _run_simulate,
    "homogenize": _run_homogenize,
    "heavy-traffic": _run_heavy_traffic,
    "stationary": _run_stationary,
    "sojourn": _run_sojourn,
    "hitting": _run_hitting,
    "martingale-check": _run_martingale,
}


def main(argv=None) -> int:
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return 2 if exc.code not in (0, None) else 0
    try:
        cfg = cfgmod.load_config(args.config)
        seed = cfgmod.seed_from_config(cfg, args.seed)
        report = _RUNNERS[args.command](cfg, args, seed)
        written = write_report(report, args.out)
    except MobnetError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    for path in written:
        print(path)
    failed = [v for v in report.verdicts if not v.passed]
    for v in failed:
        print(f"FAIL {v.metric}: estimate={v.estimate!r} threshold={v.threshold!r}")
    return 1 if failed else 0


if __name__ == "__main__":
    sys.exit(main())
