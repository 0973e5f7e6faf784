#!/usr/bin/env python3
"""Small end-to-end run of every experiment (a couple of minutes).

Writes CSV reports to out/demo/<experiment>_*.csv and prints the verdict
summary of each experiment.
"""

import sys
from pathlib import Path

import numpy as np

sys.path.insert(0, str(Path(__file__).resolve().parents[1] / "src"))

import mobnet as M
from mobnet.experiments import (
    run_heavy_traffic,
    run_hitting_diagnostics,
    run_homogenization,
    run_martingale_check,
    run_sojourn,
    run_stationary,
)
from mobnet.report import write_report

OUT = Path(__file__).resolve().parents[1] / "out" / "demo"
SEED = 7


def show(report):
    files = write_report(report, OUT)
    n_pass = sum(v.passed for v in report.verdicts)
    print(f"{report.experiment}: {n_pass}/{len(report.verdicts)} verdicts pass")
    for v in report.verdicts:
        if not v.passed:
            print(f"  FAIL {v.metric}: estimate={v.estimate:.4g} threshold={v.threshold:.4g}")
    for f in files:
        print(f"  wrote {f}")


def main():
    profile = M.validate_generator([[-1.0, 1.0], [1.0, -1.0]])
    ladder = M.build_ladder(profile, 1.0, 1.0, [8, 16])
    stable = M.network_params(profile, [0.4, 0.4], [0.6, 0.6])
    critical = M.network_params(profile, [0.5, 0.5], [0.5, 0.5])

    show(run_homogenization(profile, stable, [np.array([500, 0])], [0.3, 0.2], 3000, SEED))
    show(run_heavy_traffic(ladder, [0.2, 0.6, 1.0], 0.4, 600, SEED,
                           excursion_reps=300, oracle_paths=600,
                           ks_threshold=0.12, collapse_threshold=0.35))
    show(run_stationary(ladder, 2, 6000, SEED, moment_tolerance=0.3))
    show(run_sojourn(ladder, 1.0, 600, SEED, mode="both", ks_threshold_fixed=0.1))
    show(run_hitting_diagnostics(critical, [30, 60, 120, 240], 0.15, 6.0, 800, SEED))
    # The zero-drift verdicts fail by design: the truncated functional is a
    # strict supermartingale (see the repository notes).
    show(run_martingale_check(profile, [10, 0], [0.5, 1.0], [0.5, 1.0], 3000, SEED))


if __name__ == "__main__":
    main()
