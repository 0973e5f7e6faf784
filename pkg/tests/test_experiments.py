import numpy as np
import pytest

from mobnet import (
    build_ladder,
    errors,
    proportional_state,
    run_heavy_traffic,
    run_hitting_diagnostics,
    run_homogenization,
    run_martingale_check,
    run_sojourn,
    run_stationary,
    network_params,
)
from mobnet.cli import main as cli_main
from mobnet.report import report_fingerprint, write_report
from mobnet.experiments import stationary_state_pool


def test_ladder_schedule(symmetric_2):
    ladder = build_ladder(symmetric_2, 1.0, 1.0, [10, 20, 40])
    for n, params in zip(ladder.n_values, ladder.params_per_n):
        assert params.rho == pytest.approx(1.0 - 1.0 / n)
        assert n * (1 - params.rho) == pytest.approx(1.0)
        assert params.lambda_total == pytest.approx(1.0 * (1 - 1.0 / (2 * n)))
        assert params.lambda_total + params.mu_total <= ladder.kappa + 1e-12
    assert ladder.params_per_n[-1].lambda_total < 1.0


def test_ladder_critical_alpha_zero(symmetric_2):
    ladder = build_ladder(symmetric_2, 1.0, 0.0, [10])
    assert ladder.params_per_n[0].rho == pytest.approx(1.0)


def test_ladder_split_weights(symmetric_2):
    ladder = build_ladder(
        symmetric_2, 1.0, 1.0, [10], arrival_weights=[0.7, 0.3], capacity_weights=[0.4, 0.6]
    )
    p = ladder.params_per_n[0]
    assert p.lambda_k[0] / p.lambda_total == pytest.approx(0.7)
    assert p.mu_k[1] / p.mu_total == pytest.approx(0.6)


def test_ladder_rejects_small_n(symmetric_2):
    with pytest.raises(errors.ConfigError):
        build_ladder(symmetric_2, 1.0, 2.0, [2, 10])


def test_proportional_state_rounding():
    pi = np.array([2 / 3, 1 / 3])
    for total in (1, 7, 40, 1001):
        y = proportional_state(total, pi)
        assert y.sum() == total
        assert np.abs(y / total - pi).sum() <= len(pi) / total


def test_homogenization_report(symmetric_2, light_params):
    rep = run_homogenization(
        symmetric_2,
        light_params,
        [np.array([400, 0]), np.array([0, 0])],
        [0.3],
        reps=2000,
        seed=5,
    )
    assert rep.all_passed
    assert rep.assertion_counts["events"] > 0
    header, rows = rep.replication_tables["closed"]
    assert any(r[0] == 0 for r in rows)  # empty-state convention row


def test_heavy_traffic_small_ladder(symmetric_2):
    ladder = build_ladder(symmetric_2, 1.0, 1.0, [6, 10])
    rep = run_heavy_traffic(
        ladder,
        [0.2, 0.6, 1.0],
        eps_excursion=0.5,
        reps=300,
        seed=9,
        excursion_reps=150,
        oracle_paths=300,
        ks_threshold=0.5,       # small-n smoke run, not the acceptance gate
        collapse_threshold=2.0,
    )
    # transport inequalities and coupling checks are hard assertions
    for v in rep.verdicts:
        if "transport" in v.metric or "coupling" in v.metric:
            assert v.passed
    assert rep.assertion_counts["events"] > 0
    header, rows = rep.replication_tables["ks_marginal"]
    assert len(rows) == 2 * 3


def test_stationary_experiment_small(symmetric_2):
    ladder = build_ladder(symmetric_2, 1.0, 1.0, [8])
    rep = run_stationary(ladder, r_max=2, cycles=3000, seed=3, balance_levels=range(1, 5),
                         moment_tolerance=0.6)
    bal = [v for v in rep.verdicts if v.metric.startswith("balance")]
    assert bal and all(v.passed for v in bal)
    dom = [v for v in rep.verdicts if v.metric.startswith("geometric")]
    assert dom and all(v.passed for v in dom)


def test_sojourn_fixed_small(symmetric_2):
    ladder = build_ladder(symmetric_2, 1.0, 1.0, [10])
    rep = run_sojourn(ladder, b=1.0, reps=300, seed=7, mode="fixed",
                      ks_threshold_fixed=0.5)
    header, rows = rep.replication_tables["fixed_start"]
    assert rows[0][2] + rows[0][3] == 300
    assert rep.all_passed


def test_sojourn_stationary_mode_smoke(symmetric_2):
    ladder = build_ladder(symmetric_2, 1.0, 1.0, [8])
    rep = run_sojourn(ladder, b=1.0, reps=150, seed=7, mode="stationary",
                      ks_threshold_stationary=0.6)
    header, rows = rep.replication_tables["stationary_mode"]
    assert rows[0][2] > 0


def test_stationary_pool_nonempty(symmetric_2):
    ladder = build_ladder(symmetric_2, 1.0, 1.0, [8])
    pool = stationary_state_pool(ladder.params_per_n[0], 64, seed=2, n_scale=8)
    assert pool.shape == (64, 2)
    assert (pool.sum(axis=1) > 0).mean() > 0.5


def test_hitting_diagnostics_slope(symmetric_2):
    params = network_params(symmetric_2, [0.5, 0.5], [0.5, 0.5])
    rep = run_hitting_diagnostics(
        params, [30, 60, 120], delta=0.2, t=5.0, reps=800, seed=11
    )
    slope = rep.aggregates["slope"]
    assert slope < 0
    v = [v for v in rep.verdicts if v.metric == "log_frequency_slope"][0]
    assert v.passed


def test_hitting_initial_state_guard(asymmetric_2):
    params = network_params(asymmetric_2, [0.5, 0.5], [0.5, 0.5])
    # rounding 50 users to (2/3, 1/3) leaves more imbalance than eta allows
    with pytest.raises(errors.ConfigError):
        run_hitting_diagnostics(params, [25], delta=0.2, t=2.0, reps=10, seed=1)


def test_martingale_check_reports_failures(symmetric_2):
    # the displayed functional is a strict supermartingale, so the zero-drift
    # verdicts come out negative-drift and fail; the report must say so
    rep = run_martingale_check(
        symmetric_2, [6, 0], c_values=[1.0], t_values=[0.5], reps=2000, seed=2
    )
    header, rows = rep.replication_tables["drift"]
    assert len(rows) == 1
    c, t, drift, se, n, verdict = rows[0]
    assert drift < 0
    assert verdict == "fail"


def test_reports_reproducible_across_threads(symmetric_2, tmp_path):
    ladder = build_ladder(symmetric_2, 1.0, 1.0, [6])
    rep1 = run_heavy_traffic(ladder, [0.5, 1.0], 0.5, reps=200, seed=4,
                             threads=1, excursion_reps=100, oracle_paths=200)
    rep2 = run_heavy_traffic(ladder, [0.5, 1.0], 0.5, reps=200, seed=4,
                             threads=2, excursion_reps=100, oracle_paths=200)
    assert report_fingerprint(rep1) == report_fingerprint(rep2)
    # byte-identical CSV files as well
    d1, d2 = tmp_path / "a", tmp_path / "b"
    f1 = write_report(rep1, d1)
    f2 = write_report(rep2, d2)
    for a, b in zip(f1, f2):
        assert open(a, "rb").read() == open(b, "rb").read()


def test_re_reduction_equality(symmetric_2):
    # aggregates must be recomputable from the emitted replication tables:
    # the slope fit of the hitting experiment is re-derived from its rows
    from mobnet.stats import log_frequency, weighted_slope

    params = network_params(symmetric_2, [0.5, 0.5], [0.5, 0.5])
    rep = run_hitting_diagnostics(
        params, [30, 60, 120], delta=0.2, t=4.0, reps=600, seed=13
    )
    header, rows = rep.replication_tables["open_race"]
    phis = np.array([r[0] for r in rows], dtype=float)
    logs, ses = [], []
    for r in rows:
        hits = int(round(r[2] * r[4]))
        lo, se = log_frequency(hits, r[4])
        logs.append(lo)
        ses.append(se)
    slope, slope_se, intercept = weighted_slope(phis, np.array(logs), np.array(ses))
    assert slope == pytest.approx(rep.aggregates["slope"], rel=1e-12)
    assert slope_se == pytest.approx(rep.aggregates["slope_se"], rel=1e-12)


CONFIG = """
[mobility]
Q = [[-1.0, 1.0], [1.0, -1.0]]

[network]
lambda_k = [0.5, 0.5]
mu_k = [0.6, 0.6]

[ladder]
lambda = 1.0
alpha = 1.0
n_values = [6]

[simulate]
initial = [2, 1]
horizon = 10.0
events = true

[experiment]
reps = 100
eps_grid = [0.3, 0.2]
initial_totals = [200]
t_grid = [0.5, 1.0]
excursion_reps = 50
oracle_paths = 100
ks_threshold = 0.9
collapse_threshold = 2.0
cycles = 400
phi_grid = [20, 40]
delta = 0.25
t = 3.0
c_values = [1.0]
t_values = [0.5]

[rng]
seed = 12
"""


@pytest.fixture()
def config_file(tmp_path):
    path = tmp_path / "exp.toml"
    path.write_text(CONFIG)
    return str(path)


def test_cli_mixing_smoke(config_file, tmp_path, capsys):
    code = cli_main(["mixing", "--config", config_file, "--out", str(tmp_path / "o")])
    assert code == 0
    out = capsys.readouterr().out
    assert "mixing_tau.csv" in out
    tau_csv = (tmp_path / "o" / "mixing_tau.csv").read_text()
    assert tau_csv.splitlines()[0] == "eps,tau,delta_at_tau"


def test_cli_simulate_smoke(config_file, tmp_path):
    code = cli_main(["simulate", "--config", config_file, "--out", str(tmp_path / "s")])
    assert code == 0
    path_csv = (tmp_path / "s" / "simulate_path.csv").read_text()
    assert path_csv.splitlines()[0] == "t,x_1,x_2"
    events_csv = (tmp_path / "s" / "simulate_events.csv").read_text()
    assert events_csv.splitlines()[0] == "t,event_type,node_from,node_to"


def test_cli_missing_key_exits_2(tmp_path):
    bad = tmp_path / "bad.toml"
    bad.write_text("[mobility]\n")  # no Q
    code = cli_main(["mixing", "--config", str(bad), "--out", str(tmp_path / "x")])
    assert code == 2


def test_cli_missing_file_exits_2(tmp_path):
    code = cli_main(["mixing", "--config", str(tmp_path / "nope.toml")])
    assert code == 2


def test_cli_deterministic_reruns(config_file, tmp_path):
    out1, out2 = tmp_path / "r1", tmp_path / "r2"
    assert cli_main(["hitting", "--config", config_file, "--out", str(out1), "--seed", "7"]) in (0, 1)
    assert cli_main(["hitting", "--config", config_file, "--out", str(out2), "--seed", "7",
                     "--threads", "2"]) in (0, 1)
    for name in sorted(p.name for p in out1.iterdir()):
        assert (out1 / name).read_bytes() == (out2 / name).read_bytes()


def test_cli_martingale_check_exit_code(config_file, tmp_path):
    # the zero-drift verdicts fail by design (supermartingale), exit code 1
    code = cli_main([
        "martingale-check", "--config", config_file, "--out", str(tmp_path / "m"),
        "--reps", "500",
    ])
    assert code == 1
    drift_csv = (tmp_path / "m" / "martingale-check_drift.csv").read_text()
    assert drift_csv.splitlines()[0] == "c,t,mean_drift,se,n_reps,verdict"
