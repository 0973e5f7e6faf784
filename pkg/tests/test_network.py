import math
from fractions import Fraction

import numpy as np
import pytest
from scipy import stats as sps

from mobnet import (
    balance_residual,
    errors,
    network_params,
    sample_stationary,
    simulate_coupled,
    simulate_open,
    simulate_tagged,
    total_jump_rate,
    validate_generator,
    verify_coupling,
)
from mobnet import first_coordinate_zero, first_time_above
from mobnet.stats import ratio_estimate


def test_params_aggregates(symmetric_2):
    p = network_params(symmetric_2, [0.3, 0.2], [0.4, 0.6])
    assert p.lambda_total == pytest.approx(0.5)
    assert p.mu_total == pytest.approx(1.0)
    assert p.rho == pytest.approx(0.5)
    assert p.kappa_bound == pytest.approx(1.5)


def test_params_zero_service(symmetric_2):
    p = network_params(symmetric_2, [0.0, 0.0], [0.0, 0.0])
    assert math.isnan(p.rho)
    q = network_params(symmetric_2, [1.0, 0.0], [0.0, 0.0])
    assert q.rho == math.inf


def test_params_kappa_violation(symmetric_2):
    with pytest.raises(errors.InvalidValue):
        network_params(symmetric_2, [1.0, 1.0], [1.0, 1.0], kappa_bound=1.0)


def test_open_zero_horizon(light_params):
    with pytest.raises(errors.ZeroHorizon):
        simulate_open(light_params, [0, 0], 0.0, seed=1)


def test_open_closed_dynamics_conserves(symmetric_2):
    p = network_params(symmetric_2, [0.0, 0.0], [0.0, 0.0])
    path = simulate_open(p, [3, 1], 25.0, seed=2)
    assert (path.norms == 4).all()


def test_open_deterministic(light_params):
    a, ea = simulate_open(light_params, [2, 2], 15.0, seed=11, return_events=True)
    b, eb = simulate_open(light_params, [2, 2], 15.0, seed=11, return_events=True)
    assert np.array_equal(a.event_times, b.event_times)
    assert np.array_equal(a.states, b.states)
    assert np.array_equal(ea, eb)


def test_open_poisson_count_oracle(symmetric_2):
    # no service: the total is a rate-1 Poisson count at the horizon
    p = network_params(symmetric_2, [1.0, 0.0], [0.0, 0.0])
    horizon = 7.0
    totals = [
        simulate_open(p, [0, 0], horizon, seed=1000 + s).norm(horizon)
        for s in range(400)
    ]
    mean = np.mean(totals)
    se = np.std(totals, ddof=1) / math.sqrt(len(totals))
    assert abs(mean - horizon) <= 3 * se


def test_total_rate_bookkeeping_exact(symmetric_2):
    # rational parameters so the sampled clock rate is checkable exactly
    lam = [0.5, 0.25]
    mu = [0.75, 0.5]
    p = network_params(symmetric_2, lam, mu)
    path = simulate_open(p, [3, 2], 5.0, seed=8)
    c = [1, 1]  # -diagonal of Q
    for state in path.states[:: max(1, len(path.states) // 25)]:
        y = state.astype(int)
        expected = (
            Fraction(1, 2)
            + Fraction(1, 4)
            + (Fraction(3, 4) if y[0] > 0 else 0)
            + (Fraction(1, 2) if y[1] > 0 else 0)
            + y[0] * c[0]
            + y[1] * c[1]
        )
        assert total_jump_rate(p, y) == float(expected)


def test_coupled_invariants_several_seeds(light_params):
    for seed in range(6):
        bundle = simulate_coupled(light_params, [4, 3], 30.0, seed=seed)
        counts = verify_coupling(bundle, light_params.mobility.pi)
        assert counts["lower_bound"] == 0
        assert counts["equality"] == 0
        assert counts["sandwich"] == 0
        assert counts["ratio"] == 0
        assert counts["checks"] > 0


def test_coupled_equality_until_first_empty(light_params):
    bundle = simulate_coupled(light_params, [2, 2], 20.0, seed=3)
    t0 = first_coordinate_zero(bundle.open_path)
    assert t0 is not None
    times = bundle.open_path.event_times
    norms = bundle.open_path.norms
    ells = bundle.mm1_path.values(times)[:, 0]
    before = times <= t0
    assert np.array_equal(norms[before], ells[before])


def test_coupled_closed_total_constant(light_params):
    bundle = simulate_coupled(light_params, [3, 2], 20.0, seed=5)
    assert (bundle.closed_path.norms == 5).all()


def test_coupled_no_arrivals_no_departures(symmetric_2):
    p = network_params(symmetric_2, [0.0, 0.0], [0.0, 0.0])
    bundle = simulate_coupled(p, [2, 3], 15.0, seed=7)
    # open and closed paths coincide identically
    assert np.array_equal(bundle.open_path.event_times, bundle.closed_path.event_times)
    assert np.array_equal(bundle.open_path.states, bundle.closed_path.states)


def test_coupled_deterministic(light_params):
    a = simulate_coupled(light_params, [4, 1], 12.0, seed=21)
    b = simulate_coupled(light_params, [4, 1], 12.0, seed=21)
    assert np.array_equal(a.open_path.states, b.open_path.states)
    assert np.array_equal(a.walk_path.states, b.walk_path.states)
    for ta, tb in zip(a.arrival_events, b.arrival_events):
        assert np.array_equal(ta, tb)


def test_tagged_lone_user_exact(symmetric_2):
    # lone user, equal capacities: service accrues at the full rate mu
    mu = 0.7
    p = network_params(symmetric_2, [0.0, 0.0], [mu, mu])
    path, rec = simulate_tagged(p, [1, 0], 0, 500.0, seed=13)
    assert rec.sojourn == pytest.approx(rec.requirement / mu, rel=1e-12)
    # service curve is the line mu * t up to the sojourn
    mid = rec.sojourn / 2
    assert rec.service_at(mid) == pytest.approx(mu * mid, rel=1e-9)


def test_tagged_processor_sharing_slope(symmetric_2):
    # two users at the same node share the capacity equally at time zero
    p = network_params(symmetric_2, [0.0, 0.0], [1.0, 1.0])
    path, rec = simulate_tagged(p, [2, 0], 0, 50.0, seed=3)
    t1 = rec.service_times[1]
    assert rec.service_values[1] == pytest.approx(0.5 * t1, rel=1e-12)


def test_tagged_service_curve_invariants(light_params):
    for seed in range(5):
        path, rec = simulate_tagged(light_params, [3, 2], 0, 40.0, seed=seed)
        s = rec.service_values
        dt = np.diff(rec.service_times)
        ds = np.diff(s)
        assert (ds >= -1e-12).all()
        slopes = ds / dt
        assert (slopes <= light_params.mu_k.max() + 1e-9).all()
        if rec.sojourn is not None:
            assert rec.service_at(rec.sojourn) == pytest.approx(rec.requirement, rel=1e-9)


def test_tagged_empty_node_rejected(light_params):
    with pytest.raises(errors.EmptyTagNode):
        simulate_tagged(light_params, [0, 2], 0, 10.0, seed=1)


def test_tagged_lone_user_sojourn_distribution(symmetric_2):
    # requirement Exp(1) at full capacity mu: sojourn is Exp(mean 1/mu)
    mu = 2.0
    p = network_params(symmetric_2, [0.0, 0.0], [mu, mu])
    sojourns = []
    for seed in range(3000):
        _, rec = simulate_tagged(p, [1, 0], 0, 60.0, seed=seed)
        assert rec.sojourn is not None
        sojourns.append(rec.sojourn)
    res = sps.kstest(sojourns, sps.expon(scale=1 / mu).cdf)
    assert res.pvalue > 0.01


def test_stationary_requires_stable(symmetric_2):
    p = network_params(symmetric_2, [1.0, 1.0], [0.5, 0.5])
    with pytest.raises(errors.UnstableParams):
        sample_stationary(p, 100, seed=1)


def test_stationary_geometric_dominance(light_params):
    stats = sample_stationary(light_params, 4000, seed=4)
    rho = light_params.rho
    for q in range(1, 11):
        est, se = stats.tail_probability(q)
        assert est >= rho**q - 3 * se


def test_stationary_two_estimators_agree(light_params):
    # regenerative empty-state probability vs an independent long-run
    # time-average from a different seed
    stats = sample_stationary(light_params, 4000, seed=6)
    p0, se0 = stats.level_probability(0)
    stats2 = sample_stationary(light_params, 4000, seed=1006)
    q0, se1 = stats2.level_probability(0)
    assert abs(p0 - q0) <= 3 * math.hypot(se0, se1)


def test_stationary_mass_at_zero_when_idle(symmetric_2):
    p = network_params(symmetric_2, [0.001, 0.001], [0.6, 0.6])
    stats = sample_stationary(p, 400, seed=9)
    p0, _ = stats.level_probability(0)
    assert p0 > 0.99


def test_balance_residuals_within_noise(symmetric_2):
    p = network_params(symmetric_2, [0.25, 0.25], [0.5, 0.5])  # rho = 0.5
    stats = sample_stationary(p, 6000, seed=12)
    for m in range(1, 6):
        res, se = balance_residual(stats, p, m)
        assert abs(res) <= 3 * se


def test_balance_near_single_node_system(symmetric_2):
    # rarely-visited second node: the total behaves almost like an M/M/1
    # queue, and the balance residual contract still holds exactly
    prof = validate_generator([[-0.02, 0.02], [5.0, -5.0]])
    p = network_params(prof, [0.5, 0.0], [1.0, 0.0])
    stats = sample_stationary(p, 6000, seed=14)
    for m in range(1, 4):
        res, se = balance_residual(stats, p, m)
        assert abs(res) <= 3 * se
    # level ratios close to the M/M/1 geometric rho = 0.5
    p1, _ = stats.level_probability(1)
    p2, _ = stats.level_probability(2)
    assert p2 / p1 == pytest.approx(0.5, abs=0.08)


def test_balance_insufficient_cycles(light_params):
    stats = sample_stationary(light_params, 60, seed=3, m_cap=12)
    with pytest.raises(errors.InsufficientCycles):
        balance_residual(stats, light_params, 20)


def test_ratio_estimate_matches_direct_mean():
    rng = np.random.default_rng(0)
    num = rng.random(500)
    den = np.ones(500)
    est, se = ratio_estimate(num, den)
    assert est == pytest.approx(num.mean())
    assert se == pytest.approx(num.std(ddof=1) / math.sqrt(500), rel=1e-9)
