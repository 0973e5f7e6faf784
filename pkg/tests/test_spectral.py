import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from mobnet import (
    SimplexGeometry,
    check_entropy_bounds,
    closed_martingale,
    closed_positions_at,
    errors,
    relative_entropy,
    spectral_decay_error,
    spectral_decomposition,
    spectral_product,
    validate_generator,
)
from mobnet.spectral import finite_constant_scan, martingale_upper_bound


def random_generator(rng, K):
    """Random irreducible rate matrix; distinct eigenvalues almost surely."""
    Q = rng.uniform(0.2, 2.0, size=(K, K))
    np.fill_diagonal(Q, 0.0)
    np.fill_diagonal(Q, -Q.sum(axis=1))
    return validate_generator(Q)


def test_two_state_rows_pinned(symmetric_2):
    dec = spectral_decomposition(symmetric_2)
    assert np.allclose(sorted(dec.eigenvalues.real), [-2.0, 0.0])
    assert dec.eigenvalues[-1] == pytest.approx(0.0, abs=1e-12)
    # decay row pinned to (1, -1): unit max-modulus, first entry positive
    row = dec.omega[dec.row_of[0]]
    assert np.allclose(np.abs(row), [1.0, 1.0])
    assert row[0].real > 0


def test_spectral_product_two_state(symmetric_2):
    dec = spectral_decomposition(symmetric_2)
    assert spectral_product(dec, np.array([0.3, 0.9])) == pytest.approx(0.6)
    assert spectral_product(dec, np.array([1.0, 1.0])) == pytest.approx(0.0, abs=1e-15)


@given(
    st.floats(min_value=-4.0, max_value=4.0),
    st.floats(min_value=-3.0, max_value=3.0),
    st.floats(min_value=-3.0, max_value=3.0),
)
@settings(max_examples=40, deadline=None)
def test_spectral_product_scaling(c, u1, u2):
    dec = spectral_decomposition(validate_generator([[-1.0, 1.0], [2.0, -2.0]]))
    u = np.array([u1, u2])
    total_mult = int(dec.multiplicities[:-1].sum())
    left = spectral_product(dec, c * u)
    right = abs(c) ** total_mult * spectral_product(dec, u)
    assert left == pytest.approx(right, rel=1e-9, abs=1e-12)


def test_decay_identity_two_state_closed_form(symmetric_2):
    dec = spectral_decomposition(symmetric_2)
    u = np.array([0.8, 0.1])
    # the decayed product is exp(-2t) |u1 - u2| exactly
    err = spectral_decay_error(dec, symmetric_2, u, np.linspace(0.0, 2.5, 6))
    assert err <= 1e-10


def test_decay_identity_t_zero(ring_3):
    dec = spectral_decomposition(ring_3)
    err = spectral_decay_error(dec, ring_3, np.array([0.4, -1.2, 0.7]), [0.0])
    assert err == 0.0


def test_decay_identity_random_k3():
    rng = np.random.default_rng(5)
    for _ in range(10):
        prof = random_generator(rng, 3)
        dec = spectral_decomposition(prof)
        u = rng.normal(size=3)
        if spectral_product(dec, u) < 1e-6:
            continue
        grid = np.linspace(0.0, 5.0 / prof.gamma, 6)
        assert spectral_decay_error(dec, prof, u, grid) <= 1e-8


def test_degenerate_vector_rejected(symmetric_2):
    dec = spectral_decomposition(symmetric_2)
    with pytest.raises(errors.DegenerateVector):
        spectral_decay_error(dec, symmetric_2, np.array([1.0, 1.0]), [0.5])


def test_simplex_geometry_bijection():
    geom = SimplexGeometry(K=3, pi=np.array([0.2, 0.3, 0.5]))
    u = np.array([0.1, 0.4])
    v = geom.complete(u)
    assert v.sum() == pytest.approx(1.0)
    assert np.allclose(geom.project(v), u)


def test_martingale_empty_state_pure_decay(symmetric_2):
    # with no users the occupation product is 1, so the integral is constant
    dec = spectral_decomposition(symmetric_2)
    geom = SimplexGeometry(K=2, pi=symmetric_2.pi)
    zero = np.zeros(2)
    for c in (0.5, 1.0, 1.7):
        m0 = closed_martingale(dec, geom, c, zero, 0.0)
        m1 = closed_martingale(dec, geom, c, zero, 1.3)
        assert m1 / m0 == pytest.approx(math.exp(-c * dec.gamma * 1.3), rel=1e-7)


def test_martingale_uniform_bound(symmetric_2):
    dec = spectral_decomposition(symmetric_2)
    geom = SimplexGeometry(K=2, pi=symmetric_2.pi)
    y = np.array([12, 8])
    c = 1.5
    bound = martingale_upper_bound(dec, geom, c, int(y.sum()))
    for t, state in ((0.0, y), (0.7, np.array([9, 11])), (2.0, np.array([20, 0]))):
        val = closed_martingale(dec, geom, c, state, t)
        assert val <= bound * (1 + 1e-7)


def test_martingale_dimension_guard(symmetric_2):
    dec = spectral_decomposition(symmetric_2)
    geom = SimplexGeometry(K=4, pi=np.full(4, 0.25))
    with pytest.raises(errors.DimensionUnsupported):
        closed_martingale(dec, geom, 1.0, np.zeros(4), 0.0)


def test_finite_constant_scan(symmetric_2):
    dec = spectral_decomposition(symmetric_2)
    geom = SimplexGeometry(K=2, pi=symmetric_2.pi)
    worst = finite_constant_scan(dec, geom, np.linspace(0.05, 0.95, 10))
    assert np.isfinite(worst)
    assert worst > 0


def test_martingale_k3_smoke(ring_3):
    dec = spectral_decomposition(ring_3)
    geom = SimplexGeometry(K=3, pi=ring_3.pi)
    val = closed_martingale(dec, geom, 1.0, np.array([2, 1, 1]), 0.3, quad_tol=1e-6)
    assert np.isfinite(val) and val > 0


def test_supermartingale_drift_is_negative(symmetric_2):
    """The truncated-domain functional loses mass over time.

    The change of variables behind the claimed zero drift maps the simplex
    strictly into itself, so the time-t mean must be strictly below the
    time-zero value; this pins the direction of the known defect (see also
    the exact-transform variant below, whose drift does vanish).
    """
    dec = spectral_decomposition(symmetric_2)
    geom = SimplexGeometry(K=2, pi=symmetric_2.pi)
    y = np.array([6, 0])
    c = 1.0
    m0 = closed_martingale(dec, geom, c, y, 0.0)
    samples = closed_positions_at(symmetric_2, y, 0.5, 4000, seed=99)
    uniq, inverse = np.unique(samples, axis=0, return_inverse=True)
    vals = np.array([closed_martingale(dec, geom, c, row, 0.5) for row in uniq])
    per = vals[inverse]
    se = per.std(ddof=1) / math.sqrt(len(per))
    assert per.mean() - m0 < -3 * se


def test_exact_transform_has_zero_drift(symmetric_2):
    """Time-adjusted transform: evolve the weights by the inverse semigroup.

    For each fixed simplex point the per-user transform with the inverse
    transition matrix is a true martingale, so the integrated functional has
    zero drift; this isolates the defect of the truncated version to the
    change-of-variables domain.
    """
    from scipy import integrate

    from mobnet.mobility import transition_matrix
    from mobnet.spectral import _weight_function

    dec = spectral_decomposition(symmetric_2)
    geom = SimplexGeometry(K=2, pi=symmetric_2.pi)
    F_of = _weight_function(dec, geom)
    c = 1.5

    def exact_value(state, t):
        Pinv = np.linalg.inv(transition_matrix(symmetric_2, t, 1e-13))
        counts = np.asarray(state, dtype=float)

        def f(u):
            z = np.array([u, 1.0 - u]) / symmetric_2.pi
            w = Pinv @ z
            base = np.prod(np.sign(w) ** counts * np.abs(w) ** counts)
            weight = F_of(np.array([u]))
            return 0.0 if weight == 0.0 else base * weight ** (c - 1.0)

        val, _ = integrate.quad(f, 0, 1, points=[0.5], epsabs=0, epsrel=1e-9, limit=200)
        return val

    y = np.array([6, 0])
    t = 0.25
    m0 = exact_value(y, 0.0)
    samples = closed_positions_at(symmetric_2, y, t, 20000, seed=101)
    uniq, inverse = np.unique(samples, axis=0, return_inverse=True)
    vals = np.array([exact_value(row, t) for row in uniq])
    per = vals[inverse]
    se = per.std(ddof=1) / math.sqrt(len(per))
    assert abs(per.mean() - m0) <= 3 * se


def test_relative_entropy_hand_values():
    assert relative_entropy([0.5, 0.5], [0.5, 0.5]) == 0.0
    assert relative_entropy([1.0, 0.0], [0.5, 0.5]) == pytest.approx(math.log(2))
    with pytest.raises(errors.ZeroDenominator):
        relative_entropy([0.5, 0.5], [1.0, 0.0])


def test_entropy_bounds_hand_case():
    lower_ok, upper_ok = check_entropy_bounds([1.0, 0.0], [0.5, 0.5])
    assert lower_ok and upper_ok
    h = relative_entropy([1.0, 0.0], [0.5, 0.5])
    assert 0.5 * 1.0**2 <= h <= 1.0 / 0.5


@given(st.integers(min_value=2, max_value=6), st.integers(min_value=0, max_value=2**31 - 1))
@settings(max_examples=120, deadline=None)
def test_entropy_bounds_fuzz(K, seed):
    rng = np.random.default_rng(seed)
    u = rng.dirichlet(np.ones(K))
    v = rng.dirichlet(np.full(K, 2.0)) + 1e-6
    v = v / v.sum()
    lower_ok, upper_ok = check_entropy_bounds(u, v)
    assert lower_ok and upper_ok
    assert relative_entropy(u, v) >= 0.0


def test_entropy_zero_iff_equal():
    u = np.array([0.3, 0.7])
    assert relative_entropy(u, u) <= 1e-12
    v = np.array([0.31, 0.69])
    assert relative_entropy(u, v) > 1e-12 * 0
    assert relative_entropy(u, v) > 0
