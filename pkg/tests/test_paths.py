import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from mobnet import (
    StatePath,
    collapse_gap,
    errors,
    excursion_reaching,
    excursion_start,
    first_coordinate_zero,
    first_time_above,
    first_time_below,
    first_zero,
    ratio_path,
    reflect,
    rescale,
)


def scalar_path(times, values, horizon=None):
    times = np.asarray(times, dtype=float)
    return StatePath(
        event_times=times,
        states=np.asarray(values, dtype=float),
        horizon=float(horizon if horizon is not None else times[-1] + 1.0),
    )


def test_path_evaluation_right_continuous():
    p = scalar_path([0.0, 1.0, 2.5], [1.0, 3.0, 0.0])
    assert p.value(0.0)[0] == 1.0
    assert p.value(0.99)[0] == 1.0
    assert p.value(1.0)[0] == 3.0
    assert p.value(2.5)[0] == 0.0
    assert p.value(3.0)[0] == 0.0


def test_reflect_hand_sweep():
    p = scalar_path([0.0, 1.0, 2.0], [0.0, -1.0, 1.0])
    r = reflect(p)
    assert np.allclose(r.states[:, 0], [0.0, 0.0, 2.0])


def test_reflect_nonnegative_fixed_point():
    p = scalar_path([0.0, 0.5, 1.5], [0.0, 2.0, 1.0])
    r = reflect(p)
    assert np.allclose(r.states, p.states)


def test_reflect_constant_negative():
    p = scalar_path([0.0, 1.0], [-3.0, -3.0 + 0.0001])
    r = reflect(p)
    assert r.states[0, 0] == 0.0


def test_reflect_idempotent_random():
    rng = np.random.default_rng(0)
    for _ in range(20):
        n = rng.integers(2, 30)
        times = np.concatenate([[0.0], np.sort(rng.random(n - 1)) + 1e-3])
        times = np.unique(times)
        vals = rng.integers(-5, 6, size=len(times)).astype(float)
        p = scalar_path(times, vals)
        once = reflect(p)
        twice = reflect(once)
        assert np.allclose(once.states, twice.states)
        assert (once.states >= 0).all()


def test_reflect_needs_scalar():
    p = StatePath(
        event_times=np.array([0.0]), states=np.array([[1.0, 2.0]]), horizon=1.0
    )
    with pytest.raises(errors.DimensionMismatch):
        reflect(p)


def test_first_time_above_counts_steps():
    # unit steps at integer times: level 3.5 first reached at the 4th step
    p = scalar_path([0.0, 1.0, 2.0, 3.0, 4.0, 5.0], [0, 1, 2, 3, 4, 5])
    assert first_time_above(p, 3.5) == 4.0
    assert first_time_above(p, 0.0) == 0.0
    assert first_time_above(p, 99.0) is None


def test_first_time_below_and_zero():
    p = scalar_path([0.0, 1.0, 5.0, 9.0], [4.0, 2.0, 0.0, 3.0])
    assert first_time_below(p, 2.0) == 1.0
    assert first_zero(p) == 5.0
    q = scalar_path([0.0, 1.0], [2.0, 1.0])
    assert first_zero(q) is None


def test_first_zero_starts_at_zero_convention():
    # zero on a right neighborhood of 0 gives first_zero = 0
    p = scalar_path([0.0, 2.0, 4.0], [0.0, 5.0, 0.0])
    assert first_zero(p) == 0.0


def test_first_coordinate_zero_vector_trace():
    times = [0.0, 5.0, 9.0]
    states = [[2.0, 1.0], [2.0, 0.0], [0.0, 0.0]]
    p = StatePath(event_times=np.array(times), states=np.array(states), horizon=10.0)
    assert first_coordinate_zero(p) == 5.0


def test_excursion_reaching_hand_trace():
    p = scalar_path([0.0, 1.0, 2.0, 3.0, 4.0, 5.0, 6.0], [0, 1, 2, 1, 0, 1, 0])
    exc = excursion_reaching(p, 2.0)
    assert exc.event_times[0] == 0.0
    assert exc.states[0, 0] == 2.0
    assert exc.stopped_at == 2.0  # zero happens two time units after the crossing
    assert exc.states[-1, 0] == 0.0


def test_excursion_no_shift_when_started_high():
    p = scalar_path([0.0, 1.0, 2.0], [3.0, 1.0, 0.0])
    exc = excursion_reaching(p, 2.0)
    assert exc.states[0, 0] == 3.0
    assert exc.stopped_at == 2.0


def test_excursion_incomplete_flagged():
    p = scalar_path([0.0, 1.0, 2.0], [0.0, 3.0, 4.0])
    exc = excursion_reaching(p, 2.0)
    assert exc.stopped_at is None


def test_excursion_level_never_reached():
    p = scalar_path([0.0, 1.0], [0.0, 1.0])
    with pytest.raises(errors.LevelNeverReached):
        excursion_reaching(p, 5.0)


def test_excursion_start_hand_trace():
    # zero-valued events at 0, 3, 7; the level is first reached at 9
    p = scalar_path(
        [0.0, 1.0, 3.0, 4.0, 7.0, 8.0, 9.0], [0.0, 1.0, 0.0, 2.0, 0.0, 1.0, 5.0]
    )
    assert excursion_start(p, 5.0) == 7.0
    assert excursion_start(p, 1.0) == 0.0  # reached at t=1, last zero at 0


def test_excursion_start_high_start():
    p = scalar_path([0.0, 1.0], [5.0, 1.0])
    assert excursion_start(p, 4.0) == 0.0


def test_excursion_start_no_prior_zero():
    p = scalar_path([0.0, 1.0, 2.0], [1.0, 2.0, 5.0])
    assert excursion_start(p, 5.0) == 0.0


def test_rescale_identity_at_one():
    p = scalar_path([0.0, 1.0, 2.0], [0.0, 2.0, 1.0])
    X = rescale(p, 1)
    assert X.value(1.5)[0] == p.value(1.5)[0]


def test_rescale_commutes_with_evaluation():
    p = scalar_path([0.0, 4.0, 8.0], [0.0, 8.0, 4.0])
    X = rescale(p, 2)
    for t in (0.0, 0.9, 1.0, 1.9, 2.0):
        assert X.value(t)[0] == pytest.approx(p.value(4 * t)[0] / 2.0)


def test_rescaled_operators_delegate_exactly():
    p = scalar_path([0.0, 4.0, 8.0, 12.0], [0.0, 4.0, 8.0, 0.0])
    X = rescale(p, 2)
    assert first_time_above(X, 2.0) == pytest.approx(4.0 / 4.0)
    assert first_zero(X) == 0.0
    assert excursion_start(X, 2.0) == pytest.approx(0.0)


def test_collapse_gap_exact_proportionality():
    pi = np.array([0.5, 0.5])
    states = np.array([[0.0, 0.0], [2.0, 2.0], [5.0, 5.0]])
    p = StatePath(event_times=np.array([0.0, 1.0, 2.0]), states=states, horizon=3.0)
    assert collapse_gap(rescale(p, 1), pi, np.array([0.5, 1.5, 2.5])) == 0.0


def test_collapse_gap_single_user_formula():
    pi = np.array([0.5, 0.5])
    states = np.array([[1.0, 0.0]])
    p = StatePath(event_times=np.array([0.0]), states=states, horizon=10.0)
    for n in (1, 2, 5):
        X = rescale(p, n)
        expected = np.abs(np.array([1.0, 0.0]) - pi).sum() / n
        assert collapse_gap(X, pi, np.array([0.1])) == pytest.approx(expected)


def test_collapse_gap_empty_grid():
    p = scalar_path([0.0], [1.0])
    with pytest.raises(errors.EmptyGrid):
        collapse_gap(rescale(p, 1), np.array([1.0]), np.array([]))


def test_ratio_path_pi_at_zero():
    pi = np.array([0.25, 0.75])
    states = np.array([[0.0, 0.0], [1.0, 3.0]])
    p = StatePath(event_times=np.array([0.0, 1.0]), states=states, horizon=2.0)
    r = ratio_path(rescale(p, 1), pi)
    assert np.allclose(r.states[0], pi)
    assert np.allclose(r.states[1], [0.25, 0.75])


@st.composite
def step_paths(draw):
    n = draw(st.integers(min_value=1, max_value=25))
    deltas = draw(
        st.lists(
            st.floats(min_value=1e-3, max_value=2.0), min_size=n - 1, max_size=n - 1
        )
    )
    times = np.concatenate([[0.0], np.cumsum(deltas)]) if n > 1 else np.array([0.0])
    vals = draw(
        st.lists(st.integers(min_value=0, max_value=8), min_size=n, max_size=n)
    )
    return scalar_path(times, np.asarray(vals, dtype=float))


@given(step_paths(), st.floats(min_value=0.5, max_value=8.0))
@settings(max_examples=80, deadline=None)
def test_excursion_start_before_crossing(p, eps):
    t_up = first_time_above(p, eps)
    if t_up is None:
        return
    g = excursion_start(p, eps)
    assert g <= t_up
    exc = excursion_reaching(p, eps)
    assert np.abs(exc.states[0]).sum() >= eps
