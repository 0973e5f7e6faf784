"""User-mobility generator: stationary law, transients, mixing profile.

The movement of a single user is a continuous-time Markov chain on the K
nodes with rate matrix Q.  This module validates Q, computes its stationary
distribution, evaluates transient transition probabilities by uniformization,
and derives the worst-case deviation profile and its mixing time.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import (
    DimensionMismatch,
    EpsOutOfRange,
    HorizonExceeded,
    InvalidValue,
    NegativeOffDiagonal,
    ReducibleGenerator,
    RowSumViolation,
    SingularSolve,
    TolTooSmall,
)

_ROW_SUM_TOL = 1e-12
_PI_TOL = 1e-10
# Uniformization is run on intervals with rate*length below this cap and the
# result is squared up to the target time, which keeps the series short for
# large times at a controlled error cost (each squaring at most doubles the
# row-sum error of the truncation).  The cap must stay well below ~700 so
# exp(-rate*length) does not underflow.
_SEGMENT_CAP = 512.0
_MAX_TERMS = 200_000
_MIN_BASE_TOL = 1e-15


@dataclass(frozen=True)
class MobilityProfile:
    """Validated mobility generator with derived stationary quantities."""

    K: int
    Q: np.ndarray
    pi: np.ndarray
    gamma: float
    pi_min: float
    pi_max: float


@dataclass(frozen=True)
class MixingProfile:
    """Worst-case deviation sampled on a time grid."""

    times: np.ndarray
    delta_values: np.ndarray
    tolerance: float


def _strongly_connected(adj: np.ndarray) -> bool:
    """True if the boolean adjacency matrix is one communicating class."""
    n = adj.shape[0]

    def reach(mat: np.ndarray) -> np.ndarray:
        seen = np.zeros(n, dtype=bool)
        seen[0] = True
        frontier = [0]
        while frontier:
            nxt = []
            for v in frontier:
                for w in np.nonzero(mat[v])[0]:
                    if not seen[w]:
                        seen[w] = True
                        nxt.append(w)
            frontier = nxt
        return seen

    return bool(reach(adj).all() and reach(adj.T).all())


def validate_generator(Q: np.ndarray) -> MobilityProfile:
    """Check Q is a proper irreducible rate matrix and derive pi, gamma.

    Raises RowSumViolation, NegativeOffDiagonal, ReducibleGenerator or
    SingularSolve on malformed input.
    """
    Q = np.asarray(Q, dtype=float)
    if Q.ndim != 2 or Q.shape[0] != Q.shape[1] or Q.shape[0] < 2:
        raise DimensionMismatch(f"Q must be square with K >= 2, got shape {Q.shape}")
    if not np.all(np.isfinite(Q)):
        raise InvalidValue("Q contains non-finite entries")
    K = Q.shape[0]
    off = Q.copy()
    np.fill_diagonal(off, 0.0)
    if np.any(off < 0):
        raise NegativeOffDiagonal("off-diagonal rates must be nonnegative")
    row_sums = Q.sum(axis=1)
    if np.any(np.abs(row_sums) > _ROW_SUM_TOL * max(1.0, np.abs(Q).max())):
        raise RowSumViolation(f"row sums must vanish, got {row_sums}")
    if not _strongly_connected(off > 0):
        raise ReducibleGenerator("positive-rate digraph is not strongly connected")

    # Stationary law: replace the last balance equation by the normalization.
    A = Q.T.copy()
    A[-1, :] = 1.0
    b = np.zeros(K)
    b[-1] = 1.0
    try:
        pi = np.linalg.solve(A, b)
    except np.linalg.LinAlgError as exc:
        raise SingularSolve(str(exc)) from exc
    if not np.all(np.isfinite(pi)):
        raise SingularSolve("stationary solve produced non-finite entries")
    if np.abs(pi @ Q).max() > _PI_TOL or abs(pi.sum() - 1.0) > _PI_TOL:
        raise SingularSolve("stationary residual above tolerance")
    if np.any(pi <= 0):
        raise SingularSolve("stationary distribution must be strictly positive")

    gamma = float(-np.trace(Q))
    prof = MobilityProfile(
        K=K,
        Q=Q,
        pi=pi,
        gamma=gamma,
        pi_min=float(pi.min()),
        pi_max=float(pi.max()),
    )
    return prof


def _uniformized_segment(Q: np.ndarray, t: float, tol: float) -> np.ndarray:
    """e^{tQ} by the Poisson-weighted power series, row-sum error <= tol."""
    K = Q.shape[0]
    rate = float(np.max(-np.diag(Q)))
    if rate == 0.0 or t == 0.0:
        return np.eye(K)
    P = np.eye(K) + Q / rate
    mu = rate * t
    # Terms are added until the Poisson tail (= the row-sum truncation error)
    # drops below tol.
    power = np.eye(K)
    weight = math.exp(-mu)
    total_weight = weight
    result = weight * power
    n = 0
    while 1.0 - total_weight > tol:
        n += 1
        if n > _MAX_TERMS:
            raise TolTooSmall(
                f"uniformization needs more than {_MAX_TERMS} terms for tol={tol}"
            )
        power = power @ P
        weight *= mu / n
        total_weight += weight
        result += weight * power
    return result


def transition_matrix(profile: MobilityProfile, t: float, tol: float = 1e-12) -> np.ndarray:
    """Transition probabilities over time t with per-entry error <= tol.

    Large rate*time products are handled by uniformizing a short segment and
    squaring, with the segment tolerance shrunk to absorb the doubling of the
    error at each squaring step.
    """
    if not (t >= 0):
        raise InvalidValue(f"time must be nonnegative, got {t}")
    if tol <= 0:
        raise TolTooSmall("tolerance must be positive")
    Q = profile.Q
    rate = float(np.max(-np.diag(Q)))
    mu = rate * t
    if mu <= _SEGMENT_CAP:
        P = _uniformized_segment(Q, t, tol)
    else:
        doublings = int(math.ceil(math.log2(mu / _SEGMENT_CAP)))
        base_tol = tol / (2.0 ** doublings)
        if base_tol < _MIN_BASE_TOL:
            raise TolTooSmall(
                f"t={t} needs base tolerance {base_tol:.2e}, below float precision"
            )
        P = _uniformized_segment(Q, t / (2 ** doublings), base_tol)
        for _ in range(doublings):
            P = P @ P
    return np.clip(P, 0.0, 1.0)


def mixing_deviation(profile: MobilityProfile, t: float, tol: float = 1e-12) -> float:
    """Worst-case absolute deviation of any row of P(t) from pi."""
    P = transition_matrix(profile, t, tol)
    return float(np.abs(P - profile.pi[None, :]).max())


def mixing_profile(
    profile: MobilityProfile,
    t_max: float | None = None,
    step: float | None = None,
    tol: float = 1e-12,
) -> MixingProfile:
    """Sample the deviation profile on a regular grid over [0, t_max].

    The grid is walked incrementally: P(t+step) = P(t) @ P(step), so the
    accumulated error stays below n_steps * tol.
    """
    if t_max is None:
        t_max = 200.0 / profile.gamma
    if step is None:
        step = 0.1 / profile.gamma
    n_steps = int(math.ceil(t_max / step))
    P_step = transition_matrix(profile, step, tol)
    times = np.empty(n_steps + 1)
    deltas = np.empty(n_steps + 1)
    P = np.eye(profile.K)
    for i in range(n_steps + 1):
        times[i] = i * step
        deltas[i] = np.abs(P - profile.pi[None, :]).max()
        if i < n_steps:
            P = P @ P_step
    return MixingProfile(times=times, delta_values=deltas, tolerance=(n_steps + 1) * tol)


def mixing_time(
    profile: MobilityProfile,
    eps: float,
    t_max: float | None = None,
    refine_tol: float = 1e-9,
) -> float:
    """Last time the worst-case deviation is at or above eps.

    The deviation need not be monotone, so the scan locates the last grid
    up-crossing over [0, t_max] and bisection refines between the last grid
    point at or above eps and the following point below it.
    """
    if not (0.0 < eps < 1.0):
        raise EpsOutOfRange(f"eps must lie in (0, 1), got {eps}")
    prof = mixing_profile(profile, t_max=t_max)
    deltas = prof.delta_values
    times = prof.times
    if deltas[-1] >= eps:
        raise HorizonExceeded(
            f"deviation still {deltas[-1]:.3e} >= eps at t={times[-1]:.3f}"
        )
    at_or_above = np.nonzero(deltas >= eps)[0]
    if len(at_or_above) == 0:
        return 0.0
    i = int(at_or_above[-1])
    lo, hi = float(times[i]), float(times[i + 1])
    while hi - lo > refine_tol:
        mid = 0.5 * (lo + hi)
        if mixing_deviation(profile, mid) >= eps:
            lo = mid
        else:
            hi = mid
    return 0.5 * (lo + hi)


def imbalance(y: np.ndarray, pi: np.ndarray) -> float:
    """L1 distance between the empirical node proportions of y and pi.

    Zero population counts as perfectly balanced.
    """
    y = np.asarray(y, dtype=float)
    pi = np.asarray(pi, dtype=float)
    if y.shape != pi.shape:
        raise DimensionMismatch(f"state shape {y.shape} vs pi shape {pi.shape}")
    total = y.sum()
    if total == 0:
        return 0.0
    return float(np.abs(y / total - pi).sum())
