"""Spectral functional of the mobility generator and the closed-system martingale.

For diagonalizable Q with left-eigenrow matrix omega, the product of the
eigen-coordinates over the nonzero-eigenvalue directions decays at the exact
rate gamma under the transition semigroup.  That identity powers a bounded
martingale for the closed system whose drift we can test by Monte Carlo, and
the relative-entropy bounds used alongside it are verified here as well.

Restricted to diagonalizable Q; defective generators are rejected.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy import integrate

from .errors import (
    DefectiveGenerator,
    DegenerateVector,
    DimensionUnsupported,
    QuadratureFailure,
    ZeroDenominator,
)
from .mobility import MobilityProfile, transition_matrix
from .paths import StatePath

_RESIDUAL_TOL = 1e-9
_CLUSTER_TOL = 1e-8


@dataclass(frozen=True)
class SpectralDecomposition:
    """Left-eigenrow decomposition of Q with pinned row normalization.

    eigenvalues lists the distinct eigenvalues with the zero eigenvalue last;
    multiplicities are algebraic (= geometric here); omega rows are left
    eigenvectors scaled to unit max-modulus with the first sizable entry made
    real positive; row_of[i] is the omega row representing eigenvalues[i].
    """

    eigenvalues: np.ndarray
    multiplicities: np.ndarray
    omega: np.ndarray
    gamma: float
    row_of: np.ndarray


@dataclass(frozen=True)
class SimplexGeometry:
    """Embedding of the solid (K-1)-simplex into probability vectors."""

    K: int
    pi: np.ndarray

    @property
    def Pi(self) -> np.ndarray:
        return np.diag(self.pi)

    def complete(self, u: np.ndarray) -> np.ndarray:
        """Append the missing mass so u becomes a probability vector."""
        u = np.asarray(u, dtype=float)
        return np.concatenate([u, [1.0 - u.sum()]])

    def project(self, v: np.ndarray) -> np.ndarray:
        """Inverse of complete: drop the last coordinate."""
        return np.asarray(v, dtype=float)[:-1]


def spectral_decomposition(profile: MobilityProfile) -> SpectralDecomposition:
    """Diagonalize Q into left eigenrows; reject defective generators."""
    Q = profile.Q
    K = profile.K
    eigvals, right = np.linalg.eig(Q.T)
    # Columns of `right` are right eigenvectors of Q^T, i.e. rows of omega.
    cond = np.linalg.cond(right)
    if not np.isfinite(cond) or cond > 1e12:
        raise DefectiveGenerator(
            f"eigenvector matrix condition {cond:.2e}; Q is defective or near-defective"
        )
    omega = right.T.copy()

    # Pin the row scale: unit max-modulus, first sizable entry real positive.
    for i in range(K):
        row = omega[i]
        scale = np.abs(row).max()
        row = row / scale
        j = int(np.argmax(np.abs(row) > 1e-9))
        phase = row[j] / abs(row[j])
        omega[i] = row / phase

    residual = np.abs(omega @ Q - eigvals[:, None] * omega).max()
    if residual > _RESIDUAL_TOL:
        raise DefectiveGenerator(f"decomposition residual {residual:.2e}")

    # Cluster equal eigenvalues; the zero eigenvalue goes last.
    scale = max(1.0, np.abs(eigvals).max())
    order = np.argsort(np.abs(eigvals))[::-1]
    distinct: list[complex] = []
    mult: list[int] = []
    rows: list[int] = []
    used = np.zeros(K, dtype=bool)
    for idx in order:
        if used[idx]:
            continue
        close = np.abs(eigvals - eigvals[idx]) <= _CLUSTER_TOL * scale
        used |= close
        distinct.append(eigvals[idx])
        mult.append(int(close.sum()))
        rows.append(int(idx))
    zero_pos = int(np.argmin(np.abs(np.asarray(distinct))))
    if abs(distinct[zero_pos]) > _CLUSTER_TOL * scale:
        raise DefectiveGenerator("no zero eigenvalue found; Q is not a generator")
    order2 = [i for i in range(len(distinct)) if i != zero_pos] + [zero_pos]
    distinct = [distinct[i] for i in order2]
    mult = [mult[i] for i in order2]
    rows = [rows[i] for i in order2]
    if mult[-1] != 1:
        raise DefectiveGenerator("zero eigenvalue is not simple; Q is reducible")

    gamma_spec = -sum(m * ev.real for m, ev in zip(mult[:-1], distinct[:-1]))
    if abs(gamma_spec - profile.gamma) > 1e-9 * max(1.0, profile.gamma):
        raise DefectiveGenerator(
            f"eigenvalue sum {gamma_spec} does not match trace {profile.gamma}"
        )
    return SpectralDecomposition(
        eigenvalues=np.asarray(distinct),
        multiplicities=np.asarray(mult, dtype=int),
        omega=omega,
        gamma=profile.gamma,
        row_of=np.asarray(rows, dtype=int),
    )


def spectral_product(dec: SpectralDecomposition, u: np.ndarray) -> float:
    """Product of |omega u| coordinates over nonzero-eigenvalue directions."""
    u = np.asarray(u, dtype=float)
    value = 1.0
    for ev, m, row in zip(dec.eigenvalues[:-1], dec.multiplicities[:-1], dec.row_of[:-1]):
        value *= abs(np.dot(dec.omega[row], u)) ** m
    return float(value)


def spectral_decay_error(
    dec: SpectralDecomposition,
    profile: MobilityProfile,
    u: np.ndarray,
    t_grid: np.ndarray,
    tol: float = 1e-14,
) -> float:
    """Max relative violation of the exact-decay identity along the grid.

    The identity: applying the time-t transition matrix to u multiplies the
    spectral product by exp(-gamma t).
    """
    base = spectral_product(dec, u)
    if base == 0.0:
        raise DegenerateVector("spectral product vanishes at u")
    worst = 0.0
    for t in np.asarray(t_grid, dtype=float):
        Pu = transition_matrix(profile, t, tol) @ np.asarray(u, dtype=float)
        ratio = spectral_product(dec, Pu) * math.exp(profile.gamma * t) / base
        worst = max(worst, abs(ratio - 1.0))
    return worst


def _weight_function(dec: SpectralDecomposition, geom: SimplexGeometry):
    """Callable u -> spectral product of Pi^{-1} (completed u)."""
    inv_pi = 1.0 / geom.pi

    def F_of(u: np.ndarray) -> float:
        return spectral_product(dec, inv_pi * geom.complete(u))

    return F_of


def _integrand_factory(
    dec: SpectralDecomposition, geom: SimplexGeometry, counts: np.ndarray, c: float
):
    pi = geom.pi
    F_of = _weight_function(dec, geom)
    active = counts > 0

    def f(*u):
        u = np.asarray(u, dtype=float)
        v = geom.complete(u)
        if np.any(v < 0):
            return 0.0
        if np.any(v[active] == 0.0):
            return 0.0
        log_base = float(np.sum(counts[active] * np.log(v[active] / pi[active])))
        w = F_of(u)
        if w == 0.0:
            return 0.0 if c >= 1.0 else math.inf
        return math.exp(log_base + (c - 1.0) * math.log(w))

    return f


def _zero_locus_1d(dec: SpectralDecomposition, geom: SimplexGeometry) -> list[float]:
    """Interior zeros of the weight along the 1-simplex (K = 2 only)."""
    pts = []
    row = dec.omega[dec.row_of[0]]
    a = row[0] / geom.pi[0]
    b = row[1] / geom.pi[1]
    # weight(u) = |a u + b (1-u)|; zero where u (a - b) = -b.
    denom = a - b
    if abs(denom) > 1e-300:
        u_star = -b / denom
        if np.isreal(u_star) and 0.0 < u_star.real < 1.0:
            if abs(a * u_star.real + b * (1 - u_star.real)) < 1e-8:
                pts.append(float(u_star.real))
    return pts


def closed_martingale(
    dec: SpectralDecomposition,
    geom: SimplexGeometry,
    c: float,
    path: StatePath | np.ndarray,
    t: float,
    quad_tol: float = 1e-8,
) -> float:
    """Martingale functional of the closed system at time t.

    Evaluates exp(-c gamma t) times the simplex integral of the product of
    per-node occupation powers against the spectral weight to the power c-1.
    `path` may be a closed-system path (evaluated at t) or a state vector.
    Supports K in {2, 3}; the c < 1 weight singularity is integrable and the
    singular locus is passed to the adaptive rule as breakpoints.
    """
    if c <= 0:
        raise DegenerateVector("exponent c must be positive")
    K = geom.K
    if K not in (2, 3):
        raise DimensionUnsupported("simplex quadrature implemented for K in {2, 3}")
    if isinstance(path, StatePath):
        state = path.value(t)
    else:
        state = np.asarray(path, dtype=float)
    counts = np.asarray(state, dtype=float)
    f = _integrand_factory(dec, geom, counts, c)
    try:
        if K == 2:
            points = _zero_locus_1d(dec, geom)
            integral, abserr = integrate.quad(
                f, 0.0, 1.0, points=points or None, epsabs=0.0, epsrel=quad_tol, limit=400
            )
        else:
            integral, abserr = integrate.dblquad(
                lambda u2, u1: f(u1, u2),
                0.0,
                1.0,
                0.0,
                lambda u1: 1.0 - u1,
                epsabs=0.0,
                epsrel=quad_tol * 0.5,
            )
    except Exception as exc:  # quadpack signals trouble via exceptions/warnings
        raise QuadratureFailure(str(exc)) from exc
    if not np.isfinite(integral):
        raise QuadratureFailure("integral not finite")
    if integral > 0 and abserr > 10 * quad_tol * abs(integral) + 1e-300:
        raise QuadratureFailure(
            f"estimated error {abserr:.2e} above tolerance for integral {integral:.2e}"
        )
    return math.exp(-c * dec.gamma * t) * integral


def martingale_upper_bound(
    dec: SpectralDecomposition, geom: SimplexGeometry, c: float, total: int,
    quad_tol: float = 1e-8,
) -> float:
    """Uniform bound: pi_min^{-total} times the integral of the weight power."""
    zero = np.zeros(geom.K)
    bound_integral = closed_martingale(dec, geom, c, zero, 0.0, quad_tol)
    return float(geom.pi.min() ** (-total) * bound_integral)


def finite_constant_scan(
    dec: SpectralDecomposition,
    geom: SimplexGeometry,
    c_grid: np.ndarray,
    quad_tol: float = 1e-8,
) -> float:
    """Empirical maximum of c^K * integral(weight^{c-1}) over a grid in (0,1).

    The supremum is asserted finite by the theory without a value; this scan
    reports the observed maximum.
    """
    zero = np.zeros(geom.K)
    worst = 0.0
    for c in np.asarray(c_grid, dtype=float):
        val = (c**geom.K) * closed_martingale(dec, geom, c, zero, 0.0, quad_tol)
        worst = max(worst, val)
    return worst


def relative_entropy(u: np.ndarray, v: np.ndarray) -> float:
    """Relative entropy sum_k u_k log(u_k / v_k), with 0 log 0 = 0."""
    u = np.asarray(u, dtype=float)
    v = np.asarray(v, dtype=float)
    if u.shape != v.shape:
        raise ZeroDenominator("probability vectors must have equal length")
    if np.any(v <= 0):
        raise ZeroDenominator("reference vector must be strictly positive")
    mask = u > 0
    return float(np.sum(u[mask] * np.log(u[mask] / v[mask])))


def check_entropy_bounds(u: np.ndarray, v: np.ndarray) -> tuple[bool, bool]:
    """Pinsker lower bound and the convexity upper bound, as pass flags."""
    u = np.asarray(u, dtype=float)
    v = np.asarray(v, dtype=float)
    h = relative_entropy(u, v)
    l1 = float(np.abs(u - v).sum())
    lower_ok = 0.5 * l1 * l1 <= h + 1e-12
    upper_ok = h <= l1 / float(v.min()) + 1e-12
    return lower_ok, upper_ok
