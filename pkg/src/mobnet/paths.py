"""Piecewise-constant cadlag paths and the functional operators on them.

A StatePath holds event times and the state taken at each event; the path is
right-continuous and constant between events.  All hitting times land exactly
on event times, so every operator here is exact (no root finding and no
tolerance in the contracts).

A ScaledPath is a lazy diffusion-scaled view of a base path: value at t is
base(n^2 t)/n.  Operators accept either kind and act on a scaled view by
delegating to the base path with transformed levels and times, so nothing is
copied.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from .errors import DimensionMismatch, EmptyGrid, LevelNeverReached


@dataclass(frozen=True)
class StatePath:
    """Right-continuous piecewise-constant path with explicit event times.

    `stopped_at` marks a path frozen by the stop operator at its first zero;
    None means the path simply runs to its horizon (for excursions this is
    the "incomplete" flag: the zero was never reached).
    """

    event_times: np.ndarray
    states: np.ndarray
    horizon: float
    stopped_at: float | None = None
    _norms: np.ndarray = field(init=False, repr=False, compare=False, default=None)

    def __post_init__(self):
        times = np.asarray(self.event_times, dtype=float)
        states = np.asarray(self.states, dtype=float)
        if states.ndim == 1:
            states = states[:, None]
        if times.ndim != 1 or len(times) != len(states):
            raise DimensionMismatch("event_times and states must have equal length")
        if len(times) == 0 or times[0] != 0.0:
            raise DimensionMismatch("paths must start with an event at time 0")
        if np.any(np.diff(times) <= 0):
            raise DimensionMismatch("event times must be strictly increasing")
        object.__setattr__(self, "event_times", times)
        object.__setattr__(self, "states", states)
        object.__setattr__(self, "_norms", np.abs(states).sum(axis=1))

    @property
    def dim(self) -> int:
        return self.states.shape[1]

    @property
    def norms(self) -> np.ndarray:
        """L1 norm of the state at each event."""
        return self._norms

    def _index_at(self, t: float) -> int:
        return int(np.searchsorted(self.event_times, t, side="right") - 1)

    def value(self, t: float) -> np.ndarray:
        """State at time t (state of the last event at or before t)."""
        return self.states[self._index_at(t)]

    def norm(self, t: float) -> float:
        return float(self._norms[self._index_at(t)])

    def values(self, ts: np.ndarray) -> np.ndarray:
        idx = np.searchsorted(self.event_times, np.asarray(ts, dtype=float), side="right") - 1
        return self.states[idx]


@dataclass(frozen=True)
class ScaledPath:
    """Diffusion-scaled view of a base path: value(t) = base(n^2 t) / n."""

    base: StatePath
    n: int

    @property
    def dim(self) -> int:
        return self.base.dim

    @property
    def horizon(self) -> float:
        return self.base.horizon / self.n**2

    def value(self, t: float) -> np.ndarray:
        return self.base.value(t * self.n**2) / self.n

    def norm(self, t: float) -> float:
        return self.base.norm(t * self.n**2) / self.n

    def values(self, ts: np.ndarray) -> np.ndarray:
        return self.base.values(np.asarray(ts, dtype=float) * self.n**2) / self.n


Path = StatePath | ScaledPath


def rescale(base: StatePath, n: int) -> ScaledPath:
    """Lazy heavy-traffic rescaling (time by n^2, space by n)."""
    if n < 1:
        raise DimensionMismatch("scaling index must be >= 1")
    return ScaledPath(base=base, n=int(n))


def reflect(f: StatePath) -> StatePath:
    """Reflect a scalar path above its past infimum (one sweep)."""
    if f.dim != 1:
        raise DimensionMismatch("reflection is defined for scalar paths")
    vals = f.states[:, 0]
    running_inf = np.minimum.accumulate(np.minimum(vals, 0.0))
    return StatePath(
        event_times=f.event_times,
        states=vals - running_inf,
        horizon=f.horizon,
        stopped_at=f.stopped_at,
    )


def first_time_above(f: Path, level: float) -> float | None:
    """First time the L1 norm is >= level; None if never within the horizon."""
    if isinstance(f, ScaledPath):
        t = first_time_above(f.base, level * f.n)
        return None if t is None else t / f.n**2
    hits = np.nonzero(f.norms >= level)[0]
    if len(hits) == 0:
        return None
    return float(f.event_times[hits[0]])


def first_time_below(f: Path, level: float) -> float | None:
    """First time the L1 norm is <= level; None if never within the horizon."""
    if isinstance(f, ScaledPath):
        t = first_time_below(f.base, level * f.n)
        return None if t is None else t / f.n**2
    hits = np.nonzero(f.norms <= level)[0]
    if len(hits) == 0:
        return None
    return float(f.event_times[hits[0]])


def first_zero(f: Path) -> float | None:
    """First time the norm vanishes.

    A path whose norm is zero on a right neighborhood of 0 (it starts at
    zero) returns 0.0; otherwise the first event with zero norm, or None if
    the norm never vanishes within the horizon.
    """
    if isinstance(f, ScaledPath):
        t = first_zero(f.base)
        return None if t is None else t / f.n**2
    hits = np.nonzero(f.norms == 0.0)[0]
    if len(hits) == 0:
        return None
    return float(f.event_times[hits[0]])


def first_coordinate_zero(f: Path) -> float | None:
    """Earliest first-zero time over the coordinate paths.

    None only if every coordinate stays nonzero for the whole horizon.
    """
    if isinstance(f, ScaledPath):
        t = first_coordinate_zero(f.base)
        return None if t is None else t / f.n**2
    best = None
    for k in range(f.dim):
        hits = np.nonzero(f.states[:, k] == 0.0)[0]
        if len(hits) > 0:
            t = float(f.event_times[hits[0]])
            if best is None or t < best:
                best = t
    return best


def stop_at_first_zero(f: StatePath) -> StatePath:
    """Freeze the path at its first zero-norm time (explicit marker kept)."""
    t0 = first_zero(f)
    if t0 is None:
        return replace(f, stopped_at=None)
    keep = f.event_times <= t0
    return StatePath(
        event_times=f.event_times[keep],
        states=f.states[keep],
        horizon=f.horizon,
        stopped_at=t0,
    )


def shift(f: StatePath, t: float) -> StatePath:
    """Shift the time origin to t (value at new time s is f(t + s))."""
    idx = f._index_at(t)
    times = f.event_times[idx:] - t
    times[0] = 0.0
    return StatePath(
        event_times=times,
        states=f.states[idx:],
        horizon=max(f.horizon - t, 0.0),
        stopped_at=None,
    )


def excursion_reaching(f: Path, level: float) -> Path:
    """Shift to the first time the norm reaches `level`, stop at the next zero.

    The result carries stopped_at=None when the zero was not reached before
    the horizon (incomplete excursion).
    """
    if level <= 0:
        raise LevelNeverReached("level must be positive")
    if isinstance(f, ScaledPath):
        return ScaledPath(base=excursion_reaching(f.base, level * f.n), n=f.n)
    t_up = first_time_above(f, level)
    if t_up is None:
        raise LevelNeverReached(f"norm never reaches {level} before the horizon")
    return stop_at_first_zero(shift(f, t_up))


def excursion_start(f: Path, level: float) -> float:
    """Left endpoint of the first excursion whose norm reaches `level`.

    This is the last event time at or before the level-crossing at which the
    norm is zero; 0.0 when the norm never vanished before the crossing.
    """
    if isinstance(f, ScaledPath):
        return excursion_start(f.base, level * f.n) / f.n**2
    t_up = first_time_above(f, level)
    if t_up is None:
        raise LevelNeverReached(f"norm never reaches {level} before the horizon")
    idx_up = f._index_at(t_up)
    zeros = np.nonzero(f.norms[: idx_up + 1] == 0.0)[0]
    if len(zeros) == 0:
        return 0.0
    return float(f.event_times[zeros[-1]])


def ratio_path(X: ScaledPath, pi: np.ndarray) -> StatePath:
    """Proportion process of the scaled path, equal to pi at empty states."""
    base = X.base
    norms = base.norms
    states = np.where(
        norms[:, None] > 0,
        base.states / np.where(norms[:, None] == 0, 1.0, norms[:, None]),
        np.asarray(pi, dtype=float)[None, :],
    )
    return StatePath(
        event_times=base.event_times / X.n**2,
        states=states,
        horizon=base.horizon / X.n**2,
    )


def collapse_gap(X: Path, pi: np.ndarray, grid: np.ndarray) -> float:
    """Largest deviation on the grid from exact proportionality to pi.

    Measures max_t || X(t) - pi * |X(t)| ||_1, the state-space-collapse
    deviation functional.
    """
    grid = np.asarray(grid, dtype=float)
    if grid.size == 0:
        raise EmptyGrid("collapse gap needs at least one grid time")
    pi = np.asarray(pi, dtype=float)
    vals = X.values(grid)
    norms = np.abs(vals).sum(axis=1)
    gaps = np.abs(vals - norms[:, None] * pi[None, :]).sum(axis=1)
    return float(gaps.max())
