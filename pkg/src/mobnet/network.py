"""Exact event-driven simulation of the open network and its couplings.

The open system is a Markov jump process on N^K: Poisson arrivals per node,
per-node service capacity released as departures (one uniformly chosen user
of the node), and independent user movements driven by the mobility
generator.  `simulate_coupled` realizes the open system, the closed system
(initial users only, arrivals and departures ignored) and the M/M/1 walk on
one set of stochastic primitives, so the pathwise coupling inequalities hold
surely, not just in distribution.
"""

from __future__ import annotations

import heapq
import math
from dataclasses import dataclass

import numpy as np

from . import rng
from .errors import (
    CycleBudgetExceeded,
    DimensionMismatch,
    EmptyTagNode,
    EventBudgetExceeded,
    InsufficientCycles,
    InvalidValue,
    UnstableParams,
    ZeroHorizon,
)
from .mobility import MobilityProfile, imbalance
from .paths import StatePath, reflect

_SUM_TOL = 1e-12

ARRIVAL, DEPARTURE, MOVE = 0, 1, 2
EVENT_NAMES = {ARRIVAL: "arrival", DEPARTURE: "departure", MOVE: "move"}


@dataclass(frozen=True)
class NetworkParams:
    """One system of the sequence: per-node arrival rates and capacities."""

    mobility: MobilityProfile
    lambda_k: np.ndarray
    mu_k: np.ndarray
    lambda_total: float
    mu_total: float
    rho: float
    kappa_bound: float

    def __post_init__(self):
        lam = np.asarray(self.lambda_k, dtype=float)
        mu = np.asarray(self.mu_k, dtype=float)
        object.__setattr__(self, "lambda_k", lam)
        object.__setattr__(self, "mu_k", mu)
        K = self.mobility.K
        if lam.shape != (K,) or mu.shape != (K,):
            raise DimensionMismatch("rate vectors must have one entry per node")
        if np.any(lam < 0) or np.any(mu < 0):
            raise InvalidValue("rates must be nonnegative")
        if abs(lam.sum() - self.lambda_total) > _SUM_TOL * max(1.0, lam.sum()):
            raise InvalidValue("lambda_total does not match the vector sum")
        if abs(mu.sum() - self.mu_total) > _SUM_TOL * max(1.0, mu.sum()):
            raise InvalidValue("mu_total does not match the vector sum")
        if self.lambda_total + self.mu_total > self.kappa_bound + _SUM_TOL:
            raise InvalidValue("lambda_total + mu_total exceeds kappa_bound")


def network_params(
    mobility: MobilityProfile,
    lambda_k,
    mu_k,
    kappa_bound: float | None = None,
) -> NetworkParams:
    """Build NetworkParams with derived aggregates.

    The load is lambda/mu; it is inf (nan for 0/0) when the system has no
    service capacity, which only matters to operations that require rho < 1.
    """
    lam = np.asarray(lambda_k, dtype=float)
    mu = np.asarray(mu_k, dtype=float)
    lam_total = float(lam.sum())
    mu_total = float(mu.sum())
    if mu_total > 0:
        rho = lam_total / mu_total
    else:
        rho = math.inf if lam_total > 0 else math.nan
    if kappa_bound is None:
        kappa_bound = lam_total + mu_total
    return NetworkParams(
        mobility=mobility,
        lambda_k=lam,
        mu_k=mu,
        lambda_total=lam_total,
        mu_total=mu_total,
        rho=rho,
        kappa_bound=float(kappa_bound),
    )


def total_jump_rate(params: NetworkParams, y: np.ndarray) -> float:
    """Aggregate event rate of the open system at state y.

    This is the exponential-clock rate the exact simulator samples from:
    arrivals plus occupied-node capacities plus per-user movement rates.
    """
    y = np.asarray(y)
    move = float(np.dot(y, -np.diag(params.mobility.Q)))
    return float(params.lambda_total + params.mu_k[y > 0].sum() + move)


def _jump_cumprobs(Q: np.ndarray) -> np.ndarray:
    """Row-wise cumulative destination probabilities of the jump chain."""
    K = Q.shape[0]
    probs = Q.copy()
    np.fill_diagonal(probs, 0.0)
    rates = probs.sum(axis=1)
    probs = probs / rates[:, None]
    return np.cumsum(probs, axis=1)


def _check_initial(initial, K: int) -> np.ndarray:
    y = np.asarray(initial, dtype=np.int64)
    if y.shape != (K,):
        raise DimensionMismatch(f"initial state must have {K} entries")
    if np.any(y < 0):
        raise InvalidValue("initial state must be nonnegative")
    return y.copy()


def simulate_open(
    params: NetworkParams,
    initial,
    horizon: float,
    seed: int,
    max_events: int = 2_000_000,
    return_events: bool = False,
):
    """Exact jump path of the open system (competing-exponentials method).

    Deterministic given (params, initial, horizon, seed).  With
    return_events=True also returns an array of rows (t, kind, node_from,
    node_to); kind is 0 arrival, 1 departure, 2 movement, and node_from is -1
    for arrivals, node_to is -1 for departures.
    """
    if horizon <= 0:
        raise ZeroHorizon("horizon must be positive")
    K = params.mobility.K
    y = _check_initial(initial, K)
    clock = rng.stream(seed, rng.CLOCK)
    choice = rng.stream(seed, rng.CATEGORY)
    lam = params.lambda_k
    mu = params.mu_k
    c_vec = -np.diag(params.mobility.Q)
    Jcum = _jump_cumprobs(params.mobility.Q)

    times = [0.0]
    states = [y.copy()]
    events = []
    t = 0.0
    for _ in range(max_events):
        rates = np.concatenate([lam, mu * (y > 0), c_vec * y])
        total = rates.sum()
        if total == 0.0:
            break
        t += clock.standard_exponential() / total
        if t >= horizon:
            break
        cum = np.cumsum(rates)
        idx = int(np.searchsorted(cum, choice.random() * total, side="right"))
        idx = min(idx, 3 * K - 1)
        if idx < K:
            y[idx] += 1
            events.append((t, ARRIVAL, -1, idx))
        elif idx < 2 * K:
            k = idx - K
            y[k] -= 1
            events.append((t, DEPARTURE, k, -1))
        else:
            k = idx - 2 * K
            dest = int(np.searchsorted(Jcum[k], choice.random(), side="right"))
            y[k] -= 1
            y[dest] += 1
            events.append((t, MOVE, k, dest))
        times.append(t)
        states.append(y.copy())
    else:
        raise EventBudgetExceeded(f"more than {max_events} events before the horizon")

    path = StatePath(
        event_times=np.asarray(times),
        states=np.asarray(states, dtype=float),
        horizon=horizon,
    )
    if return_events:
        return path, np.asarray(events, dtype=float).reshape(-1, 4)
    return path


@dataclass(frozen=True)
class CouplingBundle:
    """Jointly realized open system, closed system, free walk and its reflection.

    All four paths share the time origin and horizon.  arrival_events and
    departure_events are the per-node primitive streams; the walk is
    initial-total + arrivals - departure-rings and the mm1 path is its
    reflection above the past infimum.
    """

    open_path: StatePath
    closed_path: StatePath
    walk_path: StatePath
    mm1_path: StatePath
    arrival_events: tuple
    departure_events: tuple
    seed: int


def _poisson_stream(gen: np.random.Generator, rate: float, horizon: float) -> np.ndarray:
    n = gen.poisson(rate * horizon) if rate > 0 else 0
    return np.sort(gen.random(n) * horizon)


def _sample_jumps(
    gen: np.random.Generator,
    start: int,
    t0: float,
    horizon: float,
    c_vec: np.ndarray,
    Jcum: np.ndarray,
):
    """Jump times/nodes of one user's mobility chain on (t0, horizon)."""
    ts, nodes = [], []
    node = start
    t = t0
    while True:
        t += gen.standard_exponential() / c_vec[node]
        if t >= horizon:
            break
        node = int(np.searchsorted(Jcum[node], gen.random(), side="right"))
        ts.append(t)
        nodes.append(node)
    return ts, nodes


def simulate_coupled(
    params: NetworkParams,
    initial,
    horizon: float,
    seed: int,
    max_events: int = 2_000_000,
) -> CouplingBundle:
    """Open system, closed system and M/M/1 walk on shared primitives.

    Per-node arrival and departure-ring streams are generated once; a
    departure ring removes a uniformly chosen user of the node (null event if
    the node is empty).  Every initial user carries one mobility trajectory
    over the whole horizon driving both the open path (while the user is
    present) and the closed path (always).  Users arriving later move only in
    the open path.
    """
    if horizon <= 0:
        raise ZeroHorizon("horizon must be positive")
    K = params.mobility.K
    y0 = _check_initial(initial, K)
    c_vec = -np.diag(params.mobility.Q)
    Jcum = _jump_cumprobs(params.mobility.Q)

    arr_gen = rng.stream(seed, rng.ARRIVALS)
    dep_gen = rng.stream(seed, rng.DEPARTURES)
    mov_gen = rng.stream(seed, rng.MOVEMENTS)
    sel_gen = rng.stream(seed, rng.SELECTION)

    arrivals = tuple(_poisson_stream(arr_gen, params.lambda_k[k], horizon) for k in range(K))
    rings = tuple(_poisson_stream(dep_gen, params.mu_k[k], horizon) for k in range(K))

    heap: list = []
    seq = 0

    def push(t, kind, a, b):
        nonlocal seq
        heapq.heappush(heap, (t, seq, kind, a, b))
        seq += 1

    for k in range(K):
        for t in arrivals[k]:
            push(t, ARRIVAL, k, -1)
        for t in rings[k]:
            push(t, DEPARTURE, k, -1)

    # User registry.  Initial users get full pre-sampled trajectories (the
    # closed path needs them after departures); arriving users are sampled on
    # arrival.
    traj_times: list[list[float]] = []
    traj_nodes: list[list[int]] = []
    ptr: list[int] = []
    node_now: list[int] = []
    alive: list[bool] = []
    is_initial: list[bool] = []

    members: list[list[int]] = [[] for _ in range(K)]
    pos_in_node: list[int] = []

    def add_member(uid, k):
        pos_in_node[uid] = len(members[k])
        members[k].append(uid)

    def remove_member(uid, k):
        idx = pos_in_node[uid]
        last = members[k][-1]
        members[k][idx] = last
        pos_in_node[last] = idx
        members[k].pop()
        pos_in_node[uid] = -1

    def new_user(start_node, t0, initial_user):
        uid = len(node_now)
        ts, nds = _sample_jumps(mov_gen, start_node, t0, horizon, c_vec, Jcum)
        traj_times.append(ts)
        traj_nodes.append(nds)
        ptr.append(0)
        node_now.append(start_node)
        alive.append(True)
        is_initial.append(initial_user)
        pos_in_node.append(-1)
        add_member(uid, start_node)
        if ts:
            push(ts[0], MOVE, uid, 0)
        return uid

    x = y0.copy()
    x_closed = y0.copy()
    for k in range(K):
        for _ in range(y0[k]):
            new_user(k, 0.0, True)

    n0 = int(y0.sum())
    open_times, open_states = [0.0], [x.copy()]
    closed_times, closed_states = [0.0], [x_closed.copy()]
    walk_times, walk_vals = [0.0], [float(n0)]
    walk = n0

    n_events = 0
    while heap:
        n_events += 1
        if n_events > max_events:
            raise EventBudgetExceeded(f"more than {max_events} events before the horizon")
        t, _, kind, a, b = heapq.heappop(heap)
        if kind == ARRIVAL:
            k = a
            new_user(k, t, False)
            x[k] += 1
            walk += 1
            open_times.append(t)
            open_states.append(x.copy())
            walk_times.append(t)
            walk_vals.append(float(walk))
        elif kind == DEPARTURE:
            k = a
            walk -= 1
            walk_times.append(t)
            walk_vals.append(float(walk))
            if members[k]:
                idx = int(sel_gen.integers(0, len(members[k])))
                uid = members[k][idx]
                remove_member(uid, k)
                alive[uid] = False
                x[k] -= 1
                open_times.append(t)
                open_states.append(x.copy())
        else:  # MOVE
            uid, jidx = a, b
            if not alive[uid] and not is_initial[uid]:
                # Departed non-initial user: its trajectory no longer drives
                # either path, so stop replaying it.
                continue
            src = node_now[uid]
            dest = traj_nodes[uid][jidx]
            node_now[uid] = dest
            if jidx + 1 < len(traj_times[uid]):
                push(traj_times[uid][jidx + 1], MOVE, uid, jidx + 1)
            if is_initial[uid]:
                x_closed[src] -= 1
                x_closed[dest] += 1
                closed_times.append(t)
                closed_states.append(x_closed.copy())
            if alive[uid]:
                remove_member(uid, src)
                add_member(uid, dest)
                x[src] -= 1
                x[dest] += 1
                open_times.append(t)
                open_states.append(x.copy())

    walk_path = StatePath(
        event_times=np.asarray(walk_times),
        states=np.asarray(walk_vals),
        horizon=horizon,
    )
    return CouplingBundle(
        open_path=StatePath(
            event_times=np.asarray(open_times),
            states=np.asarray(open_states, dtype=float),
            horizon=horizon,
        ),
        closed_path=StatePath(
            event_times=np.asarray(closed_times),
            states=np.asarray(closed_states, dtype=float),
            horizon=horizon,
        ),
        walk_path=walk_path,
        mm1_path=reflect(walk_path),
        arrival_events=arrivals,
        departure_events=rings,
        seed=seed,
    )


def verify_coupling(bundle: CouplingBundle, pi: np.ndarray) -> dict:
    """Evaluate every pathwise coupling relation at every event time.

    Returns counts of checks evaluated and violations per relation; all
    violation counts must be zero.  Relations: the M/M/1 lower bound, the
    equality up to the first empty node, the arrival/departure sandwich for
    each coordinate and for the totals, and the proportion-gap bound
    2K(a+d)/initial-total.
    """
    times = np.unique(
        np.concatenate(
            [
                bundle.open_path.event_times,
                bundle.closed_path.event_times,
                bundle.walk_path.event_times,
            ]
        )
    )
    X = bundle.open_path.values(times)
    Xc = bundle.closed_path.values(times)
    ell = bundle.mm1_path.values(times)[:, 0]
    norms = X.sum(axis=1)
    norms_c = Xc.sum(axis=1)

    all_arrivals = np.sort(np.concatenate(bundle.arrival_events))
    all_rings = np.sort(np.concatenate(bundle.departure_events))
    a_t = np.searchsorted(all_arrivals, times, side="right")
    d_t = np.searchsorted(all_rings, times, side="right")

    counts = {"checks": 0, "lower_bound": 0, "equality": 0, "sandwich": 0, "ratio": 0}
    counts["checks"] += len(times)
    counts["lower_bound"] += int((norms < ell - 1e-9).sum())

    t0_tilde = _first_empty_node_time(bundle.open_path)
    in_eq = times <= (t0_tilde if t0_tilde is not None else np.inf)
    counts["checks"] += int(in_eq.sum())
    counts["equality"] += int((np.abs(norms - ell) > 1e-9)[in_eq].sum())

    diff = X - Xc
    ok_hi = diff <= a_t[:, None] + 1e-9
    ok_lo = diff >= -d_t[:, None] - 1e-9
    ok_norm = (norms - norms_c <= a_t + 1e-9) & (norms - norms_c >= -d_t - 1e-9)
    counts["checks"] += diff.size + len(times)
    counts["sandwich"] += int((~ok_hi).sum() + (~ok_lo).sum() + (~ok_norm).sum())

    n0 = float(bundle.walk_path.states[0, 0])
    if n0 > 0:
        K = X.shape[1]
        r = np.where(norms[:, None] > 0, X / np.maximum(norms[:, None], 1.0), pi[None, :])
        rc = np.where(norms_c[:, None] > 0, Xc / np.maximum(norms_c[:, None], 1.0), pi[None, :])
        gap = np.abs(r - rc).sum(axis=1)
        bound = 2.0 * K * (a_t + d_t) / n0
        counts["checks"] += len(times)
        counts["ratio"] += int((gap > bound + 1e-9).sum())
    return counts


def _first_empty_node_time(path: StatePath) -> float | None:
    best = None
    for k in range(path.dim):
        hits = np.nonzero(path.states[:, k] == 0.0)[0]
        if len(hits):
            t = float(path.event_times[hits[0]])
            best = t if best is None else min(best, t)
    return best


@dataclass(frozen=True)
class TaggedUserRecord:
    """Trajectory, requirement and accumulated service of one tagged user."""

    trajectory: StatePath
    requirement: float
    service_times: np.ndarray
    service_values: np.ndarray
    sojourn: float | None

    def service_at(self, t: float) -> float:
        return float(np.interp(t, self.service_times, self.service_values))


def simulate_tagged(
    params: NetworkParams,
    initial,
    tagged_node: int,
    horizon: float,
    seed: int,
    max_events: int = 2_000_000,
):
    """Open system with one marked initial user at `tagged_node`.

    The tagged user receives the processor-sharing rate capacity/occupancy of
    its current node; its accumulated service is integrated exactly between
    events (the integrand is constant there) and the sojourn is the exact
    linear-interpolation crossing of the pre-drawn unit-mean exponential
    requirement.  Other users' departures are thinned so the aggregate
    departure rate per node stays equal to the node capacity.
    """
    if horizon <= 0:
        raise ZeroHorizon("horizon must be positive")
    K = params.mobility.K
    y = _check_initial(initial, K)
    if y[tagged_node] < 1:
        raise EmptyTagNode(f"no user at node {tagged_node} to tag")
    clock = rng.stream(seed, rng.CLOCK)
    choice = rng.stream(seed, rng.CATEGORY)
    req_gen = rng.stream(seed, rng.REQUIREMENTS)

    lam = params.lambda_k
    mu = params.mu_k
    c_vec = -np.diag(params.mobility.Q)
    Jcum = _jump_cumprobs(params.mobility.Q)

    E = float(req_gen.standard_exponential())
    tag = int(tagged_node)
    tag_alive = True
    s = 0.0
    chi = None

    times, states = [0.0], [y.copy()]
    traj_t, traj_n = [0.0], [float(tag)]
    serv_t, serv_v = [0.0], [0.0]
    t = 0.0

    for _ in range(max_events):
        occupied = y > 0
        dep = mu * occupied
        if tag_alive:
            # The tagged user's own completion is handled by the requirement
            # crossing, so rings only remove the other users of its node.
            dep = dep.copy()
            dep[tag] = mu[tag] * (y[tag] - 1) / y[tag]
        rates = np.concatenate([lam, dep, c_vec * y])
        total = rates.sum()
        slope = mu[tag] / y[tag] if tag_alive else 0.0
        if total == 0.0:
            dt = math.inf
        else:
            dt = clock.standard_exponential() / total
        if tag_alive and slope > 0.0:
            t_cross = (E - s) / slope
            if t_cross <= dt and t + t_cross < horizon:
                t += t_cross
                s = E
                chi = t
                tag_alive = False
                y[tag] -= 1
                times.append(t)
                states.append(y.copy())
                serv_t.append(t)
                serv_v.append(s)
                continue
        if not math.isfinite(dt) or t + dt >= horizon:
            break
        t += dt
        if tag_alive:
            s += slope * dt
        cum = np.cumsum(rates)
        idx = int(np.searchsorted(cum, choice.random() * total, side="right"))
        idx = min(idx, 3 * K - 1)
        if idx < K:
            y[idx] += 1
        elif idx < 2 * K:
            y[idx - K] -= 1
        else:
            k = idx - 2 * K
            dest = int(np.searchsorted(Jcum[k], choice.random(), side="right"))
            if tag_alive and k == tag and choice.random() < 1.0 / y[k]:
                tag = dest
                traj_t.append(t)
                traj_n.append(float(dest))
            y[k] -= 1
            y[dest] += 1
        times.append(t)
        states.append(y.copy())
        if tag_alive:
            serv_t.append(t)
            serv_v.append(s)
    else:
        raise EventBudgetExceeded(f"more than {max_events} events before the horizon")

    path = StatePath(
        event_times=np.asarray(times),
        states=np.asarray(states, dtype=float),
        horizon=horizon,
    )
    record = TaggedUserRecord(
        trajectory=StatePath(
            event_times=np.asarray(traj_t),
            states=np.asarray(traj_n),
            horizon=horizon,
        ),
        requirement=E,
        service_times=np.asarray(serv_t),
        service_values=np.asarray(serv_v),
        sojourn=chi,
    )
    return path, record


def closed_positions_at(
    profile: MobilityProfile, initial, t: float, n_samples: int, seed: int
) -> np.ndarray:
    """Exact samples of the closed-system state at a fixed time.

    The closed system is a sum of independent mobility chains, so its time-t
    state given the initial node counts is a sum of multinomials with the
    transition rows as cell probabilities.  Returns (n_samples, K) counts.
    """
    from .mobility import transition_matrix

    y = _check_initial(initial, profile.K)
    P = transition_matrix(profile, t, 1e-13)
    P = P / P.sum(axis=1, keepdims=True)
    gen = rng.stream(seed, rng.MOVEMENTS)
    out = np.zeros((n_samples, profile.K), dtype=np.int64)
    for k in range(profile.K):
        if y[k] > 0:
            out += gen.multinomial(int(y[k]), P[k], size=n_samples)
    return out


@dataclass(frozen=True)
class CycleStats:
    """Per-cycle aggregates of a regenerative run from the empty state.

    Occupancy rows hold time at total population m for m = 0..m_cap, with
    the remaining time in tail_time; empty_node[c, k, m] is the time with
    node k empty while the total is m.  These are sufficient statistics for
    the stationary probabilities, moments and joint tail events used by the
    experiments.
    """

    lengths: np.ndarray
    norm_moments: np.ndarray
    occupancy: np.ndarray
    tail_time: np.ndarray
    empty_node: np.ndarray
    empty_node_tail: np.ndarray
    imbalance_time: np.ndarray
    m_cap: int
    r_max: int
    coupling_checks: int
    seed: int

    @property
    def n_cycles(self) -> int:
        return len(self.lengths)

    def total_time(self) -> float:
        return float(self.lengths.sum())

    def moment(self, r: int):
        """Renewal-reward estimate and SE of the stationary r-th norm moment."""
        from .stats import ratio_estimate

        if r == 0:
            return 1.0, 0.0
        return ratio_estimate(self.norm_moments[:, r - 1], self.lengths)

    def level_probability(self, m: int):
        from .stats import ratio_estimate

        if m > self.m_cap:
            raise InsufficientCycles(f"level {m} beyond tracked cap {self.m_cap}")
        return ratio_estimate(self.occupancy[:, m], self.lengths)

    def tail_probability(self, q: int):
        """Estimate and SE of P(total >= q)."""
        from .stats import ratio_estimate

        if q <= 0:
            return 1.0, 0.0
        if q > self.m_cap + 1:
            raise InsufficientCycles(f"tail level {q} beyond tracked cap {self.m_cap}")
        below = self.occupancy[:, :q].sum(axis=1)
        return ratio_estimate(self.lengths - below, self.lengths)

    def empty_joint_tail(self, q: int, k: int):
        """Estimate and SE of P(total >= q, node k empty)."""
        from .stats import ratio_estimate

        if q > self.m_cap + 1:
            raise InsufficientCycles(f"tail level {q} beyond tracked cap {self.m_cap}")
        above = self.empty_node[:, k, q:].sum(axis=1) + self.empty_node_tail[:, k]
        return ratio_estimate(above, self.lengths)

    def mean_imbalance(self):
        from .stats import ratio_estimate

        return ratio_estimate(self.imbalance_time, self.lengths)


def sample_stationary(
    params: NetworkParams,
    cycles: int,
    seed: int,
    m_cap: int = 12,
    r_max: int = 4,
    n_streams: int | None = None,
    max_iter: int = 50_000_000,
) -> CycleStats:
    """Regenerative cycle aggregates started from the empty state.

    Cycles are delimited by successive entries into the empty state; the
    renewal-reward ratio over completed cycles is an unbiased stationary
    estimator.  Raises UnstableParams unless rho < 1.
    """
    if not (params.rho < 1.0):
        raise UnstableParams(f"stationary sampling needs rho < 1, got {params.rho}")
    from .batch import stationary_cycles

    if n_streams is None:
        n_streams = min(cycles, 256)
    try:
        return stationary_cycles(
            params,
            n_streams=n_streams,
            cycles_per_stream=1,
            seed=seed,
            m_cap=m_cap,
            r_max=r_max,
            max_iter=max_iter,
            target_cycles=cycles,
        )
    except EventBudgetExceeded as exc:
        raise CycleBudgetExceeded(str(exc)) from exc


def balance_residual(stats: CycleStats, params: NetworkParams, m: int):
    """Stationary balance-equation residual at level m, with its SE.

    Estimates lambda P(total = m-1) - mu P(total = m)
    + sum_k mu_k P(total = m, node k empty); zero in expectation under the
    stationary law.
    """
    if m < 1:
        raise InvalidValue("level m must be >= 1")
    if m > stats.m_cap:
        raise InsufficientCycles(f"level {m} beyond tracked cap {stats.m_cap}")
    occ_lo = stats.occupancy[:, m - 1]
    occ_hi = stats.occupancy[:, m]
    if occ_lo.sum() == 0.0 or occ_hi.sum() == 0.0:
        raise InsufficientCycles(f"no observed time at levels {m - 1}/{m}")
    z = (
        params.lambda_total * occ_lo
        - params.mu_total * occ_hi
        + np.einsum("k,ck->c", params.mu_k, stats.empty_node[:, :, m])
    )
    from .stats import ratio_estimate

    return ratio_estimate(z, stats.lengths)
