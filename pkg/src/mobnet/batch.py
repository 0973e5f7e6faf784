"""Replication-vectorized simulation drivers.

Every statistical experiment replays the same Markov dynamics thousands of
times, so these drivers advance a whole batch of independent replications one
event each per loop iteration with numpy-wide operations.  Departure rings
run freely (a ring at an empty node is a null event), which realizes the
primitive-stream coupling: cumulative arrival/ring counts give the free walk,
its reflection is the M/M/1 twin, and the pathwise bound total >= reflection
is asserted at every applied event.

All drivers are deterministic given (params, inputs, generator).  Replication
chunking and thread scheduling live in the experiments layer and never change
what a single chunk computes.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import EventBudgetExceeded
from .network import CycleStats, NetworkParams, _jump_cumprobs


@dataclass
class _Dyn:
    """Precomputed per-event-category rates of one parameter set."""

    K: int
    lam_vec: np.ndarray
    mu_vec: np.ndarray
    base_cum: np.ndarray
    fixed_total: float
    c_vec: np.ndarray
    Jcum: np.ndarray
    pi: np.ndarray

    @classmethod
    def from_params(cls, params: NetworkParams) -> "_Dyn":
        lam = params.lambda_k
        mu = params.mu_k
        base_cum = np.cumsum(np.concatenate([lam, mu]))
        return cls(
            K=params.mobility.K,
            lam_vec=lam,
            mu_vec=mu,
            base_cum=base_cum,
            fixed_total=float(base_cum[-1]),
            c_vec=-np.diag(params.mobility.Q),
            Jcum=_jump_cumprobs(params.mobility.Q),
            pi=params.mobility.pi,
        )

    @classmethod
    def closed(cls, params_or_profile) -> "_Dyn":
        """Movement-only dynamics (arrivals and departures switched off)."""
        profile = getattr(params_or_profile, "mobility", params_or_profile)
        K = profile.K
        return cls(
            K=K,
            lam_vec=np.zeros(K),
            mu_vec=np.zeros(K),
            base_cum=np.zeros(2 * K),
            fixed_total=0.0,
            c_vec=-np.diag(profile.Q),
            Jcum=_jump_cumprobs(profile.Q),
            pi=profile.pi,
        )


def _draw_events(dyn: _Dyn, Y: np.ndarray, gen: np.random.Generator):
    """One event per replication row.

    Returns (dt, kind, node, u2): kind is 0 arrival / 1 ring / 2 movement,
    node is the event node (source node for movements), u2 an extra uniform
    for destination or individual selection.
    """
    move_cum = np.cumsum(Y * dyn.c_vec[None, :], axis=1)
    total = dyn.fixed_total + move_cum[:, -1]
    A = Y.shape[0]
    dt = gen.standard_exponential(A) / total
    u = gen.random(A) * total
    u2 = gen.random(A)

    kind = np.full(A, 2, dtype=np.int64)
    node = np.zeros(A, dtype=np.int64)
    fixed = u < dyn.fixed_total
    if fixed.any():
        idx = np.searchsorted(dyn.base_cum, u[fixed], side="right")
        idx = np.minimum(idx, 2 * dyn.K - 1)
        kind[fixed] = np.where(idx < dyn.K, 0, 1)
        node[fixed] = np.where(idx < dyn.K, idx, idx - dyn.K)
    mov = ~fixed
    if mov.any():
        um = (u - dyn.fixed_total)[mov]
        src = (move_cum[mov] < um[:, None]).sum(axis=1)
        node[mov] = np.minimum(src, dyn.K - 1)
    return dt, kind, node, u2


def _move_dest(dyn: _Dyn, src: np.ndarray, u2: np.ndarray) -> np.ndarray:
    dest = (dyn.Jcum[src] < u2[:, None]).sum(axis=1)
    return np.minimum(dest, dyn.K - 1)


@dataclass
class OpenRunResult:
    """Per-replication outputs of an open-system batch run."""

    grid_states: np.ndarray | None
    t_up: np.ndarray | None
    state_up: np.ndarray | None
    g_x: np.ndarray | None
    t0_after: np.ndarray | None
    max_height: np.ndarray | None
    t_up_walk: np.ndarray | None
    g_walk: np.ndarray | None
    events: np.ndarray
    checks: dict


def open_run(
    params: NetworkParams,
    initial: np.ndarray,
    horizon: float,
    n_reps: int,
    gen: np.random.Generator,
    grid: np.ndarray | None = None,
    level: float | None = None,
    max_iter: int = 20_000_000,
) -> OpenRunResult:
    """Open-system batch with grid snapshots and excursion functionals.

    `initial` is one shared state (K,) or per-replication states (R, K).
    With `level` set, the run tracks the first crossing of the population
    total (time, state, preceding zero) and of the coupled reflected walk,
    plus the straddling excursion's return delay and maximum.  Zero times are
    read on the joint event clock of the batch, so the transport inequalities
    versus the walk hold exactly.
    """
    dyn = _Dyn.from_params(params)
    K, R = dyn.K, n_reps
    initial = np.asarray(initial, dtype=np.int64)
    Y = np.tile(initial, (R, 1)) if initial.ndim == 1 else initial.astype(np.int64).copy()

    # Working arrays (compacted as replications finish); slot maps rows to
    # output positions.
    slot = np.arange(R)
    t = np.zeros(R)
    n0 = Y.sum(axis=1)
    a_cum = np.zeros(R, dtype=np.int64)
    d_cum = np.zeros(R, dtype=np.int64)
    wmin = n0.copy()  # running minimum of the free walk
    eq_active = (Y > 0).all(axis=1)
    lz_x = np.zeros(R)
    lz_w = np.zeros(R)

    grid_arr = None if grid is None else np.asarray(grid, dtype=float)
    G = 0 if grid_arr is None else len(grid_arr)
    grid_states = np.zeros((R, G, K), dtype=np.int64) if G else None
    gi = np.zeros(R, dtype=np.int64) if G else None

    track = level is not None
    if track:
        t_up = np.full(R, np.nan)
        state_up = np.zeros((R, K), dtype=np.int64)
        g_x = np.full(R, np.nan)
        t0_after = np.full(R, np.nan)
        max_h = np.zeros(R)
        t_up_w = np.full(R, np.nan)
        g_w = np.full(R, np.nan)
        # A replication already at the level crosses at time zero.
        at0 = np.nonzero(n0 >= level)[0]
        t_up[at0] = 0.0
        state_up[at0] = Y[at0]
        g_x[at0] = 0.0
        t_up_w[at0] = 0.0
        g_w[at0] = 0.0
        max_h[at0] = n0[at0]
    events = np.zeros(R, dtype=np.int64)
    checks = {"events": 0, "lower_bound": 0, "equality": 0, "eq_checks": 0}

    def flush_grid(rows: np.ndarray, upto: np.ndarray):
        """Record the pre-event state for grid points in [t, upto)."""
        while len(rows):
            has = gi[rows] < G
            rows, upto = rows[has], upto[has]
            if len(rows) == 0:
                break
            due = grid_arr[gi[rows]] < upto
            rows, upto = rows[due], upto[due]
            if len(rows) == 0:
                break
            grid_states[slot[rows], gi[rows]] = Y[rows]
            gi[rows] += 1

    for _ in range(max_iter):
        if len(t) == 0:
            break
        dt, kind, node, u2 = _draw_events(dyn, Y, gen)
        t_new = t + dt
        fin = t_new >= horizon
        act = np.nonzero(~fin)[0]

        if G:
            fin_rows = np.nonzero(fin)[0]
            if len(fin_rows):
                flush_grid(fin_rows, np.full(len(fin_rows), np.inf))
            if len(act):
                flush_grid(act, t_new[act])

        if len(act):
            state_changed = np.zeros(len(t), dtype=bool)
            a_rows = act[kind[act] == 0]
            r_rows = act[kind[act] == 1]
            m_rows = act[kind[act] == 2]
            if len(a_rows):
                Y[a_rows, node[a_rows]] += 1
                a_cum[a_rows] += 1
                state_changed[a_rows] = True
            if len(r_rows):
                occupied = Y[r_rows, node[r_rows]] > 0
                succ = r_rows[occupied]
                Y[succ, node[succ]] -= 1
                d_cum[r_rows] += 1
                state_changed[succ] = True
            if len(m_rows):
                _apply = _move_dest(dyn, node[m_rows], u2[m_rows])
                Y[m_rows, node[m_rows]] -= 1
                Y[m_rows, _apply] += 1
                state_changed[m_rows] = True
            t[act] = t_new[act]
            events[slot[act]] += 1

            walk = n0 + a_cum - d_cum
            np.minimum(wmin, walk, out=wmin)
            ell = walk - np.minimum(wmin, 0)
            norms = Y.sum(axis=1)

            checks["events"] += len(act)
            checks["lower_bound"] += int((norms[act] < ell[act]).sum())
            eq_rows = act[eq_active[act]]
            if len(eq_rows):
                checks["eq_checks"] += len(eq_rows)
                checks["equality"] += int((norms[eq_rows] != ell[eq_rows]).sum())
                eq_active[eq_rows] &= (Y[eq_rows] > 0).all(axis=1)

            zero_now = norms == 0
            chg0 = act[state_changed[act] & zero_now[act]]
            lz_x[chg0] = t[chg0]
            w0 = act[ell[act] == 0]
            lz_w[w0] = t[w0]

            if track:
                out = slot[act]
                pre = np.isnan(t_up[out])
                crossed = act[pre & (norms[act] >= level)]
                if len(crossed):
                    s = slot[crossed]
                    t_up[s] = t[crossed]
                    state_up[s] = Y[crossed]
                    g_x[s] = lz_x[crossed]
                pre_w = np.isnan(t_up_w[out])
                crossed_w = act[pre_w & (ell[act] >= level)]
                if len(crossed_w):
                    s = slot[crossed_w]
                    t_up_w[s] = t[crossed_w]
                    g_w[s] = lz_w[crossed_w]
                in_exc = act[~np.isnan(t_up[slot[act]]) & np.isnan(t0_after[slot[act]])]
                if len(in_exc):
                    s = slot[in_exc]
                    max_h[s] = np.maximum(max_h[s], norms[in_exc])
                    ended = in_exc[zero_now[in_exc] & state_changed[in_exc]]
                    if len(ended):
                        s = slot[ended]
                        t0_after[s] = t[ended] - t_up[s]

        if fin.any():
            keep = ~fin
            Y, t, n0 = Y[keep], t[keep], n0[keep]
            a_cum, d_cum, wmin = a_cum[keep], d_cum[keep], wmin[keep]
            eq_active = eq_active[keep]
            lz_x, lz_w = lz_x[keep], lz_w[keep]
            slot = slot[keep]
            if G:
                gi = gi[keep]
    else:
        raise EventBudgetExceeded(f"batch run exceeded {max_iter} iterations")

    return OpenRunResult(
        grid_states=grid_states,
        t_up=t_up if track else None,
        state_up=state_up if track else None,
        g_x=g_x if track else None,
        t0_after=t0_after if track else None,
        max_height=max_h if track else None,
        t_up_walk=t_up_w if track else None,
        g_walk=g_w if track else None,
        events=events,
        checks=checks,
    )


_SCALAR_TAIL_WIDTH = 24


def _finish_cycle_scalar(
    dyn: _Dyn,
    y_row: np.ndarray,
    acc: dict,
    walk_state: tuple,
    gen: np.random.Generator,
    m_cap: int,
    r_max: int,
    max_events: int,
) -> int:
    """Finish one in-flight regenerative cycle with a tight scalar loop.

    Near criticality a single cycle can run to millions of events; finishing
    it one replication at a time in the vector loop would dominate the run,
    so the few last in-flight cycles get this per-event path.  Accumulator
    semantics match the vector loop exactly.  Returns the event count.
    """
    K = dyn.K
    c_vec = dyn.c_vec.tolist()
    Jcum = dyn.Jcum.tolist()
    pi = dyn.pi.tolist()
    fixed_total = dyn.fixed_total
    base_cum = dyn.base_cum.tolist()
    y = [int(v) for v in y_row]
    a_cum, d_cum, wmin, n0 = walk_state
    exp_draw = gen.standard_exponential
    uni = gen.random
    krange = range(K)

    # Incrementally maintained state.
    norm = sum(y)
    move_total = 0.0
    for k in krange:
        move_total += y[k] * c_vec[k]
    walk = n0 + a_cum - d_cum

    T = acc["T"]
    mom = acc["mom"]
    occ = acc["occ"]
    tail = acc["tail"]
    e0 = acc["e0"]
    e0_tail = acc["e0_tail"]
    imb = acc["imb"]

    events = 0
    while True:
        events += 1
        if events > max_events:
            raise EventBudgetExceeded("scalar cycle tail exceeded its event budget")
        total = fixed_total + move_total
        dt = float(exp_draw()) / total
        # pre-event accumulation
        T += dt
        p = float(norm)
        pr = dt * p
        for r in range(r_max):
            mom[r] += pr
            pr *= p
        if norm <= m_cap:
            occ[norm] += dt
            for k in krange:
                if y[k] == 0:
                    e0[k][norm] += dt
        else:
            tail += dt
            for k in krange:
                if y[k] == 0:
                    e0_tail[k] += dt
        if norm > 0:
            dev = 0.0
            for k in krange:
                dev += abs(y[k] / norm - pi[k])
            imb += dt * dev
        # event
        u = float(uni()) * total
        entered_zero = False
        if u < fixed_total:
            idx = 0
            while base_cum[idx] <= u:
                idx += 1
            if idx < K:
                y[idx] += 1
                norm += 1
                move_total += c_vec[idx]
                a_cum += 1
                walk += 1
            else:
                k = idx - K
                d_cum += 1
                walk -= 1
                if y[k] > 0:
                    y[k] -= 1
                    norm -= 1
                    move_total -= c_vec[k]
                    entered_zero = norm == 0
        else:
            um = u - fixed_total
            run = 0.0
            src = K - 1
            for k in krange:
                run += y[k] * c_vec[k]
                if um < run:
                    src = k
                    break
            u2 = float(uni())
            row = Jcum[src]
            dest = 0
            while row[dest] <= u2 and dest < K - 1:
                dest += 1
            y[src] -= 1
            y[dest] += 1
            move_total += c_vec[dest] - c_vec[src]
        if walk < wmin:
            wmin = walk
        ell = walk - (wmin if wmin < 0 else 0)
        if norm < ell:
            raise AssertionError("pathwise coupling violated in scalar cycle tail")
        if entered_zero:
            acc["T"] = T
            acc["tail"] = tail
            acc["imb"] = imb
            return events


def stationary_cycles(
    params: NetworkParams,
    n_streams: int,
    cycles_per_stream: int,
    seed: int,
    m_cap: int = 12,
    r_max: int = 4,
    max_iter: int = 50_000_000,
    gen: np.random.Generator | None = None,
    target_cycles: int | None = None,
    scalar_stream_path: tuple = (),
) -> CycleStats:
    """Regenerative cycles from the empty state, batch-vectorized.

    A cycle runs between successive entries into the empty state.  The total
    quota of cycles is claimed by streams at cycle start (work stealing), so
    the batch stays wide even though cycle lengths are heavy-tailed near
    criticality; every claimed cycle is completed and kept, which keeps the
    renewal-reward estimator unbiased.  Once the quota is exhausted and few
    streams remain, their in-flight cycles are finished by a scalar loop.

    Accumulates per cycle: length, norm-moment integrals, occupancy of each
    population level up to m_cap (tail beyond), occupancy of (node empty,
    level) pairs, and the imbalance integral.
    """
    from . import rng as _rng

    dyn = _Dyn.from_params(params)
    K = dyn.K
    if target_cycles is None:
        target_cycles = n_streams * cycles_per_stream
    A = min(n_streams, target_cycles)
    if gen is None:
        gen = _rng.stream(seed, _rng.CLOCK)
    remaining = target_cycles - A  # cycles not yet claimed by a stream

    Y = np.zeros((A, K), dtype=np.int64)
    t = np.zeros(A)
    a_cum = np.zeros(A, dtype=np.int64)
    d_cum = np.zeros(A, dtype=np.int64)
    wmin = np.zeros(A, dtype=np.int64)
    n0 = np.zeros(A, dtype=np.int64)

    cyc_T = np.zeros(A)
    cyc_mom = np.zeros((A, r_max))
    cyc_occ = np.zeros((A, m_cap + 1))
    cyc_tail = np.zeros(A)
    cyc_e0 = np.zeros((A, K, m_cap + 1))
    cyc_e0_tail = np.zeros((A, K))
    cyc_imb = np.zeros(A)

    out_T, out_mom, out_occ, out_tail = [], [], [], []
    out_e0, out_e0_tail, out_imb = [], [], []
    checks = {"events": 0, "lower_bound": 0}

    def flush_rows(rows):
        out_T.append(cyc_T[rows].copy())
        out_mom.append(cyc_mom[rows].copy())
        out_occ.append(cyc_occ[rows].copy())
        out_tail.append(cyc_tail[rows].copy())
        out_e0.append(cyc_e0[rows].copy())
        out_e0_tail.append(cyc_e0_tail[rows].copy())
        out_imb.append(cyc_imb[rows].copy())

    for _ in range(max_iter):
        if len(t) == 0:
            break
        if remaining == 0 and len(t) <= _SCALAR_TAIL_WIDTH:
            # Finish the in-flight cycles one by one; claim order is spent,
            # so each row owns exactly its current cycle.
            for i in range(len(t)):
                acc = {
                    "T": float(cyc_T[i]),
                    "mom": cyc_mom[i].tolist(),
                    "occ": cyc_occ[i].tolist(),
                    "tail": float(cyc_tail[i]),
                    "e0": cyc_e0[i].tolist(),
                    "e0_tail": cyc_e0_tail[i].tolist(),
                    "imb": float(cyc_imb[i]),
                }
                sgen = _rng.stream(seed, _rng.SELECTION, 7777, *scalar_stream_path, i)
                ws = (int(a_cum[i]), int(d_cum[i]), int(wmin[i]), int(n0[i]))
                events = _finish_cycle_scalar(
                    dyn, Y[i], acc, ws, sgen, m_cap, r_max, max_iter
                )
                checks["events"] += events
                cyc_T[i] = acc["T"]
                cyc_mom[i] = acc["mom"]
                cyc_occ[i] = acc["occ"]
                cyc_tail[i] = acc["tail"]
                cyc_e0[i] = acc["e0"]
                cyc_e0_tail[i] = acc["e0_tail"]
                cyc_imb[i] = acc["imb"]
            flush_rows(np.arange(len(t)))
            t = np.zeros(0)
            break
        dt, kind, node, u2 = _draw_events(dyn, Y, gen)
        norms = Y.sum(axis=1)

        # Accumulate the sojourn in the pre-event state.
        cyc_T += dt
        p = norms.astype(float)
        pr = p.copy()
        for r in range(r_max):
            cyc_mom[:, r] += dt * pr
            pr *= p
        small = norms <= m_cap
        srows = np.nonzero(small)[0]
        if len(srows):
            np.add.at(cyc_occ, (srows, norms[srows]), dt[srows])
        lrows = np.nonzero(~small)[0]
        if len(lrows):
            cyc_tail[lrows] += dt[lrows]
        for k in range(K):
            zk = Y[:, k] == 0
            zs = np.nonzero(zk & small)[0]
            if len(zs):
                np.add.at(cyc_e0[:, k, :], (zs, norms[zs]), dt[zs])
            zl = np.nonzero(zk & ~small)[0]
            if len(zl):
                cyc_e0_tail[zl, k] += dt[zl]
        pos = norms > 0
        if pos.any():
            ratios = Y[pos] / norms[pos, None]
            cyc_imb[pos] += dt[pos] * np.abs(ratios - dyn.pi[None, :]).sum(axis=1)

        # Apply events.
        a_rows = np.nonzero(kind == 0)[0]
        r_rows = np.nonzero(kind == 1)[0]
        m_rows = np.nonzero(kind == 2)[0]
        entered_zero = np.zeros(len(t), dtype=bool)
        if len(a_rows):
            Y[a_rows, node[a_rows]] += 1
            a_cum[a_rows] += 1
        if len(r_rows):
            occupied = Y[r_rows, node[r_rows]] > 0
            succ = r_rows[occupied]
            Y[succ, node[succ]] -= 1
            d_cum[r_rows] += 1
            entered_zero[succ] = Y[succ].sum(axis=1) == 0
        if len(m_rows):
            dest = _move_dest(dyn, node[m_rows], u2[m_rows])
            Y[m_rows, node[m_rows]] -= 1
            Y[m_rows, dest] += 1
        t += dt

        walk = n0 + a_cum - d_cum
        np.minimum(wmin, walk, out=wmin)
        ell = walk - np.minimum(wmin, 0)
        checks["events"] += len(t)
        checks["lower_bound"] += int((Y.sum(axis=1) < ell).sum())

        flush = np.nonzero(entered_zero)[0]
        if len(flush):
            flush_rows(flush)
            cyc_T[flush] = 0.0
            cyc_mom[flush] = 0.0
            cyc_occ[flush] = 0.0
            cyc_tail[flush] = 0.0
            cyc_e0[flush] = 0.0
            cyc_e0_tail[flush] = 0.0
            cyc_imb[flush] = 0.0
            # Each flushed row claims a fresh cycle while quota remains.
            n_continue = min(remaining, len(flush))
            remaining -= n_continue
            retire = flush[n_continue:]
            if len(retire):
                keep = np.ones(len(t), dtype=bool)
                keep[retire] = False
                Y, t = Y[keep], t[keep]
                a_cum, d_cum, wmin, n0 = a_cum[keep], d_cum[keep], wmin[keep], n0[keep]
                cyc_T, cyc_mom, cyc_occ = cyc_T[keep], cyc_mom[keep], cyc_occ[keep]
                cyc_tail, cyc_e0 = cyc_tail[keep], cyc_e0[keep]
                cyc_e0_tail, cyc_imb = cyc_e0_tail[keep], cyc_imb[keep]
    else:
        raise EventBudgetExceeded(
            f"cycle run exceeded {max_iter} iterations before completing cycles"
        )

    if checks["lower_bound"]:
        raise AssertionError(f"pathwise coupling violated in cycle run: {checks}")
    return CycleStats(
        lengths=np.concatenate(out_T) if out_T else np.zeros(0),
        norm_moments=np.concatenate(out_mom) if out_mom else np.zeros((0, r_max)),
        occupancy=np.concatenate(out_occ) if out_occ else np.zeros((0, m_cap + 1)),
        tail_time=np.concatenate(out_tail) if out_tail else np.zeros(0),
        empty_node=np.concatenate(out_e0) if out_e0 else np.zeros((0, K, m_cap + 1)),
        empty_node_tail=np.concatenate(out_e0_tail) if out_e0_tail else np.zeros((0, K)),
        imbalance_time=np.concatenate(out_imb) if out_imb else np.zeros(0),
        m_cap=m_cap,
        r_max=r_max,
        coupling_checks=checks["events"],
        seed=seed,
    )


@dataclass
class SojournResult:
    chi: np.ndarray           # sojourn times, NaN if censored by the horizon
    sprime: np.ndarray | None  # reference service integral at grid times
    checks: dict


def sojourn_run(
    params: NetworkParams,
    initial: np.ndarray,
    tag_nodes: np.ndarray,
    horizon: float,
    gen: np.random.Generator,
    sprime_grid: np.ndarray | None = None,
    max_iter: int = 20_000_000,
) -> SojournResult:
    """Batch of tagged-user sojourns.

    Each replication marks one user at its tag node, draws a unit-mean
    exponential requirement, and integrates the processor-sharing service
    rate capacity/occupancy along the tagged trajectory; the sojourn is the
    exact crossing time.  Other users' ring removals are thinned so the
    aggregate per-node departure rate stays equal to the capacity.  The
    optional sprime grid records the pi-weighted reference integral
    (capacity / (pi * initial-total)) at fixed scaled times.
    """
    dyn = _Dyn.from_params(params)
    K = dyn.K
    initial = np.asarray(initial, dtype=np.int64)
    R = len(tag_nodes) if initial.ndim == 2 else int(len(tag_nodes))
    Y = initial.copy() if initial.ndim == 2 else np.tile(initial, (R, 1))
    tag = np.asarray(tag_nodes, dtype=np.int64).copy()
    if np.any(Y[np.arange(R), tag] < 1):
        from .errors import EmptyTagNode

        raise EmptyTagNode("every replication needs a user at its tag node")

    slot = np.arange(R)
    t = np.zeros(R)
    s = np.zeros(R)
    E = gen.standard_exponential(R)
    n0 = Y.sum(axis=1).astype(float)
    sp = np.zeros(R)

    chi = np.full(R, np.nan)
    grid_arr = None if sprime_grid is None else np.asarray(sprime_grid, dtype=float)
    G = 0 if grid_arr is None else len(grid_arr)
    sp_out = np.full((R, G), np.nan) if G else None
    gi = np.zeros(R, dtype=np.int64) if G else None
    checks = {"events": 0, "tag_occupancy": 0, "slope_bound": 0}
    mu_max = float(dyn.mu_vec.max())

    for _ in range(max_iter):
        if len(t) == 0:
            break
        dt, kind, node, u2 = _draw_events(dyn, Y, gen)
        u3 = gen.random(len(t))
        occ_tag = Y[np.arange(len(t)), tag]
        checks["events"] += len(t)
        checks["tag_occupancy"] += int((occ_tag < 1).sum())
        slope = dyn.mu_vec[tag] / occ_tag
        checks["slope_bound"] += int((slope > mu_max + 1e-12).sum())
        sp_slope = dyn.mu_vec[tag] / (dyn.pi[tag] * n0)

        with np.errstate(divide="ignore"):
            cross_dt = np.where(slope > 0, (E - s) / slope, np.inf)
        t_cross = t + cross_dt
        completes = (cross_dt <= dt) & (t_cross < horizon)
        t_new = t + dt
        fin = ~completes & (t_new >= horizon)

        if G:
            # Flush sprime at grid times passed during this interval, with the
            # piecewise-linear value; for completing rows the slope holds up
            # to the crossing only, so flush up to that point.
            upto = np.where(completes, t_cross, np.minimum(t_new, horizon))
            rows = np.arange(len(t))
            while len(rows):
                has = gi[rows] < G
                rows = rows[has]
                if len(rows) == 0:
                    break
                due = grid_arr[gi[rows]] < upto[rows]
                rows = rows[due]
                if len(rows) == 0:
                    break
                gvals = grid_arr[gi[rows]]
                sp_out[slot[rows], gi[rows]] = sp[rows] + sp_slope[rows] * (gvals - t[rows])
                gi[rows] += 1

        crows = np.nonzero(completes)[0]
        if len(crows):
            chi[slot[crows]] = t_cross[crows]

        act = np.nonzero(~completes & ~fin)[0]
        if len(act):
            s[act] += slope[act] * dt[act]
            sp[act] += sp_slope[act] * dt[act]
            a_rows = act[kind[act] == 0]
            r_rows = act[kind[act] == 1]
            m_rows = act[kind[act] == 2]
            if len(a_rows):
                Y[a_rows, node[a_rows]] += 1
            if len(r_rows):
                nodes_r = node[r_rows]
                occ = Y[r_rows, nodes_r]
                tagged_here = tag[r_rows] == nodes_r
                # Remove one non-tagged user: always possible unless the node
                # is empty or holds only the tagged user.
                n_other = occ - tagged_here.astype(np.int64)
                # When the tag sits at the ringing node the ring picks it with
                # probability 1/occ and then removes nobody.
                remove = (occ > 0) & np.where(
                    tagged_here, u3[r_rows] < n_other / np.maximum(occ, 1), n_other > 0
                )
                rr = r_rows[remove]
                Y[rr, node[rr]] -= 1
            if len(m_rows):
                dest = _move_dest(dyn, node[m_rows], u2[m_rows])
                src = node[m_rows]
                tag_here = tag[m_rows] == src
                occ_src = Y[m_rows, src] + 0
                moves_tag = tag_here & (u3[m_rows] < 1.0 / occ_src)
                Y[m_rows, src] -= 1
                Y[m_rows, dest] += 1
                tag[m_rows[moves_tag]] = dest[moves_tag]
            t[act] = t_new[act]

        drop = completes | fin
        if drop.any():
            keep = ~drop
            Y, t, s, E, tag, n0, sp = (
                Y[keep], t[keep], s[keep], E[keep], tag[keep], n0[keep], sp[keep]
            )
            slot = slot[keep]
            if G:
                gi = gi[keep]
    else:
        raise EventBudgetExceeded(f"sojourn run exceeded {max_iter} iterations")

    return SojournResult(chi=chi, sprime=sp_out, checks=checks)


@dataclass
class HittingResult:
    deviated: np.ndarray  # True when the proportion gap hit delta first
    checks: dict


def hitting_run(
    params: NetworkParams,
    initial: np.ndarray,
    phi: int,
    delta: float,
    horizon: float,
    n_reps: int,
    gen: np.random.Generator,
    closed: bool = False,
    max_iter: int = 20_000_000,
) -> HittingResult:
    """First-passage race: proportion deviation delta vs. population floor phi.

    Counts the replications in which the imbalance reaches delta before the
    population total drops to phi and before the horizon.  With closed=True
    the dynamics keep movements only (the total never changes and the floor
    never binds), giving the closed-system deviation probability.
    """
    dyn = _Dyn.closed(params) if closed else _Dyn.from_params(params)
    K = dyn.K
    R = n_reps
    initial = np.asarray(initial, dtype=np.int64)
    Y = np.tile(initial, (R, 1)) if initial.ndim == 1 else initial.astype(np.int64).copy()
    slot = np.arange(R)
    t = np.zeros(R)
    n0 = Y.sum(axis=1)
    a_cum = np.zeros(R, dtype=np.int64)
    d_cum = np.zeros(R, dtype=np.int64)
    wmin = n0.copy()
    deviated = np.zeros(R, dtype=bool)
    checks = {"events": 0, "lower_bound": 0}

    for _ in range(max_iter):
        if len(t) == 0:
            break
        dt, kind, node, u2 = _draw_events(dyn, Y, gen)
        t_new = t + dt
        fin = t_new >= horizon
        act = np.nonzero(~fin)[0]
        if len(act):
            a_rows = act[kind[act] == 0]
            r_rows = act[kind[act] == 1]
            m_rows = act[kind[act] == 2]
            if len(a_rows):
                Y[a_rows, node[a_rows]] += 1
                a_cum[a_rows] += 1
            if len(r_rows):
                occupied = Y[r_rows, node[r_rows]] > 0
                succ = r_rows[occupied]
                Y[succ, node[succ]] -= 1
                d_cum[r_rows] += 1
            if len(m_rows):
                dest = _move_dest(dyn, node[m_rows], u2[m_rows])
                Y[m_rows, node[m_rows]] -= 1
                Y[m_rows, dest] += 1
            t[act] = t_new[act]

            if not closed:
                walk = n0 + a_cum - d_cum
                np.minimum(wmin, walk, out=wmin)
                ell = walk - np.minimum(wmin, 0)
                checks["events"] += len(act)
                checks["lower_bound"] += int((Y.sum(axis=1) < ell)[act].sum())

            norms = Y[act].sum(axis=1)
            dev = np.abs(Y[act] / np.maximum(norms, 1)[:, None] - dyn.pi[None, :]).sum(axis=1)
            hit_dev = dev >= delta
            hit_floor = norms <= phi
            # The race is inclusive: deviation at the same event as the floor
            # still counts as deviation-first.
            deviated[slot[act[hit_dev]]] = True
            fin[act[hit_dev | hit_floor]] = True

        if fin.any():
            keep = ~fin
            Y, t, n0 = Y[keep], t[keep], n0[keep]
            a_cum, d_cum, wmin = a_cum[keep], d_cum[keep], wmin[keep]
            slot = slot[keep]
    else:
        raise EventBudgetExceeded(f"hitting run exceeded {max_iter} iterations")

    return HittingResult(deviated=deviated, checks=checks)
