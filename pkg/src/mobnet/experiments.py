"""Config-driven experiments verifying the heavy-traffic limit predictions.

Each runner simulates replications through the batch drivers, reduces them
with order-independent merges, and returns an ExperimentReport whose verdict
rows carry (estimate, SE, threshold, sample count).  Replications are split
into a fixed number of chunks with independent derived streams; the thread
count only schedules chunks and can never change a result.
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np
from scipy import stats as sps

from . import batch, rng
from .errors import ConfigError, TagUnavailable, UnstableParams
from .mobility import MobilityProfile, imbalance, mixing_time
from .network import CycleStats, NetworkParams, balance_residual, closed_positions_at, network_params
from .rbm import RbmParams, batch_excursion_stats, rbm_marginal_cdf
from .report import ExperimentReport
from .stats import (
    binomial_se,
    dkw_band,
    ks_distance,
    ks_two_sample,
    log_frequency,
    mean_se,
    median_interval,
    weighted_slope,
    wilson_interval,
)

_N_CHUNKS = 4
_HOMOG, _HEAVY, _STAT, _SOJ, _HIT, _ORACLE = 1, 2, 3, 4, 5, 6


@dataclass(frozen=True)
class HeavyTrafficLadder:
    """Sequence of systems approaching criticality: load 1 - alpha/n at index n."""

    lambda_limit: float
    alpha: float
    n_values: tuple
    arrival_weights: np.ndarray
    capacity_weights: np.ndarray
    params_per_n: tuple
    kappa: float


def build_ladder(
    profile: MobilityProfile,
    lambda_limit: float,
    alpha: float,
    n_values,
    arrival_weights=None,
    capacity_weights=None,
) -> HeavyTrafficLadder:
    """Ladder with rho_n = 1 - alpha/n, lambda_n = lambda (1 - alpha/(2n)).

    This keeps n(1 - rho_n) = alpha exactly and lambda_n -> lambda; the
    per-node split of arrivals and capacities is free and set by the weights
    (uniform by default).
    """
    K = profile.K
    if arrival_weights is None:
        arrival_weights = np.full(K, 1.0 / K)
    if capacity_weights is None:
        capacity_weights = np.full(K, 1.0 / K)
    arrival_weights = np.asarray(arrival_weights, dtype=float)
    capacity_weights = np.asarray(capacity_weights, dtype=float)
    if arrival_weights.shape != (K,) or capacity_weights.shape != (K,):
        raise ConfigError("split weights must have one entry per node")
    if np.any(arrival_weights < 0) or np.any(capacity_weights < 0):
        raise ConfigError("split weights must be nonnegative")
    arrival_weights = arrival_weights / arrival_weights.sum()
    capacity_weights = capacity_weights / capacity_weights.sum()

    n_values = tuple(int(n) for n in n_values)
    if any(n <= alpha for n in n_values):
        raise ConfigError(f"every ladder index must exceed alpha={alpha}")
    params = []
    kappa = 0.0
    rates = []
    for n in n_values:
        rho_n = 1.0 - alpha / n
        lam_n = lambda_limit * (1.0 - alpha / (2.0 * n))
        mu_n = lam_n / rho_n
        kappa = max(kappa, lam_n + mu_n)
        rates.append((lam_n, mu_n))
    for lam_n, mu_n in rates:
        params.append(
            network_params(
                profile,
                lam_n * arrival_weights,
                mu_n * capacity_weights,
                kappa_bound=kappa,
            )
        )
    return HeavyTrafficLadder(
        lambda_limit=float(lambda_limit),
        alpha=float(alpha),
        n_values=n_values,
        arrival_weights=arrival_weights,
        capacity_weights=capacity_weights,
        params_per_n=tuple(params),
        kappa=kappa,
    )


def proportional_state(total: int, pi: np.ndarray) -> np.ndarray:
    """Integer state of the given total closest to proportionality with pi.

    Largest-remainder rounding, so the imbalance vanishes as the total grows.
    """
    pi = np.asarray(pi, dtype=float)
    raw = total * pi
    base = np.floor(raw).astype(np.int64)
    rem = int(total - base.sum())
    if rem > 0:
        order = np.argsort(raw - base)[::-1]
        base[order[:rem]] += 1
    return base


def _map_chunks(worker, n_items: int, threads: int):
    """Run worker(chunk_index, chunk_size) over fixed chunks, merge in order."""
    sizes = rng.chunk_sizes(n_items, _N_CHUNKS)
    results = [None] * len(sizes)

    def job(i):
        results[i] = worker(i, sizes[i])

    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            list(pool.map(job, range(len(sizes))))
    else:
        for i in range(len(sizes)):
            job(i)
    return results


def _merge_open(results) -> batch.OpenRunResult:
    def cat(attr):
        vals = [getattr(r, attr) for r in results]
        if vals[0] is None:
            return None
        return np.concatenate(vals)

    checks = {}
    for r in results:
        for k, v in r.checks.items():
            checks[k] = checks.get(k, 0) + v
    return batch.OpenRunResult(
        grid_states=cat("grid_states"),
        t_up=cat("t_up"),
        state_up=cat("state_up"),
        g_x=cat("g_x"),
        t0_after=cat("t0_after"),
        max_height=cat("max_height"),
        t_up_walk=cat("t_up_walk"),
        g_walk=cat("g_walk"),
        events=cat("events"),
        checks=checks,
    )


def _open_batch(params, initial, horizon, reps, seed, threads, exp, n_idx,
                grid=None, level=None, max_iter=20_000_000):
    initial = np.asarray(initial)
    per_chunk = None
    if initial.ndim == 2:
        sizes = rng.chunk_sizes(reps, _N_CHUNKS)
        offsets = np.concatenate([[0], np.cumsum(sizes)])
        per_chunk = [initial[offsets[i]:offsets[i + 1]] for i in range(len(sizes))]

    def worker(i, size):
        gen = rng.stream(seed, rng.CLOCK, exp, n_idx, i)
        init = initial if per_chunk is None else per_chunk[i]
        return batch.open_run(
            params, init, horizon, size, gen, grid=grid, level=level, max_iter=max_iter
        )

    return _merge_open(_map_chunks(worker, reps, threads))


# ---------------------------------------------------------------------------
# homogenization
# ---------------------------------------------------------------------------

def run_homogenization(
    profile: MobilityProfile,
    params: NetworkParams,
    initial_states,
    eps_grid,
    reps: int,
    seed: int,
    threads: int = 1,
) -> ExperimentReport:
    """Closed- and open-system homogenization probabilities vs. their bounds.

    For each initial state y and level eps: the closed system is sampled at
    the mixing time of eps/(2K) and compared against the concentration bound
    2K exp(-eps^2 |y| / (4 K^2)); the open system is simulated to the mixing
    time of eps/(4K) and compared against the two-term bound that adds the
    exact Poisson tail of the primitive streams.
    """
    if len(initial_states) == 0:
        raise ConfigError("need at least one initial state")
    K = profile.K
    report = ExperimentReport(
        experiment="homogenize",
        config={"eps_grid": list(map(float, eps_grid)), "reps": reps},
        seed=seed,
    )
    rows_closed, rows_open = [], []
    checks_total = {}
    for yi, y in enumerate(initial_states):
        y = np.asarray(y, dtype=np.int64)
        total = int(y.sum())
        for ei, eps in enumerate(eps_grid):
            if total == 0:
                rows_closed.append((total, eps, 0.0, 0.0, 0.0, 0.0, reps))
                continue
            t_closed = mixing_time(profile, eps / (2 * K))
            samples = closed_positions_at(
                profile, y, t_closed, reps, _fold_seed(seed, _HOMOG, yi, ei)
            )
            dev = np.abs(samples / total - profile.pi[None, :]).sum(axis=1)
            hits = int((dev >= eps).sum())
            p_hat, lo, hi = wilson_interval(hits, reps)
            bound = 2 * K * math.exp(-(eps**2) * total / (4 * K * K))
            se = binomial_se(hits, reps)
            rows_closed.append((total, eps, imbalance(y, profile.pi), p_hat, se, bound, reps))
            report.add_verdict(
                f"closed_bound_y{total}_eps{eps:g}",
                p_hat,
                se,
                bound + 3 * se,
                reps,
                p_hat <= bound + 3 * se,
            )

            t_open = mixing_time(profile, eps / (4 * K))
            res = _open_batch(
                params, y, t_open * 1.0000001, reps, seed, threads, _HOMOG, yi * 31 + ei,
                grid=np.array([t_open]),
            )
            states = res.grid_states[:, 0, :]
            dev_o = np.abs(states / np.maximum(states.sum(axis=1), 1)[:, None]
                           - profile.pi[None, :]).sum(axis=1)
            hits_o = int((dev_o >= eps).sum())
            p_o = hits_o / reps
            se_o = binomial_se(hits_o, reps)
            pois_term = float(
                sps.poisson.sf(math.ceil(eps * total / (4 * K)) - 1, params.kappa_bound * t_open)
            )
            bound_o = pois_term + 2 * K * math.exp(-(eps**2) * total / (16 * K * K))
            rows_open.append((total, eps, p_o, se_o, bound_o, reps))
            report.add_verdict(
                f"open_bound_y{total}_eps{eps:g}",
                p_o,
                se_o,
                bound_o + 3 * se_o,
                reps,
                p_o <= bound_o + 3 * se_o,
            )
            for k, v in res.checks.items():
                checks_total[k] = checks_total.get(k, 0) + v

    report.replication_tables["closed"] = (
        ["y_total", "eps", "imbalance_t0", "p_hat", "se", "bound", "reps"],
        rows_closed,
    )
    report.replication_tables["open"] = (
        ["y_total", "eps", "p_hat", "se", "bound", "reps"],
        rows_open,
    )
    report.assertion_counts = checks_total
    _assert_coupling_clean(report, checks_total)
    return report


def _fold_seed(seed: int, *path: int) -> int:
    mix = 0
    for p in path:
        mix = (mix * 1_000_003 + p + 1) % (2**31)
    return (int(seed) * 69069 + mix) % (2**63)


def _assert_coupling_clean(report: ExperimentReport, checks: dict):
    bad = sum(v for k, v in checks.items() if k in ("lower_bound", "equality", "tag_occupancy", "slope_bound"))
    evaluated = checks.get("events", 0) + checks.get("eq_checks", 0)
    report.add_verdict("pathwise_coupling_violations", bad, 0.0, 0.0, evaluated, bad == 0)


# ---------------------------------------------------------------------------
# heavy traffic
# ---------------------------------------------------------------------------

def run_heavy_traffic(
    ladder: HeavyTrafficLadder,
    t_grid,
    eps_excursion: float,
    reps: int,
    seed: int,
    threads: int = 1,
    collapse_grid=None,
    ks_threshold: float = 0.05,
    collapse_threshold: float = 0.10,
    excursion_reps: int | None = None,
    excursion_horizon: float = 4.0,
    oracle_paths: int = 2000,
) -> ExperimentReport:
    """Diffusion-limit diagnostics along the ladder.

    Per ladder index: the scaled-population marginal at each grid time versus
    the reflected-Brownian closed form (one-sample KS), the collapse-gap
    distribution, the proportion error at the excursion-level crossing, and
    the excursion functionals versus a reflected-Brownian Monte Carlo oracle
    (two-sample KS).  The coupled walk's crossing/left-endpoint transport
    inequalities are asserted pathwise in every replication.
    """
    t_grid = np.asarray(sorted(t_grid), dtype=float)
    if collapse_grid is None:
        collapse_grid = [t for t in t_grid if t >= 0.2] or list(t_grid)
    collapse_grid = np.asarray(collapse_grid, dtype=float)
    if excursion_reps is None:
        excursion_reps = min(reps, 800)
    rbm = RbmParams(lambda_limit=ladder.lambda_limit, alpha=ladder.alpha)
    t_last = float(t_grid[-1])
    pi = ladder.params_per_n[0].mobility.pi

    report = ExperimentReport(
        experiment="heavy-traffic",
        config={
            "n_values": list(ladder.n_values),
            "t_grid": t_grid.tolist(),
            "eps_excursion": eps_excursion,
            "reps": reps,
            "ks_threshold": ks_threshold,
            "collapse_threshold": collapse_threshold,
        },
        seed=seed,
    )
    ks_rows, collapse_rows, ratio_rows, excursion_rows = [], [], [], []
    ks_final, collapse_med = [], []
    checks_total = {}
    empty = np.zeros(pi.shape[0], dtype=np.int64)

    # RBM oracle excursion sample (shared across ladder indices).
    og, ot0, omax = batch_excursion_stats(
        rbm, eps_excursion, oracle_paths, excursion_horizon + eps_excursion,
        (excursion_horizon + eps_excursion) / 2**12, _fold_seed(seed, _ORACLE),
    )
    o_done = ~np.isnan(ot0)

    for ni, (n, params) in enumerate(zip(ladder.n_values, ladder.params_per_n)):
        base_grid = t_grid * n * n
        res = _open_batch(
            params, empty, float(base_grid[-1]) * 1.0000001, reps, seed, threads,
            _HEAVY, ni, grid=base_grid,
        )
        for k, v in res.checks.items():
            checks_total[k] = checks_total.get(k, 0) + v
        norms = res.grid_states.sum(axis=2) / n  # (R, G) scaled totals

        for gi, t in enumerate(t_grid):
            d = ks_distance(norms[:, gi], lambda x: rbm_marginal_cdf(rbm, float(t), x))
            ks_rows.append((n, float(t), d, dkw_band(reps), reps))
            if gi == len(t_grid) - 1:
                ks_final.append(d)

        sel = np.isin(t_grid, collapse_grid)
        if not sel.any():
            raise ConfigError("collapse grid must be a subset of the t grid")
        states_c = res.grid_states[:, sel, :] / n
        totals_c = states_c.sum(axis=2)
        gaps = np.abs(states_c - totals_c[:, :, None] * pi[None, None, :]).sum(axis=2)
        per_rep_gap = gaps.max(axis=1)
        med, lo, hi = median_interval(per_rep_gap)
        collapse_rows.append((n, med, lo, hi, reps))
        collapse_med.append((med, lo, hi))

        # Excursion-level sub-run (its own horizon so most excursions finish).
        exc = _open_batch(
            params, empty, float(n * n * excursion_horizon), excursion_reps, seed,
            threads, _HEAVY, 100 + ni, level=eps_excursion * n,
        )
        for k, v in exc.checks.items():
            checks_total[k] = checks_total.get(k, 0) + v
        crossed = ~np.isnan(exc.t_up)
        both = crossed & ~np.isnan(exc.t_up_walk)
        transport_bad = int((exc.t_up[both] > exc.t_up_walk[both] + 1e-9).sum())
        transport_bad += int((exc.g_x[both] > exc.g_walk[both] + 1e-9).sum())
        report.add_verdict(
            f"excursion_transport_n{n}", transport_bad, 0.0, 0.0,
            int(both.sum()), transport_bad == 0,
        )

        r_up = exc.state_up[crossed] / np.maximum(exc.state_up[crossed].sum(axis=1), 1)[:, None]
        r_err = np.abs(r_up - pi[None, :]).sum(axis=1)
        q50, q90 = (np.quantile(r_err, 0.5), np.quantile(r_err, 0.9)) if len(r_err) else (math.nan, math.nan)
        ratio_rows.append((n, float(q50), float(q90), int(crossed.sum())))

        done = crossed & ~np.isnan(exc.t0_after)
        n_censored = int(crossed.sum() - done.sum())
        if done.any() and o_done.any():
            ks_g = ks_two_sample(exc.g_x[done] / n**2, og[o_done])
            ks_t0 = ks_two_sample(exc.t0_after[done] / n**2, ot0[o_done])
            ks_max = ks_two_sample(exc.max_height[done] / n, omax[o_done])
        else:
            ks_g = ks_t0 = ks_max = math.nan
        excursion_rows.append(
            (n, ks_g, ks_t0, ks_max, int(done.sum()), n_censored, int(o_done.sum()))
        )

    # Verdicts: final-n KS small, KS and collapse medians non-increasing in n
    # within sampling bands.
    report.add_verdict(
        "ks_marginal_final", ks_final[-1], dkw_band(reps), ks_threshold,
        reps, ks_final[-1] <= ks_threshold,
    )
    band = dkw_band(reps)
    mono_ks = all(
        ks_final[i + 1] <= ks_final[i] + 2 * band for i in range(len(ks_final) - 1)
    )
    report.add_verdict(
        "ks_marginal_monotone", float(max(0.0, max(
            (ks_final[i + 1] - ks_final[i] for i in range(len(ks_final) - 1)), default=0.0
        ))), band, 2 * band, reps, mono_ks,
    )
    med_last = collapse_med[-1][0]
    report.add_verdict(
        "collapse_gap_median_final", med_last,
        (collapse_med[-1][2] - collapse_med[-1][1]) / 2, collapse_threshold,
        reps, med_last <= collapse_threshold,
    )
    mono_c = all(
        collapse_med[i + 1][0] <= collapse_med[i][0]
        or collapse_med[i + 1][1] <= collapse_med[i][2]
        for i in range(len(collapse_med) - 1)
    )
    report.add_verdict(
        "collapse_gap_monotone", 0.0 if mono_c else 1.0, 0.0, 0.0, reps, mono_c
    )

    report.replication_tables["ks_marginal"] = (
        ["n", "t", "ks_distance", "dkw_band", "reps"], ks_rows,
    )
    report.replication_tables["collapse_gap"] = (
        ["n", "median", "ci_lo", "ci_hi", "reps"], collapse_rows,
    )
    report.replication_tables["ratio_at_crossing"] = (
        ["n", "q50", "q90", "n_crossed"], ratio_rows,
    )
    report.replication_tables["excursions"] = (
        ["n", "ks_g", "ks_t0", "ks_max", "n_done", "n_censored", "oracle_done"],
        excursion_rows,
    )
    report.assertion_counts = checks_total
    _assert_coupling_clean(report, checks_total)
    return report


# ---------------------------------------------------------------------------
# stationary law
# ---------------------------------------------------------------------------

def _merge_cycles(parts: list[CycleStats], seed: int) -> CycleStats:
    return CycleStats(
        lengths=np.concatenate([p.lengths for p in parts]),
        norm_moments=np.concatenate([p.norm_moments for p in parts]),
        occupancy=np.concatenate([p.occupancy for p in parts]),
        tail_time=np.concatenate([p.tail_time for p in parts]),
        empty_node=np.concatenate([p.empty_node for p in parts]),
        empty_node_tail=np.concatenate([p.empty_node_tail for p in parts]),
        imbalance_time=np.concatenate([p.imbalance_time for p in parts]),
        m_cap=parts[0].m_cap,
        r_max=parts[0].r_max,
        coupling_checks=sum(p.coupling_checks for p in parts),
        seed=seed,
    )


def stationary_stats(
    params: NetworkParams, cycles: int, seed: int, threads: int = 1,
    exp: int = _STAT, n_idx: int = 0, m_cap: int = 12, r_max: int = 4,
    streams_per_chunk: int = 256,
) -> CycleStats:
    """Chunk-parallel regenerative cycle collection."""
    if not (params.rho < 1.0):
        raise UnstableParams(f"stationary run needs rho < 1, got {params.rho}")

    def worker(i, size):
        gen = rng.stream(seed, rng.CLOCK, exp, n_idx, i)
        streams = min(streams_per_chunk, max(1, size))
        return batch.stationary_cycles(
            params, n_streams=streams, cycles_per_stream=1, seed=seed,
            m_cap=m_cap, r_max=r_max, gen=gen, target_cycles=size,
            scalar_stream_path=(exp, n_idx, i),
        )

    parts = _map_chunks(worker, cycles, threads)
    return _merge_cycles(parts, seed)


def run_stationary(
    ladder: HeavyTrafficLadder,
    r_max: int,
    cycles: int,
    seed: int,
    threads: int = 1,
    balance_levels=range(1, 11),
    dominance_levels=range(1, 11),
    moment_tolerance: float = 0.15,
) -> ExperimentReport:
    """Stationary moments, geometric dominance, joint-tail decay, balance.

    Regenerative estimates of the scaled population moments are compared to
    r!/alpha^r; the total-population tail is checked against the geometric
    lower bound; the (total >= q, node empty) tail must decay log-linearly;
    and the stationary balance-equation residuals must vanish within noise.
    """
    if ladder.alpha <= 0:
        raise UnstableParams("stationary experiments need alpha > 0")
    report = ExperimentReport(
        experiment="stationary",
        config={"n_values": list(ladder.n_values), "cycles": cycles, "r_max": r_max},
        seed=seed,
    )
    mom_rows, dom_rows, joint_rows, bal_rows, imb_rows = [], [], [], [], []
    n_final = ladder.n_values[-1]
    checks = 0
    for ni, (n, params) in enumerate(zip(ladder.n_values, ladder.params_per_n)):
        stats = stationary_stats(
            params, cycles, seed, threads, n_idx=ni, r_max=max(r_max, 2)
        )
        checks += stats.coupling_checks
        for r in range(1, r_max + 1):
            est, se = stats.moment(r)
            est_scaled = est / n**r
            se_scaled = se / n**r
            target = math.factorial(r) / ladder.alpha**r
            mom_rows.append((n, r, est_scaled, se_scaled, target, stats.n_cycles))
            if n == n_final and r <= 2:
                report.add_verdict(
                    f"moment_r{r}_n{n}",
                    est_scaled,
                    se_scaled,
                    moment_tolerance * target,
                    stats.n_cycles,
                    abs(est_scaled - target) <= moment_tolerance * target,
                )
        for q in dominance_levels:
            est, se = stats.tail_probability(q)
            floor = params.rho**q
            dom_rows.append((n, q, est, se, floor, stats.n_cycles))
            if n == n_final:
                report.add_verdict(
                    f"geometric_dominance_q{q}_n{n}",
                    est,
                    se,
                    floor - 3 * se,
                    stats.n_cycles,
                    est >= floor - 3 * se,
                )
        # Joint-tail decay: log P(total >= q, node k empty) vs q.
        K = params.mobility.K
        for k in range(K):
            qs, logs, ses = [], [], []
            for q in dominance_levels:
                est, se = stats.empty_joint_tail(q, k)
                if est > 0 and se > 0:
                    qs.append(q)
                    logs.append(math.log(est))
                    ses.append(se / est)
                joint_rows.append((n, k, q, est, se))
            if len(qs) >= 3:
                slope, slope_se, _ = weighted_slope(np.array(qs), np.array(logs), np.array(ses))
                if n == n_final:
                    report.add_verdict(
                        f"joint_tail_decay_node{k}_n{n}", slope, slope_se, 0.0,
                        len(qs), slope + 1.96 * slope_se < 0.0,
                    )
        for m in balance_levels:
            res, se = balance_residual(stats, params, m)
            bal_rows.append((n, m, res, se, stats.n_cycles))
            report.add_verdict(
                f"balance_m{m}_n{n}", res, se, 3 * se, stats.n_cycles,
                abs(res) <= 3 * se,
            )
        imb_est, imb_se = stats.mean_imbalance()
        imb_rows.append((n, imb_est, imb_se, stats.n_cycles))

    mono_imb = all(
        imb_rows[i + 1][1] <= imb_rows[i][1] + 3 * (imb_rows[i][2] + imb_rows[i + 1][2])
        for i in range(len(imb_rows) - 1)
    )
    report.add_verdict(
        "imbalance_monotone", imb_rows[-1][1], imb_rows[-1][2], imb_rows[0][1],
        cycles, mono_imb,
    )
    report.replication_tables["moments"] = (
        ["n", "r", "estimate_scaled", "se_scaled", "target", "cycles"], mom_rows,
    )
    report.replication_tables["dominance"] = (
        ["n", "q", "tail_estimate", "se", "geometric_floor", "cycles"], dom_rows,
    )
    report.replication_tables["joint_tail"] = (
        ["n", "node", "q", "estimate", "se"], joint_rows,
    )
    report.replication_tables["balance"] = (
        ["n", "m", "residual", "se", "cycles"], bal_rows,
    )
    report.replication_tables["imbalance"] = (
        ["n", "mean_imbalance", "se", "cycles"], imb_rows,
    )
    report.assertion_counts = {"events": checks, "lower_bound": 0}
    _assert_coupling_clean(report, report.assertion_counts)
    return report


# ---------------------------------------------------------------------------
# sojourn times
# ---------------------------------------------------------------------------

def _sample_tag_nodes(states: np.ndarray, gen: np.random.Generator) -> np.ndarray:
    """Pick one user uniformly in each state; returns its node."""
    cum = np.cumsum(states, axis=1)
    totals = cum[:, -1]
    u = gen.random(len(states)) * totals
    return (cum <= u[:, None]).sum(axis=1).astype(np.int64)


def stationary_state_pool(
    params: NetworkParams,
    n_states: int,
    seed: int,
    threads: int = 1,
    n_scale: int = 1,
    burn: float = 5.0,
    spacing: float = 2.5,
    draws_per_stream: int = 6,
    exp: int = _SOJ,
) -> np.ndarray:
    """Approximate stationary states from long regenerative runs.

    Starts empty, discards a burn-in of `burn` scaled time units (n^2 base
    units each) and records states every `spacing` scaled units afterwards.
    """
    streams = int(math.ceil(n_states / draws_per_stream))
    base = n_scale * n_scale
    grid = base * (burn + spacing * np.arange(draws_per_stream))
    horizon = float(grid[-1] * 1.0000001 + 1.0)
    res = _open_batch(
        params, np.zeros(params.mobility.K, dtype=np.int64), horizon, streams,
        seed, threads, exp, 900, grid=grid,
    )
    pool = res.grid_states.reshape(-1, params.mobility.K)
    return pool[:n_states]


def run_sojourn(
    ladder: HeavyTrafficLadder,
    b: float,
    reps: int,
    seed: int,
    threads: int = 1,
    mode: str = "both",
    horizon_scale: float = 12.0,
    sprime_grid=(0.2, 0.4, 0.6, 0.8, 1.0),
    ks_threshold_fixed: float = 0.05,
    ks_threshold_stationary: float = 0.07,
) -> ExperimentReport:
    """Tagged-user sojourn distributions in the two initial regimes.

    Fixed-start mode launches round(n b pi) users, tags one uniformly, and
    compares the scaled sojourn against the exponential with mean b/lambda;
    stationary mode draws the initial state from a long stationary run and
    compares against the product of two independent exponentials.
    """
    if mode not in ("fixed", "stationary", "both"):
        raise ConfigError(f"unknown sojourn mode {mode!r}")
    report = ExperimentReport(
        experiment="sojourn",
        config={"n_values": list(ladder.n_values), "b": b, "reps": reps, "mode": mode},
        seed=seed,
    )
    lam = ladder.lambda_limit
    fixed_rows, sprime_rows, stat_rows = [], [], []
    checks_total = {}
    pi = ladder.params_per_n[0].mobility.pi

    def run_tagged(params, n, initial, tags, horizon, sgrid, n_idx):
        def worker(i, size):
            gen = rng.stream(seed, rng.CLOCK, _SOJ, n_idx, i)
            lo = sum(rng.chunk_sizes(reps, _N_CHUNKS)[:i])
            init_i = initial if initial.ndim == 1 else initial[lo : lo + size]
            return batch.sojourn_run(
                params, init_i, tags[lo : lo + size], horizon, gen, sprime_grid=sgrid
            )

        parts = _map_chunks(worker, reps, threads)
        chi = np.concatenate([p.chi for p in parts])
        sp = None
        if parts[0].sprime is not None:
            sp = np.concatenate([p.sprime for p in parts])
        checks = {}
        for p in parts:
            for k, v in p.checks.items():
                checks[k] = checks.get(k, 0) + v
        return chi, sp, checks

    if mode in ("fixed", "both"):
        for ni, (n, params) in enumerate(zip(ladder.n_values, ladder.params_per_n)):
            y = proportional_state(int(round(n * b)), pi)
            tag_gen = rng.stream(seed, rng.SELECTION, _SOJ, ni)
            tags = _sample_tag_nodes(np.tile(y, (reps, 1)), tag_gen)
            horizon = horizon_scale * n * b / lam
            sgrid = np.asarray(sprime_grid, dtype=float) * n
            chi, sp, checks = run_tagged(params, n, y, tags, horizon, sgrid, ni)
            for k, v in checks.items():
                checks_total[k] = checks_total.get(k, 0) + v
            done = ~np.isnan(chi)
            scaled = chi[done] / n
            mean_rate = lam / b
            d = ks_distance(scaled, lambda x: -np.expm1(-mean_rate * np.asarray(x)))
            fixed_rows.append((n, d, int(done.sum()), int((~done).sum())))
            if n == ladder.n_values[-1]:
                report.add_verdict(
                    f"sojourn_fixed_ks_n{n}", d, dkw_band(int(done.sum())),
                    ks_threshold_fixed, int(done.sum()), d <= ks_threshold_fixed,
                )
            if sp is not None:
                line = lam * np.asarray(sprime_grid) / b
                valid = ~np.isnan(sp).all(axis=1)
                if valid.any():
                    sup_err = np.nanmax(np.abs(sp[valid] - line[None, :]), axis=1)
                    med, lo_ci, hi_ci = median_interval(sup_err)
                    sprime_rows.append((n, med, lo_ci, hi_ci, int(valid.sum())))
                else:
                    sprime_rows.append((n, math.nan, math.nan, math.nan, 0))

    if mode in ("stationary", "both"):
        if ladder.alpha <= 0:
            raise UnstableParams("stationary sojourn mode needs alpha > 0")
        n = ladder.n_values[-1]
        params = ladder.params_per_n[-1]
        pool = stationary_state_pool(
            params, int(reps * 1.2) + 64, seed, threads, n_scale=n
        )
        nonempty = pool[pool.sum(axis=1) > 0]
        if len(nonempty) < reps:
            raise TagUnavailable(
                f"only {len(nonempty)} non-empty stationary samples for {reps} tags"
            )
        initials = nonempty[:reps]
        tag_gen = rng.stream(seed, rng.SELECTION, _SOJ, 990)
        tags = _sample_tag_nodes(initials, tag_gen)
        horizon = horizon_scale * 4.0 * n / lam
        chi, _, checks = run_tagged(params, n, initials, tags, horizon, None, 991)
        for k, v in checks.items():
            checks_total[k] = checks_total.get(k, 0) + v
        done = ~np.isnan(chi)
        scaled = chi[done] / n
        ref_gen = rng.stream(seed, rng.REQUIREMENTS, _SOJ)
        reference = (
            ref_gen.standard_exponential(len(scaled)) / ladder.alpha
        ) * ref_gen.standard_exponential(len(scaled)) / lam
        d2 = ks_two_sample(scaled, reference)
        stat_rows.append((n, d2, int(done.sum()), int((~done).sum())))
        report.add_verdict(
            f"sojourn_stationary_ks_n{n}", d2, dkw_band(int(done.sum())),
            ks_threshold_stationary, int(done.sum()), d2 <= ks_threshold_stationary,
        )

    report.replication_tables["fixed_start"] = (
        ["n", "ks_distance", "n_done", "n_censored"], fixed_rows,
    )
    report.replication_tables["sprime_deviation"] = (
        ["n", "median_sup_err", "ci_lo", "ci_hi", "n_samples"], sprime_rows,
    )
    report.replication_tables["stationary_mode"] = (
        ["n", "ks_two_sample", "n_done", "n_censored"], stat_rows,
    )
    report.assertion_counts = checks_total
    _assert_coupling_clean(report, checks_total)
    return report


# ---------------------------------------------------------------------------
# closed-system martingale drift
# ---------------------------------------------------------------------------

def run_martingale_check(
    profile: MobilityProfile,
    initial,
    c_values,
    t_values,
    reps: int,
    seed: int,
    quad_tol: float = 1e-7,
) -> ExperimentReport:
    """Monte Carlo zero-drift test of the closed-system martingale.

    For each exponent c and time t, the martingale functional is evaluated on
    `reps` exact closed-system states at time t (sampled from the transition
    rows, which is the time-t law of the independent-user system) and its
    mean is compared with the deterministic time-zero value; the drift must
    vanish within three standard errors.
    """
    from .spectral import SimplexGeometry, closed_martingale, spectral_decomposition

    y = np.asarray(initial, dtype=np.int64)
    dec = spectral_decomposition(profile)
    geom = SimplexGeometry(K=profile.K, pi=profile.pi)
    report = ExperimentReport(
        experiment="martingale-check",
        config={
            "initial": y.tolist(),
            "c_values": list(map(float, c_values)),
            "t_values": list(map(float, t_values)),
            "reps": reps,
        },
        seed=seed,
    )
    rows = []
    for ci, c in enumerate(c_values):
        m0 = closed_martingale(dec, geom, float(c), y, 0.0, quad_tol)
        for ti, t in enumerate(t_values):
            samples = closed_positions_at(
                profile, y, float(t), reps, _fold_seed(seed, 7, ci, ti)
            )
            uniq, inverse = np.unique(samples, axis=0, return_inverse=True)
            vals = np.array(
                [closed_martingale(dec, geom, float(c), row, float(t), quad_tol) for row in uniq]
            )
            per_sample = vals[inverse]
            mean, se = mean_se(per_sample)
            drift = mean - m0
            ok = abs(drift) <= 3.0 * se
            rows.append((float(c), float(t), drift, se, reps, "pass" if ok else "fail"))
            report.add_verdict(f"drift_c{c:g}_t{t:g}", drift, se, 3.0 * se, reps, ok)
    report.replication_tables["drift"] = (
        ["c", "t", "mean_drift", "se", "n_reps", "verdict"], rows,
    )
    return report


# ---------------------------------------------------------------------------
# hitting-time diagnostics
# ---------------------------------------------------------------------------

def run_hitting_diagnostics(
    params: NetworkParams,
    phi_grid,
    delta: float,
    t: float,
    reps: int,
    seed: int,
    threads: int = 1,
    population_factor: float = 2.0,
) -> ExperimentReport:
    """Deviation-before-drain frequencies across a population-floor grid.

    For each floor phi the run starts near proportionality with twice the
    floor population and races the proportion deviation delta against the
    drain to phi within the window t; the log-frequency against phi must
    have a negative fitted slope.  A closed-system variant (movements only)
    is reported with the theoretical bound shape as an overlay curve.
    """
    eta = params.mobility.pi.min() * delta * delta / 32.0
    report = ExperimentReport(
        experiment="hitting",
        config={"phi_grid": [int(p) for p in phi_grid], "delta": delta, "t": t, "reps": reps},
        seed=seed,
    )
    rows, closed_rows = [], []
    logs, ses = [], []
    checks_total = {}
    K = params.mobility.K
    for pi_idx, phi in enumerate(phi_grid):
        y = proportional_state(int(round(population_factor * phi)), params.mobility.pi)
        if imbalance(y, params.mobility.pi) > eta:
            raise ConfigError(
                f"initial state for phi={phi} has imbalance above eta={eta:.3e}"
            )

        def worker(i, size, _phi=phi, _y=y, _idx=pi_idx):
            gen = rng.stream(seed, rng.CLOCK, _HIT, _idx, i)
            return batch.hitting_run(params, _y, int(_phi), delta, t, size, gen)

        parts = _map_chunks(worker, reps, threads)
        hits = int(sum(p.deviated.sum() for p in parts))
        for p in parts:
            for k, v in p.checks.items():
                checks_total[k] = checks_total.get(k, 0) + v
        freq = hits / reps
        log_p, log_se = log_frequency(hits, reps)
        rows.append((int(phi), int(y.sum()), freq, binomial_se(hits, reps), reps))
        logs.append(log_p)
        ses.append(log_se)

        def cworker(i, size, _phi=phi, _y=y, _idx=pi_idx):
            gen = rng.stream(seed, rng.CLOCK, _HIT, 50 + _idx, i)
            return batch.hitting_run(
                params, _y, 0, delta, t, size, gen, closed=True
            )

        cparts = _map_chunks(cworker, reps, threads)
        chits = int(sum(p.deviated.sum() for p in cparts))
        # Bound-shape overlay exp(K log t - delta^2 |y| / 8), normalized at
        # the first grid point.
        shape = math.exp(K * math.log(max(t, 1.01)) - delta * delta * y.sum() / 8.0)
        closed_rows.append((int(phi), int(y.sum()), chits / reps, binomial_se(chits, reps), shape, reps))

    phi_arr = np.asarray([r[0] for r in rows], dtype=float)
    slope, slope_se, intercept = weighted_slope(phi_arr, np.asarray(logs), np.asarray(ses))
    report.add_verdict(
        "log_frequency_slope", slope, slope_se, 0.0, reps * len(rows),
        slope + 1.96 * slope_se < 0.0,
    )
    if closed_rows[0][2] > 0:
        scale = closed_rows[0][2] / closed_rows[0][4]
        closed_rows = [
            (phi, tot, f, se, scale * shape, reps)
            for (phi, tot, f, se, shape, reps) in closed_rows
        ]
    report.replication_tables["open_race"] = (
        ["phi", "y_total", "deviation_frequency", "se", "reps"], rows,
    )
    report.replication_tables["closed_overlay"] = (
        ["phi", "y_total", "deviation_frequency", "se", "bound_shape", "reps"],
        closed_rows,
    )
    report.aggregates["slope"] = slope
    report.aggregates["slope_se"] = slope_se
    report.aggregates["intercept"] = intercept
    report.assertion_counts = checks_total
    _assert_coupling_clean(report, checks_total)
    return report
