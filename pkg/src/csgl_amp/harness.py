"""Monte Carlo experiment engine.

SNR sweeps, (delta, rho_G) validity-region scans, and threshold
calibration. Trials are deterministic functions of (seed, operating
point, trial index): every instance is drawn from its own substream, so
results are independent of chunking, execution order, and worker count.
Aggregation is integer counting.

Trials are evaluated in fixed-size chunks. Within a chunk all solvers
see the identical stacked observations, and the AMP solvers advance all
chunk columns in lockstep against the shared sensing matrix (level-3
BLAS instead of per-trial matrix-vector products). BLAS threading is
pinned to one thread inside workers so results do not depend on the
BLAS pool geometry.
"""

import dataclasses
import os
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from multiprocessing import get_context

import numpy as np
from threadpoolctl import threadpool_limits

from .config import AMP_SOLVERS, FistaSettings
from .core import (
    GroundTruth,
    GroupPartition,
    GroupedComplexVector,
    ProblemInstance,
    SensingMatrix,
    substream,
)
from .otfs import build_sensing_matrix, default_preamble_pool, synthesize
from .solvers import (
    ost_detect,
    ost_null_threshold,
    run_amp_batch,
    run_fista_sgl,
)

__all__ = [
    "MetricsRow",
    "RegionRow",
    "CalibrationRow",
    "TrialRecord",
    "make_context",
    "run_trial",
    "snr_sweep",
    "validity_region",
    "calibrate_thresholds",
    "resolve_workers",
]

# substream path tags (first spawn-key word) per experiment kind
_TAG_SWEEP = 0
_TAG_REGION = 2


def _snr_code(snr_db):
    # offset keeps spawn-key words nonnegative for any sane dB value
    return (1 << 20) + int(round(float(snr_db) * 1000.0))


def _frac_code(x):
    return (1 << 20) + int(round(float(x) * 1e6))


@dataclass
class MetricsRow:
    solver: str
    snr_db: float
    pmd: float
    pfa: float
    trials: int
    misdetected: int
    wall_time_ms: float


@dataclass
class RegionRow:
    solver: str
    snr_db: float
    delta: float
    rho_g_max: float  # None when no grid point met the target


@dataclass
class CalibrationRow:
    delta: float
    rho_g: float
    snr_db: float
    alpha1: float
    alpha2: float
    pmd: float
    pfa: float


@dataclass
class TrialRecord:
    digest: str
    truth: frozenset
    detected: dict  # solver name -> set of groups


@dataclass
class _Counts:
    miss: int = 0
    fa: int = 0
    det_opp: int = 0
    fa_opp: int = 0
    trials: int = 0
    aborted: int = 0
    iters: int = 0
    seconds: float = 0.0

    def add(self, other):
        for f in dataclasses.fields(self):
            setattr(self, f.name, getattr(self, f.name) + getattr(other, f.name))


@dataclass
class ScenarioContext:
    """Per-operating-point reusables: the sensing matrix and, when the
    OST threshold mode is configured, its unit-variance null quantile."""

    matrix: SensingMatrix = None
    tau_unit: float = None


def make_context(config):
    if config.scenario == "otfs":
        pool = default_preamble_pool(config.num_groups, config.grid)
        matrix = build_sensing_matrix(pool, config.grid)
        tau_unit = None
        ost_cfg = config.solver_cfgs.get("ost")
        if ost_cfg is not None and ost_cfg.mode == "threshold":
            tau_unit = ost_null_threshold(
                matrix, ost_cfg.p_fa, ost_cfg.calibration_draws, ost_cfg.calibration_seed
            )
        return ScenarioContext(matrix=matrix, tau_unit=tau_unit)
    return ScenarioContext()


def _draw_instance(config, ctx, snr_db, trial_idx, extra_path=()):
    """One synthetic instance from its own substream.

    The stream address is (seed, *extra_path, snr_code, trial), so a
    trial is reproducible in isolation and identical no matter which
    chunk or worker evaluates it.
    """
    rng = substream(config.seed, *extra_path, _snr_code(snr_db), trial_idx)
    if config.scenario == "otfs":
        return synthesize(
            None, config.grid, config.num_active, config.profile, snr_db, rng,
            matrix=ctx.matrix,
        )
    return _gaussian_instance(config, snr_db, rng)


def _gaussian_instance(config, snr_db, rng):
    """i.i.d. complex Gaussian matrix, fresh per trial, unit-norm columns;
    active groups get nonzeros_per_group unit-variance complex entries."""
    n, G, p = config.n_rows, config.num_groups, config.group_size
    N = G * p
    X = rng.standard_normal((n, N)) + 1j * rng.standard_normal((n, N))
    X /= np.linalg.norm(X, axis=0)
    part = GroupPartition(G, p)
    beta = np.zeros(N, np.complex128)
    active = rng.choice(G, size=config.num_active, replace=False)
    for g in active:
        idx = rng.choice(p, size=config.nonzeros_per_group, replace=False)
        vals = (rng.standard_normal(config.nonzeros_per_group)
                + 1j * rng.standard_normal(config.nonzeros_per_group)) * np.sqrt(0.5)
        beta[g * p + idx] = vals
    matrix = SensingMatrix(entries=X, partition=part)
    signal = X @ beta
    sig_power = float(np.vdot(signal, signal).real) / n
    noise_var = (sig_power / 10.0 ** (snr_db / 10.0)) if sig_power > 0 else 10.0 ** (-snr_db / 10.0)
    w = (rng.standard_normal(n) + 1j * rng.standard_normal(n)) * np.sqrt(noise_var / 2.0)
    truth = GroundTruth(
        active_groups=frozenset(int(g) for g in active),
        coefficients=GroupedComplexVector(beta, part),
    )
    return ProblemInstance(matrix=matrix, observation=signal + w,
                           noise_variance=noise_var, truth=truth)


def _detect_ost_batch(matrix, Y, noise_vars, truths, cfg, tau_unit):
    G, p = matrix.partition.num_groups, matrix.partition.group_size
    C = matrix.adjoint @ Y
    T = (np.abs(C) ** 2).reshape(G, p, -1).sum(axis=1)  # (G, B)
    detected = []
    for b in range(Y.shape[1]):
        if cfg.mode == "top_k":
            k = cfg.top_k if cfg.top_k is not None else len(truths[b])
            k = int(min(max(k, 0), G))
            if k == 0:
                detected.append(set())
                continue
            order = np.argsort(T[:, b], kind="stable")
            detected.append(set(order[-k:].tolist()))
        else:
            tau = noise_vars[b] * tau_unit
            detected.append(set(np.flatnonzero(T[:, b] > tau).tolist()))
    return detected


def _fista_detect(instance, settings):
    sigma = np.sqrt(instance.noise_variance)
    p = instance.matrix.partition.group_size
    lam1 = settings.lambda1_scale * sigma
    lam2 = settings.lambda2_scale * sigma * np.sqrt(p)
    beta = run_fista_sgl(instance, lam1, lam2, settings.iters)
    return beta.nonzero_groups()


def _eval_point(config, ctx, snr_db, lo, hi, extra_path=()):
    """Evaluate trials [lo, hi) at one operating point for every solver.

    Returns {solver: _Counts}. All solvers score the same instances.
    """
    out = {name: _Counts() for name in config.solver_names}
    B = hi - lo
    G = config.num_groups
    K = config.num_active
    with threadpool_limits(limits=1):
        instances = [
            _draw_instance(config, ctx, snr_db, t, extra_path) for t in range(lo, hi)
        ]
        truths = [inst.truth.active_groups for inst in instances]

        if config.scenario == "otfs":
            Y = np.empty((ctx.matrix.rows, B), np.complex128)
            for b, inst in enumerate(instances):
                Y[:, b] = inst.observation
            noise_vars = [inst.noise_variance for inst in instances]
            for name in config.solver_names:
                cfg = config.solver_cfgs[name]
                counts = out[name]
                t0 = time.perf_counter()
                if name in AMP_SOLVERS:
                    detected, _, iters, aborted = run_amp_batch(ctx.matrix, Y, cfg)
                    counts.aborted += int(aborted.sum())
                    counts.iters += int(iters.sum())
                elif name == "ost":
                    detected = _detect_ost_batch(
                        ctx.matrix, Y, noise_vars, truths, cfg, ctx.tau_unit
                    )
                else:
                    detected = [_fista_detect(inst, cfg) for inst in instances]
                counts.seconds += time.perf_counter() - t0
                for b in range(B):
                    counts.miss += len(truths[b] - detected[b])
                    counts.fa += len(detected[b] - truths[b])
                counts.det_opp += K * B
                counts.fa_opp += (G - K) * B
                counts.trials += B
        else:
            for b, inst in enumerate(instances):
                for name in config.solver_names:
                    cfg = config.solver_cfgs[name]
                    counts = out[name]
                    t0 = time.perf_counter()
                    if name in AMP_SOLVERS:
                        det, _, iters, aborted = run_amp_batch(
                            inst.matrix, inst.observation.reshape(-1, 1), cfg
                        )
                        detected = det[0]
                        counts.aborted += int(aborted[0])
                        counts.iters += int(iters[0])
                    elif name == "ost":
                        detected = ost_detect(inst, cfg).detected_groups
                    else:
                        detected = _fista_detect(inst, cfg)
                    counts.seconds += time.perf_counter() - t0
                    counts.miss += len(truths[b] - detected)
                    counts.fa += len(detected - truths[b])
                    counts.det_opp += K
                    counts.fa_opp += G - K
                    counts.trials += 1
    return out


# -- worker-pool plumbing -----------------------------------------------
#
# Workers are forked after the context (with its ~100 MB matrix) is
# built, so the matrix is shared copy-on-write instead of pickled.

_WORKER_STATE = {}


def _chunk_task(args):
    snr_db, lo, hi, extra_path = args
    config = _WORKER_STATE["config"]
    ctx = _WORKER_STATE["ctx"]
    return _eval_point(config, ctx, snr_db, lo, hi, extra_path)


def resolve_workers():
    """CSGL_AMP_THREADS caps worker parallelism; 0 or unset means auto."""
    raw = os.environ.get("CSGL_AMP_THREADS", "0")
    try:
        val = int(raw)
    except ValueError:
        raise ValueError(f"CSGL_AMP_THREADS must be an integer, got {raw!r}")
    if val < 0:
        raise ValueError("CSGL_AMP_THREADS must be >= 0")
    return val if val > 0 else (os.cpu_count() or 1)


def _chunks(total, size):
    return [(lo, min(lo + size, total)) for lo in range(0, total, size)]


def _run_tasks(config, ctx, tasks, workers=None):
    """Evaluate chunk tasks, in parallel when workers > 1; aggregation
    is positional, so the result is identical for any worker count."""
    workers = resolve_workers() if workers is None else workers
    results = []
    if workers <= 1 or len(tasks) <= 1:
        _WORKER_STATE["config"] = config
        _WORKER_STATE["ctx"] = ctx
        try:
            for task in tasks:
                results.append(_chunk_task(task))
        finally:
            _WORKER_STATE.clear()
        return results
    _WORKER_STATE["config"] = config
    _WORKER_STATE["ctx"] = ctx
    try:
        with ProcessPoolExecutor(
            max_workers=min(workers, len(tasks)),
            mp_context=get_context("fork"),
        ) as pool:
            results = list(pool.map(_chunk_task, tasks))
    finally:
        _WORKER_STATE.clear()
    return results


def run_trial(config, snr_db, trial_index, ctx=None):
    """Evaluate a single trial with every configured solver.

    All solvers consume the identical instance; the record carries its
    content digest so fairness is auditable. Contributions are identical
    to the ones the same (seed, snr, trial) produces inside snr_sweep.
    """
    if ctx is None:
        ctx = make_context(config)
    inst = _draw_instance(config, ctx, snr_db, trial_index)
    detected = {}
    with threadpool_limits(limits=1):
        Y = inst.observation.reshape(-1, 1)
        for name in config.solver_names:
            cfg = config.solver_cfgs[name]
            if name in AMP_SOLVERS:
                det, _, _, _ = run_amp_batch(inst.matrix, Y, cfg)
                detected[name] = det[0]
            elif name == "ost":
                tau_unit = ctx.tau_unit
                if tau_unit is None and cfg.mode == "threshold":
                    tau_unit = ost_null_threshold(
                        inst.matrix, cfg.p_fa, cfg.calibration_draws, cfg.calibration_seed
                    )
                detected[name] = _detect_ost_batch(
                    inst.matrix, Y, [inst.noise_variance],
                    [inst.truth.active_groups], cfg, tau_unit,
                )[0]
            else:
                detected[name] = _fista_detect(inst, cfg)
    return TrialRecord(
        digest=inst.digest(),
        truth=inst.truth.active_groups,
        detected=detected,
    )


def snr_sweep(config, workers=None):
    """P_md / P_fa versus SNR for every configured solver.

    Returns MetricsRow objects in (solver, snr) order. wall_time_ms is
    measured and therefore not run-reproducible; the CLI redacts it from
    the CSV body and reports timings in the manifest instead.
    """
    ctx = make_context(config)
    tasks = [
        (snr, lo, hi, ())
        for snr in config.snr_db
        for (lo, hi) in _chunks(config.trials, config.chunk)
    ]
    results = _run_tasks(config, ctx, tasks, workers)
    totals = {(name, snr): _Counts() for name in config.solver_names for snr in config.snr_db}
    for (snr, _, _, _), res in zip(tasks, results):
        for name, counts in res.items():
            totals[(name, snr)].add(counts)
    rows = []
    for name in config.solver_names:
        for snr in config.snr_db:
            c = totals[(name, snr)]
            rows.append(MetricsRow(
                solver=name,
                snr_db=snr,
                pmd=(c.miss / c.det_opp) if c.det_opp else 0.0,
                pfa=(c.fa / c.fa_opp) if c.fa_opp else 0.0,
                trials=c.trials,
                misdetected=c.miss,
                wall_time_ms=c.seconds * 1000.0,
            ))
    return rows


def _context_for_delta(config, delta, rho):
    """Sub-config at a region grid point: delta is realized by resizing
    the group count at fixed n and group size; K = max(1, round(rho G))."""
    p = config.group_size
    n = config.n_rows
    G = max(1, round(n / (delta * p)))
    K = min(G, max(1, round(rho * G)))
    sub = dataclasses.replace(config, num_groups=G, num_active=K)
    return sub


def validity_region(config, delta_grid=None, rho_grid=None, workers=None):
    """Largest rho_G on the grid meeting target_pmd, per (solver, snr, delta).

    Every grid point is evaluated (no early exit: pmd need not be
    monotone in rho for the one-step detector). Returns (rows, table)
    where table holds the per-point pmd/pfa for audit.
    """
    delta_grid = tuple(delta_grid if delta_grid is not None else (config.delta_grid or ()))
    rho_grid = tuple(rho_grid if rho_grid is not None else (config.rho_grid or ()))
    if not delta_grid or not rho_grid:
        raise ValueError("region sweep needs delta_grid and rho_grid")
    if list(delta_grid) != sorted(delta_grid) or list(rho_grid) != sorted(rho_grid):
        raise ValueError("grids must be monotone increasing")

    table = []
    best = {}
    for delta in delta_grid:
        ctx = None
        for rho in rho_grid:
            sub = _context_for_delta(config, delta, rho)
            if ctx is None:
                # the matrix depends on delta (through G) but not rho
                ctx = make_context(sub)
            extra = (_TAG_REGION, _frac_code(delta), _frac_code(rho))
            for snr in sub.snr_db:
                tasks = [(snr, lo, hi, extra) for (lo, hi) in _chunks(sub.trials, sub.chunk)]
                results = _run_tasks(sub, ctx, tasks, workers)
                for name in sub.solver_names:
                    c = _Counts()
                    for res in results:
                        c.add(res[name])
                    pmd = (c.miss / c.det_opp) if c.det_opp else 0.0
                    pfa = (c.fa / c.fa_opp) if c.fa_opp else 0.0
                    table.append({
                        "solver": name, "snr_db": snr, "delta": delta, "rho_g": rho,
                        "pmd": pmd, "pfa": pfa, "trials": c.trials,
                        "g": sub.num_groups, "k": sub.num_active,
                    })
                    if pmd <= config.target_pmd:
                        cur = best.get((name, snr, delta))
                        if cur is None or rho > cur:
                            best[(name, snr, delta)] = rho
    rows = []
    for name in config.solver_names:
        for snr in config.snr_db:
            for delta in delta_grid:
                rows.append(RegionRow(
                    solver=name, snr_db=snr, delta=delta,
                    rho_g_max=best.get((name, snr, delta)),
                ))
    return rows, table


def calibrate_thresholds(config, alpha1_grid, alpha2_grid, solver="csgl",
                         max_pfa=None, workers=None):
    """Grid-search threshold multipliers for one AMP solver.

    Selection at each SNR: feasible points (pfa <= max_pfa, when given)
    with minimal pmd, ties broken by lower pfa, then lower (alpha1,
    alpha2). Candidates are scored on identical instances (the sweep
    substreams), so the comparison is paired.
    """
    if solver not in AMP_SOLVERS or solver not in config.solver_names:
        raise ValueError(f"solver {solver!r} is not a configured AMP solver")
    if not alpha1_grid or not alpha2_grid:
        raise ValueError("alpha grids must be nonempty")
    base_cfg = config.solver_cfgs[solver]
    ctx = make_context(config)
    rows = []
    for snr in config.snr_db:
        scored = []
        for a1 in alpha1_grid:
            for a2 in alpha2_grid:
                cfg = dataclasses.replace(base_cfg, alpha1=a1, alpha2=a2)
                sub = dataclasses.replace(config)
                sub.solver_names = (solver,)
                sub.solver_cfgs = {solver: cfg}
                tasks = [(snr, lo, hi, ()) for (lo, hi) in _chunks(sub.trials, sub.chunk)]
                results = _run_tasks(sub, ctx, tasks, workers)
                c = _Counts()
                for res in results:
                    c.add(res[solver])
                pmd = (c.miss / c.det_opp) if c.det_opp else 0.0
                pfa = (c.fa / c.fa_opp) if c.fa_opp else 0.0
                scored.append((pmd, pfa, a1, a2))
        feasible = [s for s in scored if max_pfa is None or s[1] <= max_pfa]
        pool = feasible if feasible else scored
        pmd, pfa, a1, a2 = min(pool)
        rows.append(CalibrationRow(
            delta=config.measurement_ratio, rho_g=config.rho_g, snr_db=snr,
            alpha1=a1, alpha2=a2, pmd=pmd, pfa=pfa,
        ))
    return rows
