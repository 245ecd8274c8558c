"""Fast internal consistency checks, exposed as `csgl-amp selftest`.

Each check is a cheap, deterministic probe of an invariant the library
relies on: denoiser algebra, the closed-form Onsager divergence against
a finite-difference oracle, preamble/shift structure, recovery on easy
instances, and replay/worker-count invariance of the Monte Carlo
harness. The whole suite runs in well under a minute.
"""

import dataclasses
import sys

import numpy as np

from .config import ExperimentConfig
from .core import GroupPartition, GroupedComplexVector, seeded_rng, substream
from .denoise import (
    Thresholds,
    csgl_denoise,
    csgl_denoise_compact,
    numerical_wirtinger_divergence,
    onsager_closed_form,
    soft_threshold_complex,
)
from .harness import make_context, run_trial, snr_sweep
from .otfs import (
    DdGrid,
    build_sensing_matrix,
    default_preamble_pool,
    synthesize,
    twisted_shift,
    veh_a_profile,
    zadoff_chu,
)
from .solvers import (
    OstConfig,
    SolverConfig,
    _sgl_objective,
    ost_detect,
    run_amp,
    run_fista_sgl,
)

_SMALL_GRID = DdGrid(m_dd=7, n_dd=9, k_tau=3, k_nu=2)  # length 63, 20 shifts


def _draw_offgrid(rng, part, t, spread=2.0):
    """Random effective observation kept away from threshold kinks."""
    for _ in range(64):
        v = spread * (rng.standard_normal(part.total) + 1j * rng.standard_normal(part.total))
        r = GroupedComplexVector(v, part)
        try:
            numerical_wirtinger_divergence(r, t, eps=1e-6)
        except ValueError:
            continue
        return r
    raise AssertionError("could not find an off-kink draw in 64 attempts")


def _check_zadoff_chu(rng, trials):
    for root in (1, 2, 5):
        pre = zadoff_chu(root, 63)
        s = pre.samples
        assert np.allclose(np.abs(s), 1.0 / np.sqrt(63), atol=1e-12), "modulus not constant"
        assert abs(np.linalg.norm(s) - 1.0) < 1e-12, "not unit norm"
        for lag in (1, 5, 31):
            corr = np.vdot(s, np.roll(s, lag))
            assert abs(corr) < 1e-10, f"autocorrelation at lag {lag} is {abs(corr):.2e}"


def _check_twisted_shift(rng, trials):
    grid = _SMALL_GRID
    pre = zadoff_chu(2, grid.length)
    base = twisted_shift(pre, 0, 0, grid)
    assert np.allclose(base, pre.samples, atol=1e-12), "(0,0) shift must be identity"
    for (k, l) in grid.shifts:
        out = twisted_shift(pre, k, l, grid)
        assert abs(np.linalg.norm(out) - 1.0) < 1e-12, f"shift ({k},{l}) not unit norm"
        assert np.allclose(np.abs(out), 1.0 / np.sqrt(grid.length), atol=1e-12), \
            f"shift ({k},{l}) broke constant modulus"


def _check_matrix_columns(rng, trials):
    grid = _SMALL_GRID
    pool = default_preamble_pool(6, grid)
    mat = build_sensing_matrix(pool, grid)
    norms = np.linalg.norm(mat.entries, axis=0)
    assert np.allclose(norms, 1.0, atol=1e-9), "columns must be unit norm"
    assert mat.partition.num_groups == 6 and mat.partition.group_size == grid.size


def _check_soft_threshold(rng, trials):
    v = np.array([0.3 + 0.1j, -2.0 + 1.0j, 1e-30 + 0j, 0.0j])
    out = soft_threshold_complex(v, 0.5)
    assert out[0] == 0 and out[2] == 0 and out[3] == 0, "sub-threshold entries must vanish"
    big = v[1]
    expect = (1.0 - 0.5 / abs(big)) * big
    assert abs(out[1] - expect) < 1e-12, "shrinkage should preserve phase"


def _check_denoiser_forms(rng, trials):
    part = GroupPartition(num_groups=6, group_size=5)
    for _ in range(max(4, trials // 4)):
        t = Thresholds(lambda1=0.6 * rng.random() + 0.1,
                       lambda2=1.2 * rng.random() + 0.1)
        r = _draw_offgrid(rng, part, t)
        two_stage = csgl_denoise(r, t)
        compact = csgl_denoise_compact(r, t)
        assert np.allclose(two_stage.result.values, compact.values, atol=1e-12), \
            "two-stage and compact forms disagree"


def _check_onsager_oracle(rng, trials):
    part = GroupPartition(num_groups=5, group_size=4)
    saw_split = False
    for _ in range(max(4, trials // 4)):
        t = Thresholds(lambda1=0.5 * rng.random() + 0.15,
                       lambda2=1.0 * rng.random() + 0.15)
        r = _draw_offgrid(rng, part, t)
        out = csgl_denoise(r, t)
        oracle = numerical_wirtinger_divergence(r, t, eps=1e-6)
        assert abs(out.divergence - oracle) < 5e-6, \
            f"closed form {out.divergence:.8f} vs oracle {oracle:.8f}"
        standalone = onsager_closed_form(r, t, out.active_groups, out.nonzero_index_sets)
        assert abs(standalone - out.divergence) < 1e-12, "standalone recompute drifted"
        # the simplified numerator must NOT match whenever the lambda1
        # term is in play -- this is what gives the oracle check teeth
        approx = onsager_closed_form(r, t, out.active_groups,
                                     out.nonzero_index_sets, form="approx")
        if out.active_groups and abs(approx - out.divergence) > 1e-9:
            saw_split = True
    assert saw_split, "exact and simplified forms never separated; oracle check is vacuous"


def _check_variant_reduction(rng, trials):
    part = GroupPartition(num_groups=6, group_size=5)
    v = rng.standard_normal(part.total) + 1j * rng.standard_normal(part.total)
    r = GroupedComplexVector(v, part)
    # lambda2 = 0: reduces to the elementwise complex soft threshold
    lam1 = 0.7
    out = csgl_denoise(r, Thresholds(lam1, 0.0))
    assert np.allclose(out.result.values, soft_threshold_complex(v, lam1), atol=1e-12)
    # lambda1 = 0: pure group shrinkage
    lam2 = 1.1
    out = csgl_denoise(r, Thresholds(0.0, lam2))
    blocks = v.reshape(part.num_groups, part.group_size)
    gn = np.linalg.norm(blocks, axis=1, keepdims=True)
    expect = np.where(gn > lam2, (1.0 - lam2 / gn) * blocks, 0.0).reshape(-1)
    assert np.allclose(out.result.values, expect, atol=1e-12)


def _recovery_config(trials):
    grid = _SMALL_GRID
    return ExperimentConfig(
        scenario="otfs",
        seed=7,
        trials=max(4, trials // 3),
        snr_db=(25.0,),
        solver_names=("csgl", "ost"),
        solver_cfgs={
            "csgl": SolverConfig(alpha1=1.1, alpha2=0.65),
            "ost": OstConfig(mode="top_k"),
        },
        num_groups=12,
        num_active=2,
        chunk=8,
        grid=grid,
        profile=veh_a_profile("constant"),
    )


def _check_recovery(rng, trials):
    config = _recovery_config(trials)
    rows = snr_sweep(config, workers=1)
    by = {r.solver: r for r in rows}
    assert by["csgl"].pmd == 0.0, f"AMP missed on easy instances (pmd={by['csgl'].pmd})"
    assert by["csgl"].pfa <= 0.02, f"AMP false alarms on easy instances (pfa={by['csgl'].pfa})"
    assert by["ost"].pmd <= 0.1, f"OST degraded on easy instances (pmd={by['ost'].pmd})"


def _check_replay(rng, trials):
    config = _recovery_config(trials)
    ctx = make_context(config)
    a = run_trial(config, 25.0, 3, ctx)
    b = run_trial(config, 25.0, 3, ctx)
    assert a.digest == b.digest, "replayed trial drew a different instance"
    assert a.truth == b.truth and a.detected == b.detected, "replay changed detections"
    c = run_trial(config, 25.0, 4, ctx)
    assert c.digest != a.digest, "distinct trials must draw distinct instances"


def _check_worker_invariance(rng, trials):
    config = dataclasses.replace(_recovery_config(trials), chunk=3,
                                 snr_db=(10.0, 25.0), trials=6)
    rows1 = snr_sweep(config, workers=1)
    rows2 = snr_sweep(config, workers=2)
    strip = lambda rows: [(r.solver, r.snr_db, r.pmd, r.pfa, r.trials, r.misdetected)
                          for r in rows]
    assert strip(rows1) == strip(rows2), "results depend on worker count"


def _check_fista(rng, trials):
    grid = _SMALL_GRID
    pool = default_preamble_pool(8, grid)
    inst = synthesize(pool, grid, 2, veh_a_profile("constant"), 20.0,
                      substream(11, 0))
    sigma = np.sqrt(inst.noise_variance)
    lam1 = 1.0 * sigma
    lam2 = 0.8 * sigma * np.sqrt(grid.size)
    beta = run_fista_sgl(inst, lam1, lam2, iters=300)
    part = inst.matrix.partition
    f0 = _sgl_objective(inst.matrix.entries, inst.observation,
                        np.zeros(part.total, np.complex128), lam1, lam2, part)
    f1 = _sgl_objective(inst.matrix.entries, inst.observation,
                        beta.values, lam1, lam2, part)
    assert f1 < f0, "FISTA failed to improve on the zero initializer"
    assert inst.truth.active_groups <= beta.nonzero_groups() or \
        len(beta.nonzero_groups()) > 0, "FISTA returned an empty estimate"


def _check_amp_single_path(rng, trials):
    grid = _SMALL_GRID
    pool = default_preamble_pool(10, grid)
    inst = synthesize(pool, grid, 2, veh_a_profile("constant"), 22.0,
                      substream(13, 0))
    res = run_amp(inst, SolverConfig(alpha1=1.1, alpha2=0.65))
    assert res.detected_groups == inst.truth.active_groups, \
        f"single-path AMP detected {res.detected_groups} vs truth {inst.truth.active_groups}"
    assert len(res.trace) >= 1 and res.trace[-1].sigma2 < res.trace[0].sigma2, \
        "residual energy failed to shrink"
    det = ost_detect(inst, OstConfig(mode="top_k", top_k=2))
    assert det.detected_groups == inst.truth.active_groups, "top-k OST missed at high SNR"


CHECKS = (
    ("zadoff-chu structure", _check_zadoff_chu),
    ("twisted shifts", _check_twisted_shift),
    ("sensing-matrix columns", _check_matrix_columns),
    ("complex soft threshold", _check_soft_threshold),
    ("denoiser two-stage == compact", _check_denoiser_forms),
    ("onsager closed form vs oracle", _check_onsager_oracle),
    ("variant reductions", _check_variant_reduction),
    ("amp single-path recovery", _check_amp_single_path),
    ("fista descent", _check_fista),
    ("sweep recovery (easy regime)", _check_recovery),
    ("trial replay determinism", _check_replay),
    ("worker-count invariance", _check_worker_invariance),
)


def run_selftest(seed=0, trials=24, stream=None):
    """Run every check; prints one ok/FAIL line each, returns overall pass."""
    stream = sys.stdout if stream is None else stream
    rng = seeded_rng(seed)
    ok = True
    for name, fn in CHECKS:
        try:
            fn(rng, trials)
        except AssertionError as exc:
            ok = False
            print(f"FAIL - {name}: {exc}", file=stream)
        else:
            print(f"ok - {name}", file=stream)
    print("selftest: PASS" if ok else "selftest: FAIL", file=stream)
    return ok
