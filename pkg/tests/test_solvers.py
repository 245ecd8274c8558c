import numpy as np
import pytest

from csgl_amp.core import (
    GroundTruth,
    GroupPartition,
    GroupedComplexVector,
    ProblemInstance,
    SensingMatrix,
    seeded_rng,
)
from csgl_amp.denoise import Thresholds
from csgl_amp.otfs import DdGrid, default_preamble_pool, synthesize, veh_a_profile
from csgl_amp.solvers import (
    AmpDivergenceError,
    AmpState,
    OstConfig,
    SolverConfig,
    _sgl_objective,
    amp_step,
    ost_detect,
    ost_null_threshold,
    run_amp,
    run_amp_batch,
    run_fista_sgl,
    threshold_schedule,
)

GRID = DdGrid(m_dd=7, n_dd=9, k_tau=3, k_nu=2)


def _gaussian_instance(seed, n=80, G=20, p=4, K=3, nz=2, snr_db=18.0):
    rng = seeded_rng(seed)
    N = G * p
    X = rng.standard_normal((n, N)) + 1j * rng.standard_normal((n, N))
    X /= np.linalg.norm(X, axis=0)
    part = GroupPartition(G, p)
    beta = np.zeros(N, np.complex128)
    active = rng.choice(G, size=K, replace=False)
    for g in active:
        idx = rng.choice(p, size=nz, replace=False)
        beta[g * p + idx] = (rng.standard_normal(nz) + 1j * rng.standard_normal(nz)) * np.sqrt(0.5)
    mat = SensingMatrix(entries=X, partition=part)
    sig = X @ beta
    var = float(np.vdot(sig, sig).real) / n / 10 ** (snr_db / 10)
    y = sig + (rng.standard_normal(n) + 1j * rng.standard_normal(n)) * np.sqrt(var / 2)
    truth = GroundTruth(frozenset(int(g) for g in active), GroupedComplexVector(beta, part))
    return ProblemInstance(mat, y, var, truth)


def _otfs_instance(seed, G=10, K=2, snr_db=22.0):
    pool = default_preamble_pool(G, GRID)
    return synthesize(pool, GRID, K, veh_a_profile(), snr_db, seeded_rng(seed))


class TestConfigs:
    def test_solver_config_validation(self):
        with pytest.raises(ValueError):
            SolverConfig(alpha1=-0.1)
        with pytest.raises(ValueError):
            SolverConfig(variant="lasso")
        with pytest.raises(ValueError):
            SolverConfig(max_iters=0)
        with pytest.raises(ValueError):
            SolverConfig(onsager_form="legacy")

    def test_ost_config_validation(self):
        with pytest.raises(ValueError):
            OstConfig(mode="bottom_k")
        with pytest.raises(ValueError):
            OstConfig(p_fa=0.0)
        with pytest.raises(ValueError):
            OstConfig(p_fa=1.5)


class TestThresholdSchedule:
    def test_sigma_hat_scaling(self):
        z = np.full(64, 2.0, np.complex128)  # ||z||/sqrt(n) = 2
        cfg = SolverConfig(alpha1=1.5, alpha2=0.5)
        t = threshold_schedule(z, 0, cfg, group_size=25)
        assert t.lambda1 == pytest.approx(3.0)
        assert t.lambda2 == pytest.approx(0.5 * 2.0 * 5.0)

    def test_variant_zeroing(self):
        z = np.ones(16, np.complex128)
        cl = threshold_schedule(z, 0, SolverConfig(variant="cl", alpha1=1.0, alpha2=1.0), 4)
        cgl = threshold_schedule(z, 0, SolverConfig(variant="cgl", alpha1=1.0, alpha2=1.0), 4)
        assert cl.lambda2 == 0.0 and cl.lambda1 > 0
        assert cgl.lambda1 == 0.0 and cgl.lambda2 > 0


class TestAmpStep:
    def test_first_step_algebra(self):
        inst = _gaussian_instance(0)
        cfg = SolverConfig(alpha1=1.2, alpha2=0.6)
        part = inst.matrix.partition
        s0 = AmpState(t=0, beta=np.zeros(part.total, np.complex128),
                      residual=inst.observation.copy())
        s1 = amp_step(s0, inst.matrix, inst.observation, cfg)
        # effective observation of the first step is X^H y
        assert np.allclose(s1.effective_obs,
                           inst.matrix.entries.conj().T @ inst.observation, atol=1e-12)
        # residual identity: z1 = y - X b1 + (div/delta) z0
        recon = (inst.observation - inst.matrix.entries @ s1.beta
                 + s1.divergence / inst.matrix.measurement_ratio * s0.residual)
        assert np.allclose(s1.residual, recon, atol=1e-10)
        assert s1.t == 1

    def test_onsager_disabled_drops_correction(self):
        inst = _gaussian_instance(1)
        part = inst.matrix.partition
        s0 = AmpState(t=0, beta=np.zeros(part.total, np.complex128),
                      residual=inst.observation.copy())
        s1 = amp_step(s0, inst.matrix, inst.observation,
                      SolverConfig(alpha1=1.2, alpha2=0.6, onsager=False))
        assert np.allclose(s1.residual,
                           inst.observation - inst.matrix.entries @ s1.beta, atol=1e-12)


class TestVariantReduction:
    def _iterate(self, inst, cfg, steps=8):
        part = inst.matrix.partition
        s = AmpState(t=0, beta=np.zeros(part.total, np.complex128),
                     residual=inst.observation.copy())
        states = []
        for _ in range(steps):
            s = amp_step(s, inst.matrix, inst.observation, cfg)
            states.append((s.beta.copy(), s.residual.copy(),
                           s.thresholds.lambda1, s.thresholds.lambda2))
        return states

    def test_alpha2_zero_equals_cl_per_iteration(self):
        inst = _otfs_instance(2)
        a = self._iterate(inst, SolverConfig(variant="csgl", alpha1=1.3, alpha2=0.0))
        b = self._iterate(inst, SolverConfig(variant="cl", alpha1=1.3, alpha2=0.7))
        for (ba, za, l1a, l2a), (bb, zb, l1b, l2b) in zip(a, b):
            assert np.max(np.abs(ba - bb)) <= 1e-12
            assert np.max(np.abs(za - zb)) <= 1e-12
            assert l1a == l1b and l2a == 0.0 and l2b == 0.0

    def test_alpha1_zero_equals_cgl_per_iteration(self):
        inst = _otfs_instance(3)
        a = self._iterate(inst, SolverConfig(variant="csgl", alpha1=0.0, alpha2=0.9))
        b = self._iterate(inst, SolverConfig(variant="cgl", alpha1=2.0, alpha2=0.9))
        for (ba, za, l1a, l2a), (bb, zb, l1b, l2b) in zip(a, b):
            assert np.max(np.abs(ba - bb)) <= 1e-12
            assert np.max(np.abs(za - zb)) <= 1e-12
            assert l1a == 0.0 and l1b == 0.0 and l2a == l2b


class TestRunAmp:
    def test_recovers_easy_otfs_instance(self):
        inst = _otfs_instance(4, G=12, K=2, snr_db=25.0)
        res = run_amp(inst, SolverConfig(alpha1=1.1, alpha2=0.65))
        assert res.detected_groups == inst.truth.active_groups
        assert len(res.trace) < 200  # converged before the cap
        assert res.trace[-1].sigma2 < res.trace[0].sigma2

    def test_trace_thresholds_keep_group_ratio(self):
        # the schedule couples the two thresholds through one sigma-hat:
        # lambda2 / lambda1 = (alpha2 / alpha1) sqrt(p) at every iteration
        inst = _otfs_instance(5)
        p = inst.matrix.partition.group_size
        res = run_amp(inst, SolverConfig(alpha1=1.1, alpha2=0.65))
        for entry in res.trace:
            assert entry.lambda2 / entry.lambda1 == pytest.approx(
                0.65 / 1.1 * np.sqrt(p), rel=1e-9)
        assert res.trace[-1].lambda1 < res.trace[0].lambda1

    def test_identity_denoiser_divergence_guard(self):
        # alpha = 0 disables all shrinkage; the Onsager feedback z/delta
        # with delta < 1 then amplifies the residual without bound
        inst = _gaussian_instance(6, n=40, G=20, p=4, K=2)
        with pytest.raises(AmpDivergenceError) as err:
            run_amp(inst, SolverConfig(alpha1=0.0, alpha2=0.0))
        assert len(err.value.trace) >= 5

    def test_max_iters_respected(self):
        inst = _otfs_instance(7)
        res = run_amp(inst, SolverConfig(alpha1=1.1, alpha2=0.65, max_iters=3,
                                         stop_tol=1e-300))
        assert len(res.trace) == 3


class TestRunAmpBatch:
    def test_matches_single_path_results(self):
        insts = [_otfs_instance(seed, G=10, K=2, snr_db=18.0) for seed in (10, 11, 12, 13)]
        cfg = SolverConfig(alpha1=1.1, alpha2=0.65)
        Y = np.stack([i.observation for i in insts], axis=1)
        detected, beta, iters, aborted = run_amp_batch(insts[0].matrix, Y, cfg)
        assert not aborted.any()
        for b, inst in enumerate(insts):
            single = run_amp(inst, cfg)
            assert detected[b] == single.detected_groups
            assert np.allclose(beta[:, b], single.beta_hat.values, atol=1e-8)
            assert iters[b] == len(single.trace)

    def test_batch_columns_do_not_interact(self):
        insts = [_otfs_instance(seed, G=10, K=2, snr_db=18.0) for seed in (14, 15, 16)]
        cfg = SolverConfig(alpha1=1.1, alpha2=0.65)
        Y = np.stack([i.observation for i in insts], axis=1)
        _, beta_all, _, _ = run_amp_batch(insts[0].matrix, Y, cfg)
        _, beta_one, _, _ = run_amp_batch(insts[0].matrix, Y[:, 1:2], cfg)
        assert np.allclose(beta_all[:, 1], beta_one[:, 0], atol=1e-10)

    def test_divergent_column_aborts_alone(self):
        inst = _gaussian_instance(17, n=40, G=20, p=4, K=2)
        cfg = SolverConfig(alpha1=0.0, alpha2=0.0)
        Y = inst.observation.reshape(-1, 1)
        detected, beta, iters, aborted = run_amp_batch(inst.matrix, Y, cfg)
        assert aborted[0]
        assert detected[0] == set()
        assert np.all(beta[:, 0] == 0)


class TestOnsagerNecessity:
    def test_disabling_correction_degrades_budgeted_error(self):
        # iid Gaussian X at delta = 0.5, SNR 15 dB. With the residual-scaled
        # threshold schedule the two recursions share their fixed points
        # exactly (the stationarity conditions are invariant under the joint
        # rescaling z -> cz, lambda -> c lambda), so the correction shows up
        # in the transient: at a fixed iteration budget the uncorrected
        # recursion lags, and the gap closes as the budget grows.
        def budgeted_error(inst, onsager, budget=8):
            part = inst.matrix.partition
            cfg = SolverConfig(alpha1=1.2, alpha2=0.5, onsager=onsager)
            s = AmpState(t=0, beta=np.zeros(part.total, np.complex128),
                         residual=inst.observation.copy())
            for _ in range(budget):
                s = amp_step(s, inst.matrix, inst.observation, cfg)
            truth = inst.truth.coefficients.values
            return float(np.sum(np.abs(s.beta - truth) ** 2))

        errs_on, errs_off, off_worse = [], [], 0
        for seed in range(200):
            inst = _gaussian_instance(100 + seed, n=120, G=30, p=8, K=8,
                                      nz=4, snr_db=15.0)
            a = budgeted_error(inst, True)
            b = budgeted_error(inst, False)
            errs_on.append(a)
            errs_off.append(b)
            off_worse += b > a
        assert np.mean(errs_off) > np.mean(errs_on)
        assert np.mean(errs_off) > 1.02 * np.mean(errs_on)  # not a rounding fluke
        assert off_worse >= 180  # essentially every instance


class TestFista:
    def test_objective_descends_and_is_budget_monotone(self):
        inst = _otfs_instance(20, G=8, K=2, snr_db=15.0)
        part = inst.matrix.partition
        sigma = np.sqrt(inst.noise_variance)
        lam1, lam2 = sigma, 0.8 * sigma * np.sqrt(part.group_size)
        f0 = _sgl_objective(inst.matrix.entries, inst.observation,
                            np.zeros(part.total, np.complex128), lam1, lam2, part)
        f80 = _sgl_objective(inst.matrix.entries, inst.observation,
                             run_fista_sgl(inst, lam1, lam2, iters=80).values,
                             lam1, lam2, part)
        f160 = _sgl_objective(inst.matrix.entries, inst.observation,
                              run_fista_sgl(inst, lam1, lam2, iters=160).values,
                              lam1, lam2, part)
        assert f80 < f0
        assert f160 <= f80 + 1e-12

    def test_covers_support_on_easy_instances(self):
        # the convex program over-selects slightly (tiny spurious groups are
        # the price of the l1 geometry); the detection-relevant properties
        # are full truth coverage and a clear norm gap to any extras
        for seed in (21, 22, 23, 24, 25):
            inst = _otfs_instance(seed, G=8, K=2, snr_db=25.0)
            sigma = np.sqrt(inst.noise_variance)
            beta = run_fista_sgl(inst, 3.0 * sigma,
                                 1.5 * sigma * np.sqrt(GRID.size), iters=400)
            detected = beta.nonzero_groups()
            truth = inst.truth.active_groups
            assert truth <= detected
            assert len(detected) <= len(truth) + 2
            true_floor = min(np.linalg.norm(beta.group(g)) for g in truth)
            for g in detected - truth:
                assert np.linalg.norm(beta.group(g)) < 0.1 * true_floor

    def test_huge_penalty_returns_zero(self):
        inst = _otfs_instance(22, G=6, K=1, snr_db=10.0)
        beta = run_fista_sgl(inst, 10.0, 10.0, iters=50)
        assert np.all(beta.values == 0)


class TestOst:
    def test_null_threshold_monotone_in_pfa(self):
        inst = _otfs_instance(30, G=10, K=0)
        hi = ost_null_threshold(inst.matrix, 1e-1, draws=150, seed=3)
        lo = ost_null_threshold(inst.matrix, 1e-3, draws=150, seed=3)
        assert lo > hi > 0

    def test_threshold_mode_false_alarm_rate_on_null(self):
        G, trials, p_fa = 12, 60, 0.05
        pool = default_preamble_pool(G, GRID)
        cfg = OstConfig(mode="threshold", p_fa=p_fa, calibration_draws=400)
        fa = opp = 0
        for seed in range(trials):
            inst = synthesize(pool, GRID, 0, veh_a_profile(), 10.0, seeded_rng(500 + seed))
            det = ost_detect(inst, cfg)
            fa += len(det.detected_groups)
            opp += G
        rate = fa / opp
        assert 0.4 * p_fa < rate < 2.5 * p_fa

    def test_top_k_detects_exactly_k(self):
        inst = _otfs_instance(31, G=10, K=3, snr_db=20.0)
        det = ost_detect(inst, OstConfig(mode="top_k", top_k=3))
        assert len(det.detected_groups) == 3
        assert det.detected_groups == inst.truth.active_groups

    def test_precomputed_tau_unit_path(self):
        inst = _otfs_instance(32, G=8, K=1, snr_db=15.0)
        cfg = OstConfig(mode="threshold", p_fa=1e-2, calibration_draws=200,
                        calibration_seed=5)
        tau = ost_null_threshold(inst.matrix, cfg.p_fa, cfg.calibration_draws,
                                 cfg.calibration_seed)
        a = ost_detect(inst, cfg)
        b = ost_detect(inst, cfg, tau_unit=tau)
        assert a.detected_groups == b.detected_groups

    def test_beta_hat_is_matched_filter_on_detected(self):
        inst = _otfs_instance(33, G=8, K=2, snr_db=20.0)
        det = ost_detect(inst, OstConfig(mode="top_k", top_k=2))
        c = inst.matrix.entries.conj().T @ inst.observation
        part = inst.matrix.partition
        for g in range(part.num_groups):
            sl = part.group_slice(g)
            if g in det.detected_groups:
                assert np.allclose(det.beta_hat.values[sl], c[sl], atol=1e-12)
            else:
                assert np.all(det.beta_hat.values[sl] == 0)
