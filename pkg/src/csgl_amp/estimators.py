"""scikit-learn style estimator front ends.

Thin wrappers over the functional solvers for interactive use: they
follow the fit/predict + get_params/set_params conventions (so cloning
and grid-search tooling work) while keeping complex-valued data, which
sklearn's own validators reject, on our own validation path.

The matrix handed to fit must have unit-norm columns -- the AMP threshold
schedule is calibrated to that convention and the constructor of
SensingMatrix enforces it.
"""

import numpy as np
from sklearn.base import BaseEstimator

from .core import GroundTruth, GroupPartition, GroupedComplexVector, ProblemInstance, SensingMatrix
from .solvers import OstConfig, SolverConfig, ost_detect, run_amp, run_fista_sgl
from .validation import check_complex_matrix, check_complex_vector

__all__ = ["CsglAmp", "FistaSgl", "OstDetector"]


def _as_instance(X, y, group_size, noise_variance=0.0):
    X = check_complex_matrix(X, name="X")
    n, N = X.shape
    y = check_complex_vector(y, n=n, name="y")
    if N % group_size:
        raise ValueError(f"n_features={N} not divisible by group_size={group_size}")
    part = GroupPartition(num_groups=N // group_size, group_size=group_size)
    matrix = SensingMatrix(entries=X, partition=part)
    truth = GroundTruth(
        active_groups=frozenset(),
        coefficients=GroupedComplexVector(np.zeros(N, np.complex128), part),
    )
    return ProblemInstance(
        matrix=matrix, observation=y, noise_variance=noise_variance, truth=truth
    )


class CsglAmp(BaseEstimator):
    """AMP solver for complex sparse-group recovery.

    Parameters mirror SolverConfig; `variant` selects the full two-stage
    denoiser ("csgl") or its elementwise-only ("cl") / group-only ("cgl")
    reductions.

    Attributes after fit: coef_, active_groups_, n_iter_, trace_.
    """

    def __init__(self, group_size=1, alpha1=1.4, alpha2=0.8, variant="csgl",
                 max_iters=200, stop_tol=1e-6, onsager=True, onsager_form="exact"):
        self.group_size = group_size
        self.alpha1 = alpha1
        self.alpha2 = alpha2
        self.variant = variant
        self.max_iters = max_iters
        self.stop_tol = stop_tol
        self.onsager = onsager
        self.onsager_form = onsager_form

    def fit(self, X, y):
        instance = _as_instance(X, y, self.group_size)
        config = SolverConfig(
            max_iters=self.max_iters,
            alpha1=self.alpha1,
            alpha2=self.alpha2,
            stop_tol=self.stop_tol,
            variant=self.variant,
            onsager=self.onsager,
            onsager_form=self.onsager_form,
        )
        result = run_amp(instance, config)
        self.coef_ = result.beta_hat.values
        self.active_groups_ = sorted(result.detected_groups)
        self.trace_ = result.trace
        self.n_iter_ = len(result.trace)
        return self

    def predict(self, X):
        X = check_complex_matrix(X, name="X")
        return X @ self.coef_


class FistaSgl(BaseEstimator):
    """Accelerated proximal-gradient reference solver for the same objective.

    lambda1/lambda2 are the absolute penalty weights of
    ||y - X b||^2 + lambda1 ||b||_1 + lambda2 sum_g ||b_g||_2.
    """

    def __init__(self, group_size=1, lambda1=0.1, lambda2=0.1, n_iter=500):
        self.group_size = group_size
        self.lambda1 = lambda1
        self.lambda2 = lambda2
        self.n_iter = n_iter

    def fit(self, X, y):
        instance = _as_instance(X, y, self.group_size)
        beta = run_fista_sgl(instance, self.lambda1, self.lambda2, self.n_iter)
        self.coef_ = beta.values
        self.active_groups_ = sorted(beta.nonzero_groups())
        return self

    def predict(self, X):
        X = check_complex_matrix(X, name="X")
        return X @ self.coef_


class OstDetector(BaseEstimator):
    """One-step group-energy detector.

    mode "threshold" needs the noise variance for null calibration;
    mode "top_k" needs top_k. statistic_ exposes the per-group energies.
    """

    def __init__(self, group_size=1, mode="threshold", p_fa=1e-3,
                 noise_variance=1.0, top_k=None, calibration_draws=200,
                 calibration_seed=0):
        self.group_size = group_size
        self.mode = mode
        self.p_fa = p_fa
        self.noise_variance = noise_variance
        self.top_k = top_k
        self.calibration_draws = calibration_draws
        self.calibration_seed = calibration_seed

    def fit(self, X, y):
        instance = _as_instance(X, y, self.group_size,
                                noise_variance=self.noise_variance)
        config = OstConfig(
            mode=self.mode,
            p_fa=self.p_fa,
            calibration_draws=self.calibration_draws,
            calibration_seed=self.calibration_seed,
            top_k=self.top_k,
        )
        if self.mode == "top_k" and self.top_k is None:
            raise ValueError("top_k mode requires the top_k parameter")
        result = ost_detect(instance, config)
        self.coef_ = result.beta_hat.values
        self.active_groups_ = sorted(result.detected_groups)
        c = instance.matrix.adjoint @ instance.observation
        part = instance.matrix.partition
        self.statistic_ = (np.abs(c) ** 2).reshape(
            part.num_groups, part.group_size
        ).sum(axis=1)
        return self

    def predict(self, X):
        X = check_complex_matrix(X, name="X")
        return X @ self.coef_
