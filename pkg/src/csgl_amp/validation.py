"""Input validation helpers.

scikit-learn's check_array rejects complex data by design, so the complex
paths get their own small validators with the same spirit: coerce to a
well-defined dtype/layout, fail loudly with the offending name.
"""

import numbers

import numpy as np

__all__ = [
    "check_complex_vector",
    "check_complex_matrix",
    "check_finite",
    "check_scalar",
    "check_rng",
]


def check_finite(a, name="array"):
    if not np.all(np.isfinite(a.view(np.float64) if np.iscomplexobj(a) else a)):
        raise ValueError(f"{name} contains non-finite values")
    return a


def check_complex_vector(x, n=None, name="x"):
    """Coerce to a contiguous 1-D complex128 array of optional length n."""
    x = np.asarray(x)
    if x.ndim != 1:
        raise ValueError(f"{name} must be 1-D, got shape {x.shape}")
    if n is not None and x.shape[0] != n:
        raise ValueError(f"{name} must have length {n}, got {x.shape[0]}")
    x = np.ascontiguousarray(x, dtype=np.complex128)
    return check_finite(x, name=name)


def check_complex_matrix(X, name="X"):
    """Coerce to a contiguous 2-D complex128 array."""
    X = np.asarray(X)
    if X.ndim != 2:
        raise ValueError(f"{name} must be 2-D, got shape {X.shape}")
    X = np.ascontiguousarray(X, dtype=np.complex128)
    return check_finite(X, name=name)


def check_scalar(v, name, minimum=None, allow_none=False):
    if v is None:
        if allow_none:
            return None
        raise ValueError(f"{name} must not be None")
    if not isinstance(v, numbers.Real) or not np.isfinite(v):
        raise ValueError(f"{name} must be a finite real number, got {v!r}")
    v = float(v)
    if minimum is not None and v < minimum:
        raise ValueError(f"{name} must be >= {minimum}, got {v}")
    return v


def check_rng(rng):
    """Accept a Generator or an integer seed; return a Generator."""
    if isinstance(rng, np.random.Generator):
        return rng
    if isinstance(rng, (int, np.integer)):
        return np.random.default_rng(int(rng))
    raise TypeError(f"rng must be a numpy Generator or integer seed, got {type(rng)}")
