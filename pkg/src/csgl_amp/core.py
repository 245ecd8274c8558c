"""Shared numeric and structural types.

Grouped complex vectors, unit-column sensing matrices, problem instances,
and the deterministic RNG contract used by every Monte Carlo path.
"""

from dataclasses import dataclass, field

import numpy as np

from .validation import check_complex_vector, check_finite

__all__ = [
    "GroupPartition",
    "GroupedComplexVector",
    "SensingMatrix",
    "ProblemInstance",
    "GroundTruth",
    "seeded_rng",
    "substream",
    "hermitian_apply",
    "forward_apply",
]


@dataclass(frozen=True)
class GroupPartition:
    """Contiguous equal-size grouping of N = num_groups * group_size coords.

    Group g occupies indices [g*p, (g+1)*p). Ragged partitions are not
    supported; the applications here always use a uniform group size.
    """

    num_groups: int
    group_size: int

    def __post_init__(self):
        if self.num_groups < 1 or self.group_size < 1:
            raise ValueError(
                "partition needs num_groups >= 1 and group_size >= 1, got "
                f"({self.num_groups}, {self.group_size})"
            )

    @property
    def total(self):
        return self.num_groups * self.group_size

    def group_slice(self, g):
        if not 0 <= g < self.num_groups:
            raise IndexError(f"group {g} outside [0, {self.num_groups})")
        p = self.group_size
        return slice(g * p, (g + 1) * p)


@dataclass
class GroupedComplexVector:
    """A length-N complex vector viewed through a GroupPartition."""

    values: np.ndarray
    partition: GroupPartition

    def __post_init__(self):
        self.values = check_complex_vector(self.values, name="values")
        if self.values.shape[0] != self.partition.total:
            raise ValueError(
                f"vector length {self.values.shape[0]} != partition total "
                f"{self.partition.total}"
            )

    def group(self, g):
        """Contiguous view of group g (no copy)."""
        return self.values[self.partition.group_slice(g)]

    def group_norms(self):
        p = self.partition.group_size
        blocks = self.values.reshape(self.partition.num_groups, p)
        return np.linalg.norm(blocks, axis=1)

    def nonzero_groups(self):
        """Set of group indices with any nonzero entry."""
        return set(np.flatnonzero(self.group_norms() > 0).tolist())

    def copy(self):
        return GroupedComplexVector(self.values.copy(), self.partition)


@dataclass
class SensingMatrix:
    """n x N complex matrix with unit-norm columns, grouped by columns.

    AMP's scalar threshold schedule assumes unit-norm columns, so the
    constructor enforces that convention (1e-9 tolerance). The conjugate
    transpose is cached contiguously since X^H z dominates the iteration
    cost.
    """

    entries: np.ndarray
    partition: GroupPartition
    _adjoint: np.ndarray = field(default=None, repr=False, compare=False)

    def __post_init__(self):
        A = np.asarray(self.entries)
        if A.ndim != 2:
            raise ValueError(f"matrix must be 2-D, got shape {A.shape}")
        A = np.ascontiguousarray(A, dtype=np.complex128)
        if A.shape[1] != self.partition.total:
            raise ValueError(
                f"matrix has {A.shape[1]} columns, partition expects "
                f"{self.partition.total}"
            )
        check_finite(A, name="matrix entries")
        colnorm = np.linalg.norm(A, axis=0)
        bad = np.abs(colnorm - 1.0) > 1e-9
        if np.any(bad):
            j = int(np.argmax(np.abs(colnorm - 1.0)))
            raise ValueError(
                f"column {j} has norm {colnorm[j]:.12f}; unit-norm columns "
                "are required"
            )
        self.entries = A
        self._adjoint = np.ascontiguousarray(A.conj().T)

    @property
    def rows(self):
        return self.entries.shape[0]

    @property
    def cols(self):
        return self.entries.shape[1]

    @property
    def measurement_ratio(self):
        """delta = n / N."""
        return self.rows / self.cols

    @property
    def adjoint(self):
        return self._adjoint


@dataclass
class GroundTruth:
    """Active groups, the true coefficient vector, and per-group taps."""

    active_groups: frozenset
    coefficients: GroupedComplexVector
    taps: dict = field(default_factory=dict)

    def __post_init__(self):
        G = self.coefficients.partition.num_groups
        self.active_groups = frozenset(int(g) for g in self.active_groups)
        if any(not 0 <= g < G for g in self.active_groups):
            raise ValueError("active group index outside [0, G)")
        outside = self.coefficients.nonzero_groups() - self.active_groups
        if outside:
            raise ValueError(
                f"coefficients nonzero outside active groups: {sorted(outside)}"
            )


@dataclass
class ProblemInstance:
    """One synthesized recovery problem: y = X beta + w."""

    matrix: SensingMatrix
    observation: np.ndarray
    noise_variance: float
    truth: GroundTruth

    def __post_init__(self):
        self.observation = check_complex_vector(self.observation, name="observation")
        if self.observation.shape[0] != self.matrix.rows:
            raise ValueError(
                f"observation length {self.observation.shape[0]} != matrix rows "
                f"{self.matrix.rows}"
            )
        if not np.isfinite(self.noise_variance) or self.noise_variance < 0:
            raise ValueError(f"noise_variance must be >= 0, got {self.noise_variance}")

    def digest(self):
        """Short content hash of (y, active set); used for solver-fairness checks."""
        import hashlib

        h = hashlib.blake2b(digest_size=8)
        h.update(self.observation.tobytes())
        h.update(np.asarray(sorted(self.truth.active_groups), dtype=np.int64).tobytes())
        return h.hexdigest()


def seeded_rng(seed):
    """Deterministic generator for a 64-bit seed.

    Identical seeds yield identical streams across runs and platforms
    (PCG64 stream semantics are part of numpy's compatibility guarantee).
    """
    return np.random.default_rng(np.random.SeedSequence(int(seed)))


def substream(seed, *path):
    """Independent child stream addressed by an integer path.

    Trial t of seed s is reproducible without replaying trials 0..t-1:
    the path enters the SeedSequence entropy pool directly.
    """
    return np.random.default_rng(
        np.random.SeedSequence(entropy=int(seed), spawn_key=tuple(int(p) for p in path))
    )


def hermitian_apply(X, z):
    """X^H z for a SensingMatrix (or plain 2-D array) X."""
    if isinstance(X, SensingMatrix):
        if z.shape[0] != X.rows:
            raise ValueError(f"vector length {z.shape[0]} != matrix rows {X.rows}")
        return X.adjoint @ z
    X = np.asarray(X)
    if z.shape[0] != X.shape[0]:
        raise ValueError(f"vector length {z.shape[0]} != matrix rows {X.shape[0]}")
    return X.conj().T @ z


def forward_apply(X, b):
    """X b, accepting a GroupedComplexVector or plain array for b."""
    v = b.values if isinstance(b, GroupedComplexVector) else np.asarray(b)
    A = X.entries if isinstance(X, SensingMatrix) else np.asarray(X)
    if v.shape[0] != A.shape[1]:
        raise ValueError(f"vector length {v.shape[0]} != matrix cols {A.shape[1]}")
    return A @ v
