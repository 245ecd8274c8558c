"""OTFS random-access problem generator.

Zadoff-Chu preambles on the delay-Doppler grid, the twisted-shift column
construction, multipath channel sampling, and synthetic observations.

A user occupies one group of |S| columns: every admissible delay-Doppler
shift of its preamble. Activity detection is then group-support recovery
in y = X beta + w.
"""

import math
from dataclasses import dataclass, field

import numpy as np

from .core import (
    GroundTruth,
    GroupPartition,
    GroupedComplexVector,
    ProblemInstance,
    SensingMatrix,
)
from .validation import check_rng

__all__ = [
    "DdGrid",
    "Preamble",
    "ChannelProfile",
    "zadoff_chu",
    "build_dd_grid",
    "twisted_shift",
    "build_sensing_matrix",
    "default_preamble_pool",
    "veh_a_profile",
    "sample_channel",
    "synthesize",
]

# ITU Vehicular-A power-delay profile, quantized to the 4-bin delay grid.
VEH_A_POWERS_DB = (0.0, -1.0, -9.0, -10.0, -15.0, -20.0)
VEH_A_DELAY_BINS = (0, 1, 1, 2, 2, 3)


@dataclass(frozen=True)
class DdGrid:
    """Delay-Doppler grid with the admissible shift set.

    Shifts are enumerated delay-major: k in {0..k_tau} outer, l in
    {-k_nu..k_nu} inner. That order fixes the column index of shift
    (k, l) inside each group.
    """

    m_dd: int
    n_dd: int
    k_tau: int
    k_nu: int

    def __post_init__(self):
        if self.m_dd < 1 or self.n_dd < 1:
            raise ValueError("grid dimensions must be positive")
        if not 0 <= self.k_tau < self.m_dd:
            raise ValueError(f"k_tau={self.k_tau} must satisfy 0 <= k_tau < m_dd={self.m_dd}")
        if not 0 <= self.k_nu < self.n_dd / 2:
            raise ValueError(f"k_nu={self.k_nu} must satisfy 0 <= k_nu < n_dd/2={self.n_dd / 2}")

    @property
    def length(self):
        return self.m_dd * self.n_dd

    @property
    def delay_shifts(self):
        return tuple(range(self.k_tau + 1))

    @property
    def doppler_shifts(self):
        return tuple(range(-self.k_nu, self.k_nu + 1))

    @property
    def shifts(self):
        """All (k, l) pairs, delay-major."""
        return tuple(
            (k, l) for k in self.delay_shifts for l in self.doppler_shifts
        )

    @property
    def size(self):
        return (self.k_tau + 1) * (2 * self.k_nu + 1)

    def shift_index(self, k, l):
        if k not in self.delay_shifts or l not in self.doppler_shifts:
            raise ValueError(f"shift ({k}, {l}) outside grid")
        return k * (2 * self.k_nu + 1) + (l + self.k_nu)


def build_dd_grid(m_dd, n_dd, k_tau, k_nu):
    return DdGrid(m_dd, n_dd, k_tau, k_nu)


@dataclass(frozen=True)
class Preamble:
    """Unit-norm length M*N sequence with its generating root."""

    samples: np.ndarray
    root: int

    def __post_init__(self):
        s = np.ascontiguousarray(self.samples, dtype=np.complex128)
        nrm = np.linalg.norm(s)
        if abs(nrm - 1.0) > 1e-12:
            raise ValueError(f"preamble norm {nrm} != 1")
        object.__setattr__(self, "samples", s)


def zadoff_chu(root, length):
    """Zadoff-Chu sequence, normalized to unit l2 norm.

    samples[m] = exp(-j pi root m (m+1) / length) / sqrt(length)

    The m(m+1) exponent is the odd-length convention; every raw sample has
    unit modulus, and cyclic autocorrelation is ideal when gcd(root, length)
    is 1 (length need not be prime).
    """
    length = int(length)
    root = int(root)
    if length < 1 or length % 2 == 0:
        raise ValueError(f"length must be odd and positive, got {length}")
    if not 1 <= root < length:
        raise ValueError(f"root must satisfy 1 <= root < length, got {root}")
    if math.gcd(root, length) != 1:
        raise ValueError(f"root {root} not coprime to length {length}")
    m = np.arange(length)
    samples = np.exp(-1j * np.pi * root * m * (m + 1) / length) / np.sqrt(length)
    return Preamble(samples=samples, root=root)


def twisted_shift(s, k, l, grid):
    """Delay-Doppler shift of a preamble with the twisted-convolution phase.

    With s indexed as s[m, q] (delay-major vectorization),

        out[m, q] = s[(m-k) mod M, (q-l) mod N] * exp(j 2 pi l (m-k) / (M N)) * W

    where W = exp(-j 2 pi (q-l) / N) when m-k < 0 (the quasi-periodic delay
    wrap) and W = 1 otherwise. The output is renormalized to unit l2 norm;
    the map is a phase-modulated permutation, so the renormalization is a
    no-op up to rounding.
    """
    samples = s.samples if isinstance(s, Preamble) else np.asarray(s, dtype=np.complex128)
    M, N = grid.m_dd, grid.n_dd
    if samples.shape[0] != M * N:
        raise ValueError(f"preamble length {samples.shape[0]} != grid length {M * N}")
    grid.shift_index(k, l)  # validates (k, l)

    s2d = samples.reshape(M, N)
    md = np.arange(M)[:, None] - k   # (M, 1) delay offsets
    qd = np.arange(N)[None, :] - l   # (1, N) Doppler offsets
    out = s2d[md % M, qd % N] * np.exp(2j * np.pi * l * md / (M * N))
    out = out * np.where(md < 0, np.exp(-2j * np.pi * qd / N), 1.0)
    out = out.ravel()
    return out / np.linalg.norm(out)


def build_sensing_matrix(preambles, grid):
    """Stack all twisted shifts of all preambles into a SensingMatrix.

    Column j*|S| + i is shift i (delay-major order) of preamble j, so group
    j collects every admissible shift of one user's preamble.
    """
    preambles = list(preambles)
    if not preambles:
        raise ValueError("need at least one preamble")
    n = grid.length
    shifts = grid.shifts
    S = len(shifts)
    X = np.empty((n, len(preambles) * S), dtype=np.complex128)
    for j, pre in enumerate(preambles):
        if pre.samples.shape[0] != n:
            raise ValueError(f"preamble {j} has length {pre.samples.shape[0]}, expected {n}")
        for i, (k, l) in enumerate(shifts):
            X[:, j * S + i] = twisted_shift(pre, k, l, grid)
    partition = GroupPartition(num_groups=len(preambles), group_size=S)
    return SensingMatrix(entries=X, partition=partition)


def default_preamble_pool(num_preambles, grid):
    """First `num_preambles` Zadoff-Chu roots coprime to the grid length."""
    length = grid.length
    pool = []
    root = 1
    while len(pool) < num_preambles:
        if root >= length:
            raise ValueError(
                f"grid length {length} admits fewer than {num_preambles} coprime roots"
            )
        if math.gcd(root, length) == 1:
            pool.append(zadoff_chu(root, length))
        root += 1
    return pool


@dataclass(frozen=True)
class ChannelProfile:
    """Multipath profile: per-tap relative powers and delay-bin placement.

    relative_powers are normalized to unit total at construction.
    `fading` selects the tap-gain law:

    - "constant": h_l = sqrt(p_l) * exp(j theta), theta ~ U[0, 2pi); the
      per-user channel energy is exactly 1.
    - "rayleigh": h_l = sqrt(p_l) * CN(0, 1); channel energy is 1 only in
      expectation, so deep per-user fades occur. This is the conventional
      reading of the ITU tap models and is what the shipped experiment
      configs use.
    """

    tap_count: int
    relative_powers: tuple
    delay_bin_assignment: tuple
    fading: str = "constant"

    def __post_init__(self):
        powers = np.asarray(self.relative_powers, dtype=float)
        if self.tap_count < 1:
            raise ValueError("tap_count must be >= 1")
        if powers.shape != (self.tap_count,) or np.any(powers < 0):
            raise ValueError("relative_powers must be tap_count nonnegative reals")
        total = powers.sum()
        if total <= 0:
            raise ValueError("relative_powers must not all be zero")
        object.__setattr__(self, "relative_powers", tuple(powers / total))
        bins = tuple(int(b) for b in self.delay_bin_assignment)
        if len(bins) != self.tap_count:
            raise ValueError("delay_bin_assignment must have tap_count entries")
        object.__setattr__(self, "delay_bin_assignment", bins)
        if self.fading not in ("constant", "rayleigh"):
            raise ValueError(f"unknown fading law {self.fading!r}")


def veh_a_profile(fading="constant"):
    """Vehicular-A profile quantized to the 4-bin delay grid."""
    powers = tuple(10.0 ** (db / 10.0) for db in VEH_A_POWERS_DB)
    return ChannelProfile(
        tap_count=len(powers),
        relative_powers=powers,
        delay_bin_assignment=VEH_A_DELAY_BINS,
        fading=fading,
    )


def sample_channel(profile, grid, rng):
    """Draw one user's taps: (delay_bin, doppler_bin, gain) per tap.

    Delay bins come from the profile; the Doppler bin of each tap is
    uniform over the grid's Doppler shifts. Draw order (doppler, gain)
    per tap is part of the reproducibility contract.
    """
    rng = check_rng(rng)
    doppler = grid.doppler_shifts
    for b in profile.delay_bin_assignment:
        if b not in grid.delay_shifts:
            raise ValueError(f"profile delay bin {b} outside grid delay shifts")
    taps = []
    for l_tap in range(profile.tap_count):
        k = profile.delay_bin_assignment[l_tap]
        l = doppler[rng.integers(len(doppler))]
        p = profile.relative_powers[l_tap]
        if profile.fading == "rayleigh":
            h = np.sqrt(p / 2.0) * complex(rng.standard_normal(), rng.standard_normal())
        else:
            h = np.sqrt(p) * np.exp(2j * np.pi * rng.random())
        taps.append((k, l, h))
    return taps


def synthesize(preamble_pool, grid, num_active, profile, snr_db, rng, matrix=None):
    """Draw one random-access instance: K active users, channels, noise.

    Per-realization SNR convention: sigma_n^2 is chosen so that
    10 log10(||X beta||^2 / (n sigma_n^2)) equals snr_db. For the K=0
    degenerate case sigma_n^2 = 10^(-snr_db/10).

    Passing a prebuilt `matrix` (from build_sensing_matrix on the same
    pool/grid) skips the column construction, which dominates otherwise;
    Monte Carlo loops reuse one matrix across trials.
    """
    rng = check_rng(rng)
    if matrix is None:
        matrix = build_sensing_matrix(preamble_pool, grid)
    G = matrix.partition.num_groups
    S = matrix.partition.group_size
    if S != grid.size:
        raise ValueError(f"matrix group size {S} != grid shift count {grid.size}")
    num_active = int(num_active)
    if not 0 <= num_active <= G:
        raise ValueError(f"need 0 <= K <= G, got K={num_active}, G={G}")

    n = matrix.rows
    partition = matrix.partition
    beta = np.zeros(partition.total, dtype=np.complex128)
    taps_by_group = {}
    active = rng.choice(G, size=num_active, replace=False) if num_active else np.array([], int)
    for g in active:
        taps = sample_channel(profile, grid, rng)
        for (k, l, h) in taps:
            beta[g * S + grid.shift_index(k, l)] += h  # bin collisions add coherently
        taps_by_group[int(g)] = taps

    signal = matrix.entries @ beta
    sig_power = float(np.vdot(signal, signal).real) / n
    if sig_power > 0:
        noise_var = sig_power / 10.0 ** (snr_db / 10.0)
    else:
        noise_var = 10.0 ** (-snr_db / 10.0)
    w = rng.standard_normal(n) + 1j * rng.standard_normal(n)
    y = signal + np.sqrt(noise_var / 2.0) * w

    truth = GroundTruth(
        active_groups=frozenset(int(g) for g in active),
        coefficients=GroupedComplexVector(beta, partition),
        taps=taps_by_group,
    )
    return ProblemInstance(
        matrix=matrix, observation=y, noise_variance=noise_var, truth=truth
    )
