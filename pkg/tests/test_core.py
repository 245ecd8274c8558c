import numpy as np
import pytest

from csgl_amp.core import (
    GroundTruth,
    GroupPartition,
    GroupedComplexVector,
    ProblemInstance,
    SensingMatrix,
    forward_apply,
    hermitian_apply,
    seeded_rng,
    substream,
)


def _unit_matrix(rng, n, G, p):
    X = rng.standard_normal((n, G * p)) + 1j * rng.standard_normal((n, G * p))
    X /= np.linalg.norm(X, axis=0)
    return SensingMatrix(entries=X, partition=GroupPartition(G, p))


class TestGroupPartition:
    def test_slices_tile_the_index_range(self):
        part = GroupPartition(num_groups=4, group_size=3)
        assert part.total == 12
        covered = []
        for g in range(4):
            sl = part.group_slice(g)
            covered.extend(range(sl.start, sl.stop))
        assert covered == list(range(12))

    @pytest.mark.parametrize("bad", [(0, 3), (4, 0), (-1, 2)])
    def test_rejects_nonpositive_shapes(self, bad):
        with pytest.raises(ValueError):
            GroupPartition(*bad)


class TestGroupedComplexVector:
    def test_group_norms_match_manual(self):
        part = GroupPartition(3, 4)
        rng = seeded_rng(0)
        v = rng.standard_normal(12) + 1j * rng.standard_normal(12)
        gv = GroupedComplexVector(v, part)
        manual = [np.linalg.norm(v[4 * g:4 * g + 4]) for g in range(3)]
        assert np.allclose(gv.group_norms(), manual)

    def test_nonzero_groups(self):
        part = GroupPartition(3, 2)
        v = np.zeros(6, np.complex128)
        v[2] = 1j
        gv = GroupedComplexVector(v, part)
        assert gv.nonzero_groups() == {1}

    def test_length_mismatch_rejected(self):
        with pytest.raises(ValueError):
            GroupedComplexVector(np.zeros(5, np.complex128), GroupPartition(3, 2))

    def test_copy_is_independent(self):
        part = GroupPartition(2, 2)
        gv = GroupedComplexVector(np.ones(4, np.complex128), part)
        cp = gv.copy()
        cp.values[0] = 0
        assert gv.values[0] == 1


class TestSensingMatrix:
    def test_unit_columns_enforced(self):
        rng = seeded_rng(1)
        X = rng.standard_normal((8, 6)) + 1j * rng.standard_normal((8, 6))
        X[:, 2] *= 3.0  # deliberately break normalization
        with pytest.raises(ValueError):
            SensingMatrix(entries=X, partition=GroupPartition(3, 2))

    def test_measurement_ratio(self):
        mat = _unit_matrix(seeded_rng(2), 10, 4, 5)
        assert mat.measurement_ratio == pytest.approx(0.5)
        assert mat.rows == 10 and mat.cols == 20

    def test_adjoint_is_conjugate_transpose(self):
        mat = _unit_matrix(seeded_rng(3), 6, 2, 3)
        assert np.allclose(mat.adjoint, mat.entries.conj().T)

    def test_apply_helpers_agree_with_matmul(self):
        rng = seeded_rng(4)
        mat = _unit_matrix(rng, 7, 3, 2)
        z = rng.standard_normal(7) + 1j * rng.standard_normal(7)
        b = rng.standard_normal(6) + 1j * rng.standard_normal(6)
        assert np.allclose(hermitian_apply(mat, z), mat.entries.conj().T @ z)
        assert np.allclose(forward_apply(mat, b), mat.entries @ b)

    def test_shape_partition_mismatch(self):
        rng = seeded_rng(5)
        X = rng.standard_normal((8, 6)) + 1j * rng.standard_normal((8, 6))
        X /= np.linalg.norm(X, axis=0)
        with pytest.raises(ValueError):
            SensingMatrix(entries=X, partition=GroupPartition(4, 2))


class TestGroundTruth:
    def test_support_containment_checked(self):
        part = GroupPartition(3, 2)
        v = np.zeros(6, np.complex128)
        v[0] = 1.0  # group 0 nonzero
        with pytest.raises(ValueError):
            GroundTruth(active_groups=frozenset({1}),
                        coefficients=GroupedComplexVector(v, part))

    def test_valid_truth_accepted(self):
        part = GroupPartition(3, 2)
        v = np.zeros(6, np.complex128)
        v[1] = 2.0 - 1.0j
        truth = GroundTruth(active_groups=frozenset({0}),
                            coefficients=GroupedComplexVector(v, part))
        assert truth.active_groups == {0}


class TestProblemInstance:
    def test_digest_tracks_content(self):
        rng = seeded_rng(6)
        mat = _unit_matrix(rng, 8, 2, 3)
        part = mat.partition
        v = np.zeros(6, np.complex128)
        v[0] = 1.0
        truth = GroundTruth(frozenset({0}), GroupedComplexVector(v, part))
        y = rng.standard_normal(8) + 1j * rng.standard_normal(8)
        a = ProblemInstance(mat, y, 0.1, truth)
        b = ProblemInstance(mat, y.copy(), 0.1, truth)
        c = ProblemInstance(mat, y + 1e-9, 0.1, truth)
        assert a.digest() == b.digest()
        assert a.digest() != c.digest()

    def test_noise_variance_validated(self):
        rng = seeded_rng(7)
        mat = _unit_matrix(rng, 8, 2, 3)
        part = mat.partition
        truth = GroundTruth(frozenset(), GroupedComplexVector(np.zeros(6, np.complex128), part))
        with pytest.raises(ValueError):
            ProblemInstance(mat, np.zeros(8, np.complex128), -1.0, truth)


class TestRngPlumbing:
    def test_seeded_rng_reproducible(self):
        a = seeded_rng(42).standard_normal(5)
        b = seeded_rng(42).standard_normal(5)
        assert np.array_equal(a, b)

    def test_substreams_are_independent_addresses(self):
        base = substream(9, 1, 2).standard_normal(4)
        same = substream(9, 1, 2).standard_normal(4)
        other = substream(9, 1, 3).standard_normal(4)
        parent = seeded_rng(9).standard_normal(4)
        assert np.array_equal(base, same)
        assert not np.array_equal(base, other)
        assert not np.array_equal(base, parent)

    def test_trial_streams_skip_free(self):
        # trial t is addressable without generating trials 0..t-1
        direct = substream(5, 100, 7).standard_normal(3)
        for t in range(7):
            substream(5, 100, t).standard_normal(3)
        again = substream(5, 100, 7).standard_normal(3)
        assert np.array_equal(direct, again)
