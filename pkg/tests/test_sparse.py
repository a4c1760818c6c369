"""Aligned-run sparse matrices: lossless packing, bit-exact multiply
equivalence with the dense rule, and exact MAC accounting."""

from fractions import Fraction

import numpy as np
import pytest

from qnn import kernels as K
from qnn.errors import ShapeMismatch
from qnn.sparse import (
    SparsePackedMatrix,
    Run,
    density,
    dense_mac_count,
    pack_sparse,
    sparse_mac_count,
    spmv_q,
)
from qnn.tensor import ElementWidth, Tensor

I16 = ElementWidth.int16
RNG = np.random.default_rng(7)


def matrix(rows, cols, dens, q=10, rng=RNG):
    data = rng.integers(-2000, 2000, (rows, cols))
    data[rng.random((rows, cols)) >= dens] = 0
    return Tensor((rows, cols), I16, q, data.astype(np.int16))


class TestPack:
    def test_already_aligned_run(self):
        d = np.zeros((1, 32), dtype=np.int16)
        d[0, 8:16] = 7
        m = pack_sparse(Tensor((1, 32), I16, 0, d), 8)
        assert len(m.runs) == 1
        assert m.runs[0].start == 8 and m.runs[0].length == 8

    def test_single_nonzero_covered_by_aligned_run(self):
        d = np.zeros((1, 32), dtype=np.int16)
        d[0, 3] = 9
        m = pack_sparse(Tensor((1, 32), I16, 0, d), 8)
        assert len(m.runs) == 1
        assert m.runs[0].start == 0 and m.runs[0].length == 8
        assert (m.runs[0].values == [0, 0, 0, 9, 0, 0, 0, 0]).all()

    def test_all_zero_matrix(self):
        m = pack_sparse(matrix(4, 16, 0.0), 8)
        assert m.runs == [] and sparse_mac_count(m) == 0

    def test_alignment_16(self):
        d = np.zeros((1, 32), dtype=np.int16)
        d[0, 17] = 1
        m = pack_sparse(Tensor((1, 32), I16, 0, d), 16)
        assert m.runs[0].start == 16 and m.runs[0].length == 16

    def test_merges_touching_runs(self):
        d = np.zeros((1, 32), dtype=np.int16)
        d[0, 6] = 1
        d[0, 9] = 1
        m = pack_sparse(Tensor((1, 32), I16, 0, d), 8)
        assert len(m.runs) == 1 and m.runs[0].length == 16

    def test_rejects_bad_alignment(self):
        with pytest.raises(ValueError):
            pack_sparse(matrix(2, 16, 0.5), 4)

    @pytest.mark.parametrize("align", [8, 16])
    def test_unpack_is_lossless(self, align):
        for _ in range(50):
            rows = int(RNG.integers(1, 20))
            cols = int(RNG.integers(1, 60))
            d = matrix(rows, cols, float(RNG.uniform(0.05, 0.6)))
            m = pack_sparse(d, align)
            assert m.to_dense() == d


class TestRunInvariants:
    def test_lengths_are_aligned(self):
        for _ in range(20):
            m = pack_sparse(matrix(8, 40, 0.3), 8)
            assert all(r.length % 8 == 0 for r in m.runs)

    def test_disjoint_ascending(self):
        for _ in range(20):
            m = pack_sparse(matrix(8, 64, 0.4), 8)
            seen = {}
            for r in m.runs:
                assert r.start >= seen.get(r.row, 0)
                seen[r.row] = r.start + r.length

    def test_constructor_rejects_unaligned(self):
        with pytest.raises(ValueError):
            SparsePackedMatrix(1, 16, 8, I16, 0,
                               [Run(0, 0, np.zeros(5, dtype=np.int16))])

    def test_constructor_rejects_overlap(self):
        runs = [Run(0, 0, np.ones(8, dtype=np.int16)),
                Run(0, 4, np.ones(8, dtype=np.int16))]
        with pytest.raises(ValueError):
            SparsePackedMatrix(1, 16, 8, I16, 0, runs)


class TestSpmv:
    def dense_ref(self, m, x, q_i):
        """matmul_q on the unpacked matrix (weight laid out [in, out])."""
        d = m.to_dense()
        wt = Tensor((m.cols, m.rows), I16, m.q, d.data.T.copy())
        return K.matmul_q(x, wt, q_i)

    def test_bit_exact_vs_dense(self):
        for _ in range(100):
            rows = int(RNG.integers(1, 40))
            cols = int(RNG.integers(1, 80))
            m = pack_sparse(matrix(rows, cols, float(RNG.uniform(0.05, 0.5))),
                            [8, 16][int(RNG.integers(0, 2))])
            q_i = int(RNG.integers(0, 3))
            x = Tensor((cols,), I16, 10,
                       RNG.integers(-3000, 3000, cols).astype(np.int16))
            got = spmv_q(m, x, q_i)
            want = self.dense_ref(m, x, q_i)
            assert np.array_equal(got.data, want.data)
            assert got.q == want.q == 10 - q_i

    def test_zero_matrix(self):
        m = pack_sparse(matrix(6, 24, 0.0), 8)
        x = Tensor((24,), I16, 8, RNG.integers(-99, 99, 24).astype(np.int16))
        assert not spmv_q(m, x).data.any()

    def test_single_run_scales_input(self):
        d = np.zeros((1, 8), dtype=np.int16)
        d[0, :] = [0, 0, 64, 0, 0, 0, 0, 0]
        m = pack_sparse(Tensor((1, 8), I16, 6, d), 8)
        x = Tensor((8,), I16, 9, np.arange(8).astype(np.int16) * 100)
        got = spmv_q(m, x)
        assert got.data[0] == (200 * 64) >> 6

    def test_batched_input(self):
        m = pack_sparse(matrix(5, 16, 0.4), 8)
        xb = Tensor((3, 16), I16, 9, RNG.integers(-500, 500, (3, 16)).astype(np.int16))
        got = spmv_q(m, xb)
        for b in range(3):
            row = Tensor((16,), I16, 9, xb.data[b])
            assert np.array_equal(got.data[b], spmv_q(m, row).data)

    def test_rejects_wrong_length(self):
        m = pack_sparse(matrix(4, 16, 0.5), 8)
        with pytest.raises(ShapeMismatch):
            spmv_q(m, Tensor((15,), I16, 9, np.zeros(15, dtype=np.int16)))

    def test_unaligned_cols_pad_with_zero_input(self):
        d = np.zeros((2, 11), dtype=np.int16)
        d[:, 9:11] = 3
        m = pack_sparse(Tensor((2, 11), I16, 2, d), 8)
        x = Tensor((11,), I16, 4, np.full(11, 7, dtype=np.int16))
        got = spmv_q(m, x)
        assert np.array_equal(got.data, self.dense_ref(m, x, 0).data)


class TestMacCounts:
    def test_count_is_sum_of_run_lengths(self):
        m = pack_sparse(matrix(10, 48, 0.25), 8)
        assert sparse_mac_count(m) == sum(r.length for r in m.runs)

    def test_full_density(self):
        d = Tensor((4, 16), I16, 0,
                   RNG.integers(1, 9, (4, 16)).astype(np.int16))
        m = pack_sparse(d, 8)
        assert sparse_mac_count(m) == 64 == dense_mac_count(m)
        assert density(m) == 1

    def test_bounded_by_dense_when_cols_aligned(self):
        for _ in range(30):
            m = pack_sparse(matrix(6, 48, float(RNG.uniform(0, 1))), 8)
            assert sparse_mac_count(m) <= dense_mac_count(m)

    def test_density_identity_exact(self):
        m = pack_sparse(matrix(12, 64, 0.3), 8)
        assert density(m) * dense_mac_count(m) == sparse_mac_count(m)
        assert isinstance(density(m), Fraction)

    def test_published_ratio_rounding(self):
        """Executed/dense MAC ratios printed to one decimal."""
        cases = [(108300 * 16, 7773 * 16, "7.2"),
                 (33155 * 64, 2624 * 64, "7.9"),
                 (15627 * 256, 1411 * 256, "9.0")]
        for dense, sparse_total, want in cases:
            frac = Fraction(sparse_total, dense)
            assert f"{float(frac) * 100:.1f}" == want
