import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from klmm.errors import EmptyKernel, FormatError, MonomorphicColumn, SingularDowndate
from klmm.genotypes import (
    GenotypeMatrix,
    SpectralKernel,
    build_rrm,
    dense_rrm,
    downdate_solve,
    read_genotypes,
    read_genotypes_text,
    standardize,
    standardize_columns,
    write_genotypes,
    write_genotypes_text,
)

from conftest import random_standardized


class TestStandardize:
    def test_hand_computed_column(self):
        # mean 1, 1/N variance 2/3
        g = GenotypeMatrix.from_counts(np.array([[0, 1, 2, 1, 0, 2]]).T)
        s = standardize(g)
        expected = (np.array([0, 1, 2, 1, 0, 2]) - 1.0) / np.sqrt(2.0 / 3.0)
        np.testing.assert_allclose(s.values[:, 0], expected, atol=1e-15)
        assert s.col_means[0] == 1.0
        assert s.col_stds[0] == pytest.approx(np.sqrt(2.0 / 3.0), abs=1e-15)

    def test_monomorphic_rejected(self):
        g = GenotypeMatrix.from_counts(np.array([[0, 1], [1, 1], [2, 1], [1, 1]]))
        with pytest.raises(MonomorphicColumn) as exc:
            standardize(g)
        assert exc.value.column == 1

    def test_invariants(self):
        s = random_standardized(80, 40, seed=3)
        x = s.values
        assert np.all(np.abs(x.mean(axis=0)) < 1e-10)
        assert np.all(np.abs(x.var(axis=0) - 1) < 1e-8)
        np.testing.assert_allclose(np.einsum("ij,ij->j", x, x), 80, rtol=0, atol=1e-8)
        assert np.all(s.col_stds > 0)

    def test_round_trip(self):
        rng = np.random.default_rng(0)
        raw = rng.integers(0, 3, size=(30, 12)).astype(np.uint8)
        raw[0] = 0
        raw[1] = 2
        s = standardize(GenotypeMatrix.from_counts(raw))
        np.testing.assert_array_equal(s.unstandardize().values, raw)

    def test_already_standardized_is_error(self):
        s = random_standardized(10, 3)
        with pytest.raises(ValueError):
            standardize(s)

    def test_rejects_bad_counts(self):
        with pytest.raises(ValueError):
            GenotypeMatrix.from_counts(np.array([[0, 3]]))

    @settings(max_examples=50, deadline=None)
    @given(st.lists(st.floats(-5, 5), min_size=3, max_size=40))
    def test_idempotent_on_standardized_column(self, values):
        col = np.array(values)
        if col.std() < 1e-3:
            return
        once, _, _ = standardize_columns(col[:, None])
        twice, _, _ = standardize_columns(once)
        np.testing.assert_allclose(twice, once, rtol=0, atol=1e-12)


class TestRRM:
    def test_single_column_rank_one(self):
        s = random_standardized(25, 1, seed=1)
        k = build_rrm(s)
        x = s.values[:, 0]
        np.testing.assert_allclose(k.dense(), np.outer(x, x), atol=1e-10)
        assert k.eigenvalues[0] == pytest.approx(25.0, abs=1e-9)
        assert np.all(k.eigenvalues[1:] < 1e-9)

    def test_exclude_all_but_one_matches_single_column(self):
        s = random_standardized(20, 6, seed=2)
        full = build_rrm(s, exclude=[0, 1, 2, 4, 5])
        single = build_rrm(
            GenotypeMatrix(values=s.values[:, [3]], col_means=s.col_means[[3]], col_stds=s.col_stds[[3]], standardized=True)
        )
        np.testing.assert_allclose(full.dense(), single.dense(), atol=1e-10)
        assert full.scale == 1.0 and full.source_snp_count == 1

    def test_exclude_everything(self):
        s = random_standardized(10, 3)
        with pytest.raises(EmptyKernel):
            build_rrm(s, exclude=[0, 1, 2])

    def test_reconstruction_against_dense(self):
        s = random_standardized(50, 200, seed=4)
        k = build_rrm(s)
        dense = s.values @ s.values.T / 200
        np.testing.assert_allclose(k.dense(), dense, rtol=0, atol=1e-8)
        u = k.eigenvectors
        np.testing.assert_allclose(u @ u.T, np.eye(50), atol=1e-8)
        assert np.all(np.diff(k.eigenvalues) <= 1e-12)
        assert np.all(k.eigenvalues >= 0)

    def test_trace_and_mean_diagonal(self):
        s = random_standardized(60, 300, seed=5)
        dense, scale, m = dense_rrm(s)
        k = build_rrm(s)
        assert scale == 1 / 300 and m == 300
        assert np.sum(k.eigenvalues) == pytest.approx(np.trace(dense), rel=1e-10)
        assert np.trace(dense) / 60 == pytest.approx(1.0, abs=0.1)

    @settings(max_examples=25, deadline=None)
    @given(st.integers(5, 40), st.integers(1, 60), st.integers(0, 2**32 - 1))
    def test_psd(self, n, m, seed):
        s = random_standardized(n, m, seed=seed)
        dense, _, _ = dense_rrm(s)
        assert np.linalg.eigvalsh(dense)[0] >= -1e-8

    def test_exchangeable(self):
        s = random_standardized(30, 50, seed=6)
        perm = np.random.default_rng(0).permutation(30)
        sp = GenotypeMatrix(values=s.values[perm], col_means=s.col_means, col_stds=s.col_stds, standardized=True)
        k, _, _ = dense_rrm(s)
        kp, _, _ = dense_rrm(sp)
        np.testing.assert_allclose(kp, k[np.ix_(perm, perm)], rtol=0, atol=1e-13)


def _rebuilt_loo(s, j, delta):
    """Leave-one-out covariance built from scratch, at the full kernel's per-SNP weight."""
    dense, _, m_kept = dense_rrm(s, exclude=[j])
    return dense * m_kept / s.n_snps + delta * np.eye(s.n_individuals)


class TestDowndate:
    def test_zero_weight_is_plain_solve(self):
        s = random_standardized(40, 80, seed=7)
        k = build_rrm(s)
        rhs = np.random.default_rng(1).normal(size=40)
        sol, corr = downdate_solve(k, s.values[:, 3], 0.7, rhs, weight=0.0)
        np.testing.assert_allclose(sol, np.linalg.solve(k.dense() + 0.7 * np.eye(40), rhs), rtol=1e-10)
        assert corr == 0.0

    @pytest.mark.parametrize("delta", [1e-3, 0.1, 1.0, 30.0])
    def test_matches_rebuilt_kernel(self, delta):
        s = random_standardized(120, 150, seed=8)
        k = build_rrm(s)
        rhs = np.random.default_rng(2).normal(size=(120, 2))
        for j in (0, 17, 149):
            h = _rebuilt_loo(s, j, delta)
            sol, corr = downdate_solve(k, s.values[:, j], delta, rhs)
            expected = np.linalg.solve(h, rhs)
            np.testing.assert_allclose(sol, expected, rtol=1e-8, atol=1e-8 * np.abs(expected).max())
            full_logdet = np.linalg.slogdet(k.dense() + delta * np.eye(120))[1]
            assert full_logdet + corr == pytest.approx(np.linalg.slogdet(h)[1], rel=1e-8)

    def test_singular_downdate(self):
        # one SNP, tiny ridge: removing it leaves ~delta*I against K + delta*I
        s = random_standardized(10, 1, seed=9)
        k = build_rrm(s)
        with pytest.raises(SingularDowndate):
            downdate_solve(k, s.values[:, 0], 1e-14, np.ones(10))

    def test_delta_must_be_positive(self):
        s = random_standardized(10, 4)
        with pytest.raises(ValueError):
            downdate_solve(build_rrm(s), s.values[:, 0], 0.0, np.ones(10))

    def test_concurrent_calls(self):
        from concurrent.futures import ThreadPoolExecutor

        s = random_standardized(60, 90, seed=10)
        k = build_rrm(s)
        rhs = np.ones(60)
        serial = [downdate_solve(k, s.values[:, j], 0.5, rhs)[0] for j in range(90)]
        with ThreadPoolExecutor(4) as pool:
            parallel = list(pool.map(lambda j: downdate_solve(k, s.values[:, j], 0.5, rhs)[0], range(90)))
        for a, b in zip(serial, parallel):
            np.testing.assert_array_equal(a, b)


class TestSpectralKernel:
    def test_from_dense_zero(self):
        k = SpectralKernel.from_dense(np.zeros((5, 5)))
        assert np.all(k.eigenvalues == 0)
        np.testing.assert_allclose(k.solve(np.arange(5.0), 2.0), np.arange(5.0) / 2.0)
        assert k.logdet(2.0) == pytest.approx(5 * np.log(2.0))


class TestFiles:
    def test_binary_round_trip(self, tmp_path):
        raw = np.random.default_rng(0).integers(0, 3, size=(17, 23)).astype(np.uint8)
        path = tmp_path / "g.klmm"
        write_genotypes(path, GenotypeMatrix.from_counts(raw))
        back = read_genotypes(path)
        np.testing.assert_array_equal(back.values, raw)
        data = path.read_bytes()
        assert data[:4] == b"KLMM"
        assert int.from_bytes(data[4:6], "little") == 1
        assert int.from_bytes(data[6:14], "little") == 17
        assert int.from_bytes(data[14:22], "little") == 23
        assert data[22:] == raw.tobytes()
        write_genotypes(tmp_path / "h.klmm", back)
        assert (tmp_path / "h.klmm").read_bytes() == data

    def test_binary_from_standardized(self, tmp_path):
        raw = np.array([[0, 1], [2, 1], [1, 0]], dtype=np.uint8)
        write_genotypes(tmp_path / "g.klmm", standardize(GenotypeMatrix.from_counts(raw)))
        np.testing.assert_array_equal(read_genotypes(tmp_path / "g.klmm").values, raw)

    def test_bad_magic(self, tmp_path):
        (tmp_path / "x.klmm").write_bytes(b"NOPE" + bytes(18))
        with pytest.raises(FormatError):
            read_genotypes(tmp_path / "x.klmm")

    def test_truncated_body(self, tmp_path):
        raw = np.zeros((3, 3), dtype=np.uint8)
        write_genotypes(tmp_path / "g.klmm", GenotypeMatrix.from_counts(raw))
        data = (tmp_path / "g.klmm").read_bytes()
        (tmp_path / "g.klmm").write_bytes(data[:-1])
        with pytest.raises(FormatError):
            read_genotypes(tmp_path / "g.klmm")

    def test_text_round_trip(self, tmp_path):
        raw = np.random.default_rng(1).integers(0, 3, size=(6, 9)).astype(np.uint8)
        write_genotypes_text(tmp_path / "g.txt", GenotypeMatrix.from_counts(raw))
        text = (tmp_path / "g.txt").read_text()
        assert text.splitlines()[0] == " ".join(str(v) for v in raw[0])
        np.testing.assert_array_equal(read_genotypes_text(tmp_path / "g.txt").values, raw)
        write_genotypes_text(tmp_path / "h.txt", read_genotypes_text(tmp_path / "g.txt"))
        assert (tmp_path / "h.txt").read_text() == text

    def test_text_ragged(self, tmp_path):
        (tmp_path / "g.txt").write_text("0 1 2\n0 1\n")
        with pytest.raises(FormatError):
            read_genotypes_text(tmp_path / "g.txt")
