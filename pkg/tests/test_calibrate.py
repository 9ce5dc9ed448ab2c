import numpy as np
import pytest
from scipy import stats

from klmm.calibrate import (
    DEFAULT_ALPHA_GRID,
    KS_EXACT_BELOW,
    aggregate,
    calibrated_band,
    fpr_curve,
    ks_pvalue,
    ks_uniformity,
    make_report,
    null_pvalues,
)
from klmm.errors import EmptyInput
from klmm.lmm import AssociationResult


class TestFprCurve:
    def test_inclusive_boundary(self):
        assert fpr_curve([0.01, 0.02, 0.5], [0.01])[0] == pytest.approx(1 / 3)
        assert fpr_curve([0.0100000001], [0.01])[0] == 0.0

    def test_uniform_plotting_positions(self):
        n = 1000
        p = np.arange(1, n + 1) / n
        a = np.array([0.001, 0.01, 0.25, 0.5])
        np.testing.assert_allclose(fpr_curve(p, a), a, atol=1e-12)

    def test_monotone_right_continuous(self):
        p = np.random.default_rng(0).random(500)
        a = np.sort(np.concatenate([DEFAULT_ALPHA_GRID, p[:20]]))
        curve = fpr_curve(p, a)
        assert np.all(np.diff(curve) >= 0)
        # at a data point the jump is already included
        for v in p[:20]:
            assert fpr_curve(p, [v])[0] == np.mean(p <= v)

    def test_default_grid(self):
        assert DEFAULT_ALPHA_GRID.size == 50
        assert DEFAULT_ALPHA_GRID[0] == pytest.approx(1e-4)
        assert DEFAULT_ALPHA_GRID[-1] == pytest.approx(0.5)

    def test_empty_and_bad(self):
        with pytest.raises(EmptyInput):
            fpr_curve([], [0.1])
        with pytest.raises(ValueError):
            fpr_curve([1.5], [0.1])


class TestBand:
    def test_single_test_at_half(self):
        lo, hi = calibrated_band(0.5, 1)
        assert lo == pytest.approx(0.025, abs=1e-9)
        assert hi == pytest.approx(0.975, abs=1e-9)

    def test_integer_count_is_textbook(self):
        lo, hi = calibrated_band(0.1, 100)
        assert lo == pytest.approx(stats.beta.ppf(0.025, 10, 91), rel=1e-10)
        assert hi == pytest.approx(stats.beta.ppf(0.975, 11, 90), rel=1e-10)

    def test_contains_alpha(self):
        a = DEFAULT_ALPHA_GRID
        lo, hi = calibrated_band(a, 777)
        assert np.all(lo <= a) and np.all(a <= hi)

    def test_widens_with_level(self):
        prev = calibrated_band(0.01, 1000, 0.5)
        for level in (0.8, 0.9, 0.95, 0.99, 0.999):
            cur = calibrated_band(0.01, 1000, level)
            assert cur[0] <= prev[0] and cur[1] >= prev[1]
            prev = cur

    @staticmethod
    def _coverage(n, alpha):
        lo, hi = calibrated_band(alpha, n)
        k = np.arange(n + 1)
        inside = (k / n >= lo) & (k / n <= hi)
        return stats.binom.pmf(k, n, alpha)[inside].sum()

    @pytest.mark.parametrize("n,alpha", [(1000, 0.01), (10_000, 0.05), (2000, 0.1)])
    def test_coverage_integer_expected_count(self, n, alpha):
        assert self._coverage(n, alpha) >= 0.95
        draws = np.random.default_rng(1).binomial(n, alpha, size=10_000) / n
        lo, hi = calibrated_band(alpha, n)
        assert np.mean((draws >= lo) & (draws <= hi)) >= 0.94

    def test_coverage_large_fractional_count(self):
        assert self._coverage(17_550, 0.01) >= 0.94

    def test_small_counts_exclude_zero(self):
        # with expected count >= 1 the lower limit is positive, so FPR = 0 is out of band
        lo, _ = calibrated_band(1.75 / 2000, 2000)
        assert lo > 0
        assert self._coverage(2000, 1.75 / 2000) < 0.9

    def test_domain(self):
        with pytest.raises(ValueError):
            calibrated_band(0.1, 0)
        with pytest.raises(ValueError):
            calibrated_band(1.5, 10)
        with pytest.raises(ValueError):
            calibrated_band(0.1, 10, level=1.0)


class TestKs:
    def test_single_point(self):
        d, p = ks_uniformity([0.5])
        assert d == 0.5 and p == 1.0

    @pytest.mark.parametrize("n", [1, 5, 34, 35, 1000])
    def test_plotting_positions(self, n):
        d, _ = ks_uniformity(np.arange(1, n + 1) / (n + 1))
        assert d == pytest.approx(1 / (n + 1), abs=1e-15)

    def test_matches_scipy_statistic(self):
        p = np.random.default_rng(2).random(200)
        assert ks_uniformity(p)[0] == pytest.approx(stats.kstest(p, "uniform").statistic, abs=1e-15)

    @pytest.mark.parametrize("n", [1, 2, 3, 7, 20, KS_EXACT_BELOW - 1])
    def test_exact_matches_kstwo(self, n):
        for d in np.linspace(0.5 / n + 1e-3, 0.999, 15):
            assert ks_pvalue(d, n) == pytest.approx(stats.kstwo.sf(d, n), abs=1e-12)

    def test_asymptotic_branch(self):
        n = 500
        d = 0.05
        assert ks_pvalue(d, n) == pytest.approx(stats.kstwobign.sf(np.sqrt(n) * d), rel=1e-12)
        # the plain limit is slightly conservative at finite n
        assert 0 <= ks_pvalue(d, n) - stats.kstwo.sf(d, n) < 0.01

    def test_uniform_draws_pass(self):
        passes = sum(ks_uniformity(np.random.default_rng(s).random(10_000))[1] > 0.01 for s in range(100))
        assert passes >= 98

    def test_skewed_draws_fail(self):
        p = np.random.default_rng(3).random(10_000) ** 1.2
        assert ks_uniformity(p)[1] < 1e-6

    def test_empty(self):
        with pytest.raises(EmptyInput):
            ks_uniformity([])


class TestReport:
    def test_uniform_report_passes(self):
        r = make_report(np.random.default_rng(4).random(10_000), "lmm")
        assert r.n_tests == 10_000 and r.calibrated
        assert r.flags()["band_pass"] and not r.flags()["inflated_at_0.01"]

    def test_inflated_report_flags(self):
        p = np.random.default_rng(5).random(10_000) ** 1.5
        r = make_report(p, "univariate")
        assert r.flags()["inflated_at_0.01"] and not r.calibrated

    def test_band_fraction_monte_carlo(self):
        # pooled size of a 9-dataset desk run; exactly uniform P values
        fracs = np.array([make_report(np.random.default_rng(100 + s).random(17_550), "lmm").band_fraction for s in range(100)])
        assert fracs.mean() >= 0.9
        assert np.mean(fracs >= 0.9) >= 0.7

    def test_aggregate_identity(self):
        r = make_report(np.random.default_rng(6).random(300), "lmm")
        a = aggregate([r])
        np.testing.assert_array_equal(a.fpr, r.fpr)
        np.testing.assert_array_equal(a.ci_low, r.ci_low)
        assert (a.ks_statistic, a.ks_p, a.n_tests) == (r.ks_statistic, r.ks_p, r.n_tests)

    def test_aggregate_adds_and_ignores_order(self):
        rng = np.random.default_rng(7)
        reports = [make_report(rng.random(n), "lmm") for n in (100, 250, 40)]
        a = aggregate(reports)
        b = aggregate(reports[::-1])
        assert a.n_tests == 390
        np.testing.assert_array_equal(a.fpr, b.fpr)
        assert a.ks_statistic == b.ks_statistic

    def test_aggregate_empty(self):
        with pytest.raises(EmptyInput):
            aggregate([])

    def test_bad_alpha_grid(self):
        with pytest.raises(ValueError):
            make_report([0.5], "lmm", alpha_grid=[0.1, 0.05])


class TestNullPvalues:
    def test_filters_causal_and_failed(self):
        results = [
            AssociationResult(0, 0.1, 1.0, 0.3, "lmm"),
            AssociationResult(1, 0.1, 1.0, 0.2, "lmm"),
            AssociationResult(2, np.nan, np.nan, np.nan, "lmm", "singular_downdate"),
            AssociationResult(3, 0.1, 1.0, 0.9, "lmm"),
        ]
        np.testing.assert_array_equal(null_pvalues(results, [1]), [0.3, 0.9])
