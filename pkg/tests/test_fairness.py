import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from fairdcov import fairness
from fairdcov.errors import DegenerateVariance, EmptyInput, SampleTooSmall, ShapeMismatch
from fairdcov.fairness import BinningSpec


class TestUF:
    def test_fully_explained(self):
        assert fairness.uf_metric([1, 1, 3, 3], ["A", "A", "B", "B"]) == pytest.approx(1.0)

    def test_equal_means(self):
        assert fairness.uf_metric([0, 2, 2, 0], [0, 0, 1, 1]) == pytest.approx(0.0)

    def test_hand_value(self):
        assert fairness.uf_metric([0, 2, 1, 3], [0, 0, 1, 1]) == pytest.approx(0.25 / 1.25)

    def test_degenerate(self):
        with pytest.raises(DegenerateVariance):
            fairness.uf_metric([0.3] * 6, [0, 1, 0, 1, 0, 1])

    def test_too_small(self):
        with pytest.raises(SampleTooSmall):
            fairness.uf_metric([1.0], [0])

    @settings(max_examples=50)
    @given(st.lists(st.floats(-10, 10), min_size=4, max_size=40),
           st.integers(0, 1000))
    def test_bounded(self, ys, seed):
        y = np.asarray(ys)
        if np.var(y) <= 1e-12:
            return
        keys = np.random.default_rng(seed).integers(0, 4, (y.size, 2))
        assert -1e-12 <= fairness.uf_metric(y, keys) <= 1 + 1e-9


class TestKL:
    def test_equal(self):
        assert fairness.kl_divergence([0.2, 0.8], [0.2, 0.8]) == 0

    def test_point_mass(self):
        assert fairness.kl_divergence([1, 0], [0.5, 0.5]) == pytest.approx(math.log(2))

    def test_hand_value(self):
        expected = 0.5 * math.log(2 / 3) + 0.5 * math.log(2)
        assert fairness.kl_divergence([0.5, 0.5], [0.75, 0.25]) == pytest.approx(expected)
        assert expected == pytest.approx(0.1438, abs=1e-4)

    def test_mismatch(self):
        with pytest.raises(ShapeMismatch):
            fairness.kl_divergence([1, 0], [1, 0, 0])


class TestJSD:
    def test_single_group(self):
        y = np.random.default_rng(0).random(50)
        assert fairness.js_divergence(y, np.zeros(50)) == 0

    def test_disjoint_supports(self):
        y = np.r_[np.linspace(0, 0.2, 50), np.linspace(0.8, 1, 50)]
        keys = np.r_[np.zeros(50), np.ones(50)]
        assert fairness.js_divergence(y, keys) == pytest.approx(math.log(2), abs=1e-12)

    def test_identical_groups(self):
        y = np.random.default_rng(1).random(30)
        assert fairness.js_divergence(np.r_[y, y], np.r_[np.zeros(30), np.ones(30)]) < 1e-12

    def test_constant(self):
        assert fairness.js_divergence(np.full(10, 0.4), np.arange(10) % 2) == 0.0

    def test_empty(self):
        with pytest.raises(EmptyInput):
            fairness.js_divergence([], [])

    def test_by_hand(self):
        # two bins over [0, 1]: group 0 puts 3 of 4 in the low bin, group 1 puts 1 of 4
        y = np.array([0, 0.1, 0.2, 0.9, 0.1, 0.8, 0.9, 1.0])
        keys = np.array([0, 0, 0, 0, 1, 1, 1, 1])
        kl = 0.75 * math.log(0.75 / 0.5) + 0.25 * math.log(0.25 / 0.5)
        assert fairness.js_divergence(y, keys, BinningSpec(hist_bins=2)) == pytest.approx(kl)

    @settings(max_examples=40)
    @given(st.integers(0, 10_000))
    def test_non_negative(self, seed):
        rng = np.random.default_rng(seed)
        assert fairness.js_divergence(rng.random(60), rng.integers(0, 3, 60)) >= 0


class TestBinning:
    def test_thirds(self):
        labels = fairness.bin_continuous(np.arange(1, 10))
        np.testing.assert_array_equal(labels, [0, 0, 0, 1, 1, 1, 2, 2, 2])

    def test_constant(self):
        assert not fairness.bin_continuous(np.full(7, 3.0)).any()

    def test_tie_goes_up(self):
        cuts = fairness.fit_cuts(np.arange(1, 10))
        assert fairness.apply_cuts([cuts[0]], cuts)[0] == 1

    def test_empty(self):
        with pytest.raises(EmptyInput):
            fairness.bin_continuous([])

    def test_frozen_cuts_reused(self):
        cuts = fairness.fit_cuts(np.arange(1, 10))
        np.testing.assert_array_equal(fairness.apply_cuts([-5, 100], cuts), [0, 2])

    def test_spec_validation(self):
        with pytest.raises(ValueError):
            BinningSpec(hist_bins=1)
        with pytest.raises(ValueError):
            BinningSpec(quantiles=(0.6, 0.3))


class TestChi2:
    def test_zero_statistic(self):
        assert fairness.chi2_p_value(0.0) == 1.0

    def test_quantile(self):
        assert fairness.chi2_p_value(3.841) == pytest.approx(0.05, abs=1e-3)

    def test_far_tail(self):
        assert fairness.chi2_p_value(100.0) < 1e-20

    def test_constant_prediction_degenerate(self):
        res = fairness.chi2_independence_test(np.ones(20), np.arange(20.0))
        assert res.p_value == 1.0 and res.degenerate

    def test_statistic_is_n_dcorr(self):
        from fairdcov import dcov
        rng = np.random.default_rng(0)
        y, s = rng.normal(size=40), rng.normal(size=(40, 2))
        assert fairness.chi2_independence_test(y, s).statistic == pytest.approx(40 * dcov.dcorr2(y, s))


class TestPermutation:
    def test_p_value_formula(self):
        assert fairness.permutation_p_value(10, [1, 2, 3]) == pytest.approx(0.25)
        assert fairness.permutation_p_value(0, [1, 2, 3]) == 1.0
        assert fairness.permutation_p_value(0.5, [1] * 4 + [0] * 95) == pytest.approx(0.05)

    def test_strong_dependence_floor(self):
        rng = np.random.default_rng(0)
        s = rng.normal(size=60)
        res = fairness.permutation_test_joint(s + 0.01 * rng.normal(size=60), [s], 49, 0)
        assert res.p_value == pytest.approx(1 / 50)
        assert res.method == "perm_joint" and res.replicates == 49

    def test_statistic_matches_ccdcov(self):
        from fairdcov import dcov
        rng = np.random.default_rng(1)
        y, a, b = rng.normal(size=(3, 30))
        res = fairness.permutation_test_joint(y, [a, b], 9, 0)
        assert res.statistic == pytest.approx(dcov.ccdcov(y, [a, b]), abs=1e-12)
        mut = fairness.permutation_test_mutual(y, [a, b], 9, 0)
        assert mut.statistic == pytest.approx(dcov.jdcov2([y, a, b]), abs=1e-10)

    def test_deterministic(self):
        rng = np.random.default_rng(2)
        y, a, b = rng.normal(size=(3, 25))
        for test in (fairness.permutation_test_joint, fairness.permutation_test_mutual):
            assert test(y, [a, b], 19, 5) == test(y, [a, b], 19, 5)

    @settings(max_examples=15, deadline=None)
    @given(st.integers(0, 1000), st.integers(1, 30))
    def test_bounds(self, seed, reps):
        rng = np.random.default_rng(seed)
        y, a, b = rng.normal(size=(3, 12))
        for test in (fairness.permutation_test_joint, fairness.permutation_test_mutual):
            p = test(y, [a, b], reps, seed).p_value
            assert 1 / (reps + 1) - 1e-12 <= p <= 1

    def test_mutual_flags_dependent_attributes(self):
        rng = np.random.default_rng(3)
        a = rng.normal(size=80)
        b = a + 0.1 * rng.normal(size=80)
        y = rng.normal(size=80)
        assert fairness.permutation_test_mutual(y, [a, b], 49, 0).p_value < 0.05

    def test_too_small(self):
        with pytest.raises(SampleTooSmall):
            fairness.permutation_test_joint(np.arange(3.0), [np.arange(3.0)])
