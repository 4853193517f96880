import itertools

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from fairdcov import dcov
from fairdcov.errors import ArityError, InvalidSample, InvalidWeight, SampleTooSmall, ShapeMismatch


def loop_ucentre(d):
    n = d.shape[0]
    u = np.zeros_like(d)
    for i in range(n):
        for j in range(n):
            if i != j:
                u[i, j] = (d[i, j] - d[i].sum() / (n - 2) - d[:, j].sum() / (n - 2)
                           + d.sum() / ((n - 1) * (n - 2)))
    return u


def loop_distances(x):
    x = np.asarray(x, float).reshape(len(x), -1)
    n = len(x)
    return np.array([[np.sqrt(np.sum((x[i] - x[j]) ** 2)) for j in range(n)] for i in range(n)])


def sgn_xy(n, seed):
    rng = np.random.default_rng(seed)
    x, y = rng.normal(size=n), rng.normal(size=n)
    return np.sign(x * y), x, y


def mixed_block(rng, n, kind):
    if kind == "onehot":
        return np.eye(3)[rng.integers(0, 3, n)]
    return rng.normal(size=(n, kind))


class TestDistances:
    def test_hand_example(self):
        d = dcov.pairwise_distance_matrix([0.0, 3.0, 4.0])
        np.testing.assert_array_equal(d, [[0, 3, 4], [3, 0, 1], [4, 1, 0]])

    def test_identical_rows(self):
        assert not dcov.pairwise_distance_matrix(np.ones((5, 2))).any()

    def test_one_hot(self):
        d = dcov.pairwise_distance_matrix([[1, 0], [0, 1]])
        assert d[0, 1] == pytest.approx(np.sqrt(2))

    def test_non_finite(self):
        with pytest.raises(InvalidSample):
            dcov.pairwise_distance_matrix([0.0, np.nan, 1.0])

    @given(arrays(np.float64, (7, 2), elements=st.floats(-50, 50)))
    def test_metric_properties(self, x):
        d = dcov.pairwise_distance_matrix(x)
        np.testing.assert_allclose(d, d.T)
        assert np.all(np.diag(d) == 0) and np.all(d >= 0)
        for i, j, k in itertools.permutations(range(7), 3):
            assert d[i, k] <= d[i, j] + d[j, k] + 1e-9


class TestUCentre:
    def test_zero(self):
        assert not dcov.u_centre(np.zeros((5, 5))).any()

    def test_small_hand_matrix_rows_vanish(self):
        d = dcov.pairwise_distance_matrix([0.0, 3.0, 4.0, 10.0])
        u = dcov.u_centre(d)
        np.testing.assert_allclose(u.sum(axis=1), 0, atol=1e-12)

    def test_three_rows_too_small(self):
        with pytest.raises(SampleTooSmall):
            dcov.u_centre(dcov.pairwise_distance_matrix([0.0, 3.0, 4.0]))

    def test_matches_loop(self):
        rng = np.random.default_rng(3)
        d = loop_distances(rng.normal(size=(10, 2)))
        u = dcov.u_centre(d)
        np.testing.assert_allclose(u, loop_ucentre(d), atol=1e-12)
        assert np.abs(u.sum(axis=1)).max() < 1e-9
        np.testing.assert_allclose(u, u.T)
        assert np.all(np.diag(u) == 0)

    @given(arrays(np.float64, (9, 3), elements=st.floats(-1e3, 1e3)))
    def test_row_and_column_sums(self, x):
        u = dcov.ucentred(x)
        # round-off follows the size of the distances, which cancellation can hide in u
        tol = 1e-12 * 9 * max(dcov.pairwise_distance_matrix(x).max(), 1.0)
        assert np.abs(u.sum(axis=0)).max() <= tol
        assert np.abs(u.sum(axis=1)).max() <= tol


class TestDcov2:
    def test_constant_x_exact_zero(self):
        y = np.random.default_rng(0).normal(size=30)
        assert dcov.dcov2_unbiased(np.full(30, 2.5), y) == 0.0
        assert dcov.dcov2_expanded(np.full(30, 2.5), y) == pytest.approx(0.0, abs=1e-12)

    def test_expanded_oracle_small(self):
        x = np.array([1.0, 2.0, 3.0, 4.0])
        a = dcov.dcov2_unbiased(x, x)
        assert a > 0
        assert a == pytest.approx(dcov.dcov2_expanded(x, x), rel=1e-10)
        n = 4
        u = loop_ucentre(loop_distances(x))
        assert a == pytest.approx(np.sum(u * u) / (n * (n - 3)), rel=1e-12)

    @settings(max_examples=60, deadline=None)
    @given(st.integers(5, 40), st.sampled_from([1, 2, 4, "onehot"]),
           st.sampled_from([1, 2, 4, "onehot"]), st.integers(0, 10_000))
    def test_agrees_with_expanded(self, n, kx, ky, seed):
        rng = np.random.default_rng(seed)
        x, y = mixed_block(rng, n, kx), mixed_block(rng, n, ky)
        a, b = dcov.dcov2_unbiased(x, y), dcov.dcov2_expanded(x, y)
        # measured against the Cauchy-Schwarz bound; a constant block makes the bound 0
        bound = np.sqrt(abs(dcov.dcov2_expanded(x, x) * dcov.dcov2_expanded(y, y)))
        assert abs(a - b) <= 1e-10 * bound + 1e-14

    def test_symmetric(self):
        rng = np.random.default_rng(1)
        x, y = rng.normal(size=(20, 2)), rng.normal(size=20)
        assert dcov.dcov2_unbiased(x, y) == dcov.dcov2_unbiased(y, x)

    def test_chunked_path_matches_dense(self):
        rng = np.random.default_rng(2)
        x, y = rng.normal(size=(300, 2)), rng.normal(size=300)
        dense = dcov.dcov2_unbiased(x, y)
        assert dcov.dcov2_unbiased(x, y, chunk=64) == pytest.approx(dense, rel=1e-10, abs=1e-14)

    def test_errors(self):
        with pytest.raises(ShapeMismatch):
            dcov.dcov2_unbiased(np.zeros(5), np.zeros(6))
        with pytest.raises(SampleTooSmall):
            dcov.dcov2_unbiased(np.arange(3.0), np.arange(3.0))

    def test_sgn_xy_marginal_small(self):
        z, x, _ = sgn_xy(1000, 0)
        assert abs(dcov.dcov2_unbiased(z, x)) < 0.005

    def test_can_be_negative(self):
        rng = np.random.default_rng(5)
        vals = [dcov.dcov2_unbiased(rng.normal(size=20), rng.normal(size=20)) for _ in range(200)]
        assert min(vals) < 0


class TestDcorr:
    def test_self_is_one(self):
        x = np.random.default_rng(0).normal(size=25)
        assert dcov.dcorr2(x, x) == pytest.approx(1.0)

    def test_constant_is_zero(self):
        assert dcov.dcorr2(np.ones(10), np.arange(10.0)) == 0.0

    def test_independent_near_zero(self):
        rng = np.random.default_rng(4)
        assert abs(dcov.dcorr2(rng.normal(size=2000), rng.normal(size=2000))) < 0.02


class TestCCdCov:
    def test_single_attribute(self):
        rng = np.random.default_rng(0)
        y, s = rng.normal(size=30), rng.normal(size=30)
        assert dcov.ccdcov(y, [s]) == dcov.dcov2_unbiased(y, s)
        dec = dcov.ccdcov_decompose(y, [s])
        assert dec.eta == pytest.approx(0.0, abs=1e-12)
        assert dec.total == pytest.approx(dec.marginal_terms[0])

    @pytest.mark.parametrize("seed", range(10))
    def test_decomposition_identity(self, seed):
        rng = np.random.default_rng(seed)
        y = rng.normal(size=50)
        attrs = [rng.normal(size=50), np.eye(3)[rng.integers(0, 3, 50)], rng.normal(size=(50, 2))]
        dec = dcov.ccdcov_decompose(y, attrs)
        assert abs(dec.total - sum(dec.marginal_terms) - dec.eta) < 1e-8
        assert dec.total == pytest.approx(dcov.ccdcov(y, attrs), abs=1e-12)

    def test_block_order_invariance(self):
        rng = np.random.default_rng(7)
        y = rng.normal(size=40)
        a, b = rng.normal(size=40), np.eye(2)[rng.integers(0, 2, 40)]
        assert dcov.ccdcov(y, [a, b]) == pytest.approx(dcov.ccdcov(y, [b, a]), abs=1e-12)

    def test_sgn_xy_eta_dominates(self):
        z, x, y = sgn_xy(1000, 0)
        dec = dcov.ccdcov_decompose(z, [x, y])
        assert all(abs(m) < 0.005 for m in dec.marginal_terms)
        assert dec.total > 0.03
        assert dec.eta > 0.03

    def test_correlated_gaussian_attrs(self):
        rng = np.random.default_rng(0)
        cov = [[1, 0.8], [0.8, 1]]
        s = rng.multivariate_normal([0, 0], cov, size=1000)
        z = rng.normal(size=1000)
        assert abs(dcov.ccdcov(z, [s[:, 0], s[:, 1]])) < 0.005


class TestSeparateSum:
    def test_zero_weights(self):
        rng = np.random.default_rng(0)
        assert dcov.separate_sum(rng.normal(size=10), [rng.normal(size=10)] * 2, [0, 0]) == 0

    def test_single(self):
        rng = np.random.default_rng(0)
        y, s = rng.normal(size=12), rng.normal(size=12)
        assert dcov.separate_sum(y, [s], [1.0]) == dcov.dcov2_unbiased(y, s)

    def test_negative_weight(self):
        with pytest.raises(InvalidWeight):
            dcov.separate_sum(np.arange(5.0), [np.arange(5.0)], [-1.0])

    def test_gerrymandering_gap(self):
        z, x, y = sgn_xy(1000, 0)
        assert abs(dcov.separate_sum(z, [x, y], [1, 1])) < 0.01
        assert dcov.ccdcov(z, [x, y]) > 0.03


class TestJdCov:
    def test_two_blocks_is_dcov(self):
        rng = np.random.default_rng(0)
        x, y = rng.normal(size=20), rng.normal(size=(20, 2))
        dec = dcov.jdcov_decompose([x, y])
        assert dec.zeta == 0
        assert dcov.jdcov2([x, y]) == dcov.dcov2_unbiased(x, y)

    def test_arity(self):
        with pytest.raises(ArityError):
            dcov.jdcov2([np.arange(5.0)])

    def test_term_counts(self):
        rng = np.random.default_rng(0)
        dec = dcov.jdcov_decompose([rng.normal(size=15) for _ in range(3)])
        assert len(dec.pred_attr_terms) == 2 and len(dec.attr_attr_terms) == 1

    @pytest.mark.parametrize("seed", range(10))
    def test_product_form_matches(self, seed):
        rng = np.random.default_rng(seed)
        blocks = [rng.normal(size=30), rng.normal(size=(30, 2)), np.eye(3)[rng.integers(0, 3, 30)]]
        if seed % 2:
            blocks.append(rng.normal(size=30))
        dec = dcov.jdcov_decompose(blocks)
        pairs = sum(dec.pred_attr_terms) + sum(dec.attr_attr_terms)
        assert abs(dec.total - pairs - dec.zeta) < 1e-8
        assert abs(dcov.jdcov2_product(blocks) - dec.total) < 1e-8

    def test_pairwise_terms_are_dcov(self):
        rng = np.random.default_rng(1)
        b = [rng.normal(size=25) for _ in range(3)]
        dec = dcov.jdcov_decompose(b)
        assert dec.pred_attr_terms == (dcov.dcov2_unbiased(b[0], b[1]),
                                       dcov.dcov2_unbiased(b[0], b[2]))
        assert dec.attr_attr_terms == (dcov.dcov2_unbiased(b[1], b[2]),)

    def test_zeta_by_brute_force(self):
        rng = np.random.default_rng(2)
        b = [rng.normal(size=12) for _ in range(4)]
        n = 12
        us = [loop_ucentre(loop_distances(x)) for x in b]
        zeta = 0.0
        for size in (3, 4):
            for combo in itertools.combinations(range(4), size):
                zeta += (-1) ** size * np.sum(np.prod([us[i] for i in combo], axis=0))
        zeta /= n * (n - 3)
        assert dcov.jdcov_decompose(b).zeta == pytest.approx(zeta, abs=1e-12)

    def test_mutually_independent(self):
        rng = np.random.default_rng(3)
        assert abs(dcov.jdcov2([rng.normal(size=2000) for _ in range(3)])) < 0.02

    def test_sgn_xy_zeta_adds_dependence(self):
        z, x, y = sgn_xy(1000, 0)
        dec = dcov.jdcov_decompose([z, x, y])
        assert dec.total > sum(dec.pred_attr_terms)
        assert dec.zeta > 0.03
