import numpy as np
import pytest

from fairdcov import dcov
from fairdcov.errors import BatchTooSmall, ConfigError, ShapeMismatch
from fairdcov.model import Batch, NetworkSpec, ObjectiveSpec
from fairdcov.model import network as nw
from fairdcov.model import objective as ob

COMBOS = [(head, reg) for head in ("sigmoid", "exp")
          for reg in ("none", "separate_sum", "ccdcov", "jdcov")]


def reference_forward(spec, theta, x):
    """Plain loop over layers, written independently of the package."""
    pos = 0
    h = x
    dims = [spec.input_dim] + [spec.width] * spec.n_hidden + [1]
    for k, (a, b) in enumerate(zip(dims[:-1], dims[1:])):
        w = theta[pos:pos + a * b].reshape(a, b)
        pos += a * b
        bias = theta[pos:pos + b]
        pos += b
        z = h @ w + bias
        h = np.maximum(z, 0) if k < spec.n_hidden else z
    z = h[:, 0]
    return 1 / (1 + np.exp(-z)) if spec.head == "sigmoid" else np.exp(z)


def toy_batch(rng, n, task, p=3):
    x = rng.normal(size=(n, p))
    y = rng.integers(0, 2, n) if task == "binary" else rng.poisson(1.0, n)
    attrs = [rng.integers(0, 2, n).astype(float), rng.normal(size=n), np.eye(3)[rng.integers(0, 3, n)]]
    expo = None if task == "binary" else rng.uniform(0.5, 2.0, n)
    return Batch(x, y.astype(float), attrs, expo)


class TestForward:
    def test_zero_weights(self):
        for head, value in (("sigmoid", 0.5), ("exp", 1.0)):
            spec = NetworkSpec(4, 2, 5, head)
            out, _, _ = nw.forward(spec, np.zeros(spec.n_params), np.ones((3, 4)))
            np.testing.assert_array_equal(out, value)

    @pytest.mark.parametrize("head", ["sigmoid", "exp"])
    def test_matches_reference(self, head):
        rng = np.random.default_rng(0)
        spec = NetworkSpec(4, 3, 7, head)
        theta = nw.init_params(spec, rng)
        x = rng.normal(size=(11, 4))
        np.testing.assert_allclose(nw.forward(spec, theta, x)[0], reference_forward(spec, theta, x),
                                   rtol=1e-12, atol=1e-12)

    def test_shape_mismatch(self):
        spec = NetworkSpec(4)
        with pytest.raises(ShapeMismatch):
            nw.forward(spec, np.zeros(spec.n_params), np.ones((2, 3)))

    def test_exposure_scales_count_not_rate(self):
        rng = np.random.default_rng(1)
        spec = NetworkSpec(2, 1, 4, "exp")
        theta = nw.init_params(spec, rng)
        x = rng.normal(size=(5, 2))
        e = rng.uniform(0.5, 1.5, 5)
        np.testing.assert_allclose(nw.predict(spec, theta, x, 2 * e), 2 * nw.predict(spec, theta, x, e))
        np.testing.assert_array_equal(nw.predict(spec, theta, x), nw.forward(spec, theta, x)[0])

    def test_spec_validation(self):
        with pytest.raises(ValueError):
            NetworkSpec(3, dropout=1.0)
        with pytest.raises(ValueError):
            NetworkSpec(3, head="tanh")

    def test_inverted_dropout_mean(self):
        spec = NetworkSpec(2, 2, 50, dropout=0.3)
        masks = nw.dropout_masks(spec, 2000, np.random.default_rng(0))
        assert abs(masks[0].mean() - 1.0) < 0.02


class TestObjective:
    def test_lambda_zero_is_task_loss(self):
        rng = np.random.default_rng(0)
        spec = NetworkSpec(3, 1, 4)
        theta = nw.init_params(spec, rng)
        b = toy_batch(rng, 10, "binary")
        p = nw.forward(spec, theta, b.x)[0]
        bce = -np.mean(b.y * np.log(p) + (1 - b.y) * np.log(1 - p))
        assert ob.objective(spec, theta, b, ObjectiveSpec("binary", "ccdcov", 0.0)) == pytest.approx(bce)

    def test_poisson_loss_form(self):
        rng = np.random.default_rng(1)
        spec = NetworkSpec(3, 1, 4, "exp")
        theta = nw.init_params(spec, rng)
        b = toy_batch(rng, 10, "poisson")
        rate = nw.forward(spec, theta, b.x)[0]
        expected = np.mean(b.exposure * rate - b.y * np.log(rate))
        assert ob.objective(spec, theta, b, ObjectiveSpec("poisson")) == pytest.approx(expected)

    def test_constant_prediction_zero_penalty(self):
        rng = np.random.default_rng(2)
        spec = NetworkSpec(3, 1, 4)
        theta = nw.init_params(spec, rng)
        theta[spec.tensor_slices()[-2]] = 0.0
        b = toy_batch(rng, 10, "binary")
        base = ob.objective(spec, theta, b, ObjectiveSpec("binary"))
        for reg in ("ccdcov", "jdcov", "separate_sum"):
            obj = ObjectiveSpec("binary", reg, 5.0)
            # joint dCov keeps the attribute-only dependence, which no prediction can change
            floor = dcov.jdcov2(b.attrs) if reg == "jdcov" else 0.0
            assert ob.objective(spec, theta, b, obj) == pytest.approx(base + 5.0 * floor, abs=1e-12)
            reg_only = ob.backward(spec, theta, b, obj) - ob.backward(spec, theta, b, ObjectiveSpec("binary"))
            np.testing.assert_allclose(reg_only, 0.0, atol=1e-12)

    def test_tiny_batch_composition(self):
        rng = np.random.default_rng(3)
        spec = NetworkSpec(3, 1, 4)
        theta = nw.init_params(spec, rng)
        b = toy_batch(rng, 5, "binary")
        p = nw.forward(spec, theta, b.x)[0]
        loss = ob.objective(spec, theta, b, ObjectiveSpec("binary"))
        psi = dcov.dcov2_expanded(p, dcov.concat_blocks(b.attrs))
        got = ob.objective(spec, theta, b, ObjectiveSpec("binary", "ccdcov", 1.0))
        assert got == pytest.approx(loss + psi, abs=1e-12)

    @pytest.mark.parametrize("reg", ["ccdcov", "jdcov", "separate_sum"])
    def test_additivity(self, reg):
        rng = np.random.default_rng(4)
        spec = NetworkSpec(3, 2, 5)
        theta = nw.init_params(spec, rng)
        b = toy_batch(rng, 12, "binary")
        loss, psi = ob.objective_terms(spec, theta, b, ObjectiveSpec("binary", reg, 1.0))
        for lam in (0.5, 3.0, 40.0):
            assert ob.objective(spec, theta, b, ObjectiveSpec("binary", reg, lam)) == loss + lam * psi

    def test_cached_objective_agrees(self):
        rng = np.random.default_rng(5)
        spec = NetworkSpec(3, 2, 5)
        theta = nw.init_params(spec, rng)
        b = toy_batch(rng, 30, "binary")
        for reg in ("ccdcov", "jdcov", "separate_sum"):
            obj = ObjectiveSpec("binary", reg, 7.0)
            assert ob.cached_objective(spec, theta, b, obj) == pytest.approx(
                ob.objective(spec, theta, b, obj), rel=1e-10, abs=1e-12)

    def test_batch_too_small(self):
        spec = NetworkSpec(3, 1, 2)
        b = toy_batch(np.random.default_rng(0), 3, "binary")
        with pytest.raises(BatchTooSmall):
            ob.objective(spec, np.zeros(spec.n_params), b, ObjectiveSpec("binary", "ccdcov", 1.0))
        ob.objective(spec, np.zeros(spec.n_params), b, ObjectiveSpec("binary"))

    def test_spec_validation(self):
        with pytest.raises(ConfigError):
            ObjectiveSpec("binary", "ccdcov", -1.0)
        with pytest.raises(ConfigError):
            ObjectiveSpec("binary", "ccdcov", float("inf"))
        with pytest.raises(ConfigError):
            ObjectiveSpec("gamma")
        assert ObjectiveSpec(regulariser="separate").regulariser == "separate_sum"


class TestGradient:
    @pytest.mark.parametrize("head,reg", COMBOS)
    def test_central_differences(self, head, reg):
        rng = np.random.default_rng(COMBOS.index((head, reg)))
        task = "binary" if head == "sigmoid" else "poisson"
        spec = NetworkSpec(3, 2, 6, head)
        theta = nw.init_params(spec, rng) * 2
        b = toy_batch(rng, 8, task)
        obj = ObjectiveSpec(task, reg, 1.0)
        _, g = ob.objective_and_grad(spec, theta, b, obj)
        worst = 0.0
        for i in rng.choice(theta.size, 20, replace=False):
            e = np.zeros_like(theta)
            e[i] = 1e-5
            fd = (ob.objective(spec, theta + e, b, obj) - ob.objective(spec, theta - e, b, obj)) / 2e-5
            if abs(g[i]) > 1e-7:
                worst = max(worst, abs(fd - g[i]) / max(abs(fd), abs(g[i])))
        assert worst < 1e-4

    def test_prediction_gradient(self):
        rng = np.random.default_rng(9)
        y = rng.normal(size=9)
        attrs = [rng.normal(size=9), rng.integers(0, 2, 9).astype(float)]
        for reg in ("ccdcov", "jdcov", "separate_sum"):
            g = ob.regulariser_grad(reg, y, attrs)
            for i in range(9):
                e = np.zeros(9)
                e[i] = 1e-6
                fd = (ob.regulariser_value(reg, y + e, attrs) - ob.regulariser_value(reg, y - e, attrs)) / 2e-6
                assert g[i] == pytest.approx(fd, rel=1e-5, abs=1e-9)

    def test_lambda_zero_gradient_is_task_gradient(self):
        rng = np.random.default_rng(6)
        spec = NetworkSpec(3, 2, 5)
        theta = nw.init_params(spec, rng)
        b = toy_batch(rng, 10, "binary")
        np.testing.assert_array_equal(ob.backward(spec, theta, b, ObjectiveSpec("binary", "ccdcov", 0.0)),
                                      ob.backward(spec, theta, b, ObjectiveSpec("binary")))
