"""
Tests for the numcore module.
"""

import unittest
from pathlib import Path
import sys

import numpy as np


# Ensure src/ is on sys.path when running this file directly with `python tests/...`
_ROOT = Path(__file__).resolve().parents[1]
_SRC = _ROOT / "src"
if str(_SRC) not in sys.path:
    sys.path.insert(0, str(_SRC))

from ebm_saliency.errors import ConfigurationError, NumericalError
from ebm_saliency.numcore import (
    EVAL,
    TRAIN,
    AdamState,
    LayerSpec,
    ParamStore,
    Tape,
    adam_step,
    backward,
    commit_batch_stats,
    forward,
    grad_norm,
    output_shape,
    value_and_grad,
)
from ebm_saliency.oracles import finite_diff_gradient, gradients_agree


def naive_conv(x, w, b, stride, padding):
    """Direct nested-loop convolution used as an independent reference."""
    xp = np.pad(x, ((0, 0), (0, 0), (padding, padding), (padding, padding)))
    batch, _, height, width = xp.shape
    out_ch, _, k, _ = w.shape
    h_out = (height - k) // stride + 1
    w_out = (width - k) // stride + 1
    out = np.zeros((batch, out_ch, h_out, w_out))
    for n in range(batch):
        for o in range(out_ch):
            for i in range(h_out):
                for j in range(w_out):
                    patch = xp[n, :, i * stride : i * stride + k, j * stride : j * stride + k]
                    out[n, o, i, j] = np.sum(patch * w[o]) + b[o]
    return out


class TestLayerSpec(unittest.TestCase):
    """Test layer construction and shape composition."""

    def test_rejects_unsupported_conv(self):
        with self.assertRaises(ConfigurationError):
            LayerSpec.conv("c", 1, 1, kernel_size=5)
        with self.assertRaises(ConfigurationError):
            LayerSpec.conv("c", 1, 1, stride=3)

    def test_rejects_unknown_kind_and_missing_name(self):
        with self.assertRaises(ConfigurationError):
            LayerSpec("pool")
        with self.assertRaises(ConfigurationError):
            LayerSpec.fc("", 2, 3)

    def test_output_shape(self):
        net = [
            LayerSpec.conv("c1", 3, 8, 4, 2, 1),
            LayerSpec.batch_norm("bn", 8),
            LayerSpec.leaky_relu(),
            LayerSpec.global_avg_pool(),
            LayerSpec.fc("fc", 8, 2),
        ]
        self.assertEqual(output_shape(net, (5, 3, 32, 32)), (5, 2))

    def test_output_shape_names_bad_layer(self):
        net = [LayerSpec.fc("first", 4, 3), LayerSpec.fc("second", 4, 1)]
        with self.assertRaises(ConfigurationError) as ctx:
            output_shape(net, (2, 4))
        self.assertIn("second", str(ctx.exception))

    def test_concat_needs_side_input(self):
        with self.assertRaises(ConfigurationError):
            output_shape([LayerSpec.concat("z", 2)], (1, 3, 4, 4))


class TestForward(unittest.TestCase):
    """Test forward kernels against direct computations."""

    def setUp(self):
        self.rng = np.random.default_rng(7)

    def test_conv_matches_naive_loop(self):
        for k, s in ((3, 1), (3, 2), (4, 2)):
            layer = LayerSpec.conv("c", 2, 3, k, s, 1)
            store = ParamStore.initialize([[layer]], self.rng, 0.5)
            x = self.rng.normal(size=(2, 2, 6, 6))
            expected = naive_conv(x, store["c.weight"], store["c.bias"], s, 1)
            np.testing.assert_allclose(forward([layer], store, x), expected, rtol=1e-12, atol=1e-12)

    def test_gelu_values(self):
        out = forward([LayerSpec.gelu()], ParamStore(), np.array([[0.0, 1.0, -1.0]]))
        np.testing.assert_allclose(out, [[0.0, 0.8413447460685429, -0.15865525393145707]], rtol=1e-12)

    def test_leaky_relu_slope(self):
        out = forward([LayerSpec.leaky_relu()], ParamStore(), np.array([[-2.0, 3.0]]))
        np.testing.assert_allclose(out, [[-0.4, 3.0]])

    def test_upsample_is_nearest(self):
        x = np.arange(4.0).reshape(1, 1, 2, 2)
        out = forward([LayerSpec.upsample(2)], ParamStore(), x)
        self.assertEqual(out.shape, (1, 1, 4, 4))
        np.testing.assert_array_equal(out[0, 0, :2, :2], np.zeros((2, 2)))
        np.testing.assert_array_equal(out[0, 0, 2:, 2:], np.full((2, 2), 3.0))

    def test_batch_norm_train_normalises(self):
        layer = LayerSpec.batch_norm("bn", 3)
        store = ParamStore.initialize([[layer]], self.rng)
        x = self.rng.normal(2.0, 3.0, size=(4, 3, 5, 5))
        out = forward([layer], store, x, TRAIN)
        np.testing.assert_allclose(out.mean(axis=(0, 2, 3)), 0.0, atol=1e-10)
        np.testing.assert_allclose(out.var(axis=(0, 2, 3)), 1.0, atol=1e-4)

    def test_batch_norm_eval_uses_buffers(self):
        layer = LayerSpec.batch_norm("bn", 2)
        store = ParamStore.initialize([[layer]], self.rng)
        x = self.rng.normal(size=(1, 2))
        np.testing.assert_allclose(forward([layer], store, x, EVAL), x / np.sqrt(1.0 + 1e-5))

    def test_batch_norm_train_needs_two_samples(self):
        layer = LayerSpec.batch_norm("bn", 2)
        store = ParamStore.initialize([[layer]], self.rng)
        with self.assertRaises(ConfigurationError):
            forward([layer], store, np.ones((1, 2)), TRAIN)

    def test_commit_batch_stats(self):
        layer = LayerSpec.batch_norm("bn", 1)
        store = ParamStore.initialize([[layer]], self.rng)
        x = np.array([[1.0], [2.0], [3.0], [6.0]])
        tape = Tape(TRAIN)
        forward([layer], store, x, TRAIN, tape=tape)
        commit_batch_stats(store, tape)
        self.assertAlmostEqual(store.buffers["bn.running_mean"][0], 0.1 * 3.0)
        # unbiased variance of [1, 2, 3, 6] is 14 / 3
        self.assertAlmostEqual(store.buffers["bn.running_var"][0], 0.9 + 0.1 * 14.0 / 3.0)

    def test_tape_mode_must_match(self):
        layer = LayerSpec.fc("fc", 2, 1)
        store = ParamStore.initialize([[layer]], self.rng)
        with self.assertRaises(ConfigurationError):
            forward([layer], store, np.ones((2, 2)), EVAL, tape=Tape(TRAIN))


class TestBackward(unittest.TestCase):
    """Test reverse-mode gradients against central differences."""

    def setUp(self):
        self.rng = np.random.default_rng(11)

    def test_small_network_gradients(self):
        net = [
            LayerSpec.conv("c1", 2, 3, 3, 2, 1),
            LayerSpec.batch_norm("bn", 3),
            LayerSpec.gelu(),
            LayerSpec.upsample(2),
            LayerSpec.concat("z", 1),
            LayerSpec.conv("c2", 4, 1, 3, 1, 1),
            LayerSpec.sigmoid(),
        ]
        store = ParamStore.initialize([net], self.rng, 0.5)
        x = self.rng.normal(size=(3, 2, 4, 4))
        z = self.rng.normal(size=(3, 1, 4, 4))
        weights = self.rng.normal(size=(3, 1, 4, 4))
        _, grads = value_and_grad(net, store, x, weights, TRAIN, {"z": z})

        def objective(v):
            return float(np.sum(weights * forward(net, store, v, TRAIN, {"z": z})))

        ok, worst = gradients_agree(grads.input, finite_diff_gradient(objective, x))
        self.assertTrue(ok, f"input gradient off by {worst}")

        def side(v):
            return float(np.sum(weights * forward(net, store, x, TRAIN, {"z": v})))

        ok, worst = gradients_agree(grads.extras["z"], finite_diff_gradient(side, z))
        self.assertTrue(ok, f"side-input gradient off by {worst}")

        names = store.names()

        def params(v):
            return float(np.sum(weights * forward(net, store.from_vector(v, names), x, TRAIN, {"z": z})))

        analytic = np.concatenate([grads.params[n].ravel() for n in names])
        ok, worst = gradients_agree(analytic, finite_diff_gradient(params, store.to_vector(names)))
        self.assertTrue(ok, f"parameter gradient off by {worst}")

    def test_replicate_and_pool_are_adjoint(self):
        net = [LayerSpec.replicate(3, 3), LayerSpec.global_avg_pool()]
        x = self.rng.normal(size=(2, 4))
        out, grads = value_and_grad(net, ParamStore(), x, np.ones((2, 4)))
        np.testing.assert_allclose(out, x)
        np.testing.assert_allclose(grads.input, np.ones((2, 4)))

    def test_rejects_wrong_upstream_shape(self):
        layer = LayerSpec.fc("fc", 2, 1)
        store = ParamStore.initialize([[layer]], self.rng)
        tape = Tape(EVAL)
        forward([layer], store, np.ones((2, 2)), tape=tape)
        with self.assertRaises(ConfigurationError):
            backward([layer], store, tape, np.ones((2, 2)))
        with self.assertRaises(ConfigurationError):
            backward([layer], store, tape, np.ones((2, 1)), mode=TRAIN)
        with self.assertRaises(NumericalError):
            backward([layer], store, tape, np.full((2, 1), np.nan))

    def test_wrt_params_false_skips_parameters(self):
        layer = LayerSpec.fc("fc", 2, 1)
        store = ParamStore.initialize([[layer]], self.rng)
        _, grads = value_and_grad([layer], store, np.ones((2, 2)), np.ones((2, 1)), wrt_params=False)
        self.assertEqual(grads.params, {})


class TestParamStore(unittest.TestCase):
    """Test the parameter container."""

    def setUp(self):
        net = [LayerSpec.fc("a", 3, 2), LayerSpec.batch_norm("bn", 2)]
        self.store = ParamStore.initialize([net], np.random.default_rng(0), 0.01)

    def test_initialisation(self):
        self.assertEqual(self.store.names(), ["a.bias", "a.weight", "bn.bias", "bn.weight"])
        np.testing.assert_array_equal(self.store["bn.weight"], np.ones(2))
        np.testing.assert_array_equal(self.store.buffers["bn.running_var"], np.ones(2))
        self.assertLess(np.abs(self.store["a.weight"]).max(), 0.1)

    def test_vector_roundtrip_leaves_original(self):
        vector = self.store.to_vector()
        self.assertEqual(vector.size, self.store.size())
        changed = self.store.from_vector(np.zeros_like(vector))
        np.testing.assert_array_equal(changed["a.weight"], np.zeros((2, 3)))
        np.testing.assert_array_equal(self.store.to_vector(), vector)
        with self.assertRaises(ConfigurationError):
            self.store.from_vector(np.zeros(vector.size + 1))

    def test_load_tensors_checks_names_and_shapes(self):
        tensors = self.store.tensors("p.")
        self.assertIn("p.bn.running_mean", tensors)
        other = self.store.copy()
        other.load_tensors(tensors, "p.")
        tensors.pop("p.a.bias")
        with self.assertRaises(ConfigurationError):
            other.load_tensors(tensors, "p.")
        tensors["p.a.bias"] = np.zeros(5)
        with self.assertRaises(ConfigurationError):
            other.load_tensors(tensors, "p.")

    def test_duplicate_layer_names_rejected(self):
        with self.assertRaises(ConfigurationError):
            ParamStore.initialize([[LayerSpec.fc("x", 1, 1), LayerSpec.fc("x", 1, 1)]], np.random.default_rng(0))


class TestAdam(unittest.TestCase):
    """Test the Adam update."""

    def setUp(self):
        self.store = ParamStore({"w": np.array([1.0, -1.0, 0.5])})

    def test_first_step_moves_by_learning_rate(self):
        state = AdamState()
        adam_step(self.store, {"w": np.array([2.0, -3.0, 1e-3])}, state, 0.01)
        np.testing.assert_allclose(self.store["w"], [0.99, -0.99, 0.49], atol=1e-6)
        self.assertEqual(state.step, 1)

    def test_late_parameter_gets_its_own_bias_correction(self):
        store = ParamStore({"w": np.array([1.0]), "u": np.array([0.0, 0.0])})
        state = AdamState()
        adam_step(store, {"w": np.array([1.0])}, state, 0.01)
        adam_step(store, {"w": np.array([1.0]), "u": np.array([5.0, -0.2])}, state, 0.01)
        # a first update moves each coordinate by the learning rate
        np.testing.assert_allclose(store["u"], [-0.01, 0.01], atol=1e-6)
        self.assertEqual(state.counts, {"w": 2, "u": 1})
        self.assertEqual(state.step, 2)

    def test_non_finite_gradient_leaves_parameters(self):
        before = self.store["w"].copy()
        with self.assertRaises(NumericalError):
            adam_step(self.store, {"w": np.array([1.0, np.inf, 0.0])}, AdamState(), 0.01)
        np.testing.assert_array_equal(self.store["w"], before)

    def test_rejects_bad_inputs(self):
        with self.assertRaises(ConfigurationError):
            adam_step(self.store, {"w": np.ones(3)}, AdamState(), 0.0)
        with self.assertRaises(ConfigurationError):
            adam_step(self.store, {"v": np.ones(3)}, AdamState(), 0.01)
        with self.assertRaises(ConfigurationError):
            adam_step(self.store, {"w": np.ones(2)}, AdamState(), 0.01)

    def test_grad_norm(self):
        self.assertAlmostEqual(grad_norm({"a": np.array([3.0]), "b": np.array([[4.0]])}), 5.0)


if __name__ == "__main__":
    unittest.main()
