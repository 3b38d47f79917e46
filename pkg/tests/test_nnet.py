"""Network substrate: forward semantics, gradient checks, SGD, checkpoints."""
import numpy as np
import pytest

from gradcheck import (
    max_relative_error,
    min_relu_input_magnitude,
    numeric_param_gradients,
)
from freshrl.errors import NumericError, UsageError
from freshrl.nnet import (
    BatchNorm,
    Dense,
    Network,
    Relu,
    Sigmoid,
    Softmax,
    build_mlp,
    load_network,
    save_network_bytes,
)


def scalar_loss(net, batch, weights=None):
    """Weighted sum of outputs: a generic scalar objective for grad checks."""
    out = net.forward(batch, mode="train")
    if weights is None:
        weights = np.ones_like(out)
    return float((out * weights).sum()), weights


class TestForward:
    def test_softmax_uniform_on_equal_logits(self):
        net = Network([Softmax(4)])
        out = net.forward(np.zeros((1, 4)))
        np.testing.assert_allclose(out, 0.25)

    def test_softmax_rows_sum_to_one(self):
        rng = np.random.default_rng(0)
        net = Network([Softmax(6)])
        out = net.forward(rng.normal(size=(32, 6)) * 10)
        np.testing.assert_allclose(out.sum(axis=1), 1.0, atol=1e-9)

    def test_softmax_stable_for_huge_logits(self):
        net = Network([Softmax(3)])
        out = net.forward(np.array([[1e4, -1e4, 0.0]]))
        assert np.all(np.isfinite(out))
        assert out[0, 0] == pytest.approx(1.0)

    def test_zero_dense_maps_to_zero(self):
        net = Network([Dense(3, 2)])  # zero init without rng
        out = net.forward(np.ones((4, 3)))
        np.testing.assert_array_equal(out, 0.0)

    def test_batchnorm_equal_rows_gives_beta(self):
        bn = BatchNorm(3)
        bn.beta.value = np.array([1.0, -2.0, 0.5])
        net = Network([bn])
        out = net.forward(np.tile([[3.0, 7.0, -1.0]], (4, 1)), mode="train")
        np.testing.assert_allclose(out, np.tile(bn.beta.value, (4, 1)), atol=1e-12)

    def test_batchnorm_train_needs_two_rows(self):
        net = Network([BatchNorm(2)])
        with pytest.raises(UsageError):
            net.forward(np.ones((1, 2)), mode="train")

    def test_eval_forward_is_row_independent(self):
        rng = np.random.default_rng(3)
        net = build_mlp([4, 8, 2], rng, output="softmax", hidden_batchnorm=True)
        batch = rng.normal(size=(5, 4))
        whole = net.forward(batch)
        rows = np.vstack([net.forward(batch[i:i + 1]) for i in range(5)])
        # rows may differ by BLAS summation order, never by batch coupling
        np.testing.assert_allclose(whole, rows, rtol=1e-12, atol=1e-15)

    def test_dim_mismatch_rejected(self):
        net = build_mlp([4, 2], np.random.default_rng(0))
        with pytest.raises(UsageError):
            net.forward(np.ones((1, 3)))

    def test_nonfinite_input_rejected(self):
        net = build_mlp([2, 2], np.random.default_rng(0))
        with pytest.raises(NumericError):
            net.forward(np.array([[1.0, np.nan]]))

    def test_sigmoid_in_open_interval(self):
        net = Network([Sigmoid(2)])
        out = net.forward(np.array([[-40.0, 40.0]]))
        assert 0.0 < out[0, 0] and out[0, 1] < 1.0 or out[0, 0] == pytest.approx(0, abs=1e-17)
        assert np.all(np.isfinite(out))

    def test_non_terminal_softmax_rejected(self):
        with pytest.raises(UsageError):
            Network([Softmax(3), Relu(3)])


class TestBackward:
    def test_linear_case_by_hand(self):
        """y = w.x with loss = y gives dL/dw = x."""
        net = Network([Dense(1, 1)])
        net.layers[0].weight.value[...] = 2.0
        net.forward(np.array([[3.0]]), mode="train")
        net.backward(np.array([[1.0]]))
        assert net.layers[0].weight.grad[0, 0] == pytest.approx(3.0)

    def test_zero_upstream_zero_grads(self):
        rng = np.random.default_rng(1)
        net = build_mlp([3, 5, 2], rng, output="softmax")
        net.forward(rng.normal(size=(4, 3)), mode="train")
        net.backward(np.zeros((4, 2)))
        for p in net.params():
            np.testing.assert_array_equal(p.grad, 0.0)

    def test_backward_without_forward_rejected(self):
        net = build_mlp([2, 2], np.random.default_rng(0))
        with pytest.raises(UsageError):
            net.backward(np.ones((1, 2)))

    @pytest.mark.parametrize("output,batchnorm,seed", [
        (None, False, 11), (None, True, 15), ("softmax", False, 12),
        ("softmax", True, 13), ("sigmoid", True, 14),
    ])
    def test_gradients_match_finite_differences(self, output, batchnorm, seed):
        rng = np.random.default_rng(seed)
        net = build_mlp([3, 6, 4, 2], rng, output=output, hidden_batchnorm=batchnorm)
        batch = rng.normal(size=(5, 3))
        weights = rng.normal(size=(5, 2))
        assert min_relu_input_magnitude(net, batch) > 1e-4  # kink-safe config

        _, w = scalar_loss(net, batch, weights)
        net.backward(w)
        analytic = [p.grad.copy() for p in net.params()]
        net.zero_grads()

        numeric = numeric_param_gradients(net, lambda: scalar_loss(net, batch, weights)[0])
        assert max_relative_error(analytic, numeric) <= 1e-4

    def test_each_layer_kind_in_isolation(self):
        rng = np.random.default_rng(9)
        cases = [
            Network([Dense(3, 2, rng)]),
            Network([Dense(3, 3, rng), Relu(3)]),
            Network([Dense(3, 3, rng), BatchNorm(3)]),
            Network([Dense(3, 3, rng), Softmax(3)]),
            Network([Dense(3, 3, rng), Sigmoid(3)]),
        ]
        for net in cases:
            batch = rng.normal(size=(4, 3))
            weights = rng.normal(size=(4, net.output_dim))
            _, w = scalar_loss(net, batch, weights)
            net.backward(w)
            analytic = [p.grad.copy() for p in net.params()]
            net.zero_grads()
            numeric = numeric_param_gradients(net, lambda: scalar_loss(net, batch, weights)[0])
            assert max_relative_error(analytic, numeric) <= 1e-4


class TestSgd:
    def test_basic_update(self):
        net = Network([Dense(1, 1)])
        net.layers[0].weight.value[...] = 1.0
        net.layers[0].weight.grad[...] = 0.5
        net._trained_forward = True
        net.sgd_step(0.1)
        assert net.layers[0].weight.value[0, 0] == pytest.approx(0.95)
        assert net.layers[0].weight.grad[0, 0] == 0.0

    def test_zero_learning_rate_is_identity(self):
        rng = np.random.default_rng(2)
        net = build_mlp([3, 4, 2], rng)
        before = [p.value.copy() for p in net.params()]
        net.forward(rng.normal(size=(2, 3)), mode="train")
        net.backward(np.ones((2, 2)))
        net.sgd_step(0.0)
        for b, p in zip(before, net.params()):
            np.testing.assert_array_equal(b, p.value)

    def test_nonfinite_grad_names_layer(self):
        net = Network([Dense(2, 2), Relu(2), Dense(2, 1)])
        net.layers[2].weight.grad[0, 0] = np.inf
        with pytest.raises(NumericError, match="layer 2 \\(dense\\)"):
            net.sgd_step(0.1)

    def test_training_is_deterministic(self):
        """Identical nets, batches, and lr yield bitwise-identical weights."""
        def train_one(seed):
            rng = np.random.default_rng(seed)
            net = build_mlp([3, 8, 2], rng, output="softmax", hidden_batchnorm=True)
            data_rng = np.random.default_rng(99)
            for _ in range(10):
                batch = data_rng.normal(size=(6, 3))
                out = net.forward(batch, mode="train")
                net.backward(np.ones_like(out) / out.size)
                net.sgd_step(1e-2)
            return save_network_bytes(net)

        assert train_one(5) == train_one(5)


class TestCheckpoint:
    def test_roundtrip_bit_exact(self):
        rng = np.random.default_rng(17)
        net = build_mlp([4, 16, 8, 3], rng, output="softmax", hidden_batchnorm=True)
        net.forward(rng.normal(size=(8, 4)), mode="train")  # move running stats
        blob = save_network_bytes(net)
        restored = load_network(blob)
        assert save_network_bytes(restored) == blob
        batch = rng.normal(size=(5, 4))
        np.testing.assert_array_equal(net.forward(batch), restored.forward(batch))

    def test_magic_checked(self):
        with pytest.raises(UsageError):
            load_network(b"NOTMAGIC" + b"\x00" * 16)

    def test_copy_is_independent(self):
        rng = np.random.default_rng(4)
        net = build_mlp([2, 4, 2], rng)
        dup = net.copy()
        net.layers[0].weight.value[...] = 0.0
        assert not np.array_equal(dup.layers[0].weight.value,
                                  net.layers[0].weight.value)
