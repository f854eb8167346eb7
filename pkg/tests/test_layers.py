import numpy as np
import pytest

from handcnn import layers, tensor
from handcnn.errors import ConfigError, DataError, DimensionError

from oracles import central_diff, conv2d_ref, lrn_ref, maxpool_ref


def rel_err(a, n):
    return np.abs(a - n) / np.maximum(np.maximum(np.abs(a), np.abs(n)), 1e-8)


class TestConv2d:
    def test_scalar_affine(self):
        x = np.full((1, 1, 1, 1), 3.0)
        p = layers.ConvParams(kernels=np.full((1, 1, 1, 1), 2.0), bias=np.array([1.0]))
        out, _ = layers.conv2d_forward(x, p)
        assert out.reshape(()) == 7.0

    def test_identity_kernel_2x2(self):
        x = np.array([[1.0, 2.0], [3.0, 4.0]]).reshape(1, 2, 2, 1)
        kernels = np.array([[1.0, 0.0], [0.0, 1.0]]).reshape(2, 2, 1, 1)
        p = layers.ConvParams(kernels=kernels, bias=np.zeros(1))
        out, _ = layers.conv2d_forward(x, p)
        expected = conv2d_ref(x, kernels, np.zeros(1))
        np.testing.assert_allclose(out, expected)
        assert out.reshape(()) == 5.0   # 1*1 + 4*1

    def test_matches_nested_loop_oracle(self):
        rng = np.random.default_rng(2)
        x = rng.random((2, 8, 8, 3))
        kernels = rng.random((3, 3, 3, 5)) - 0.5
        bias = rng.random(5)
        p = layers.ConvParams(kernels=kernels, bias=bias, stride=1, pad=1)
        out, _ = layers.conv2d_forward(x, p)
        np.testing.assert_allclose(out, conv2d_ref(x, kernels, bias, 1, 1), atol=1e-6)

    def test_channel_mismatch(self):
        p = layers.ConvParams(kernels=np.zeros((3, 3, 2, 4)), bias=np.zeros(4))
        with pytest.raises(DimensionError):
            layers.conv2d_forward(np.zeros((1, 8, 8, 3)), p)

    def test_gradients_match_finite_differences(self):
        with tensor.precision("float64"):
            rng = np.random.default_rng(4)
            x = rng.random((1, 4, 4, 2))
            kernels = rng.random((3, 3, 2, 3)) - 0.5
            bias = rng.random(3)
            d_out = rng.random((1, 4, 4, 3))

            def loss_from(x_=x, k_=kernels, b_=bias):
                p = layers.ConvParams(kernels=k_, bias=b_, stride=1, pad=1)
                out, _ = layers.conv2d_forward(x_, p)
                return float((out * d_out).sum())

            p = layers.ConvParams(kernels=kernels, bias=bias, stride=1, pad=1)
            out, cache = layers.conv2d_forward(x, p)
            d_x, d_k, d_b = layers.conv2d_backward(d_out, cache)
            num_x = central_diff(lambda w: loss_from(x_=w), x)
            num_k = central_diff(lambda w: loss_from(k_=w), kernels)
            num_b = central_diff(lambda w: loss_from(b_=w), bias)
            assert rel_err(d_x, num_x).max() < 1e-4
            assert rel_err(d_k, num_k).max() < 1e-4
            assert rel_err(d_b, num_b).max() < 1e-4


class TestMaxpool:
    def test_constant_input_downsamples_to_constant(self):
        out, _ = layers.maxpool_forward(np.full((1, 4, 4, 2), 3.5), 2, 2)
        assert out.shape == (1, 2, 2, 2)
        assert (out == 3.5).all()

    def test_hand_enumerated_window_and_routing(self):
        x = np.array([[1.0, 2.0], [3.0, 4.0]]).reshape(1, 2, 2, 1)
        out, cache = layers.maxpool_forward(x, 2, 2)
        assert out.reshape(()) == 4.0
        d_x = layers.maxpool_backward(np.ones((1, 1, 1, 1)), cache)
        np.testing.assert_array_equal(d_x.reshape(2, 2), [[0, 0], [0, 1]])

    def test_matches_brute_force_scan(self):
        rng = np.random.default_rng(6)
        x = rng.random((2, 6, 6, 3))
        out, _ = layers.maxpool_forward(x, 3, 2)
        np.testing.assert_allclose(out, maxpool_ref(x, 3, 2), atol=1e-6)

    def test_ceiling_mode_clipped_windows(self):
        rng = np.random.default_rng(8)
        x = rng.random((1, 5, 5, 1))
        out, _ = layers.maxpool_forward(x, 3, 2)   # 5 -> ceil(2/2)+1 = 2 positions? no: ceil((5-3)/2)+1 = 2
        np.testing.assert_allclose(out, maxpool_ref(x, 3, 2))

    def test_tie_routes_to_lowest_index(self):
        x = np.array([[2.0, 2.0], [2.0, 2.0]]).reshape(1, 2, 2, 1)
        _, cache = layers.maxpool_forward(x, 2, 2)
        d_x = layers.maxpool_backward(np.ones((1, 1, 1, 1)), cache)
        np.testing.assert_array_equal(d_x.reshape(2, 2), [[1, 0], [0, 0]])

    def test_window_too_large(self):
        with pytest.raises(DimensionError):
            layers.maxpool_forward(np.zeros((1, 2, 2, 1)), 3, 1)

    def test_gradient_sum_preserved(self):
        rng = np.random.default_rng(9)
        x = rng.random((2, 6, 6, 2))
        d_out = rng.random((2, 3, 3, 2))
        _, cache = layers.maxpool_forward(x, 2, 2)
        d_x = layers.maxpool_backward(d_out, cache)
        assert d_x.sum() == pytest.approx(d_out.sum(), rel=1e-6)

    def test_commutes_with_relu(self):
        rng = np.random.default_rng(10)
        x = rng.standard_normal((2, 6, 6, 3))
        pooled_then_relu, _ = layers.relu_forward(layers.maxpool_forward(x, 3, 2)[0])
        relu_then_pooled, _ = layers.maxpool_forward(layers.relu_forward(x)[0], 3, 2)
        np.testing.assert_array_equal(pooled_then_relu, relu_then_pooled)


class TestRelu:
    def test_zero_boundary(self):
        out, cache = layers.relu_forward(np.array([0.0]))
        assert out[0] == 0.0
        assert layers.relu_backward(np.array([1.0]), cache)[0] == 0.0   # x <= 0 branch

    def test_elementwise(self):
        out, _ = layers.relu_forward(np.array([-1.0, 2.0]))
        np.testing.assert_array_equal(out, [0.0, 2.0])

    def test_backward_matches_finite_differences_off_kink(self):
        with tensor.precision("float64"):
            rng = np.random.default_rng(12)
            x = rng.standard_normal(40)
            x = x[np.abs(x) > 1e-3]
            d_out = rng.random(x.size)
            _, cache = layers.relu_forward(x)
            analytic = layers.relu_backward(d_out, cache)
            numeric = central_diff(lambda w: float((np.maximum(w, 0) * d_out).sum()), x, eps=1e-6)
            assert rel_err(analytic, numeric).max() < 1e-6


class TestLrn:
    def test_alpha_zero_k_one_is_identity(self):
        x = np.random.default_rng(1).random((1, 2, 2, 4))
        out, _ = layers.lrn_forward(x, layers.LrnParams(depth=5, k=1.0, alpha=0.0, beta=0.75))
        np.testing.assert_allclose(out, x)

    def test_single_channel_direct_substitution(self):
        x = np.ones((1, 1, 1, 1))
        out, _ = layers.lrn_forward(x, layers.LrnParams(depth=1, k=1.0, alpha=1.0, beta=1.0))
        assert out.reshape(()) == pytest.approx(0.5)

    def test_matches_per_element_formula(self):
        rng = np.random.default_rng(13)
        x = rng.standard_normal((2, 3, 3, 8))
        p = layers.LrnParams(depth=5, k=2.0, alpha=1e-2, beta=0.75)
        out, _ = layers.lrn_forward(x, p)
        np.testing.assert_allclose(out, lrn_ref(x, 5, 2.0, 1e-2, 0.75), atol=1e-6)

    def test_backward_matches_finite_differences(self):
        with tensor.precision("float64"):
            rng = np.random.default_rng(14)
            x = rng.standard_normal((1, 2, 2, 6))
            d_out = rng.random((1, 2, 2, 6))
            p = layers.LrnParams(depth=5, k=2.0, alpha=0.1, beta=0.75)
            _, cache = layers.lrn_forward(x, p)
            analytic = layers.lrn_backward(d_out, cache)

            def loss(w):
                out, _ = layers.lrn_forward(w.reshape(x.shape), p)
                return float((out * d_out).sum())

            numeric = central_diff(loss, x.ravel()).reshape(x.shape)
            assert rel_err(analytic, numeric).max() < 1e-4


class TestFullyConnected:
    def test_identity_weights(self):
        x = np.random.default_rng(2).random((3, 4))
        p = layers.FcParams(weights=np.eye(4), bias=np.zeros(4))
        out, _ = layers.fc_forward(x, p)
        np.testing.assert_allclose(out, x)

    def test_small_example(self):
        p = layers.FcParams(weights=np.array([[1.0], [1.0]]), bias=np.array([0.5]))
        out, _ = layers.fc_forward(np.array([[1.0, 2.0]]), p)
        assert out.reshape(()) == 3.5

    def test_dimension_mismatch(self):
        p = layers.FcParams(weights=np.zeros((4, 2)), bias=np.zeros(2))
        with pytest.raises(DimensionError):
            layers.fc_forward(np.zeros((1, 3)), p)

    def test_gradients_match_finite_differences(self):
        with tensor.precision("float64"):
            rng = np.random.default_rng(15)
            x = rng.random((3, 4))
            weights = rng.random((4, 2))
            bias = rng.random(2)
            d_out = rng.random((3, 2))

            def loss(x_=x, w_=weights, b_=bias):
                out, _ = layers.fc_forward(x_, layers.FcParams(weights=w_, bias=b_))
                return float((out * d_out).sum())

            _, cache = layers.fc_forward(x, layers.FcParams(weights=weights, bias=bias))
            d_x, d_w, d_b = layers.fc_backward(d_out, cache)
            assert rel_err(d_x, central_diff(lambda w: loss(x_=w), x)).max() < 1e-4
            assert rel_err(d_w, central_diff(lambda w: loss(w_=w), weights)).max() < 1e-4
            assert rel_err(d_b, central_diff(lambda w: loss(b_=w), bias)).max() < 1e-4


class TestDropout:
    def test_inference_is_exact_identity(self):
        x = np.random.default_rng(3).random((4, 10)).astype(np.float32)
        out, cache = layers.dropout_forward(x, 0.4, training=False, rng=None)
        assert out is x
        assert cache is None

    def test_rate_zero_is_identity(self):
        x = np.ones((2, 5))
        out, _ = layers.dropout_forward(x, 0.0, training=True, rng=np.random.default_rng(0))
        np.testing.assert_array_equal(out, x)

    def test_inverted_scaling_preserves_mean(self):
        x = np.ones(100_000)
        out, _ = layers.dropout_forward(x, 0.4, training=True, rng=np.random.default_rng(42))
        assert 0.97 <= out.mean() <= 1.03

    def test_backward_uses_same_mask(self):
        x = np.ones((5, 5))
        out, cache = layers.dropout_forward(x, 0.5, training=True, rng=np.random.default_rng(1))
        d_x = layers.dropout_backward(np.ones_like(x), cache)
        np.testing.assert_array_equal(d_x, out)   # same scaled mask on ones

    def test_rate_one_is_config_error(self):
        with pytest.raises(ConfigError):
            layers.dropout_forward(np.ones(3), 1.0, training=True, rng=np.random.default_rng(0))


class TestSoftmaxCrossEntropy:
    def test_uniform_logits(self):
        probs, loss = layers.softmax_cross_entropy(
            np.array([[0.0, 0.0]]), np.array([[1.0, 0.0]]))
        np.testing.assert_allclose(probs, [[0.5, 0.5]])
        assert loss == pytest.approx(np.log(2), rel=1e-6)

    def test_closed_form_quarter_three_quarters(self):
        probs, _ = layers.softmax_cross_entropy(
            np.array([[0.0, np.log(3.0)]]), np.array([[0.0, 1.0]]))
        np.testing.assert_allclose(probs, [[0.25, 0.75]], rtol=1e-6)

    def test_rows_sum_to_one_and_probs_in_unit_interval(self):
        # logit gaps kept below ~16 so (0, 1) openness is representable in float
        rng = np.random.default_rng(16)
        logits = rng.standard_normal((20, 2)) * 5
        onehot = np.zeros((20, 2))
        onehot[np.arange(20), rng.integers(0, 2, 20)] = 1.0
        probs, loss = layers.softmax_cross_entropy(logits, onehot)
        np.testing.assert_allclose(probs.sum(axis=1), 1.0, atol=1e-6)
        assert (probs > 0).all() and (probs < 1).all()
        assert loss >= 0.0

    def test_saturated_correct_prediction_has_tiny_loss(self):
        _, loss = layers.softmax_cross_entropy(
            np.array([[25.0, 0.0]]), np.array([[1.0, 0.0]]))
        assert loss < 1e-6

    def test_large_logits_stable(self):
        probs, _ = layers.softmax_cross_entropy(
            np.array([[1000.0, 990.0]]), np.array([[1.0, 0.0]]))
        assert np.isfinite(probs).all()

    def test_malformed_onehot(self):
        with pytest.raises(DataError):
            layers.softmax_cross_entropy(np.zeros((1, 2)), np.array([[1.0, 1.0]]))
        with pytest.raises(DataError):
            layers.softmax_cross_entropy(np.zeros((1, 2)), np.array([[0.5, 0.5]]))

    def test_gradient_matches_finite_differences(self):
        with tensor.precision("float64"):
            rng = np.random.default_rng(17)
            logits = rng.standard_normal((4, 2))
            onehot = np.zeros((4, 2))
            onehot[np.arange(4), rng.integers(0, 2, 4)] = 1.0
            probs, _ = layers.softmax_cross_entropy(logits, onehot)
            analytic = layers.softmax_cross_entropy_backward(probs, onehot)

            def loss(w):
                return layers.softmax_cross_entropy(w.reshape(4, 2), onehot)[1]

            numeric = central_diff(loss, logits.ravel()).reshape(4, 2)
            assert np.abs(analytic - numeric).max() < 1e-5
