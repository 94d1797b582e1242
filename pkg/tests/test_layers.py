import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from tiae.autodiff import ShapeMismatchError, Var, backward, sq_l2
from tiae.gradcheck import (
    fd_gradient_wrt_params,
    max_relative_error,
)
from tiae.layers import (
    Conv2d,
    Dense,
    Flatten,
    MaxPool2d,
    Reshape,
    Sequential,
    Tanh,
    load_params,
    save_params,
)
from tiae.rng import SplitMix64


def loop_conv2d(x, kernel, bias, stride=1, pad=0):
    """Nested-loop cross-correlation oracle, O(everything)."""
    b, c_in, h, w = x.shape
    c_out, _, kh, kw = kernel.shape
    if pad:
        x = np.pad(x, ((0, 0), (0, 0), (pad, pad), (pad, pad)))
    oh = (h + 2 * pad - kh) // stride + 1
    ow = (w + 2 * pad - kw) // stride + 1
    out = np.zeros((b, c_out, oh, ow))
    for n in range(b):
        for oc in range(c_out):
            for i in range(oh):
                for j in range(ow):
                    acc = 0.0
                    for ic in range(c_in):
                        for ki in range(kh):
                            for kj in range(kw):
                                acc += (x[n, ic, i * stride + ki,
                                          j * stride + kj]
                                        * kernel[oc, ic, ki, kj])
                    out[n, oc, i, j] = acc + bias[oc]
    return out


def rand(seed, *shape, lo=-1.0, hi=1.0):
    rng = SplitMix64(seed)
    return rng.uniform_array(lo, hi, int(np.prod(shape))).reshape(shape)


class TestConv2d:
    def test_one_by_one_identity(self):
        rng = SplitMix64(0)
        conv = Conv2d(1, 1, 1, rng)
        conv.kernel.value = np.ones((1, 1, 1, 1))
        conv.bias.value = np.zeros(1)
        x = rand(1, 2, 1, 5, 5)
        assert np.array_equal(conv(Var(x)).value, x)

    def test_zero_input_broadcasts_bias(self):
        rng = SplitMix64(1)
        conv = Conv2d(1, 3, 3, rng)
        conv.bias.value = np.array([0.5, -1.0, 2.0])
        out = conv(Var(np.zeros((2, 1, 6, 6)))).value
        assert out.shape == (2, 3, 4, 4)
        for c, b in enumerate(conv.bias.value):
            assert np.all(out[:, c] == b)

    def test_matches_loop_oracle_random(self):
        rng = SplitMix64(2)
        conv = Conv2d(1, 1, 3, rng)
        x = rand(3, 1, 1, 6, 6)
        got = conv(Var(x)).value
        want = loop_conv2d(x, conv.kernel.value, conv.bias.value)
        assert np.allclose(got, want, rtol=0, atol=1e-14)

    @pytest.mark.parametrize("stride,pad", [(1, 0), (1, 2), (2, 0), (2, 1)])
    def test_matches_loop_oracle_strided_padded(self, stride, pad):
        rng = SplitMix64(3)
        conv = Conv2d(2, 3, 3, rng, stride=stride, padding=pad)
        x = rand(4, 2, 2, 9, 9)
        got = conv(Var(x)).value
        want = loop_conv2d(x, conv.kernel.value, conv.bias.value,
                           stride, pad)
        assert np.allclose(got, want, rtol=1e-12, atol=1e-13)

    def test_bit_for_bit_on_integer_inputs(self):
        rng = SplitMix64(4)
        conv = Conv2d(2, 2, 3, rng)
        ints = SplitMix64(5)
        x = np.array(ints.randints(7, 2 * 2 * 8 * 8), dtype=np.float64)
        x = (x - 3.0).reshape(2, 2, 8, 8)
        k = np.array(ints.randints(5, 2 * 2 * 3 * 3), dtype=np.float64)
        conv.kernel.value = (k - 2.0).reshape(2, 2, 3, 3)
        conv.bias.value = np.array([1.0, -2.0])
        got = conv(Var(x)).value
        want = loop_conv2d(x, conv.kernel.value, conv.bias.value)
        assert np.array_equal(got, want)  # integer sums are exact

    def test_channel_mismatch(self):
        conv = Conv2d(3, 1, 3, SplitMix64(0))
        with pytest.raises(ShapeMismatchError):
            conv(Var(np.zeros((1, 2, 8, 8))))

    def test_output_extent_too_small(self):
        conv = Conv2d(1, 1, 9, SplitMix64(0))
        with pytest.raises(ShapeMismatchError):
            conv(Var(np.zeros((1, 1, 4, 4))))

    @pytest.mark.parametrize("stride,pad", [(1, 0), (2, 1)])
    def test_gradients_vs_central_differences(self, stride, pad):
        rng = SplitMix64(6)
        conv = Conv2d(2, 2, 3, rng, stride=stride, padding=pad)
        x0 = rand(7, 2, 2, 6, 6)

        def loss():
            return sq_l2(conv(Var(x0)))

        grads = backward(loss())
        ad = np.concatenate([grads[v].ravel()
                             for _, v in conv.params()])
        fd = fd_gradient_wrt_params(lambda: float(loss().value),
                                    [v for _, v in conv.params()])
        assert max_relative_error(ad, fd) < 1e-5

        # and w.r.t. the input
        from tiae.gradcheck import central_difference
        x_var = Var(x0)
        g_in = backward(sq_l2(conv(x_var)))[x_var]
        fd_in = central_difference(
            lambda m: float(sq_l2(conv(Var(m))).value), x0)
        assert max_relative_error(g_in, fd_in) < 1e-5


class TestMaxPool:
    def test_constant_input(self):
        pool = MaxPool2d(2, 2)
        out = pool(Var(np.full((1, 1, 4, 4), 0.7))).value
        assert np.all(out == 0.7)
        assert out.shape == (1, 1, 2, 2)

    def test_two_by_two_example(self):
        pool = MaxPool2d(2, 2)
        out = pool(Var(np.array([[[[1., 2.], [3., 4.]]]]))).value
        assert np.array_equal(out, [[[[4.0]]]])

    def test_gradient_routes_one_per_window(self):
        pool = MaxPool2d(2, 2)
        x0 = rand(8, 1, 1, 4, 4)
        x = Var(x0)
        grads = backward(sq_l2(pool(x)))
        g = grads[x][0, 0]
        for i in range(2):
            for j in range(2):
                window = g[2 * i:2 * i + 2, 2 * j:2 * j + 2]
                assert np.count_nonzero(window) == 1
                src = x0[0, 0, 2 * i:2 * i + 2, 2 * j:2 * j + 2]
                assert np.flatnonzero(window)[0] == np.argmax(src)

    def test_tie_routes_to_first_index(self):
        pool = MaxPool2d(2, 2)
        x = Var(np.ones((1, 1, 2, 2)))
        g = backward(sq_l2(pool(x)))[x]
        assert np.array_equal(g[0, 0], [[2.0, 0.0], [0.0, 0.0]])

    def test_window_too_large(self):
        with pytest.raises(ShapeMismatchError):
            MaxPool2d(5, 5)(Var(np.zeros((1, 1, 4, 4))))

    def test_overlapping_stride_gradient(self):
        pool = MaxPool2d(3, 1)
        x0 = rand(9, 2, 1, 5, 5)
        x = Var(x0)
        grads = backward(sq_l2(pool(x)))
        from tiae.gradcheck import central_difference
        fd = central_difference(
            lambda m: float(sq_l2(pool(Var(m))).value), x0)
        assert max_relative_error(grads[x], fd) < 1e-5


class TestDenseAndTanh:
    def test_identity_weights(self):
        rng = SplitMix64(10)
        layer = Dense(4, 4, rng)
        layer.weight.value = np.eye(4)
        layer.bias.value = np.zeros(4)
        x = rand(11, 3, 4)
        assert np.array_equal(layer(Var(x)).value, x)

    def test_width_mismatch(self):
        with pytest.raises(ShapeMismatchError):
            Dense(4, 2, SplitMix64(0))(Var(np.zeros((1, 5))))

    def test_dense_tanh_chain_gradient(self):
        rng = SplitMix64(12)
        model = Sequential([Dense(6, 5, rng), Tanh(), Dense(5, 3, rng),
                            Tanh()])
        x = rand(13, 4, 6)

        def loss():
            return sq_l2(model(Var(x)))

        grads = backward(loss())
        ad = np.concatenate([grads[p].ravel() for p in model.param_vars()])
        fd = fd_gradient_wrt_params(lambda: float(loss().value),
                                    model.param_vars())
        assert max_relative_error(ad, fd) < 1e-5

    @given(st.floats(-50, 50))
    def test_tanh_bounded(self, v):
        # float64 tanh rounds to exactly +-1.0 beyond |x| ~ 18.8; strict
        # interiority is only representable below that saturation point.
        out = float(Tanh()(Var(np.array([[v]]))).value[0, 0])
        assert -1.0 <= out <= 1.0
        if abs(v) < 18.0:
            assert -1.0 < out < 1.0

    def test_no_bias_option(self):
        layer = Dense(3, 2, SplitMix64(0), bias=False)
        assert len(layer.params()) == 1
        assert np.array_equal(layer(Var(np.zeros((1, 3)))).value,
                              np.zeros((1, 2)))


class TestSequentialParams:
    def build(self):
        rng = SplitMix64(20)
        return Sequential([Conv2d(1, 2, 3, rng), Tanh(), MaxPool2d(2, 2),
                           Flatten(), Dense(8, 4, rng), Reshape((2, 2))])

    def test_param_names_stable(self):
        names = [n for n, _ in self.build().params()]
        assert names == ["layer00.conv2d.kernel", "layer00.conv2d.bias",
                         "layer04.dense.weight", "layer04.dense.bias"]

    def test_flat_round_trip(self):
        model = self.build()
        flat = model.get_flat_params()
        model2 = self.build()
        model2.set_flat_params(flat)
        assert np.array_equal(model2.get_flat_params(), flat)
        with pytest.raises(ShapeMismatchError):
            model.set_flat_params(flat[:-1])

    def test_save_load_round_trip(self, tmp_path):
        model = self.build()
        path = tmp_path / "model.params"
        save_params(model, path)
        rng = SplitMix64(99)  # different init so the load must do the work
        other = Sequential([Conv2d(1, 2, 3, rng), Tanh(), MaxPool2d(2, 2),
                            Flatten(), Dense(8, 4, rng), Reshape((2, 2))])
        assert not np.array_equal(other.get_flat_params(),
                                  model.get_flat_params())
        load_params(other, path)
        assert np.array_equal(other.get_flat_params(),
                              model.get_flat_params())

    def test_save_is_byte_deterministic(self, tmp_path):
        model = self.build()
        save_params(model, tmp_path / "a.params")
        save_params(model, tmp_path / "b.params")
        assert (tmp_path / "a.params").read_bytes() == \
            (tmp_path / "b.params").read_bytes()

    def test_load_rejects_wrong_shape(self, tmp_path):
        model = self.build()
        save_params(model, tmp_path / "m.params")
        rng = SplitMix64(0)
        wrong = Sequential([Conv2d(1, 2, 3, rng), Tanh(), MaxPool2d(2, 2),
                            Flatten(), Dense(8, 6, rng), Reshape((2, 3))])
        with pytest.raises(ValueError):
            load_params(wrong, tmp_path / "m.params")

    def test_predict_chunked_matches(self):
        model = self.build()
        x = rand(21, 10, 1, 6, 6)
        assert np.allclose(model.predict(x), model.predict(x, chunk=3))
