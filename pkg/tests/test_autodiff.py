import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from tiae.autodiff import (
    DegenerateDescriptorError,
    NonFiniteValueError,
    NonScalarRootError,
    ShapeMismatchError,
    Var,
    abs_,
    add,
    backward,
    concat0,
    div,
    l1_norm,
    l2_norm,
    matmul,
    mul,
    reshape,
    scale,
    sq_l2,
    sub,
    sum_,
    tanh,
    transpose,
)
from tiae.gradcheck import central_difference, max_relative_error
from tiae.rng import SplitMix64


def rand(seed, *shape, lo=-1.0, hi=1.0):
    rng = SplitMix64(seed)
    return rng.uniform_array(lo, hi, int(np.prod(shape))).reshape(shape)


class TestElementwise:
    def test_add(self):
        assert np.array_equal(add(Var([1.0, 2.0]), Var([3.0, 4.0])).value,
                              [4.0, 6.0])

    def test_scale_zero(self):
        assert np.array_equal(scale(Var([1.0, 2.0]), 0.0).value, [0.0, 0.0])

    def test_grad_of_square(self):
        x = Var([3.0])
        grads = backward(sum_(mul(x, x)))
        assert np.array_equal(grads[x], [6.0])

    def test_shape_mismatch_raises(self):
        with pytest.raises(ShapeMismatchError):
            add(Var([1.0, 2.0]), Var([1.0, 2.0, 3.0]))

    def test_scalar_broadcast(self):
        y = add(Var([1.0, 2.0]), Var(1.5))
        assert np.array_equal(y.value, [2.5, 3.5])
        s = Var(2.0)
        grads = backward(sum_(mul(Var([1.0, 2.0, 3.0]), s)))
        assert grads[s] == pytest.approx(6.0)

    def test_div_gradient(self):
        a, b = Var([1.0, -2.0]), Var([2.0, 4.0])
        grads = backward(sum_(div(a, b)))
        assert np.allclose(grads[a], [0.5, 0.25])
        assert np.allclose(grads[b], [-0.25, 0.125])

    def test_nonfinite_surfaces_at_op(self):
        with pytest.raises(NonFiniteValueError, match="div"):
            div(Var([1.0]), Var([0.0]))

    def test_leaf_rejects_nan(self):
        with pytest.raises(NonFiniteValueError):
            Var([np.nan])


class TestMatmul:
    def test_identity(self):
        m = rand(1, 2, 2)
        assert np.allclose(matmul(Var(np.eye(2)), Var(m)).value, m)

    def test_by_definition(self):
        out = matmul(Var([[1.0, 2.0]]), Var([[3.0], [4.0]]))
        assert np.array_equal(out.value, [[11.0]])

    def test_inner_dim_mismatch(self):
        with pytest.raises(ShapeMismatchError):
            matmul(Var(np.zeros((2, 3))), Var(np.zeros((2, 3))))

    def test_gradient_vs_central_differences(self):
        a0, b0 = rand(2, 4, 3), rand(3, 3, 2)
        a, b = Var(a0), Var(b0)
        grads = backward(sq_l2(matmul(a, b)))

        fd_a = central_difference(
            lambda m: float(sq_l2(matmul(Var(m), Var(b0))).value), a0)
        fd_b = central_difference(
            lambda m: float(sq_l2(matmul(Var(a0), Var(m))).value), b0)
        assert max_relative_error(grads[a], fd_a) < 1e-6
        assert max_relative_error(grads[b], fd_b) < 1e-6


class TestNorms:
    def test_sq_l2(self):
        assert float(sq_l2(Var([3.0, 4.0])).value) == 25.0
        assert float(sq_l2(Var(np.zeros(5))).value) == 0.0
        grads = backward(sq_l2(Var([1.0, -2.0])))
        x = Var([1.0, -2.0])
        grads = backward(sq_l2(x))
        assert np.array_equal(grads[x], [2.0, -4.0])

    def test_l1(self):
        assert float(l1_norm(Var([1.0, -2.0, 3.0])).value) == 6.0

    def test_l2(self):
        assert float(l2_norm(Var([3.0, 4.0])).value) == 5.0

    def test_l2_degenerate_gradient(self):
        x = Var(np.zeros(4))
        with pytest.raises(DegenerateDescriptorError):
            backward(l2_norm(x))

    def test_sign_zero_is_zero(self):
        x = Var([0.0, -1.0, 2.0])
        grads = backward(l1_norm(x))
        assert np.array_equal(grads[x], [0.0, -1.0, 1.0])

    def test_ratio_squared_gradient_vs_central_differences(self):
        x0 = rand(5, 10, lo=0.2, hi=1.0)  # away from |x|=0 kinks

        def build(arr):
            v = Var(arr)
            r = div(l1_norm(v), l2_norm(v))
            return mul(r, r), v

        node, x = build(x0)
        grads = backward(node)
        fd = central_difference(lambda a: float(build(a)[0].value), x0)
        assert max_relative_error(grads[x], fd) < 1e-5


class TestBackward:
    def test_sq_l2_of_weights(self):
        w = Var([1.0, 1.0])
        assert np.array_equal(backward(sq_l2(w))[w], [2.0, 2.0])

    def test_unreached_leaf_reads_zero(self):
        x, y = Var([1.0, 2.0]), Var([3.0])
        grads = backward(sq_l2(x))
        assert np.array_equal(grads[y], [0.0])
        assert y not in grads

    def test_non_scalar_root(self):
        with pytest.raises(NonScalarRootError):
            backward(Var([1.0, 2.0]))

    def test_two_layer_model_vs_central_differences(self, toy_models):
        # Full invariant-style composite through conv/pool/dense layers is
        # exercised in test_losses; here a dense+tanh chain.
        from tiae.layers import Dense, Sequential, Tanh
        rng = SplitMix64(3)
        model = Sequential([Dense(4, 5, rng), Tanh(), Dense(5, 2, rng)])
        x = rand(9, 3, 4)

        def loss():
            return sq_l2(model(Var(x)))

        grads = backward(loss())
        from tiae.gradcheck import fd_gradient_wrt_params
        ad = np.concatenate([grads[p].ravel() for p in model.param_vars()])
        fd = fd_gradient_wrt_params(lambda: float(loss().value),
                                    model.param_vars())
        assert max_relative_error(ad, fd) < 1e-4

    def test_repeated_backward_identical(self):
        x = Var(rand(4, 6))
        w = Var(rand(5, 6))
        root = sq_l2(mul(tanh(w), x))
        g1 = backward(root)[w].copy()
        g2 = backward(root)[w].copy()
        assert np.array_equal(g1, g2)

    def test_shared_subexpression_accumulates(self):
        x = Var([2.0])
        y = mul(x, x)
        root = sum_(add(y, y))
        assert np.array_equal(backward(root)[x], [8.0])

    @given(st.floats(-3, 3), st.floats(-3, 3))
    def test_linearity(self, a, b):
        x0 = rand(11, 5)
        x = Var(x0)
        f = sq_l2(x)
        g = l1_norm(x)
        combined = add(scale(sq_l2(x), a), scale(l1_norm(x), b))
        gc = backward(combined)[x]
        gf = backward(f)[x]
        gg = backward(g)[x]
        assert np.allclose(gc, a * gf + b * gg, rtol=1e-12, atol=1e-12)


class TestStructuralOps:
    def test_reshape_round_trip_gradient(self):
        x = Var(rand(13, 2, 6))
        grads = backward(sq_l2(reshape(x, (3, 4))))
        assert grads[x].shape == (2, 6)
        assert np.allclose(grads[x], 2 * x.value)

    def test_transpose(self):
        x = Var(rand(14, 2, 3))
        y = transpose(x)
        assert y.value.shape == (3, 2)
        assert backward(sq_l2(y))[x].shape == (2, 3)

    def test_concat_splits_gradient(self):
        a, b = Var(rand(15, 2, 3)), Var(rand(16, 4, 3))
        grads = backward(sq_l2(concat0([a, b])))
        assert np.allclose(grads[a], 2 * a.value)
        assert np.allclose(grads[b], 2 * b.value)

    def test_sum_axis(self):
        x = Var(rand(17, 3, 4))
        y = sum_(x, axis=1)
        assert y.value.shape == (3,)
        grads = backward(sum_(y))
        assert np.array_equal(grads[x], np.ones((3, 4)))

    def test_abs_tanh_values(self):
        x = Var([-1.5, 0.0, 2.0])
        assert np.array_equal(abs_(x).value, [1.5, 0.0, 2.0])
        assert float(tanh(Var(0.0)).value) == 0.0
        g = backward(tanh(Var(0.0)))
        # gradient of tanh at 0 is 1
        t = Var(0.0)
        assert backward(tanh(t))[t] == pytest.approx(1.0)

    def test_sub_broadcast_unbroadcast(self):
        a = Var(rand(18, 1, 3, 4))
        b = Var(rand(19, 5, 3, 4))
        grads = backward(sq_l2(sub(a, b)))
        assert grads[a].shape == (1, 3, 4)
        assert grads[b].shape == (5, 3, 4)
        fd = central_difference(
            lambda m: float(sq_l2(sub(Var(m), Var(b.value))).value), a.value)
        assert max_relative_error(grads[a], fd) < 1e-6
