"""Autodiff engine tests: op contracts plus finite-difference oracles."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from robust_asr import autodiff as ad
from robust_asr.autodiff import Parameter, Tensor
from robust_asr.exceptions import ShapeError
from robust_asr.layers import Conv1d, Linear, MultiHeadSelfAttention

GRAD_TOL = 1e-4


def rand_tensor(rng, shape, requires_grad=True):
    t = Tensor(rng.standard_normal(shape))
    t.requires_grad = requires_grad
    return t


class TestLinear:
    def test_identity(self):
        x = Tensor(np.arange(6.0).reshape(2, 3))
        y = ad.linear(x, Tensor(np.eye(3)), Tensor(np.zeros(3)))
        np.testing.assert_allclose(y.data, x.data)

    def test_zero_weight_gives_bias(self):
        x = Tensor(np.ones((4, 3)))
        y = ad.linear(x, Tensor(np.zeros((3, 2))), Tensor([5.0, -1.0]))
        np.testing.assert_allclose(y.data, np.tile([5.0, -1.0], (4, 1)))

    def test_hand_case(self):
        y = ad.linear(Tensor([[1.0, 2.0]]), Tensor([[3.0], [4.0]]))
        np.testing.assert_allclose(y.data, [[11.0]])

    def test_shape_mismatch(self):
        with pytest.raises(ShapeError):
            ad.linear(Tensor(np.ones((2, 3))), Tensor(np.ones((4, 2))))


class TestActivations:
    def test_gelu_zero(self):
        assert ad.gelu(Tensor(0.0)).item() == 0.0

    def test_gelu_asymptote(self):
        assert abs(ad.gelu(Tensor(10.0)).item() - 10.0) < 1e-6

    def test_silu_zero(self):
        assert ad.silu(Tensor(0.0)).item() == 0.0

    def test_silu_one(self):
        np.testing.assert_allclose(ad.silu(Tensor(1.0)).item(), 1.0 / (1.0 + np.exp(-1.0)))


class TestLayerNorm:
    def test_constant_vector_zeroed(self):
        y = ad.layer_norm(Tensor(np.full((2, 5), 3.7)), Tensor(np.ones(5)), Tensor(np.zeros(5)))
        np.testing.assert_allclose(y.data, 0.0, atol=1e-12)

    def test_unit_variance_preserved(self):
        y = ad.layer_norm(Tensor([1.0, -1.0]), Tensor(np.ones(2)), Tensor(np.zeros(2)))
        np.testing.assert_allclose(y.data, [1.0, -1.0], atol=1e-4)

    def test_zero_gamma_gives_beta(self):
        rng = np.random.default_rng(0)
        y = ad.layer_norm(
            Tensor(rng.standard_normal((3, 4))), Tensor(np.zeros(4)), Tensor(np.full(4, 2.5))
        )
        np.testing.assert_allclose(y.data, 2.5)


class TestSoftmax:
    def test_uniform(self):
        np.testing.assert_allclose(ad.softmax(Tensor([0.0, 0.0])).data, [0.5, 0.5])

    def test_no_overflow(self):
        out = ad.softmax(Tensor([1000.0, 0.0])).data
        np.testing.assert_allclose(out, [1.0, 0.0], atol=1e-300)
        assert np.all(np.isfinite(out))

    @given(st.integers(0, 2**32 - 1), st.floats(-50, 50))
    @settings(max_examples=30, deadline=None)
    def test_shift_invariance_and_simplex(self, seed, shift):
        rng = np.random.default_rng(seed)
        x = rng.standard_normal((3, 5))
        a = ad.softmax(Tensor(x)).data
        b = ad.softmax(Tensor(x + shift)).data
        np.testing.assert_allclose(a, b, atol=1e-12)
        assert np.all(a >= 0.0)
        np.testing.assert_allclose(a.sum(axis=-1), 1.0, atol=1e-9)


class TestConv1d:
    def test_identity_kernel(self):
        x = Tensor(np.arange(12.0).reshape(4, 3))
        k = Tensor(np.eye(3).reshape(3, 3, 1))
        np.testing.assert_allclose(ad.conv1d(x, k).data, x.data)

    def test_averaging_kernel(self):
        x = Tensor(np.array([[1.0], [3.0], [5.0], [7.0]]))
        k = Tensor(np.array([[[0.5, 0.5]]]))
        np.testing.assert_allclose(ad.conv1d(x, k, stride=2).data, [[2.0], [6.0]])

    def test_paper_stride_length_chain(self):
        # independent recomputation of the seven-layer length recursion
        kernels = [10, 3, 3, 3, 3, 2, 2]
        strides = [5, 2, 2, 2, 2, 2, 2]
        expect = []
        t = 16000
        for k, s in zip(kernels, strides):
            t = (t - k) // s + 1
            expect.append(t)
        assert expect == [3199, 1599, 799, 399, 199, 99, 49]

        t_len = 16000
        x = Tensor(np.zeros((t_len, 1)))
        for k, s, e in zip(kernels, strides, expect):
            x = ad.conv1d(x, Tensor(np.zeros((1, 1, k))), stride=s)
            assert x.shape == (e, 1)

    def test_too_short_raises(self):
        with pytest.raises(ShapeError):
            ad.conv1d(Tensor(np.zeros((2, 1))), Tensor(np.zeros((1, 1, 3))))

    def test_length_formula_exhaustive(self):
        for k in range(1, 7):
            for s in range(1, 5):
                for t in range(k, 65):
                    out = ad.conv1d(
                        Tensor(np.zeros((t, 2))), Tensor(np.zeros((3, 2, k))), stride=s
                    )
                    assert out.shape == ((t - k) // s + 1, 3)


class TestSinusoidalPE:
    def test_row_zero_alternates(self):
        pe = ad.sinusoidal_pe(4, 6)
        np.testing.assert_allclose(pe[0], [0.0, 1.0, 0.0, 1.0, 0.0, 1.0])

    def test_bounded(self):
        pe = ad.sinusoidal_pe(50, 16)
        assert np.all(pe >= -1.0) and np.all(pe <= 1.0)

    def test_position_one_dim_zero(self):
        np.testing.assert_allclose(ad.sinusoidal_pe(2, 8)[1, 0], np.sin(1.0))


class TestMultiHeadSelfAttention:
    def test_single_position_is_projected_value(self):
        rng = np.random.default_rng(3)
        mhsa = MultiHeadSelfAttention(8, 2, rng)
        x = Tensor(rng.standard_normal((1, 8)))
        out = mhsa(x)
        v = mhsa.v_proj(x)
        expect = mhsa.out_proj(v)
        np.testing.assert_allclose(out.data, expect.data, atol=1e-12)

    def test_self_only_mask_matches_single_position(self):
        rng = np.random.default_rng(4)
        mhsa = MultiHeadSelfAttention(8, 2, rng)
        x = Tensor(rng.standard_normal((5, 8)))
        out = mhsa(x, mask=np.eye(5, dtype=bool))
        for t in range(5):
            solo = mhsa(Tensor(x.data[t : t + 1]))
            np.testing.assert_allclose(out.data[t], solo.data[0], atol=1e-10)

    def test_indivisible_heads_rejected(self):
        rng = np.random.default_rng(5)
        mhsa = MultiHeadSelfAttention(8, 3, rng)
        with pytest.raises(ShapeError):
            mhsa(Tensor(np.zeros((2, 8))))


class TestDropout:
    def test_eval_mode_identity(self):
        x = Tensor(np.ones((3, 3)))
        assert ad.dropout(x, 0.5, train=False) is x

    def test_p_zero_identity(self):
        x = Tensor(np.ones((3, 3)))
        assert ad.dropout(x, 0.0, np.random.default_rng(0), train=True) is x

    def test_expectation_preserved(self):
        rng = np.random.default_rng(7)
        x = Tensor(np.full((10, 10), 2.0))
        total = np.zeros((10, 10))
        n = 10_000
        for _ in range(n):
            total += ad.dropout(x, 0.1, rng, train=True).data
        np.testing.assert_allclose(total / n, x.data, rtol=0.02)


class TestBackward:
    def test_linear_map_gradient(self):
        w = Parameter(np.ones((2, 3)), name="w")
        x = Tensor([[1.0, 2.0]])
        grads = ad.backward(ad.linear(x, w).sum())
        np.testing.assert_allclose(grads["w"].data, [[1.0, 1.0, 1.0], [2.0, 2.0, 2.0]])

    def test_unreached_parameter_absent(self):
        w = Parameter(np.ones((2, 2)), name="w")
        u = Parameter(np.ones(3), name="unused")
        grads = ad.backward((Tensor([[1.0, 1.0]]) @ w).sum())
        assert "w" in grads and "unused" not in grads

    def test_zero_path_gives_zero_gradient(self):
        u = Parameter(np.ones(3), name="u")
        loss = (u * 0.0).sum() + Tensor(1.0)
        grads = ad.backward(loss)
        np.testing.assert_allclose(grads["u"].data, 0.0)

    def test_non_scalar_loss_rejected(self):
        w = Parameter(np.ones(3), name="w")
        with pytest.raises(ShapeError):
            ad.backward(w * 2.0)

    def test_reused_node_accumulates(self):
        x = Parameter(np.array([3.0]), name="x")
        grads = ad.backward((x * x).sum())  # d/dx x^2 = 2x
        np.testing.assert_allclose(grads["x"].data, [6.0])

    def test_determinism(self):
        def run():
            rng = np.random.default_rng(11)
            lin = Linear(4, 3, rng)
            lin.bind_names("lin")
            x = Tensor(rng.standard_normal((5, 4)))
            loss = (ad.gelu(lin(x)) ** 2.0).sum()
            grads = ad.backward(loss)
            return loss.item(), {k: v.data.copy() for k, v in grads.items()}

        l1, g1 = run()
        l2, g2 = run()
        assert l1 == l2
        for k in g1:
            assert np.array_equal(g1[k], g2[k])


def _fd_cases(seed):
    """One gradient-check configuration per primitive and composite."""
    rng = np.random.default_rng(seed)
    a = rand_tensor(rng, (4, 5))
    b = rand_tensor(rng, (4, 5))
    pos = Tensor(np.abs(rng.standard_normal((4, 5))) + 0.5)
    pos.requires_grad = True
    m1 = rand_tensor(rng, (3, 4))
    m2 = rand_tensor(rng, (4, 2))
    gamma = rand_tensor(rng, (5,))
    beta = rand_tensor(rng, (5,))
    cx = rand_tensor(rng, (9, 2))
    ck = rand_tensor(rng, (3, 2, 3))
    cb = rand_tensor(rng, (3,))
    cases = [
        ("add", lambda x, y: (x + y).sum() , (a, b)),
        ("sub_mul", lambda x, y: ((x - y) * x).sum(), (a, b)),
        ("div", lambda x, y: (x / (y * y + 1.0)).sum(), (a, b)),
        ("power", lambda x: (x ** 3.0).mean(), (a,)),
        ("exp", lambda x: ad.exp(x).sum(), (a,)),
        ("log", lambda x: ad.log(x).sum(), (pos,)),
        ("sqrt", lambda x: ad.sqrt(x).sum(), (pos,)),
        ("tanh", lambda x: ad.tanh(x).sum(), (a,)),
        ("sigmoid", lambda x: ad.sigmoid(x).sum(), (a,)),
        ("matmul", lambda x, y: (x @ y).sum(), (m1, m2)),
        ("mean_axis", lambda x: (x.mean(axis=0) ** 2.0).sum(), (a,)),
        ("reshape_take", lambda x: (x.reshape(20)[3:15] ** 2.0).sum(), (a,)),
        ("transpose", lambda x: (x.transpose() @ x).sum(), (m1,)),
        ("concat", lambda x, y: (ad.concat([x, y], axis=1) ** 2.0).sum(), (a, b)),
        ("softmax", lambda x: (ad.softmax(x, axis=-1) ** 2.0).sum(), (a,)),
        ("gelu", lambda x: ad.gelu(x).sum(), (a,)),
        ("silu", lambda x: ad.silu(x).sum(), (a,)),
        ("layer_norm", lambda x, g, bb: (ad.layer_norm(x, g, bb) ** 2.0).sum(), (a, gamma, beta)),
        ("conv1d", lambda x, k, bias: (ad.conv1d(x, k, bias, stride=2) ** 2.0).sum(), (cx, ck, cb)),
    ]
    return cases


@pytest.mark.parametrize("seed", range(10))
def test_primitive_gradients_match_finite_differences(seed):
    for name, fn, tensors in _fd_cases(seed):
        err = ad.check_gradients(fn, tensors)
        assert err < GRAD_TOL, f"{name} gradient error {err:.3g} at seed {seed}"


def test_mhsa_gradient_matches_finite_differences():
    rng = np.random.default_rng(21)
    mhsa = MultiHeadSelfAttention(6, 2, rng)
    x = rand_tensor(rng, (4, 6))
    params = (x, mhsa.q_proj.weight, mhsa.k_proj.weight, mhsa.v_proj.weight,
              mhsa.out_proj.weight, mhsa.out_proj.bias)

    def fn(xx, wq, wk, wv, wo, bo):
        return (mhsa(xx) ** 2.0).sum()

    assert ad.check_gradients(fn, params) < GRAD_TOL


def test_dropout_gradient_routes_through_mask():
    x = rand_tensor(np.random.default_rng(9), (6, 6))
    masked = ad.dropout(x, 0.3, np.random.default_rng(123), train=True)
    ad.backward(masked.sum())
    kept = masked.data != 0.0
    np.testing.assert_allclose(x.grad[kept], 1.0 / 0.7, rtol=1e-12)
    np.testing.assert_allclose(x.grad[~kept], 0.0)
