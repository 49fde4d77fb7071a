import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra import numpy as hnp

from m2h import autodiff as ad
from m2h.autodiff import Function, Tensor, grad_check
from m2h.errors import DimensionError, DomainError, UsageError


def naive_matmul(a, b):
    m, k = a.shape
    _, n = b.shape
    out = np.zeros((m, n))
    for i in range(m):
        for j in range(n):
            for t in range(k):
                out[i, j] += a[i, t] * b[t, j]
    return out


def direct_conv(x, w, stride, pad):
    xp = np.pad(x, ((0, 0), (0, 0), (pad, pad), (pad, pad)))
    b, _, h, wd = x.shape
    cout, _, kh, kw = w.shape
    ho = (h + 2 * pad - kh) // stride + 1
    wo = (wd + 2 * pad - kw) // stride + 1
    out = np.zeros((b, cout, ho, wo))
    for n in range(b):
        for o in range(cout):
            for i in range(ho):
                for j in range(wo):
                    patch = xp[n, :, i * stride : i * stride + kh, j * stride : j * stride + kw]
                    out[n, o, i, j] = np.sum(patch * w[o])
    return out


# matmul


def test_matmul_identity(f64):
    a = Tensor([[1.0, 2.0], [3.0, 4.0]])
    np.testing.assert_array_equal(ad.matmul(a, Tensor(np.eye(2))).data, a.data)


def test_matmul_example(f64):
    out = ad.matmul(Tensor([[1.0, 2.0], [3.0, 4.0]]), Tensor([[5.0], [6.0]]))
    np.testing.assert_array_equal(out.data, [[17.0], [39.0]])


def test_matmul_zero(f64, rng):
    out = ad.matmul(Tensor(np.zeros((3, 4))), Tensor(rng.normal(size=(4, 2))))
    assert not out.data.any()


def test_matmul_matches_triple_loop(f64, rng):
    a, b = rng.normal(size=(3, 5)), rng.normal(size=(5, 4))
    np.testing.assert_allclose(ad.matmul(Tensor(a), Tensor(b)).data, naive_matmul(a, b), atol=1e-12)


def test_matmul_backward_formulas(f64, rng):
    a = Tensor(rng.normal(size=(3, 4)), requires_grad=True)
    b = Tensor(rng.normal(size=(4, 2)), requires_grad=True)
    g = rng.normal(size=(3, 2))
    ad.sum(ad.matmul(a, b) * g).backward()
    np.testing.assert_allclose(a.grad, g @ b.data.T)
    np.testing.assert_allclose(b.grad, a.data.T @ g)


def test_matmul_shape_mismatch():
    with pytest.raises(DimensionError):
        ad.matmul(Tensor(np.ones((2, 3))), Tensor(np.ones((2, 3))))


# conv


def test_conv_identity_kernel(f64, rng):
    x = rng.normal(size=(1, 1, 4, 5))
    out = ad.conv2d(Tensor(x), Tensor(np.ones((1, 1, 1, 1))))
    np.testing.assert_array_equal(out.data, x)


def test_conv_all_ones_is_nine(f64):
    out = ad.conv2d(Tensor(np.ones((1, 1, 3, 3))), Tensor(np.ones((1, 1, 3, 3))))
    assert out.shape == (1, 1, 1, 1)
    assert out.data.item() == 9.0


def test_conv_zero_weights(f64, rng):
    out = ad.conv2d(Tensor(rng.normal(size=(2, 3, 5, 5))), Tensor(np.zeros((4, 3, 3, 3))), pad=1)
    assert not out.data.any()


@pytest.mark.parametrize("k,stride,pad,h,w", [(3, 1, 1, 5, 7), (3, 2, 1, 7, 5), (2, 2, 0, 4, 6),
                                              (1, 1, 0, 3, 4), (5, 1, 2, 6, 6), (3, 1, 0, 6, 5)])
def test_conv_matches_direct_summation(f64, rng, k, stride, pad, h, w):
    x, wt = rng.normal(size=(2, 3, h, w)), rng.normal(size=(4, 3, k, k))
    out = ad.conv2d(Tensor(x), Tensor(wt), stride=stride, pad=pad)
    np.testing.assert_allclose(out.data, direct_conv(x, wt, stride, pad), atol=1e-12)


def test_conv_depthwise_matches_per_channel(f64, rng):
    x, w = rng.normal(size=(1, 3, 5, 5)), rng.normal(size=(3, 1, 3, 3))
    out = ad.conv2d(Tensor(x), Tensor(w), pad=1, groups=3).data
    for c in range(3):
        np.testing.assert_allclose(out[:, c : c + 1], direct_conv(x[:, c : c + 1], w[c : c + 1], 1, 1), atol=1e-12)


def test_conv_output_size_non_integral():
    with pytest.raises(DimensionError):
        ad.conv2d(Tensor(np.ones((1, 1, 4, 4))), Tensor(np.ones((1, 1, 3, 3))), stride=2, pad=1)


def test_conv_transpose_is_adjoint_of_conv(f64, rng):
    # <conv(x), y> == <x, conv_transpose(y)> for matching geometry
    x, w = rng.normal(size=(1, 2, 8, 8)), rng.normal(size=(3, 2, 2, 2))
    y = rng.normal(size=(1, 3, 4, 4))
    lhs = np.sum(ad.conv2d(Tensor(x), Tensor(w), stride=2).data * y)
    rhs = np.sum(x * ad.conv_transpose2d(Tensor(y), Tensor(w), stride=2).data)
    assert lhs == pytest.approx(rhs, rel=1e-12)


# softmax / layer norm / elementwise


def test_softmax_constant():
    np.testing.assert_allclose(ad.softmax(Tensor(np.full(4, 3.0))).data, 0.25, atol=1e-7)


def test_softmax_closed_form(f64):
    np.testing.assert_allclose(ad.softmax(Tensor([0.0, math.log(2.0)])).data, [1 / 3, 2 / 3], atol=1e-12)


@settings(max_examples=50, deadline=None)
@given(hnp.arrays(np.float64, (3, 5), elements=st.integers(-500, 500).map(lambda v: v / 10)))
def test_softmax_rows_sum_to_one_and_preserve_argmax(x):
    p = ad.softmax(Tensor(x), axis=-1).data
    assert np.all(p >= 0)
    np.testing.assert_allclose(p.sum(-1), 1.0, atol=1e-6)
    np.testing.assert_array_equal(x[np.arange(3), p.argmax(-1)], x.max(-1))


def test_softmax_large_inputs_stay_finite():
    p = ad.softmax(Tensor(np.array([1000.0, 0.0, -1000.0]))).data
    assert np.all(np.isfinite(p))


def test_layer_norm_example(f64):
    out = ad.layer_norm(Tensor([[1.0, 3.0]]), Tensor(np.ones(2)), Tensor(np.zeros(2)), eps=0.0)
    np.testing.assert_allclose(out.data, [[-1.0, 1.0]], atol=1e-12)


@settings(max_examples=30, deadline=None)
@given(hnp.arrays(np.float64, (4, 6), elements=st.floats(-10, 10)))
def test_layer_norm_zero_mean(x):
    with ad.default_dtype(np.float64):
        out = ad.layer_norm(Tensor(x), Tensor(np.ones(6)), Tensor(np.zeros(6))).data
    np.testing.assert_allclose(out.mean(-1), 0.0, atol=1e-9)


def test_elementwise_values(f64):
    assert ad.gelu(Tensor([0.0])).data[0] == 0.0
    assert ad.sigmoid(Tensor([0.0])).data[0] == 0.5
    np.testing.assert_array_equal(ad.relu(Tensor([-1.0, 2.0])).data, [0.0, 2.0])
    np.testing.assert_array_equal(ad.abs(Tensor([-1.5, 2.0])).data, [1.5, 2.0])
    gap = ad.global_avg_pool(Tensor(np.arange(8.0).reshape(1, 2, 2, 2))).data
    np.testing.assert_allclose(gap.reshape(-1), [1.5, 5.5])


def test_gelu_close_to_erf_form(f64):
    from scipy.special import erf

    x = np.linspace(-5, 5, 101)
    exact = 0.5 * x * (1 + erf(x / math.sqrt(2)))
    np.testing.assert_allclose(ad.gelu(Tensor(x)).data, exact, atol=1e-3)


def test_log_domain_error():
    with pytest.raises(DomainError):
        ad.log(Tensor([1.0, 0.0]))


def test_resize_bilinear_identity_and_constant(f64, rng):
    x = rng.normal(size=(1, 2, 3, 4))
    np.testing.assert_allclose(ad.resize_bilinear(Tensor(x), (3, 4)).data, x, atol=1e-12)
    c = ad.resize_bilinear(Tensor(np.full((1, 1, 2, 2), 7.0)), (8, 8)).data
    np.testing.assert_allclose(c, 7.0)


# graph mechanics


def test_shared_subexpression_grad_accumulates(f64):
    x = Tensor([3.0], requires_grad=True)
    y = x * x
    (y + y).backward()
    np.testing.assert_allclose(x.grad, [12.0])


def test_backward_visits_each_op_once_in_reverse_order(f64):
    calls = []

    class Spy(Function):
        def forward(self, x, tag):
            self.tag = tag
            return x * 1.0

        def backward(self, g):
            calls.append(self.tag)
            return g

    x = Tensor([1.0], requires_grad=True)
    a = Spy.apply(x, tag="a")
    b = Spy.apply(a, tag="b")
    c = Spy.apply(a, tag="c")
    d = Spy.apply(b + c, tag="d")
    ad.sum(d).backward()
    assert sorted(calls) == ["a", "b", "c", "d"]
    assert calls[0] == "d" and calls[-1] == "a"
    assert calls.index("c") < calls.index("a") and calls.index("b") < calls.index("a")
    np.testing.assert_allclose(x.grad, [2.0])


def test_leaf_grad_accumulates_across_backward_calls(f64):
    x = Tensor([2.0], requires_grad=True)
    ad.sum(x * 3.0).backward()
    ad.sum(x * 3.0).backward()
    np.testing.assert_allclose(x.grad, [6.0])


def test_no_grad_records_nothing():
    x = Tensor([1.0], requires_grad=True)
    with ad.no_grad():
        y = x * 2.0
    assert y.is_leaf and not y.requires_grad


def test_backward_requires_scalar():
    x = Tensor(np.ones(3), requires_grad=True)
    with pytest.raises(UsageError):
        (x * 2.0).backward()


@pytest.mark.filterwarnings("ignore::RuntimeWarning")
def test_detect_anomaly_names_op():
    with ad.detect_anomaly(), pytest.raises(FloatingPointError, match="Div"):
        Tensor([1.0]) / Tensor([0.0])


def test_broadcast_gradient_reduces_to_parameter_shape(f64, rng):
    x = Tensor(rng.normal(size=(4, 3)))
    b = Tensor(np.zeros(3), requires_grad=True)
    ad.sum(x + b).backward()
    np.testing.assert_allclose(b.grad, [4.0, 4.0, 4.0])


def test_mac_counter_tags(f64):
    with ad.count_macs() as counter:
        with ad.mac_tag("attention"):
            ad.matmul(Tensor(np.ones((2, 3))), Tensor(np.ones((3, 4))))
        ad.conv2d(Tensor(np.ones((1, 2, 4, 4))), Tensor(np.ones((3, 2, 3, 3))), pad=1)
    assert counter.get("attention") == 2 * 3 * 4
    assert counter.get("other") == 16 * 3 * 2 * 9


# gradient checker


def test_grad_check_passes_on_composite(f64, rng):
    x = Tensor(rng.normal(size=(3, 4)))
    w = Tensor(rng.normal(size=(4, 2)))
    rep = grad_check(lambda ts: ad.sum(ad.softmax(ad.matmul(ts[0], ts[1]), axis=-1) ** 2), [x, w])
    assert rep.passed and rep.max_rel_err < 1e-6


def test_grad_check_detects_corruption(f64, rng):
    x = Tensor(rng.normal(size=(3, 4)))
    rep = grad_check(lambda t: ad.sum(ad.tanh(t) * 2.0), x, grad_scale=1.01)
    assert not rep.passed


def test_grad_check_detects_wrong_backward(f64, rng):
    class BadSquare(Function):
        def forward(self, x):
            self.x = x
            return x * x

        def backward(self, g):
            return g * self.x  # missing factor 2

    rep = grad_check(lambda t: ad.sum(BadSquare.apply(t)), Tensor(rng.normal(size=5)))
    assert not rep.passed
    assert rep.max_rel_err == pytest.approx(0.5, rel=1e-6)


@pytest.mark.filterwarnings("ignore::RuntimeWarning")
def test_grad_check_reports_non_finite(f64):
    rep = grad_check(lambda t: ad.sum(1.0 / t), Tensor(np.array([1.0, 0.0])))
    assert not rep.passed and rep.error
