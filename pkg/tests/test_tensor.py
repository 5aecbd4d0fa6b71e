import math

import numpy as np
import pytest

from lanecast.nn import (
    Tensor,
    concat,
    conv1d,
    cross_entropy,
    grad_check,
    matmul,
    maximum,
    mul,
    pointset_min_dist,
    relu,
    select_index,
    smooth_l1,
    softmax,
    tmean,
    tsum,
)


def test_backward_sum_grad_ones():
    x = Tensor(np.arange(6.0).reshape(2, 3), requires_grad=True)
    tsum(x).backward()
    assert np.array_equal(x.grad, np.ones((2, 3)))


def test_backward_sum_of_squares():
    x = Tensor([1.0, 2.0], requires_grad=True)
    tsum(mul(x, x)).backward()
    assert np.allclose(x.grad, [2.0, 4.0])


def test_backward_requires_scalar():
    x = Tensor([1.0, 2.0], requires_grad=True)
    with pytest.raises(ValueError):
        mul(x, x).backward()


def test_grad_accumulates_on_shared_node():
    x = Tensor([3.0], requires_grad=True)
    y = mul(x, x)
    tsum(concat([y, y], axis=0)).backward()
    assert np.allclose(x.grad, [12.0])


def test_matmul_shape_error_names_dims():
    a = Tensor(np.zeros((2, 3)))
    b = Tensor(np.zeros((4, 2)))
    with pytest.raises(ValueError, match=r"\(2, 3\)"):
        matmul(a, b)


def test_softmax_rows_normalized_and_shift_invariant():
    rng = np.random.default_rng(0)
    x = rng.standard_normal((5, 7))
    y = softmax(Tensor(x)).data
    assert np.all(y > 0)
    assert np.allclose(y.sum(axis=1), 1.0, atol=1e-9)
    y_shift = softmax(Tensor(x + 123.456)).data
    assert np.allclose(y, y_shift, atol=1e-12)


def test_softmax_closed_form():
    y = softmax(Tensor([[0.0, math.log(3.0)]])).data
    assert np.allclose(y, [[0.25, 0.75]], atol=1e-12)
    y4 = softmax(Tensor([[1.0, 1.0, 1.0, 1.0]])).data
    assert np.allclose(y4, 0.25)


def test_conv1d_identity_and_hand_example():
    # k=1 identity
    x = Tensor(np.arange(6.0).reshape(1, 6, 1))
    w = Tensor(np.ones((1, 1, 1)))
    b = Tensor(np.zeros(1))
    assert np.allclose(conv1d(x, w, b).data, x.data)
    # x=[1,2,3], k=2, w=[1,1] -> [3,5]
    x = Tensor(np.array([[[1.0], [2.0], [3.0]]]))
    w = Tensor(np.ones((1, 1, 2)))
    out = conv1d(x, w, b)
    assert np.allclose(out.data.ravel(), [3.0, 5.0])


def test_conv1d_k2_length_shrinks_by_one_each_time():
    tau = 6
    x = Tensor(np.zeros((2, tau, 3)))
    w1 = Tensor(np.zeros((4, 3, 2)))
    w2 = Tensor(np.zeros((4, 4, 2)))
    b = Tensor(np.zeros(4))
    h1 = conv1d(x, w1, b)
    h2 = conv1d(h1, w2, b)
    assert h1.shape == (2, tau - 1, 4)
    assert h2.shape == (2, tau - 2, 4)


def test_conv1d_k3_p1_preserves_length():
    x = Tensor(np.zeros((2, 10, 2)))
    w = Tensor(np.zeros((5, 2, 3)))
    b = Tensor(np.zeros(5))
    assert conv1d(x, w, b, padding=1).shape == (2, 10, 5)


def test_conv1d_channel_mismatch():
    with pytest.raises(ValueError, match="channel"):
        conv1d(Tensor(np.zeros((1, 4, 3))), Tensor(np.zeros((2, 5, 2))), Tensor(np.zeros(2)))


def test_conv1d_linear_in_input():
    rng = np.random.default_rng(1)
    w = Tensor(rng.standard_normal((4, 2, 3)))
    b = Tensor(np.zeros(4))
    x1 = rng.standard_normal((2, 8, 2))
    x2 = rng.standard_normal((2, 8, 2))
    a, c = 1.7, -0.4
    lhs = conv1d(Tensor(a * x1 + c * x2), w, b, padding=1).data
    rhs = a * conv1d(Tensor(x1), w, b, padding=1).data + c * conv1d(Tensor(x2), w, b, padding=1).data
    assert np.allclose(lhs, rhs, atol=1e-10)


def test_smooth_l1_values():
    t = np.zeros(1)
    assert smooth_l1(Tensor(t), t).item() == 0.0
    assert np.isclose(smooth_l1(Tensor([0.5]), t).item(), 0.125)
    assert np.isclose(smooth_l1(Tensor([2.0]), t).item(), 1.5)


def test_smooth_l1_derivative_continuous_at_one():
    # numeric slope from the left and right of |d| = 1 must agree
    def val(d):
        return smooth_l1(Tensor([d]), np.zeros(1)).item()

    h = 1e-7
    left = (val(1.0) - val(1.0 - h)) / h
    right = (val(1.0 + h) - val(1.0)) / h
    assert abs(left - right) < 1e-6


def test_cross_entropy_values():
    onehot = np.zeros((1, 4))
    onehot[0, 2] = 1.0
    assert cross_entropy(Tensor(onehot), [2]).item() < 1e-11
    uniform4 = np.full((1, 4), 0.25)
    assert np.isclose(cross_entropy(Tensor(uniform4), [1]).item(), math.log(4), atol=1e-9)
    uniform6 = np.full((2, 6), 1.0 / 6.0)
    assert np.isclose(cross_entropy(Tensor(uniform6), [0, 5]).item(), math.log(6), atol=1e-9)


def test_cross_entropy_index_out_of_range():
    with pytest.raises(IndexError):
        cross_entropy(Tensor(np.full((1, 3), 1 / 3)), [3])


def test_maximum_tie_goes_to_first():
    a = Tensor([2.0, 1.0], requires_grad=True)
    b = Tensor([2.0, 3.0], requires_grad=True)
    tsum(maximum(a, b)).backward()
    assert np.allclose(a.grad, [1.0, 0.0])
    assert np.allclose(b.grad, [0.0, 1.0])


def test_select_index_gather_and_scatter():
    x = Tensor(np.arange(6.0).reshape(2, 3), requires_grad=True)
    out = select_index(x, [2, 0])
    assert np.allclose(out.data, [2.0, 3.0])
    tsum(out).backward()
    expect = np.zeros((2, 3))
    expect[0, 2] = 1.0
    expect[1, 0] = 1.0
    assert np.array_equal(x.grad, expect)


def test_pointset_min_dist_values():
    lane = np.array([[0.0, 0.0], [1.0, 0.0], [2.0, 0.0]])
    pts = Tensor(np.array([[0.0, 1.0], [0.5, 1.0]]))
    d = pointset_min_dist(pts, lane).data
    assert np.isclose(d[0], 1.0)
    assert np.isclose(d[1], math.sqrt(1.25))


def test_pointset_min_dist_ties_pick_smallest_index():
    lane = np.array([[0.0, 0.0], [1.0, 0.0]])
    pts = Tensor(np.array([[0.5, 1.0]]), requires_grad=True)
    tsum(pointset_min_dist(pts, lane)).backward()
    # equidistant: gradient must point away from lane point 0
    delta = np.array([0.5, 1.0])
    assert np.allclose(pts.grad[0], delta / np.linalg.norm(delta))


# -- gradient checks (finite-difference oracle) ---------------------------

def test_gradcheck_linear_is_exact():
    w = np.random.default_rng(2).standard_normal((3, 3))

    def f(x):
        return tsum(matmul(x, Tensor(w)))

    x = Tensor(np.random.default_rng(3).standard_normal((2, 3)), requires_grad=True)
    report = grad_check(f, x, tol=1e-10)
    assert report.passed, report


def test_gradcheck_composite_ops():
    rng = np.random.default_rng(4)
    w = rng.standard_normal((4, 4))

    def f(x):
        h = relu(matmul(x, Tensor(w)))
        p = softmax(h)
        return cross_entropy(p, [1, 2])

    x = Tensor(rng.standard_normal((2, 4)), requires_grad=True)
    report = grad_check(f, x, tol=1e-5)
    assert report.passed, report


def test_gradcheck_pointset_and_smooth_l1():
    rng = np.random.default_rng(5)
    lane = rng.standard_normal((6, 2)) * 3
    gt = rng.standard_normal((4, 2))

    def f(x):
        return tmean(pointset_min_dist(x, lane)) + smooth_l1(x, gt)

    x = Tensor(rng.standard_normal((4, 2)), requires_grad=True)
    report = grad_check(f, x, tol=1e-4)
    assert report.passed, report


def test_gradcheck_broadcast_add_mean():
    rng = np.random.default_rng(6)
    b = Tensor(rng.standard_normal(5), requires_grad=True)
    x = rng.standard_normal((3, 4, 5))

    def f(t):
        return tmean(mul(Tensor(x) + t, Tensor(x) + t))

    report = grad_check(f, b, tol=1e-6)
    assert report.passed, report


def test_determinism_forward_backward():
    rng = np.random.default_rng(7)
    w = rng.standard_normal((8, 8))
    xval = rng.standard_normal((4, 8))

    def run():
        x = Tensor(xval, requires_grad=True)
        loss = tmean(relu(matmul(x, Tensor(w))))
        loss.backward()
        return loss.data.copy(), x.grad.copy()

    l1, g1 = run()
    l2, g2 = run()
    assert np.array_equal(l1, l2)
    assert np.array_equal(g1, g2)
