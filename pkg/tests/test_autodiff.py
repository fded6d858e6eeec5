import threading

import numpy as np
import pytest
from hypothesis import given, strategies as st

from sketchgrasp import autodiff as ad
from sketchgrasp.gradcheck import PRIMITIVE_CHECKS, central_difference, max_relative_error


def test_relu_forward():
    out = ad.relu(ad.Tensor([-1.0, 2.0, 0.0]))
    np.testing.assert_array_equal(out.data, [0.0, 2.0, 0.0])


def test_smooth_l1_quadratic_branch():
    loss = ad.smooth_l1(ad.Tensor([0.5]), np.array([0.0]), beta=1.0)
    assert loss.item() == pytest.approx(0.125, abs=1e-7)


def test_smooth_l1_linear_branch():
    loss = ad.smooth_l1(ad.Tensor([2.0]), np.array([0.0]), beta=1.0)
    assert loss.item() == pytest.approx(1.5, abs=1e-7)


@given(st.floats(-5, 5), st.floats(0.1, 2.0))
def test_smooth_l1_matches_scalar_formula(d, beta):
    expected = 0.5 * d * d / beta if abs(d) < beta else abs(d) - 0.5 * beta
    loss = ad.smooth_l1(ad.Tensor([d], dtype=np.float64), np.array([0.0]), beta=beta)
    assert loss.item() == pytest.approx(expected, rel=1e-9, abs=1e-12)


def test_conv2d_all_ones():
    x = ad.Tensor(np.ones((3, 3, 1)))
    w = ad.Tensor(np.ones((3, 3, 1, 1)))
    out = ad.conv2d(x, w)
    assert out.shape == (1, 1, 1)
    assert out.item() == pytest.approx(9.0)


def test_conv2d_stride_padding_shape():
    x = ad.Tensor(np.zeros((8, 8, 3)))
    w = ad.Tensor(np.zeros((3, 3, 3, 5)))
    out = ad.conv2d(x, w, stride=2, padding=1)
    assert out.shape == (4, 4, 5)


def test_backward_sum_of_squares():
    x = ad.Tensor([1.0, 2.0], requires_grad=True)
    loss = ad.reduce_sum(ad.mul(x, x))
    loss.backward()
    np.testing.assert_allclose(x.grad, [2.0, 4.0])


def test_backward_dead_relu():
    x = ad.Tensor([-1.0], requires_grad=True)
    loss = ad.reduce_sum(ad.relu(x))
    loss.backward()
    np.testing.assert_array_equal(x.grad, [0.0])


def test_backward_requires_scalar():
    x = ad.Tensor([1.0, 2.0], requires_grad=True)
    with pytest.raises(ad.ShapeError):
        ad.mul(x, x).backward()


def test_shape_mismatch_reports_both_shapes():
    a = ad.Tensor(np.zeros((2, 3)))
    b = ad.Tensor(np.zeros((4, 5)))
    with pytest.raises(ad.ShapeError, match=r"2, 3.*4, 5"):
        ad.matmul(a, b)
    with pytest.raises(ad.ShapeError, match=r"2, 3.*4, 5"):
        ad.add(a, b)


def test_grad_accumulates_on_reuse():
    x = ad.Tensor([3.0], requires_grad=True)
    loss = ad.reduce_sum(ad.add(x, x))
    loss.backward()
    np.testing.assert_allclose(x.grad, [2.0])


def test_reduce_max_tie_routes_to_first():
    x = ad.Tensor([3.0, 3.0], requires_grad=True)
    ad.reduce_max(x).backward()
    np.testing.assert_array_equal(x.grad, [1.0, 0.0])


def test_max_pool2d_values():
    x = ad.Tensor(np.arange(16, dtype=np.float32).reshape(4, 4, 1))
    out = ad.max_pool2d(x, 2, 2)
    np.testing.assert_array_equal(out.data[:, :, 0], [[5, 7], [13, 15]])


def test_gather_duplicate_rows_accumulate():
    x = ad.Tensor(np.eye(3, dtype=np.float32), requires_grad=True)
    out = ad.gather(x, [1, 1, 2])
    ad.reduce_sum(out).backward()
    np.testing.assert_array_equal(x.grad, [[0, 0, 0], [2, 2, 2], [1, 1, 1]])


def test_concat_backward_splits():
    a = ad.Tensor([1.0, 2.0], requires_grad=True)
    b = ad.Tensor([3.0], requires_grad=True)
    out = ad.concat([a, b], axis=0)
    ad.reduce_sum(ad.mul(out, ad.Tensor([10.0, 20.0, 30.0]))).backward()
    np.testing.assert_allclose(a.grad, [10.0, 20.0])
    np.testing.assert_allclose(b.grad, [30.0])


def test_softmax_cross_entropy_value():
    logits = np.array([[1.0, 2.0, 3.0], [0.0, 0.0, 0.0]])
    labels = np.array([2, 0])
    loss = ad.softmax_cross_entropy(ad.Tensor(logits, dtype=np.float64), labels)
    z = logits
    expected = sum(np.log(np.exp(z[i]).sum()) - z[i, labels[i]] for i in range(2))
    assert loss.item() == pytest.approx(expected, rel=1e-12)


def test_binary_cross_entropy_value():
    logits = np.array([0.5, -1.5, 3.0])
    targets = np.array([1.0, 0.0, 1.0])
    loss = ad.binary_cross_entropy(ad.Tensor(logits, dtype=np.float64), targets)
    sig = 1 / (1 + np.exp(-logits))
    expected = -(targets * np.log(sig) + (1 - targets) * np.log(1 - sig)).sum()
    assert loss.item() == pytest.approx(expected, rel=1e-10)


def test_bilinear_crop_whole_map_identity():
    fm = ad.Tensor(np.random.default_rng(0).standard_normal((5, 5, 3)).astype(np.float32))
    # box spanning cell centers exactly, sampled at 5x5, reproduces the map
    out = ad.bilinear_crop(fm, np.array([[0.0, 0.0, 4.0, 4.0]]), 5)
    np.testing.assert_allclose(out.data[0], fm.data, atol=1e-6)


def test_bilinear_crop_single_cell_map_is_constant():
    fm = ad.Tensor(np.full((1, 1, 2), 7.0, dtype=np.float32))
    out = ad.bilinear_crop(fm, np.array([[-0.5, -0.5, 0.5, 0.5]]), 3)
    np.testing.assert_allclose(out.data, np.full((1, 3, 3, 2), 7.0), atol=1e-5)


@pytest.mark.parametrize("name", sorted(PRIMITIVE_CHECKS))
def test_finite_difference_primitive(name):
    err = PRIMITIVE_CHECKS[name](np.random.default_rng(7))
    assert err < 1e-3, f"{name}: rel err {err:.2e}"


def test_backward_linearity():
    rng = np.random.default_rng(3)
    x0 = rng.standard_normal((4, 4)).astype(np.float32)
    wf = rng.standard_normal((4, 4)).astype(np.float32)
    wg = rng.standard_normal((4, 4)).astype(np.float32)

    def grad_of(a, b):
        x = ad.Tensor(x0, requires_grad=True)
        f = ad.reduce_sum(ad.mul(x, ad.Tensor(wf)))
        g = ad.reduce_sum(ad.mul(ad.matmul(x, x), ad.Tensor(wg)))
        ad.add(ad.scale(f, a), ad.scale(g, b)).backward()
        return x.grad

    combined = grad_of(2.0, -3.0)
    expected = 2.0 * grad_of(1.0, 0.0) + (-3.0) * grad_of(0.0, 1.0)
    np.testing.assert_allclose(combined, expected, rtol=1e-5, atol=1e-5)


def test_central_difference_helper_on_quadratic():
    x = np.array([1.0, -2.0, 0.5])
    grad = central_difference(lambda v: float((v**2).sum()), x)
    assert max_relative_error(grad, 2 * x) < 1e-6


def test_no_grad_suppresses_recording():
    x = ad.Tensor([1.0], requires_grad=True)
    with ad.no_grad():
        out = ad.mul(x, x)
    assert not out.requires_grad
    assert out._backward is None


def test_no_grad_is_thread_local():
    seen = {}

    def worker():
        seen["inner"] = ad.grad_enabled()

    with ad.no_grad():
        t = threading.Thread(target=worker)
        t.start()
        t.join()
    assert seen["inner"] is True


def test_debug_checks_flag_nonfinite():
    big = ad.Tensor([3e38], dtype=np.float32)
    ad.set_debug_checks(True)
    try:
        with np.errstate(over="ignore"), pytest.raises(FloatingPointError):
            ad.add(big, big)
    finally:
        ad.set_debug_checks(False)


def test_float64_graph_preserves_dtype():
    x = ad.Tensor(np.ones(3), dtype=np.float64, requires_grad=True)
    loss = ad.reduce_sum(ad.mul(x, x))
    assert loss.dtype == np.float64
    loss.backward()
    assert x.grad.dtype == np.float64


def test_sgd_plain_step():
    p = ad.Tensor([1.0], requires_grad=True)
    p.grad = np.array([1.0], dtype=np.float32)
    opt = ad.SGD({"p": p}, lr=0.1)
    opt.step()
    np.testing.assert_allclose(p.data, [0.9], atol=1e-7)
    assert p.grad is None


def test_sgd_momentum_two_steps():
    p = ad.Tensor([1.0], requires_grad=True)
    opt = ad.SGD({"p": p}, lr=0.1, momentum=0.9)
    for _ in range(2):
        p.grad = np.array([1.0], dtype=np.float32)
        opt.step()
    np.testing.assert_allclose(p.data, [0.71], atol=1e-6)


def test_sgd_weight_decay_only():
    p = ad.Tensor([1.0], requires_grad=True)
    p.grad = np.zeros(1, dtype=np.float32)
    opt = ad.SGD({"p": p}, lr=0.005, weight_decay=0.0005)
    opt.step()
    np.testing.assert_allclose(p.data, [0.9999975], atol=1e-9)


def test_sgd_missing_grad_raises():
    p = ad.Tensor([1.0], requires_grad=True)
    opt = ad.SGD({"weights": p}, lr=0.1)
    with pytest.raises(ValueError, match="weights"):
        opt.step()


def test_training_determinism_bitwise():
    def run():
        rng = np.random.default_rng(11)
        w = ad.Tensor(rng.standard_normal((4, 2)).astype(np.float32), requires_grad=True)
        opt = ad.SGD({"w": w}, lr=0.05, momentum=0.9, weight_decay=0.0005)
        for _ in range(20):
            x = ad.Tensor(rng.standard_normal((3, 4)).astype(np.float32))
            y = rng.integers(0, 2, size=3)
            loss = ad.softmax_cross_entropy(ad.matmul(x, w), y)
            loss.backward()
            opt.step()
        return w.data.copy()

    a, b = run(), run()
    assert a.tobytes() == b.tobytes()
