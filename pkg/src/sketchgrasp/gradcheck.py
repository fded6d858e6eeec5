"""Finite-difference gradient checks for the tensor engine.

Each registered check builds a small random scalar-valued graph in float32,
takes the analytic gradient, and compares it against central differences of
the same function re-evaluated in float64. Used by the test suite and the
`gradcheck` CLI subcommand.
"""

from __future__ import annotations

from collections.abc import Callable

import numpy as np

from . import autodiff as ad


def central_difference(fn: Callable[[np.ndarray], float], x: np.ndarray, h: float = 1e-3) -> np.ndarray:
    """Central-difference gradient of a scalar function, evaluated in float64."""
    x = np.asarray(x, dtype=np.float64)
    grad = np.zeros_like(x)
    flat = x.reshape(-1)
    gflat = grad.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + h
        fp = fn(x)
        flat[i] = orig - h
        fm = fn(x)
        flat[i] = orig
        gflat[i] = (fp - fm) / (2.0 * h)
    return grad


def max_relative_error(analytic: np.ndarray, numeric: np.ndarray) -> float:
    """Infinity-norm relative disagreement; 0 when both gradients vanish."""
    analytic = np.asarray(analytic, dtype=np.float64)
    numeric = np.asarray(numeric, dtype=np.float64)
    scale = max(np.abs(analytic).max(initial=0.0), np.abs(numeric).max(initial=0.0))
    if scale < 1e-12:
        return 0.0
    return float(np.abs(analytic - numeric).max() / scale)


def _run_single_input(build: Callable, x64: np.ndarray, h: float = 1e-3) -> float:
    """Check d(build(x))/dx for a graph with one differentiated input.

    `build` maps a Tensor to a scalar Tensor and must be dtype-agnostic.
    """
    xt = ad.Tensor(x64.astype(np.float32), requires_grad=True)
    loss = build(xt)
    loss.backward()
    analytic = xt.grad

    def f(arr: np.ndarray) -> float:
        with ad.no_grad():
            return build(ad.Tensor(arr, dtype=np.float64)).item()

    numeric = central_difference(f, x64, h)
    return max_relative_error(analytic, numeric)


def _away_from_zero(rng: np.random.Generator, shape, margin: float = 0.1) -> np.ndarray:
    """Random values bounded away from 0 so ReLU/abs kinks stay > h away."""
    x = rng.uniform(margin, 1.0, size=shape)
    return x * rng.choice([-1.0, 1.0], size=shape)


def _check_matmul(rng):
    a = rng.standard_normal((4, 5))
    b = rng.standard_normal((5, 3))
    w = rng.standard_normal((4, 3))
    err_a = _run_single_input(lambda t: ad.reduce_sum(ad.mul(ad.matmul(t, ad.Tensor(b.astype(t.dtype))), w)), a)
    err_b = _run_single_input(lambda t: ad.reduce_sum(ad.mul(ad.matmul(ad.Tensor(a.astype(t.dtype)), t), w)), b)
    return max(err_a, err_b)


def _check_linear(rng):
    x = rng.standard_normal((6, 4))
    w = rng.standard_normal((4, 3))
    bias = rng.standard_normal(3)
    mixer = rng.standard_normal((6, 3))

    def with_bias(t):
        return ad.reduce_sum(ad.mul(ad.linear(ad.Tensor(x.astype(t.dtype)), ad.Tensor(w.astype(t.dtype)), t), mixer))

    err_w = _run_single_input(
        lambda t: ad.reduce_sum(ad.mul(ad.linear(ad.Tensor(x.astype(t.dtype)), t, ad.Tensor(bias.astype(t.dtype))), mixer)), w
    )
    err_x = _run_single_input(
        lambda t: ad.reduce_sum(ad.mul(ad.linear(t, ad.Tensor(w.astype(t.dtype)), ad.Tensor(bias.astype(t.dtype))), mixer)), x
    )
    err_b = _run_single_input(with_bias, bias)
    return max(err_w, err_x, err_b)


def _check_conv2d(rng):
    x = rng.standard_normal((7, 6, 3))
    w = rng.standard_normal((3, 3, 3, 4))
    bias = rng.standard_normal(4)
    mixer = rng.standard_normal((4, 3, 4))

    def loss_from(t, which):
        xs = t if which == "x" else ad.Tensor(x.astype(t.dtype))
        ws = t if which == "w" else ad.Tensor(w.astype(t.dtype))
        bs = t if which == "b" else ad.Tensor(bias.astype(t.dtype))
        out = ad.conv2d(xs, ws, bs, stride=2, padding=1)
        return ad.reduce_sum(ad.mul(out, mixer))

    return max(
        _run_single_input(lambda t: loss_from(t, "x"), x),
        _run_single_input(lambda t: loss_from(t, "w"), w),
        _run_single_input(lambda t: loss_from(t, "b"), bias),
    )


def _check_relu(rng):
    x = _away_from_zero(rng, (5, 4))
    w = rng.standard_normal((5, 4))
    return _run_single_input(lambda t: ad.reduce_sum(ad.mul(ad.relu(t), w)), x)


def _check_max_pool2d(rng):
    # distinct values keep the argmax stable under the FD perturbation
    x = rng.permutation(48).astype(np.float64).reshape(6, 4, 2) * 0.1
    w = rng.standard_normal((3, 2, 2))
    return _run_single_input(lambda t: ad.reduce_sum(ad.mul(ad.max_pool2d(t, 2, 2), w)), x)


def _check_reduce_max(rng):
    x = rng.permutation(24).astype(np.float64).reshape(6, 4) * 0.1
    w = rng.standard_normal(4)
    err_axis = _run_single_input(lambda t: ad.reduce_sum(ad.mul(ad.reduce_max(t, axis=0), w)), x)
    err_all = _run_single_input(lambda t: ad.reduce_max(t), x)
    return max(err_axis, err_all)


def _check_reduce_sum(rng):
    x = rng.standard_normal((3, 5))
    w = rng.standard_normal((3, 1))
    return _run_single_input(lambda t: ad.reduce_sum(ad.mul(ad.reduce_sum(t, axis=1, keepdims=True), w)), x)


def _check_concat(rng):
    a = rng.standard_normal((3, 2))
    b = rng.standard_normal((3, 4))
    w = rng.standard_normal((3, 6))
    err_a = _run_single_input(
        lambda t: ad.reduce_sum(ad.mul(ad.concat([t, ad.Tensor(b.astype(t.dtype))], axis=1), w)), a
    )
    err_b = _run_single_input(
        lambda t: ad.reduce_sum(ad.mul(ad.concat([ad.Tensor(a.astype(t.dtype)), t], axis=1), w)), b
    )
    return max(err_a, err_b)


def _check_elementwise(rng):
    a = rng.standard_normal((4, 3))
    b = rng.standard_normal((1, 3))  # exercises broadcast reduction
    w = rng.standard_normal((4, 3))
    errs = []
    for op in (ad.add, ad.sub, ad.mul):
        errs.append(_run_single_input(lambda t, op=op: ad.reduce_sum(ad.mul(op(t, ad.Tensor(b.astype(t.dtype))), w)), a))
        errs.append(_run_single_input(lambda t, op=op: ad.reduce_sum(ad.mul(op(ad.Tensor(a.astype(t.dtype)), t), w)), b))
    errs.append(_run_single_input(lambda t: ad.reduce_sum(ad.mul(ad.scale(t, -2.5), w)), a))
    return max(errs)


def _check_gather(rng):
    x = rng.standard_normal((5, 3))
    idx = np.array([0, 2, 2, 4])
    w = rng.standard_normal((4, 3))
    return _run_single_input(lambda t: ad.reduce_sum(ad.mul(ad.gather(t, idx), w)), x)


def _check_reshape(rng):
    x = rng.standard_normal((2, 6))
    w = rng.standard_normal((3, 4))
    return _run_single_input(lambda t: ad.reduce_sum(ad.mul(ad.reshape(t, (3, 4)), w)), x)


def _check_bilinear_crop(rng):
    x = rng.standard_normal((8, 8, 2))
    boxes = np.array([[0.3, 0.7, 5.2, 6.1], [1.0, 0.0, 7.0, 4.5], [-0.5, -0.5, 7.5, 7.5]])
    w = rng.standard_normal((3, 4, 4, 2))
    return _run_single_input(lambda t: ad.reduce_sum(ad.mul(ad.bilinear_crop(t, boxes, 4), w)), x)


def _check_softmax_cross_entropy(rng):
    logits = rng.standard_normal((6, 5))
    labels = rng.integers(0, 5, size=6)
    return _run_single_input(lambda t: ad.softmax_cross_entropy(t, labels), logits)


def _check_binary_cross_entropy(rng):
    logits = rng.standard_normal(8) * 2
    targets = rng.integers(0, 2, size=8).astype(np.float64)
    return _run_single_input(lambda t: ad.binary_cross_entropy(t, targets), logits)


def _check_smooth_l1(rng):
    pred = rng.standard_normal(10) * 2
    # keep |d| away from the branch point at beta
    target = pred + np.where(rng.random(10) < 0.5, rng.uniform(0.05, 0.8, 10), rng.uniform(1.2, 3.0, 10)) * rng.choice(
        [-1, 1], 10
    )
    return _run_single_input(lambda t: ad.smooth_l1(t, target, beta=1.0), pred)


def _check_composite(rng):
    """Five-layer mixed graph: conv -> relu -> pool -> flatten -> linear -> ce."""
    x = rng.standard_normal((8, 8, 2))
    w1 = rng.standard_normal((3, 3, 2, 4)) * 0.5
    w2 = rng.standard_normal((4 * 4 * 4, 3)) * 0.5
    labels = np.array([1])

    def build(t):
        h1 = ad.relu(ad.conv2d(t, ad.Tensor(w1.astype(t.dtype)), stride=1, padding=1))
        h2 = ad.max_pool2d(h1, 2, 2)
        h3 = ad.reshape(h2, (1, 4 * 4 * 4))
        h4 = ad.linear(h3, ad.Tensor(w2.astype(t.dtype)))
        return ad.softmax_cross_entropy(h4, labels)

    return _run_single_input(build, x)


PRIMITIVE_CHECKS: dict[str, Callable[[np.random.Generator], float]] = {
    "matmul": _check_matmul,
    "linear": _check_linear,
    "conv2d": _check_conv2d,
    "relu": _check_relu,
    "max_pool2d": _check_max_pool2d,
    "reduce_max": _check_reduce_max,
    "reduce_sum": _check_reduce_sum,
    "concat": _check_concat,
    "elementwise": _check_elementwise,
    "gather": _check_gather,
    "reshape": _check_reshape,
    "bilinear_crop": _check_bilinear_crop,
    "softmax_cross_entropy": _check_softmax_cross_entropy,
    "binary_cross_entropy": _check_binary_cross_entropy,
    "smooth_l1": _check_smooth_l1,
    "composite": _check_composite,
}


def run_primitive_suite(seed: int = 0, threshold: float = 1e-3) -> dict[str, float]:
    """Run every registered check; returns name -> max relative error."""
    results = {}
    for name, check in PRIMITIVE_CHECKS.items():
        results[name] = check(np.random.default_rng(seed))
    return results


def end_to_end_check(
    loss_fn: Callable[[], "ad.Tensor"],
    params: dict[str, "ad.Tensor"],
    n_samples: int = 10,
    h: float = 1e-5,
    seed: int = 0,
) -> float:
    """Spot-check dLoss/dParam on randomly chosen parameter elements.

    `loss_fn` must be deterministic across calls and must read parameter
    values through `params[...].data` so the re-evaluation sees the
    perturbed copies. The whole check runs in float64 (the ops preserve
    input dtype) so it measures backward-graph correctness, not the
    single-precision accumulation noise of the production forward pass.
    `h` trades truncation error against crossing a relu/max branch
    boundary inside the difference interval; in float64 the roundoff at
    1e-5 is still negligible while the kink window shrinks accordingly.
    """
    originals = {name: p.data for name, p in params.items()}
    for p in params.values():
        p.data = p.data.astype(np.float64)
    loss = loss_fn()
    loss.backward()
    analytic = {name: (p.grad.copy() if p.grad is not None else np.zeros_like(p.data)) for name, p in params.items()}
    for p in params.values():
        p.grad = None

    rng = np.random.default_rng(seed)
    names = sorted(params)
    worst = 0.0
    try:
        for _ in range(n_samples):
            name = names[rng.integers(len(names))]
            p = params[name]
            flat = p.data.reshape(-1)
            i = int(rng.integers(flat.size))
            orig = flat[i]
            with ad.no_grad():
                flat[i] = orig + h
                fp = loss_fn().item()
                flat[i] = orig - h
                fm = loss_fn().item()
                flat[i] = orig
            numeric = (fp - fm) / (2.0 * h)
            a = float(analytic[name].reshape(-1)[i])
            scale = max(abs(a), abs(numeric))
            err = 0.0 if scale < 1e-8 else abs(a - numeric) / scale
            worst = max(worst, err)
    finally:
        for name, p in params.items():
            p.data = originals[name]
            p.grad = None
    return worst
