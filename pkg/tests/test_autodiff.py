"""Engine-level checks: tape mechanics and per-op finite-difference gradients.

All gradient checks run in float64 at tolerance 1e-5 and in float32 at 1e-3.
"""

import numpy as np
import pytest

from promptwave import autodiff as ad
from conftest import fd_gradient, rel_err


def test_sum_gradient_ones():
    p = ad.Tensor(np.array([1.0, 2.0, 3.0]), requires_grad=True, name="p")
    ad.backward(p.sum())
    assert np.array_equal(p.grad, np.ones(3))


def test_square_gradient():
    p = ad.Tensor(np.array([3.0]), requires_grad=True, name="p")
    ad.backward((p * p).sum())
    assert p.grad[0] == 6.0


def test_gradients_accumulate_until_cleared():
    p = ad.Tensor(np.array([2.0]), requires_grad=True, name="p")
    ad.backward((p * p).sum())
    ad.backward((p * p).sum())
    assert p.grad[0] == 8.0
    p.zero_grad()
    ad.backward((p * p).sum())
    assert p.grad[0] == 4.0


def test_backward_needs_scalar_on_tape():
    p = ad.Tensor(np.ones(3), requires_grad=True)
    with pytest.raises(ValueError, match="scalar"):
        ad.backward(p * 2.0)
    with pytest.raises(ad.GradientError, match="tape"):
        ad.backward(ad.Tensor(np.float64(3.0)))


def test_no_grad_blocks_recording():
    p = ad.Tensor(np.ones(3), requires_grad=True)
    with ad.no_grad():
        out = (p * 2.0).sum()
    with pytest.raises(ad.GradientError):
        ad.backward(out)


def test_non_finite_gradient_names_parameter():
    p = ad.Tensor(np.array([0.0]), requires_grad=True, name="theta.weird")
    loss = (p / p).sum()  # 0/0 -> nan forward, nan grads
    with pytest.raises(ad.GradientError, match="theta.weird"):
        ad.backward(loss)


def test_diamond_graph_accumulates_paths():
    # loss = (p + p*p); dp = 1 + 2p
    p = ad.Tensor(np.array([3.0]), requires_grad=True, name="p")
    ad.backward((p + p * p).sum())
    assert p.grad[0] == 7.0


def test_forward_determinism(rng):
    x = ad.Tensor(rng.standard_normal((4, 4)).astype(np.float32))
    w = ad.Tensor(rng.standard_normal((4, 4)).astype(np.float32), requires_grad=True)
    a = ad.matmul(x, w)
    b = ad.matmul(x, w)
    assert np.array_equal(a.data, b.data)


def _weighted(f, weight):
    return lambda: (f() * ad.Tensor(weight)).sum()


OPS64 = "add mul div matmul conv convs2 softmax tanh silu sigmoid exp sqrt gn mean repeat concat transpose reshape pow".split()


@pytest.mark.parametrize("op", OPS64)
@pytest.mark.parametrize("dtype,h,tol", [(np.float64, 1e-6, 1e-5), (np.float32, 1e-2, 1e-3)])
def test_op_gradients_match_finite_differences(op, dtype, h, tol, rng):
    def T(shape, name=None):
        return ad.Tensor(rng.standard_normal(shape).astype(dtype),
                         requires_grad=name is not None, name=name)

    p = T((2, 3, 6), "p")
    q = T((2, 3, 6), "q")
    wgt = rng.standard_normal((2, 3, 6)).astype(dtype)
    params = [p]
    if op == "add":
        f = _weighted(lambda: p + q, wgt)
        params = [p, q]
    elif op == "mul":
        f = _weighted(lambda: p * q, wgt)
        params = [p, q]
    elif op == "div":
        q2 = ad.Tensor(rng.standard_normal((2, 3, 6)).astype(dtype) + 3.0,
                       requires_grad=True, name="q2")
        f = _weighted(lambda: p / q2, wgt)
        params = [p, q2]
    elif op == "matmul":
        w = T((6, 4), "w")
        wg = rng.standard_normal((2, 3, 4)).astype(dtype)
        f = _weighted(lambda: ad.matmul(p, w), wg)
        params = [p, w]
    elif op == "conv":
        w = T((4, 3, 3), "w")
        b = T((4,), "b")
        wg = rng.standard_normal((2, 4, 6)).astype(dtype)
        f = _weighted(lambda: ad.conv1d(p, w, b, 1, 1), wg)
        params = [p, w, b]
    elif op == "convs2":
        w = T((4, 3, 4), "w")
        b = T((4,), "b")
        wg = rng.standard_normal((2, 4, 3)).astype(dtype)
        f = _weighted(lambda: ad.conv1d(p, w, b, 2, 1), wg)
        params = [p, w, b]
    elif op == "softmax":
        f = _weighted(lambda: ad.softmax(p, axis=-1), wgt)
    elif op == "tanh":
        f = _weighted(lambda: ad.tanh(p), wgt)
    elif op == "silu":
        f = _weighted(lambda: ad.silu(p), wgt)
    elif op == "sigmoid":
        f = _weighted(lambda: ad.sigmoid(p), wgt)
    elif op == "exp":
        f = _weighted(lambda: ad.exp(p * 0.3), wgt)
    elif op == "sqrt":
        p2 = ad.Tensor(rng.random((2, 3, 6)).astype(dtype) + 0.5, requires_grad=True, name="p2")
        f = _weighted(lambda: ad.sqrt(p2), wgt)
        params = [p2]
    elif op == "gn":
        gma = T((3,), "gamma")
        bta = T((3,), "beta")
        f = _weighted(lambda: ad.group_norm(p, gma, bta, 3), wgt)
        params = [p, gma, bta]
    elif op == "mean":
        f = lambda: ad.reduce_mean(p * p)
    elif op == "repeat":
        wg = rng.standard_normal((2, 3, 12)).astype(dtype)
        f = _weighted(lambda: ad.repeat(p, 2, 2), wg)
    elif op == "concat":
        wg = rng.standard_normal((2, 6, 6)).astype(dtype)
        f = _weighted(lambda: ad.concat([p, q], 1), wg)
        params = [p, q]
    elif op == "transpose":
        wg = rng.standard_normal((6, 3, 2)).astype(dtype)
        f = _weighted(lambda: ad.transpose(p, (2, 1, 0)), wg)
    elif op == "reshape":
        wg = rng.standard_normal((6, 6)).astype(dtype)
        f = _weighted(lambda: ad.reshape(p, (6, 6)), wg)
    elif op == "pow":
        p2 = ad.Tensor(rng.random((2, 3, 6)).astype(dtype) + 0.5, requires_grad=True, name="p2")
        f = _weighted(lambda: p2 ** 3, wgt)
        params = [p2]
    else:
        raise AssertionError(op)

    for param in params:
        analytic, numeric = fd_gradient(f, param, h)
        assert rel_err(analytic, numeric) < tol, f"{op}: {param.name}"


def test_broadcasting_gradients(rng):
    # [B,C,L] * [1,C,1] + [C,1] style broadcasts unbroadcast correctly
    x = ad.Tensor(rng.standard_normal((2, 3, 4)))
    s = ad.Tensor(rng.standard_normal((1, 3, 1)), requires_grad=True, name="s")
    b = ad.Tensor(rng.standard_normal((3, 1)), requires_grad=True, name="b")
    wgt = rng.standard_normal((2, 3, 4))
    f = lambda: ((x * s + b) * ad.Tensor(wgt)).sum()
    for p, expect in ((s, (wgt * x.data).sum(axis=(0, 2)).reshape(1, 3, 1)),
                      (b, wgt.sum(axis=(0, 2)).reshape(3, 1))):
        p.zero_grad()
        ad.backward(f())
        assert np.allclose(p.grad, expect, atol=1e-12)


def test_param_store_determinism_and_naming():
    s1 = ad.ParamStore(rng=np.random.default_rng(5))
    s2 = ad.ParamStore(rng=np.random.default_rng(5))
    for s in (s1, s2):
        s.add("a.w", (3, 3), "fan_in_uniform", fan_in=3)
        s.add("a.b", (3,), "zeros")
    assert np.array_equal(s1["a.w"].data, s2["a.w"].data)
    assert s1.count() == 12
    with pytest.raises(ValueError, match="duplicate"):
        s1.add("a.w", (1,), "zeros")


def test_param_store_load_state_shape_check():
    s = ad.ParamStore()
    s.add("w", (2, 2), "zeros")
    with pytest.raises(ValueError, match="shape"):
        s.load_state({"w": np.zeros((3, 3), np.float32)})
    with pytest.raises(KeyError):
        s.load_state({})


def test_shape_store_counts_without_allocating():
    s = ad.ShapeStore()
    s.add("big", (50_000, 50_000), "fan_in_uniform", fan_in=1)
    assert s.count() == 2_500_000_000
