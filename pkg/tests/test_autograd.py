"""Gradient engine checked against central finite differences."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from roadnext import autograd as ag
from roadnext.autograd import Tensor


def numeric_grad(f, x, step=1e-6):
    """Central-difference gradient of scalar f at x (float64)."""
    g = np.zeros_like(x)
    flat_x = x.reshape(-1)
    flat_g = g.reshape(-1)
    for i in range(flat_x.size):
        orig = flat_x[i]
        flat_x[i] = orig + step
        up = f()
        flat_x[i] = orig - step
        down = f()
        flat_x[i] = orig
        flat_g[i] = (up - down) / (2 * step)
    return g


def check(build, *arrays, step=1e-6, tol=1e-6):
    """Compare reverse-mode grads of build(*tensors) against finite diffs."""
    tensors = [Tensor(a, requires_grad=True) for a in arrays]
    out = build(*tensors)
    out.backward()
    for a, t in zip(arrays, tensors):
        num = numeric_grad(lambda: float(build(*[Tensor(x) for x in arrays]).data),
                           a, step=step)
        assert t.grad is not None
        np.testing.assert_allclose(t.grad, num, rtol=tol, atol=tol)


rng = np.random.default_rng(0)


def test_add_mul_broadcast():
    a = rng.standard_normal((3, 4))
    b = rng.standard_normal(4)
    check(lambda x, y: ((x * y + y) ** 2).sum(), a, b)


def test_div_pow():
    a = rng.standard_normal((2, 3)) + 3.0
    b = rng.standard_normal(3) + 3.0
    check(lambda x, y: (x / y + x ** 1.5).sum(), a, b)


@pytest.mark.parametrize("shapes", [
    ((4,), (4,)),            # vec @ vec
    ((4,), (4, 3)),          # vec @ mat
    ((3, 4), (4,)),          # mat @ vec
    ((3, 4), (4, 2)),        # mat @ mat
    ((2, 3, 4), (4, 5)),     # batched @ mat
    ((2, 3, 4), (4,)),       # batched @ vec
    ((2, 3, 4), (2, 4, 5)),  # batched @ batched
])
def test_matmul_shapes(shapes):
    sa, sb = shapes
    a = rng.standard_normal(sa)
    b = rng.standard_normal(sb)
    check(lambda x, y: ((x @ y) ** 2).sum(), a, b)


def test_unary_chain():
    a = rng.standard_normal((3, 3)) * 0.5
    check(lambda x: (x.tanh().exp() + x.sigmoid() + x.softplus()).sum(), a)


def test_log_sqrt_positive_domain():
    a = rng.random((4,)) + 0.5
    check(lambda x: (x.log() + x.sqrt()).sum(), a)


def test_relu_clip_away_from_kink():
    a = rng.standard_normal((5, 5))
    a[np.abs(a) < 0.05] = 0.5  # keep probes away from the nondifferentiable point
    check(lambda x: (x.relu() + x.clip_min(0.1)).sum(), a)


def test_reductions_and_reshape():
    a = rng.standard_normal((2, 3, 4))
    check(lambda x: (x.sum(axis=1).mean(axis=-1) ** 2).sum(), a)
    check(lambda x: (x.reshape(6, 4).T @ x.reshape(6, 4)).sum(), a)


def test_getitem_fancy_and_slices():
    a = rng.standard_normal((4, 5))
    idx = np.array([0, 2, 2, 3])
    cols = np.array([1, 1, 0, 4])
    check(lambda x: (x[idx, cols] ** 2).sum(), a)
    check(lambda x: (x[1:, ::2] ** 2).sum(), a)


def test_getitem_repeated_index_accumulates():
    t = Tensor(np.array([1.0, 2.0]), requires_grad=True)
    out = t[np.array([0, 0, 1])].sum()
    out.backward()
    np.testing.assert_array_equal(t.grad, [2.0, 1.0])


def test_concat_stack():
    a = rng.standard_normal((2, 3))
    b = rng.standard_normal((2, 2))
    check(lambda x, y: (ag.concat([x, y], axis=1) ** 2).sum(), a, b)
    c = rng.standard_normal((2, 3))
    check(lambda x, y: (ag.stack([x, y], axis=1) ** 2).sum(), a, c)


def test_masked_softmax_forward():
    logits = Tensor(np.array([[1.0, 2.0, 3.0], [0.0, 0.0, 0.0]]))
    mask = np.array([[1, 0, 1], [1, 1, 1]])
    p = ag.masked_softmax(logits, mask).data
    np.testing.assert_allclose(p.sum(axis=-1), 1.0)
    assert p[0, 1] == 0.0
    np.testing.assert_allclose(p[1], [1 / 3] * 3)


def test_masked_softmax_grad():
    a = rng.standard_normal((3, 4))
    mask = np.array([[1, 1, 0, 1], [1, 1, 1, 1], [0, 1, 1, 0]])
    w = rng.standard_normal((3, 4))
    check(lambda x: (ag.masked_softmax(x, mask) * w).sum(), a)


def test_masked_entries_get_zero_grad():
    a = Tensor(rng.standard_normal((2, 3)), requires_grad=True)
    mask = np.array([[1, 0, 1], [1, 1, 0]])
    (ag.masked_softmax(a, mask) ** 2).sum().backward()
    assert a.grad[0, 1] == 0.0 and a.grad[1, 2] == 0.0


def test_layer_norm_grad():
    x = rng.standard_normal((4, 6))
    g = rng.standard_normal(6)
    b = rng.standard_normal(6)
    check(lambda t, gg, bb: (ag.layer_norm(t, gg, bb) ** 2).sum(), x, g, b)


def test_layer_norm_statistics():
    x = Tensor(rng.standard_normal((8, 16)))
    out = ag.layer_norm(x, Tensor(np.ones(16)), Tensor(np.zeros(16))).data
    np.testing.assert_allclose(out.mean(axis=-1), 0.0, atol=1e-12)
    np.testing.assert_allclose(out.std(axis=-1), 1.0, atol=1e-3)


def test_backward_requires_scalar():
    t = Tensor(np.ones(3), requires_grad=True)
    with pytest.raises(ValueError):
        (t * 2).backward()


def test_shared_subexpression_accumulates_once_per_use():
    x = Tensor(np.array(2.0), requires_grad=True)
    y = x * x        # used twice
    z = y + y        # z = 2x^2 -> dz/dx = 4x = 8
    z.backward()
    assert float(x.grad) == pytest.approx(8.0)


@settings(max_examples=25, deadline=None)
@given(st.integers(2, 5), st.integers(2, 5), st.integers(0, 2 ** 31 - 1))
def test_composite_graph_matches_finite_differences(n, m, seed):
    r = np.random.default_rng(seed)
    a = r.standard_normal((n, m))
    b = r.standard_normal((m, n))

    def f(x, y):
        h = (x @ y).tanh()
        return (h * h).mean() + h.sum() * 0.1

    check(f, a, b, tol=1e-5)
