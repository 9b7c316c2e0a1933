"""Differentiation engine: reverse gradients, nested-dual second derivatives,
domain errors."""

import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from thermoforge import diffcore as ad


def fd_grad(f, x, h=1e-6):
    x = np.asarray(x, float)
    g = np.zeros_like(x)
    for i in range(x.size):
        step = h * max(1.0, abs(x.flat[i]))
        xp, xm = x.copy(), x.copy()
        xp.flat[i] += step
        xm.flat[i] -= step
        g.flat[i] = (f(xp) - f(xm)) / (2 * step)
    return g


def composite(x):
    # one of every primitive that appears in the models
    a, b, c, d, e = (x[i] for i in range(5))
    return (
        a * ad.softplus(b) + ad.exp(c * 0.3) / (1.0 + d * d) + ad.tanh(e) * ad.gelu(a)
        + ad.sqrt(1.0 + a * a) + ad.log(2.0 + ad.sigmoid(d)) + (b * b) ** 1.5 * 0.1 - ad.relu(c - 0.1)
    )


def test_square_gradient():  # [TRIVIAL]
    assert ad.grad(lambda x: x * x, [3.0]) == [6.0]


def test_softplus_product_gradient():  # [DERIVED] softplus(0)=ln 2, sigmoid(0)=1/2
    gx, gy = ad.grad(lambda x, y: x * ad.softplus(y), [1.0, 0.0])
    assert gx == pytest.approx(math.log(2.0), abs=1e-15)
    assert gy == pytest.approx(0.5, abs=1e-15)


def test_random_composite_vs_fd():  # [DERIVED] finite-difference oracle
    rng = np.random.default_rng(0)
    for _ in range(50):
        x = rng.uniform(-1.5, 1.5, 5)
        (g,) = ad.grad(lambda v: composite(v), [x])
        g_fd = fd_grad(lambda v: float(composite(v)), x)
        assert np.allclose(g, g_fd, rtol=1e-6, atol=1e-8)


def test_constant_has_zero_gradient():  # [TRIVIAL]
    assert ad.grad(lambda x: (0.0 * x + 4.0).sum(), [np.ones(3)])[0].tolist() == [0.0, 0.0, 0.0]


def test_linearity():  # [DERIVED] linearity of differentiation
    rng = np.random.default_rng(1)
    x = rng.uniform(-1, 1, 5)
    f = lambda v: composite(v)
    g = lambda v: (v * v).sum() * ad.exp(v[0])
    (gf,), (gg,) = ad.grad(f, [x]), ad.grad(g, [x])
    (gl,) = ad.grad(lambda v: 2.5 * f(v) - 0.75 * g(v), [x])
    assert np.allclose(gl, 2.5 * gf - 0.75 * gg, rtol=0, atol=1e-12)


def test_second_derivative_cubic():  # [TRIVIAL]
    assert ad.second_derivative(lambda x: x * x * x, 2.0) == pytest.approx(12.0, abs=1e-12)


def test_second_derivative_softplus():  # [DERIVED] sigmoid'(0) = 1/4
    assert ad.second_derivative(ad.softplus, 0.0) == pytest.approx(0.25, abs=1e-15)


def test_second_derivative_vs_fd():  # [DERIVED] second-order central differences
    f = lambda x: ad.exp(0.5 * x) * ad.tanh(x) + ad.softplus(2 * x) * x
    fv = lambda x: float(f(np.float64(x)))
    for x in (-1.3, 0.2, 0.9):
        h = 1e-4
        fd = (fv(x + h) - 2 * fv(x) + fv(x - h)) / h**2
        assert ad.second_derivative(f, x) == pytest.approx(fd, rel=1e-4)


def test_relu_kink_uses_right_derivative():  # [TRIVIAL] declared convention
    assert ad.derivative(ad.relu, 0.0) == 0.0


@pytest.mark.parametrize("fn", [ad.log, ad.sqrt])
def test_domain_errors(fn):  # [TRIVIAL]
    with pytest.raises(ad.DomainError):
        ad.grad(lambda x: fn(x), [-1.0])


def test_nan_is_reported():  # [TRIVIAL]
    with pytest.raises(ad.NonFiniteError):
        ad.grad(lambda x: x * np.nan, [1.0])


def test_exp_clamped_linear_extension():  # [DERIVED] C1 continuation at the clamp
    x = ad.EXP_CLAMP + 5.0
    assert float(ad.exp_clamped(np.float64(x))) == pytest.approx(math.exp(ad.EXP_CLAMP) * 6.0)
    assert ad.derivative(ad.exp_clamped, x) == pytest.approx(math.exp(ad.EXP_CLAMP))


def test_array_ops_and_indexing():  # [DERIVED] FD oracle through structural ops
    rng = np.random.default_rng(3)
    A = rng.standard_normal((4, 3))
    M = rng.standard_normal((3, 3))

    def f(a):
        b = ad.einsum("ij,jk->ik", a, M)
        c = ad.concatenate([b[:, :2], a[:, 1:2].swapaxes(0, 1).swapaxes(0, 1)], axis=-1)
        return (ad.stack([c[:, 0], c[:, 1]]) ** 2).sum()

    (g,) = ad.grad(f, [A])
    assert np.allclose(g, fd_grad(lambda v: float(f(v)), A), rtol=1e-6, atol=1e-8)


def test_dual_inside_tape_gives_mixed_derivative():  # [DERIVED] d/dw of df/dx
    # f(x; w) = w x^2 -> df/dx = 2 w x -> d(df/dx)/dw = 2x
    x = 1.7
    (gw,) = ad.grad(lambda w: (w * ad.Dual(np.float64(x), np.float64(1.0)) ** 2).eps, [0.3])
    assert gw == pytest.approx(2 * x, abs=1e-14)


def test_scatter_matches_dense():  # [DERIVED] scatter-add oracle
    import scipy.sparse as sp

    S = sp.csr_matrix(np.array([[1.0, 0, 1], [0, 1, 0]]))
    x = np.array([[1.0, 2.0, 3.0]])
    (g,) = ad.grad(lambda v: (ad.scatter(S, v) * np.array([[2.0, 5.0]])).sum(), [x])
    assert g.tolist() == [[2.0, 5.0, 2.0]]


@settings(max_examples=60, deadline=None)
@given(st.lists(st.floats(-2.0, 2.0), min_size=5, max_size=5))
def test_property_gradient_matches_fd(xs):  # [DERIVED] FD oracle (property)
    x = np.array(xs)
    (g,) = ad.grad(lambda v: composite(v), [x])
    g_fd = fd_grad(lambda v: float(composite(v)), x)
    # relu kink: skip points within FD reach of c = 0.1
    if abs(x[2] - 0.1) < 1e-5:
        return
    assert np.allclose(g, g_fd, rtol=1e-6, atol=1e-7)
