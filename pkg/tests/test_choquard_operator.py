import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from choquard.bubble_core import Bubble, ChoquardParams, KernelFunction, kelvin_transform
from choquard.choquard_operator import (
    OperatorContext,
    RadialProfile,
    apply_g,
    apply_g_prime,
    hls_sanity,
    linearized_residual,
    near_kernel_check,
    residual_single,
)
from choquard.exceptions import ContractError
from choquard.quadrature_engine import grid_riesz
from choquard.reduced_grid import GRID_PRESETS, ReducedField, ReducedGrid
from choquard.specials import alpha_constant


def ctx(mu=2.0):
    return OperatorContext(ChoquardParams(mu=mu))


def rand_points(n, scale=3.0, seed=0):
    rng = np.random.default_rng(seed)
    return rng.normal(size=(n, 4)) * scale / 2


@pytest.mark.parametrize("mu", [1.0, 2.0, 3.0])
def test_g_of_unit_bubble(mu):
    a = alpha_constant(mu)
    x = rand_points(50)
    g = apply_g(Bubble(np.zeros(4), 1.0, a), ctx(mu))(x)
    np.testing.assert_allclose(g, 8 * a * (1 + np.sum(x * x, 1)) ** -3, rtol=1e-13)
    # the radial quadrature route agrees with the closed form
    prof = RadialProfile(lambda r: a / (1 + r * r))
    np.testing.assert_allclose(apply_g(prof, ctx(mu))(x), g, rtol=1e-6)
    assert np.all(apply_g(0, ctx(mu))(x) == 0)


@pytest.mark.parametrize("lam", [2.0, 8.0])
def test_g_scale_covariance(lam):
    a = alpha_constant(2.0)
    xi = np.array([0.3, -0.2, 0.1, 0.0])
    x = rand_points(40, seed=1)
    lhs = apply_g(RadialProfile(lambda r: a * lam / (1 + (lam * r) ** 2), xi), ctx())(x)
    rhs = lam**3 * apply_g(Bubble(np.zeros(4), 1.0, a), ctx())(lam * (x - xi))
    np.testing.assert_allclose(lhs, rhs, rtol=1e-6)


@pytest.mark.parametrize("mu", [1.0, 2.0, 3.0])
def test_g_prime_coefficient_identity(mu):
    a = alpha_constant(mu)
    u = RadialProfile(lambda r: a / (1 + r * r))
    x = rand_points(30, seed=2)
    lhs = apply_g_prime(u, u, ctx(mu))(x)
    np.testing.assert_allclose(lhs, (7 - mu) * apply_g(u, ctx(mu))(x), rtol=1e-10)
    assert np.all(apply_g_prime(u, 0, ctx(mu))(x) == 0)


@settings(max_examples=10)
@given(st.floats(-3, 3), st.floats(-3, 3))
def test_g_prime_linear(c1, c2):
    a = alpha_constant(2.0)
    u = RadialProfile(lambda r: a / (1 + r * r))
    v = RadialProfile(lambda r: (1 - r * r) / (1 + r * r) ** 2)
    w = RadialProfile(lambda r: 1 / (1 + r * r) ** 2)
    vw = RadialProfile(lambda r: c1 * (1 - r * r) / (1 + r * r) ** 2 + c2 / (1 + r * r) ** 2)
    x = rand_points(10, seed=3)
    gp = lambda f: apply_g_prime(u, f, ctx())(x)
    np.testing.assert_allclose(gp(vw), c1 * gp(v) + c2 * gp(w), rtol=1e-9, atol=1e-12)


def test_g_prime_directional_derivative():
    a = alpha_constant(2.0)
    x = rand_points(20, seed=4)
    z = lambda r: (1 - r * r) / (1 + r * r) ** 2
    base = apply_g(RadialProfile(lambda r: a / (1 + r * r)), ctx())(x)
    lin = apply_g_prime(RadialProfile(lambda r: a / (1 + r * r)), RadialProfile(z), ctx())(x)
    errs = []
    for h in (1e-3, 1e-4):
        gh = apply_g(RadialProfile(lambda r, h=h: a / (1 + r * r) + h * z(r)), ctx())(x)
        errs.append(np.max(np.abs((gh - base) / h - lin)))
    # first-order remainder: shrinks by the step ratio
    assert errs[1] < 0.2 * errs[0]
    assert errs[0] < 1e-2 * np.max(np.abs(lin))


def test_g_on_grid_fields():
    g = ReducedGrid(2, 10.0, GRID_PRESETS["default"])
    a = alpha_constant(2.0)
    u = ReducedField.sample(g, lambda x: a / (1 + np.sum(x * x, -1)), weight=2.0, decay=2.0)
    x = rand_points(20, seed=5)
    ref = 8 * a * (1 + np.sum(x * x, 1)) ** -3
    np.testing.assert_allclose(apply_g(u, ctx())(x), ref, rtol=5e-3)
    np.testing.assert_allclose(apply_g_prime(u, u, ctx()).values, 5 * apply_g(u, ctx()).values, rtol=1e-12)
    with pytest.raises(ContractError):
        apply_g(u.like(u.values, decay=None), ctx())


def test_context_cache_transparent():
    g = ReducedGrid(2, 10.0, GRID_PRESETS["coarse"])
    f = ReducedField.sample(g, lambda x: (1 + np.sum(x * x, -1)) ** -3, weight=6.0, decay=6.0)
    c = ctx()
    first = c.riesz(f)
    assert c.riesz(f) is first
    fresh = ReducedField(g, f.values, 6.0, 1, 6.0)
    np.testing.assert_allclose(grid_riesz(fresh, 2.0).values, first.values, rtol=1e-14, atol=0)


@pytest.mark.parametrize("mu", [1.0, 2.0, 3.0])
def test_residual_single_vanishes(mu):
    r = np.linspace(0, 10, 200)
    assert np.max(np.abs(residual_single(mu)(r))) <= 1e-10
    assert np.max(np.abs(residual_single(mu)(np.array([0.0, 1.0, 5.0])))) <= 1e-10


def test_residual_single_wrong_amplitude():
    a = 2 * alpha_constant(2.0)
    r = np.linspace(0, 10, 50)
    res = residual_single(2.0, alpha=a)(r)
    np.testing.assert_allclose(res, 8 * a * (1 - 2**4) * (1 + r * r) ** -3, rtol=1e-12)
    assert np.all(res < 0)
    assert abs(residual_single(2.0, alpha=a)(np.array([1e4]))[0]) < 1e-20


def test_residual_single_kelvin_equivariant():
    res = residual_single(2.0, alpha=2 * alpha_constant(2.0))
    x = rand_points(50, seed=6)
    np.testing.assert_allclose(kelvin_transform(res, 6.0)(x), res(x), rtol=1e-12)


@pytest.mark.parametrize("mu", [1.0, 2.0, 3.0])
def test_linearized_residual_kernel(mu):
    x = rand_points(60, scale=6.0, seed=7)
    x = x[np.linalg.norm(x, axis=1) <= 10]
    w = (1 + np.sum(x * x, 1)) ** 2
    for i in (0, 1):
        assert np.max(np.abs(linearized_residual(i, ctx(mu))(x)) * w) <= 1e-3
    r1 = linearized_residual(1, ctx(mu))
    flip = x * np.array([-1, 1, 1, 1])
    np.testing.assert_allclose(r1(flip), -r1(x), atol=1e-12)


def test_linearized_residual_off_kernel():
    a = alpha_constant(2.0)
    u = RadialProfile(lambda r: a / (1 + r * r))
    x = rand_points(20, seed=8)
    res = linearized_residual((u, lambda y: 8 * a * (1 + np.sum(y * y, -1)) ** -3), ctx())(x)
    np.testing.assert_allclose(res, (2 - 6) * apply_g(u, ctx())(x), rtol=1e-6)


@pytest.mark.parametrize("mu", [1.0, 2.0, 3.0])
def test_near_kernel_alignment(mu):
    assert near_kernel_check(mu).alignment >= 0.99


def test_hls_sanity():
    a = alpha_constant(2.0)
    t = 4 / 3
    f = lambda r: (a / (1 + r * r)) ** 3
    base = hls_sanity(f, f, t, t, 2.0)
    assert not base.degenerate and np.isfinite(base.ratio) and base.ratio > 0
    # adaptive Riesz quadrature (rtol 1e-11) bounds the agreement
    assert hls_sanity(lambda r: 2 * f(r), f, t, t, 2.0).ratio == pytest.approx(base.ratio, rel=1e-9)
    # HLS-critical exponents make the quotient dilation invariant
    for lam in (0.5, 2.0, 4.0):
        fl = lambda r, lam=lam: lam**3 * f(lam * r)
        assert hls_sanity(fl, fl, t, t, 2.0).ratio == pytest.approx(base.ratio, rel=1e-3)
    zero = hls_sanity(lambda r: 0 * r, lambda r: 0 * r, t, t, 2.0)
    assert zero.ratio == 0 and zero.degenerate
    with pytest.raises(ContractError):
        hls_sanity(f, f, 2.0, 2.0, 2.0)
