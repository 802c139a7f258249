import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from choquard.bubble_core import (
    Bubble,
    ChoquardParams,
    KernelFunction,
    eval_bubble,
    eval_V,
    eval_Z,
    group_images,
    kelvin_transform,
    make_polygon_ansatz,
    symmetry_reduce,
)
from choquard.exceptions import DomainError, InvalidScaleError
from choquard.specials import alpha_constant

from oracles import alpha_bisect, bubble

lams = st.floats(1.01, 1e4)
ks = st.integers(2, 6)
pts = st.lists(st.floats(-3, 3), min_size=4, max_size=4).map(np.array)


def test_params_validation():
    with pytest.raises(DomainError):
        ChoquardParams(mu=4.0)
    with pytest.raises(DomainError):
        ChoquardParams(beta=0.0)
    with pytest.raises(DomainError):
        ChoquardParams(tau=1.0)
    with pytest.raises(DomainError):
        ChoquardParams(trunc_radius=10.0)
    with pytest.warns(RuntimeWarning):
        ChoquardParams(mu=3.2, tau=0.5)


def test_polygon_k2_lambda2():
    a = make_polygon_ansatz(2, 2.0)
    assert a.rho == pytest.approx(math.sqrt(3) / 2, rel=1e-15)
    np.testing.assert_allclose(a.centers, [[math.sqrt(3) / 2, 0, 0, 0], [-math.sqrt(3) / 2, 0, 0, 0]], atol=1e-15)


def test_polygon_k4_large_lambda():
    a = make_polygon_ansatz(4, 1e8)
    np.testing.assert_allclose(a.centers, [[1, 0, 0, 0], [0, 1, 0, 0], [-1, 0, 0, 0], [0, -1, 0, 0]], atol=1e-12)


def test_polygon_invalid_scale():
    with pytest.raises(InvalidScaleError):
        make_polygon_ansatz(3, 1.0)


@given(ks, lams)
def test_polygon_invariants(k, lam):
    a = make_polygon_ansatz(k, lam)
    assert abs(1.0 / lam**2 + a.rho**2 - 1.0) <= 4e-16
    np.testing.assert_allclose(np.linalg.norm(a.centers, axis=1), a.rho, rtol=1e-14)
    assert np.all(a.centers[:, 2:] == 0)
    th = 2 * np.pi / k
    rot = np.array([[math.cos(th), -math.sin(th)], [math.sin(th), math.cos(th)]])
    for j in range(k - 1):
        np.testing.assert_allclose(rot @ a.centers[j, :2], a.centers[j + 1, :2], atol=1e-14)
    assert a.amplitude == alpha_constant(a.params.mu)


def test_eval_bubble_examples():
    assert eval_bubble(Bubble(np.zeros(4), 1.0, 1.0), np.zeros(4)) == 1.0
    assert eval_bubble(Bubble(np.zeros(4), 2.0, 1.0), [1, 0, 0, 0]) == pytest.approx(0.4, rel=1e-15)
    alpha = alpha_bisect(2.0)
    assert alpha == pytest.approx(1.12838, abs=5e-6)
    assert eval_bubble(Bubble(np.zeros(4), 1.0, alpha), [0, 1, 0, 0]) == pytest.approx(alpha / 2, rel=1e-14)
    assert alpha / 2 == pytest.approx(0.5642, abs=5e-5)


@given(pts, lams, pts)
def test_bubble_matches_oracle(x, lam, xi):
    b = Bubble(xi, lam, 1.3)
    assert b(x) == pytest.approx(bubble(x, 1.3, lam, xi)[0], rel=1e-14)
    assert b(xi) == pytest.approx(1.3 * lam, rel=1e-15)


def test_eval_V_examples():
    a2 = make_polygon_ansatz(2, 3.0)
    x = np.array([0, 0, 0.7, 0])
    assert eval_V(a2, x) == pytest.approx(2 * a2.bubbles[0](x), rel=1e-15)
    a3 = make_polygon_ansatz(3, 5.0)
    al, lam, rho = a3.amplitude, 5.0, a3.rho
    assert eval_V(a3, np.zeros(4)) == pytest.approx(3 * al * lam / (1 + lam**2 * rho**2), rel=1e-14)
    a = make_polygon_ansatz(2, 2.0)
    assert eval_V(a, a.centers[0]) == pytest.approx(a.amplitude * 2 * (1 + 1 / 13), rel=1e-14)


def test_eval_Z_examples():
    a = make_polygon_ansatz(2, 2.0)
    assert eval_Z(a, np.zeros(4)) == pytest.approx(-0.5, rel=1e-14)
    big = make_polygon_ansatz(2, 1e4)
    assert eval_Z(big, big.centers[0]) == pytest.approx(1e4, rel=1e-6)
    # Z^0 vanishes on the unit sphere of each scaled kernel
    kz = KernelFunction(0, 7.0, np.array([0.1, 0.2, 0, 0]))
    assert abs(kz(np.array([0.1 + 1 / 7, 0.2, 0, 0]))) < 1e-15


def test_kernel_values():
    assert KernelFunction(0)(np.zeros(4)) == 1.0
    for i in range(1, 5):
        assert KernelFunction(i)(np.zeros(4)) == 0.0
    with pytest.raises(DomainError):
        KernelFunction(5)


def test_Z_changes_sign():
    a = make_polygon_ansatz(2, 1e3)
    assert eval_Z(a, a.centers[0]) > 0
    x = a.centers[0] + np.array([0, 0, 2.0 / a.lam, 0])
    assert eval_Z(a, x) < 0


@given(st.lists(st.floats(-2, 2), min_size=4, max_size=4).map(np.array), ks, lams)
def test_symmetry_invariance(x, k, lam):
    a = make_polygon_ansatz(k, lam)
    imgs = group_images(x, k)
    v, z = eval_V(a, x), eval_Z(a, x)
    np.testing.assert_allclose(eval_V(a, imgs), v, rtol=1e-10, atol=1e-300)
    np.testing.assert_allclose(eval_Z(a, imgs), z, rtol=1e-9, atol=1e-12 * abs(lam))


def test_kelvin_identity_constrained_bubbles():
    rng = np.random.default_rng(0)
    x = rng.normal(size=(100, 4)) * rng.uniform(0.1, 4.0, (100, 1))
    for lam in (1.2, 5.0, 300.0):
        a = make_polygon_ansatz(3, lam)
        for b in a.bubbles + [a.big_bubble]:
            err = np.abs(kelvin_transform(b)(x) - b(x)) / b(x)
            assert err.max() <= 1e-12


def test_kelvin_of_constant():
    x = np.array([[0.5, 0, 0, 0], [1, 2, 3, 4]])
    np.testing.assert_allclose(kelvin_transform(lambda y: np.ones(len(y)))(x), 1 / np.sum(x**2, axis=1))
    with pytest.raises(DomainError):
        kelvin_transform(lambda y: y[..., 0])(np.zeros(4))


def test_symmetry_reduce_examples():
    red, j = symmetry_reduce(np.array([1.0, 0, 3, 4]), 3)
    np.testing.assert_allclose(red, [1, 0, 5])
    assert j == 1
    red, j = symmetry_reduce(np.array([0.0, 1, 0, 0]), 4)
    np.testing.assert_allclose(red, [1, 0, 0], atol=1e-15)
    assert j == 2
    red, j = symmetry_reduce(np.zeros(4), 5)
    np.testing.assert_allclose(red, 0)
    assert j == 1


@given(pts, ks)
def test_symmetry_reduce_idempotent(x, k):
    red, _ = symmetry_reduce(x, k)
    x2 = np.array([red[0], red[1], red[2], 0.0])
    red2, j2 = symmetry_reduce(x2, k)
    np.testing.assert_allclose(red2, red, atol=1e-12)
    assert j2 == 1
    assert np.cos(np.arctan2(red[1], red[0])) >= np.cos(np.pi / k) - 1e-12 or np.hypot(red[0], red[1]) < 1e-12


@given(ks, lams)
def test_centers_reduce_to_first(k, lam):
    a = make_polygon_ansatz(k, lam)
    red, _ = symmetry_reduce(a.centers, k)
    np.testing.assert_allclose(red, np.tile([a.rho, 0, 0], (k, 1)), atol=1e-12)
