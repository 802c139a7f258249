import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from choquard.estimates import (
    DEFAULT_ETA,
    fit_constant,
    lem1_ratio,
    lem1_suite,
    lem2_at_origin,
    lem2_integral,
    lem2_ratio,
    lem2_suite,
)
from choquard.exceptions import DomainError

from oracles import riesz_at_origin


def test_lem1_ratio_by_hand():
    xi_i, xi_j = np.zeros(4), np.array([3.0, 0, 0, 0])
    x = np.array([0.0, 4.0, 0, 0])  # |x - xi_i| = 4, |x - xi_j| = 5
    lhs = 5.0**-2 * 6.0**-3
    rhs = 3.0**-1.5 * (5.0**-3.5 + 6.0**-3.5)
    assert lem1_ratio(x, xi_i, xi_j, 2, 3, 1.5) == pytest.approx(lhs / rhs, rel=1e-14)


def test_lem1_domain():
    z = np.zeros(4)
    for args in ((0.5, 2, 0.5), (2, 2, 3), (2, 2, 0)):
        with pytest.raises(DomainError):
            lem1_ratio(z, z, z + 1, *args)


@given(st.floats(1, 6), st.floats(1, 6), st.floats(0.01, 1), st.integers(0, 10**6))
def test_lem1_ratio_symmetric_and_bounded(alpha, beta, frac, seed):
    sigma = frac * min(alpha, beta)
    rng = np.random.default_rng(seed)
    x, a, b = rng.normal(scale=5, size=(3, 16, 4))
    r = lem1_ratio(x, a, b, alpha, beta, sigma)
    np.testing.assert_allclose(lem1_ratio(x, b, a, beta, alpha, sigma), r, rtol=1e-12)
    # |xi_i - xi_j| <= (1+|x-xi_i|) + (1+|x-xi_j|) caps the ratio at 2^sigma
    assert np.all(r <= 2.0**sigma * (1 + 1e-12))


@pytest.mark.parametrize("params", [(1, 1, 1), (2, 3, 1.5), (4, 4, 4)])
def test_lem1_suites_hold(params):
    res = lem1_suite(*params)
    assert res.n_verify == 10_000 and res.n_fit == 100
    assert res.violations == 0 and not res.unbounded and res.passed
    assert res.C >= res.C_samples and res.max_ratio <= res.slack * res.C
    assert res.C <= 2.0 ** params[2]


@pytest.mark.parametrize("mu,alpha", [(1.0, 3.5), (2.0, 2.0), (2.0, 5.0), (3.0, 1.5)])
def test_lem2_origin_closed_form(mu, alpha):
    got = float(lem2_integral(0.0, mu, alpha))
    assert got == pytest.approx(lem2_at_origin(mu, alpha), rel=1e-8)
    prof = lambda s: (1 + s) ** -(alpha + DEFAULT_ETA)
    assert got == pytest.approx(riesz_at_origin(prof, mu), rel=1e-8)


def test_lem2_domain():
    with pytest.raises(DomainError):
        lem2_integral(1.0, 2.0, 1.5)


@pytest.mark.parametrize("mu", [1.0, 2.0, 3.0])
def test_lem2_suite_holds_at_critical_alpha(mu):
    res = lem2_suite(mu, 4.0 - mu, n_verify=2000)
    assert res.passed and res.growth <= res.slack


@pytest.mark.parametrize("alpha", [5.0, 6.0])
def test_lem2_ratio_grows_beyond_alpha_four(alpha):
    # for alpha + eta > 4 the integral decays only like |z|^-mu, so the ratio grows like |z|^(alpha-4)
    z = np.array([1e5, 1e6])
    r = lem2_ratio(z, 2.0, alpha)
    assert r[1] / r[0] == pytest.approx(10.0 ** (alpha - 4.0), rel=0.01)
    res = lem2_suite(2.0, alpha, n_verify=500)
    assert res.unbounded and not res.passed
    assert res.growth == pytest.approx(10.0 ** (alpha - 4.0), rel=0.01)


def test_fit_constant_prefix():
    r = np.array([1.0, 3.0, 2.0, 10.0])
    assert fit_constant(r, 3) == 3.0
    assert fit_constant(r, 4) == 10.0


def test_suites_are_deterministic():
    a, b = lem1_suite(2, 3, 1.5, n_verify=500), lem1_suite(2, 3, 1.5, n_verify=500)
    assert a.C == b.C and a.max_ratio == b.max_ratio and a.worst == b.worst
    c = lem1_suite(2, 3, 1.5, n_verify=500, seed=1)
    assert c.max_ratio != a.max_ratio
