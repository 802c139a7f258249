import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from choquard.bubble_core import ChoquardParams, make_polygon_ansatz
from choquard.exceptions import ContractError, DomainError, QuadratureError
from choquard.quadrature_engine import (
    RadialRule,
    integrate_radial,
    integrate_reduced,
    riesz_bubble_power,
    riesz_closed_form,
    riesz_general,
    riesz_radial,
)
from choquard.reduced_grid import GRID_PRESETS, ReducedField, ReducedGrid
from choquard.specials import GammaConstants, alpha_constant, lanczos_gamma, riesz_constant

from oracles import alpha_bisect, axis_riesz, radial_integral, riesz_at_origin, riesz_constant_gamma

# -- specials ---------------------------------------------------------------


def test_gamma_anchor_values():
    assert lanczos_gamma(1.0) == pytest.approx(1.0, abs=1e-12)
    assert lanczos_gamma(3.0) == pytest.approx(2.0, abs=1e-12)
    assert lanczos_gamma(0.5) == pytest.approx(math.sqrt(math.pi), abs=1e-12)
    with pytest.raises(DomainError):
        lanczos_gamma(-2.0)


@given(st.floats(-4.5, 30.0).filter(lambda v: abs(v - round(v)) > 1e-3 or v > 0.5))
def test_gamma_matches_stdlib(x):
    assert lanczos_gamma(x) == pytest.approx(math.gamma(x), rel=1e-13)


@given(st.floats(0.01, 1.99))
def test_riesz_constant_matches_stdlib_gamma(s):
    assert riesz_constant(s) == pytest.approx(riesz_constant_gamma(s), rel=1e-13)
    assert GammaConstants()(s) == riesz_constant(s)


@given(st.floats(0.05, 3.95))
def test_alpha_solves_balance(mu):
    a = alpha_constant(mu)
    assert a == pytest.approx(alpha_bisect(mu), rel=1e-13)
    assert riesz_constant(mu / 2) * a ** (7 - mu) == pytest.approx(8 * a, rel=1e-13)


def test_alpha_examples():
    assert alpha_constant(2.0) == pytest.approx((16 / math.pi**2) ** 0.25, rel=1e-15)
    assert alpha_constant(2.0) == pytest.approx(1.12838, abs=5e-6)
    # mu -> 0: I(0+) = pi^2/6
    assert alpha_constant(1e-9) == pytest.approx((48 / math.pi**2) ** (1 / 6), rel=1e-8)
    for bad in (0.0, 4.0):
        with pytest.raises(DomainError):
            alpha_constant(bad)


# -- radial rules --------------------------------------------------------------


def test_radial_rule_reproduces_quarter():
    r, w = RadialRule().nodes_weights()
    assert np.all(w > 0)
    assert np.sum(w * r**3 / (1 + r * r) ** 3) == pytest.approx(0.25, abs=1e-10)


def test_radial_rule_refinement_converged():
    f = lambda r: (1 + r * r) ** -3.0
    assert abs(integrate_radial(f, RadialRule().refine()) - integrate_radial(f)) < 1e-10


def test_integrate_radial_examples():
    assert integrate_radial(lambda r: (1 + r * r) ** -3.0) == pytest.approx(math.pi**2 / 2, abs=1e-10)
    lhs = integrate_radial(lambda r: (1 - r * r) / (1 + r * r) ** 4)
    assert lhs == pytest.approx(-math.pi**2 / 6, abs=1e-10)
    assert integrate_radial(lambda r: 0 * r) == 0.0
    with pytest.raises(QuadratureError):
        integrate_radial(lambda r: np.where(r > 1, np.nan, 1.0))


@given(st.floats(2.5, 8.0), st.floats(0.3, 3.0))
def test_integrate_radial_matches_beta_integral(p, c):
    # int_0^inf r^3 (c + r^2)^-p dr = c^(2-p) B(2, p-2) / 2
    f = lambda r: (c + r * r) ** -p
    exact = 2 * math.pi**2 * c ** (2 - p) / (2 * (p - 1) * (p - 2))
    # tails as slow as r^-2 cost about one digit
    assert integrate_radial(f) == pytest.approx(exact, rel=1e-8 if p < 3 else 1e-12)


def test_integrate_radial_matches_adaptive_fast_decay():
    f = lambda r: np.exp(-r) / (1 + r)
    assert integrate_radial(f) == pytest.approx(radial_integral(f), rel=1e-10)


# -- cubature over R^4 -----------------------------------------------------------


def test_integrate_reduced_bubble_square():
    a = make_polygon_ansatz(1, 2.0)
    al = a.amplitude
    val = integrate_reduced(lambda x: a.U(x) ** 2, trunc=100.0)
    ref = integrate_radial(lambda r: al**2 / (1 + r * r) ** 2, r_max=100.0)
    assert val == pytest.approx(ref, rel=1e-4)


def test_integrate_reduced_parity_and_volume():
    a = make_polygon_ansatz(3, 30.0)
    odd = integrate_reduced(lambda x: x[..., 2] * a.V(x) ** 3, a)
    assert abs(odd) < 1e-10 * integrate_reduced(lambda x: a.V(x) ** 3, a)
    ones = ReducedField.sample(ReducedGrid(2, 10.0, GRID_PRESETS["coarse"]), lambda x: np.ones(len(x)), weight=0.0,
                               decay=0.0)
    assert ones.integrate_against(lambda x: np.ones(len(x))) == pytest.approx(math.pi**2 * 100.0**4 / 2, rel=1e-6)


def test_integrate_reduced_tag_mismatch():
    g = ReducedGrid(2, 10.0, GRID_PRESETS["coarse"])
    f = ReducedField.sample(g, lambda x: np.ones(len(x)), weight=8.0)
    with pytest.raises(ContractError):
        integrate_reduced(f, make_polygon_ansatz(3, 10.0))


def test_bubble_power_tail_correction():
    f = lambda x: (1 + np.sum(x * x, -1)) ** -3.0
    val = integrate_reduced(f, trunc=40.0, tail_correction=True)
    assert val == pytest.approx(math.pi**2 / 2, rel=1e-5)
    assert integrate_reduced(f) == pytest.approx(math.pi**2 / 2, rel=1e-6)


# -- Riesz potentials -----------------------------------------------------------


def test_riesz_closed_form_examples():
    assert riesz_closed_form(1.0, np.zeros(4)) == pytest.approx(math.pi**2 / 2, rel=1e-14)
    assert riesz_closed_form(1.0, np.array([1.0, 0, 0, 0])) == pytest.approx(math.pi**2 / 4, rel=1e-14)
    assert riesz_closed_form(1.99, 0.0) > 1e2
    with pytest.raises(DomainError):
        riesz_closed_form(2.0, 0.0)


@pytest.mark.parametrize("mu", [1.0, 2.0, 3.0])
def test_riesz_radial_bubble_power_identity(mu):
    a = alpha_constant(mu)
    p = 4 - mu / 2
    r = np.linspace(0, 10, 50)
    num = riesz_radial(lambda s: (a / (1 + s * s)) ** p, mu, r)
    ref = riesz_bubble_power(mu, r, a)
    err = np.abs(num / ref - 1)
    assert err.max() <= (1e-6 if mu < 3 else 1e-4)
    # literal decay form: potential times (1+r^2)^(mu/2) is constant
    const = num * (1 + r * r) ** (mu / 2)
    assert np.ptp(const) / const.mean() <= 1e-5


def test_riesz_radial_at_origin_matches_adaptive():
    f = lambda s: (1 + s * s) ** -3.0
    assert riesz_radial(f, 1.0, np.array([0.0]))[0] == pytest.approx(riesz_at_origin(f, 1.0), rel=1e-8)
    assert np.all(riesz_radial(lambda s: 0 * s, 2.0, np.array([0.0, 1.0, 5.0])) == 0)
    with pytest.raises(DomainError):
        riesz_radial(f, 4.0, np.array([1.0]))


@settings(max_examples=15)
@given(st.floats(0.5, 3.5), st.floats(0.2, 3.0), st.floats(4.2, 8.0))
def test_riesz_radial_positive(mu, c, q):
    f = lambda s: (c + s * s) ** (-q / 2) * (1.5 + np.cos(3 * s))
    vals = riesz_radial(f, mu, np.array([0.0, 0.3, 1.0, 4.0]))
    assert np.all(vals > 0)


@pytest.mark.parametrize("mu,name", [(2.0, "default"), (1.0, "coarse")])
def test_riesz_general_bubble_power(mu, name):
    g = ReducedGrid(2, 10.0, GRID_PRESETS[name])
    a, p = alpha_constant(mu), 4 - mu / 2
    f = ReducedField.sample(g, lambda x: (a / (1 + np.sum(x * x, -1))) ** p, weight=8 - mu, decay=2 * p, mu=mu)
    rng = np.random.default_rng(0)
    x = rng.normal(size=(30, 4))
    x *= (rng.uniform(0, 5, 30) / np.linalg.norm(x, axis=1))[:, None]
    num = riesz_general(f, mu, x)
    assert np.max(np.abs(num / (a**p * riesz_closed_form(mu / 2, x)) - 1)) <= 5e-3
    zero = ReducedField(g, np.zeros(g.n), weight=8 - mu, decay=2 * p, mu=mu)
    assert np.all(riesz_general(zero, mu, x) == 0)


@pytest.mark.parametrize("mu", [1.0, 2.0])
def test_riesz_general_two_centres(mu):
    a = make_polygon_ansatz(2, 10.0, ChoquardParams(mu=mu))
    p, al, lam, rho = 4 - mu / 2, a.amplitude, 10.0, a.rho
    dens = lambda y1, s: (al * lam / (1 + lam**2 * ((y1 - rho) ** 2 + s * s))
                          + al * lam / (1 + lam**2 * ((y1 + rho) ** 2 + s * s))) ** p
    ref = axis_riesz(dens, rho, mu, breaks_r=(0.05, 0.3, 1.0, 2 * rho, 3.0))
    g = ReducedGrid(2, 10.0, GRID_PRESETS["default"])
    f = ReducedField.sample(g, lambda x: a.V(x) ** p, weight=8 - mu, decay=2 * p, mu=mu)
    assert riesz_general(f, mu, a.centers[:1])[0] == pytest.approx(ref, rel=5e-3)


def test_riesz_general_contracts():
    g = ReducedGrid(2, 10.0, GRID_PRESETS["coarse"])
    with pytest.raises(ContractError):
        riesz_general(ReducedField(g, np.ones(g.n), weight=6.0, decay=None), 2.0, np.zeros((1, 4)))
    with pytest.raises(ContractError):
        riesz_general(ReducedField(g, np.ones(g.n), weight=5.0, decay=6.0), 2.0, np.zeros((1, 4)))
    with pytest.raises(ContractError):
        riesz_general(lambda x: x, 2.0, np.zeros((1, 4)))


# -- grid fields -------------------------------------------------------------------


def test_field_serialisation_roundtrip(tmp_path):
    g = ReducedGrid(2, 10.0, GRID_PRESETS["coarse"])
    f = ReducedField.sample(g, lambda x: np.exp(-np.sum(x * x, -1)), weight=6.0, parity=-1, decay=None, mu=1.5)
    path = tmp_path / "f.chq"
    f.save(path)
    h = ReducedField.load(path)
    assert np.array_equal(h.values, f.values)
    assert (h.weight, h.parity, h.decay, h.mu) == (6.0, -1, None, 1.5)
    assert h.grid.k == 2 and h.grid.lam == 10.0 and h.grid.shape == g.shape
    assert path.read_bytes()[:4] == b"CHQF"
    f.to_csv(tmp_path / "f.csv")
    assert (tmp_path / "f.csv").read_text().splitlines()[0].endswith("value")


def test_grid_resolves_concentration_scale():
    for k, lam in ((2, 1e3), (3, 50.0)):
        ReducedGrid(k, lam, GRID_PRESETS["coarse"]).check_resolution(8.0)
