"""The Choquard nonlinearity ``g``, its linearisation and consistency checks.

``g(u) = (|x|^{-mu} * |u|^p) |u|^{p-2} u`` with ``p = 4 - mu/2``. Fields may
be single bubbles (closed form), radial profiles (radial Riesz quadrature)
or symmetric grid fields (grid Riesz potentials).
"""

from __future__ import annotations

import math
import threading
from dataclasses import dataclass, field
from typing import Callable, NamedTuple

import numpy as np

from .bubble_core import DIM, Bubble, ChoquardParams, KernelFunction, _points, _sqnorm
from .exceptions import ContractError, DomainError
from .quadrature_engine import grid_riesz, integrate_radial, riesz_bubble_power, riesz_radial
from .reduced_grid import ReducedField
from .specials import alpha_constant, riesz_constant

__all__ = [
    "OperatorContext",
    "RadialProfile",
    "alpha_constant",
    "apply_g",
    "apply_g_prime",
    "residual_single",
    "linearized_residual",
    "hls_sanity",
    "near_kernel_check",
]


@dataclass
class OperatorContext:
    """Parameters plus a synchronised cache of Riesz potentials.

    The cache is keyed by ``(field token, mu)``; fields are immutable so
    entries never go stale.
    """

    params: ChoquardParams = field(default_factory=ChoquardParams)
    cache: dict = field(default_factory=dict)

    def __post_init__(self):
        self._lock = threading.RLock()

    @property
    def mu(self) -> float:
        return self.params.mu

    @property
    def p(self) -> float:
        return self.params.p

    def riesz(self, f: ReducedField) -> ReducedField:
        key = (f.token, self.mu)
        with self._lock:
            hit = self.cache.get(key)
        if hit is not None:
            return hit
        val = grid_riesz(f, self.mu)
        with self._lock:
            self.cache.setdefault(key, val)
            return self.cache[key]


@dataclass(frozen=True)
class RadialProfile:
    """Field ``f(|x - center|) * Y(x)`` with ``Y = 1`` or ``Y = (x - c)_axis/|x - c|``.

    Attributes
    ----------
    f : callable
        Radial profile, vectorised.
    center : ndarray
    ell : int
        Harmonic degree (0 or 1).
    axis : int
        Coordinate index of the degree-one harmonic.
    decay : float or None
        Decay exponent of ``f`` at infinity (tail tag).
    """

    f: Callable
    center: np.ndarray = field(default_factory=lambda: np.zeros(DIM))
    ell: int = 0
    axis: int = 0
    decay: float | None = 2.0

    def harmonic(self, x):
        y = _points(x) - self.center
        if self.ell == 0:
            return np.ones(y.shape[:-1])
        r = np.sqrt(_sqnorm(y))
        return np.divide(y[..., self.axis], r, out=np.zeros_like(r), where=r > 0)

    def __call__(self, x):
        y = _points(x) - self.center
        return self.f(np.sqrt(_sqnorm(y))) * self.harmonic(x)


def _check_tail(u):
    if isinstance(u, (ReducedField, RadialProfile)) and u.decay is None:
        raise ContractError("field has no tail tag; its Riesz potential may diverge")


def _powers(u, p):
    """``|u|^p`` and ``|u|^{p-2} u`` with 0 at zeros."""
    a = np.abs(u)
    return a**p, np.where(a > 0, a ** (p - 2.0) * u, 0.0)


def apply_g(u, ctx: OperatorContext):
    """``g(u)`` for a bubble, radial profile or grid field.

    Returns
    -------
    callable or ReducedField
        Grid fields map to grid fields (Kelvin weight 6); other inputs map to
        callables of points.
    """
    mu, p = ctx.mu, ctx.p
    if isinstance(u, (int, float)) and u == 0:
        return lambda x: np.zeros(_points(x).shape[:-1])
    _check_tail(u)
    if isinstance(u, Bubble):
        c = u.amplitude ** (7.0 - mu) * riesz_constant(mu / 2.0)

        def gb(x):
            d2 = _sqnorm(_points(x) - u.center)
            return c * (u.scale / (1.0 + u.scale**2 * d2)) ** 3

        return gb
    if isinstance(u, ReducedField):
        up, um = _powers(u.values, p)
        dens = ReducedField(u.grid, up, weight=2.0 * p, parity=1, decay=p * (u.decay or 2.0), mu=mu)
        R = ctx.riesz(dens)
        return u.like(R.values * um, weight=6.0, decay=None if u.decay is None else u.decay + 4.0)
    if isinstance(u, RadialProfile):
        if u.ell != 0:
            raise ContractError("g is only defined here for radial (degree-zero) profiles")
        prof = lambda r: np.abs(u.f(r)) ** p
        return _radial_product(prof, u, lambda v: _powers(v, p)[1], mu)
    raise ContractError(f"unsupported field type {type(u).__name__}")


def _radial_product(density_profile, u: RadialProfile, local, mu, ell=0, axis=0, harmonic_field=None):
    """Callable ``x -> Riesz[density](x) * local(u(x))`` with radial Riesz quadrature."""

    def fx(x):
        x = _points(x)
        lead = x.shape[:-1]
        r = np.sqrt(_sqnorm(x.reshape(-1, DIM) - u.center))
        ur, inv = np.unique(r, return_inverse=True)
        R = np.asarray(riesz_radial(density_profile, mu, ur, ell=ell))[inv]
        if ell == 1:
            R = R * RadialProfile(lambda s: 1.0, u.center, 1, axis).harmonic(x.reshape(-1, DIM))
        loc = local(u(x.reshape(-1, DIM)))
        if harmonic_field is not None:
            loc = loc * harmonic_field(x.reshape(-1, DIM))
        return (R * loc).reshape(lead)

    return fx


def apply_g_prime(u, v, ctx: OperatorContext):
    """Linearisation ``g'(u) v``.

    ``(4 - mu/2) Riesz[|u|^{p-2} u v] |u|^{p-2} u + (3 - mu/2) Riesz[|u|^p] |u|^{p-2} v``.
    Supports pairs of grid fields and pairs of radial profiles (``v`` may
    have degree one).
    """
    mu, p = ctx.mu, ctx.p
    if isinstance(v, (int, float)) and v == 0:
        return lambda x: np.zeros(_points(x).shape[:-1])
    _check_tail(u)
    _check_tail(v)
    if isinstance(u, Bubble):
        u = RadialProfile(lambda r, b=u: b.amplitude * b.scale / (1.0 + (b.scale * r) ** 2), u.center)
    if isinstance(u, ReducedField) and isinstance(v, ReducedField):
        if u.grid is not v.grid:
            raise ContractError("fields live on different grids")
        up, um = _powers(u.values, p)
        a = np.abs(u.values)
        ump = np.where(a > 0, a ** (p - 2.0), 0.0)
        d1 = ReducedField(u.grid, um * v.values, weight=2.0 * p, parity=u.parity * v.parity, decay=8.0, mu=mu)
        d0 = ReducedField(u.grid, up, weight=2.0 * p, parity=1, decay=8.0, mu=mu)
        R1, R0 = ctx.riesz(d1), ctx.riesz(d0)
        vals = p * R1.values * um + (p - 1.0) * R0.values * ump * v.values
        return v.like(vals, weight=6.0, parity=v.parity, decay=None if v.decay is None else v.decay + 4.0)
    if isinstance(u, RadialProfile) and isinstance(v, RadialProfile):
        if u.ell != 0 or not np.allclose(u.center, v.center):
            raise ContractError("radial route needs a radial u and a profile v about the same centre")
        t1 = _radial_product(
            lambda r: _powers(u.f(r), p)[1] * v.f(r), u, lambda w: _powers(w, p)[1], mu, v.ell, v.axis
        )
        t0 = _radial_product(
            lambda r: np.abs(u.f(r)) ** p, u, lambda w: np.where(w != 0, np.abs(w) ** (p - 2.0), 0.0), mu,
            harmonic_field=v,
        )
        return lambda x: p * t1(x) + (p - 1.0) * t0(x)
    raise ContractError("apply_g_prime needs two grid fields or two radial profiles")


def _unit_bubble_profile(alpha: float) -> RadialProfile:
    return RadialProfile(lambda r: alpha / (1.0 + r * r), decay=2.0)


def residual_single(mu: float, alpha: float | None = None, route: str = "analytic"):
    """Residual ``-Delta U - g(U)`` of ``U = alpha/(1 + |x|^2)`` as a function of ``|x|``.

    Parameters
    ----------
    mu : float
    alpha : float, optional
        Amplitude; defaults to :func:`alpha_constant`.
    route : {'analytic', 'numeric'}
        ``analytic`` uses the closed-form Riesz potential; ``numeric`` uses
        radial Riesz quadrature of ``U^p``. The Laplacian is analytic in both.

    Returns
    -------
    callable
        ``r -> residual`` (accepts radii or points).
    """
    if not (0.0 < mu < 4.0):
        raise DomainError(f"mu must lie in (0, 4), got {mu}")
    a = alpha_constant(mu) if alpha is None else alpha
    p = 4.0 - mu / 2.0

    def radii(x):
        x = np.asarray(x, dtype=float)
        return np.sqrt(_sqnorm(x)) if (x.ndim and x.shape[-1] == DIM) else np.abs(x)

    def res(x):
        r = radii(x)
        lap = 8.0 * a / (1.0 + r * r) ** 3
        if route == "analytic":
            R = riesz_bubble_power(mu, r, a)
        else:
            R = np.asarray(riesz_radial(lambda s: (a / (1.0 + s * s)) ** p, mu, r))
        return lap - R * (a / (1.0 + r * r)) ** (p - 1.0)

    return res


def linearized_residual(i, ctx: OperatorContext, alpha: float | None = None):
    """``-Delta Z - g'(U) Z`` for a kernel element or a radial profile.

    Parameters
    ----------
    i : int or tuple
        Kernel index ``0..4``, or a pair ``(profile, neg_laplacian)`` of a
        :class:`RadialProfile` and a callable giving its ``-Delta``.

    Returns
    -------
    callable
        Function of points.
    """
    mu = ctx.mu
    a = alpha_constant(mu) if alpha is None else alpha
    U = _unit_bubble_profile(a)
    if isinstance(i, tuple):
        prof, neg_lap = i
    else:
        kf = KernelFunction(int(i))
        if i == 0:
            prof = RadialProfile(lambda r: (1.0 - r * r) / (1.0 + r * r) ** 2, decay=2.0)
        else:
            prof = RadialProfile(lambda r: r / (1.0 + r * r) ** 2, ell=1, axis=int(i) - 1, decay=3.0)
        neg_lap = kf.neg_laplacian
    gp = apply_g_prime(U, prof, ctx)
    return lambda x: neg_lap(x) - gp(x)


class HLSRatio(NamedTuple):
    ratio: float
    degenerate: bool


def hls_sanity(f, h, t: float, r: float, mu: float) -> HLSRatio:
    """Hardy-Littlewood-Sobolev quotient for radial profiles.

    Returns ``int int f(x) h(y) |x - y|^{-mu} / (|f|_t |h|_r)``. A vanishing
    denominator yields ratio 0 with ``degenerate = True``.

    Raises
    ------
    ContractError
        If ``1/t + mu/4 + 1/r != 2``.
    """
    if abs(1.0 / t + mu / 4.0 + 1.0 / r - 2.0) > 1e-12:
        raise ContractError("exponents must satisfy 1/t + mu/4 + 1/r = 2")
    nf = integrate_radial(lambda s: np.abs(f(s)) ** t) ** (1.0 / t)
    nh = integrate_radial(lambda s: np.abs(h(s)) ** r) ** (1.0 / r)
    if nf == 0.0 or nh == 0.0:
        return HLSRatio(0.0, True)
    from .quadrature_engine import RadialRule

    rr, ww = RadialRule(24, 12).nodes_weights()
    pot = np.asarray(riesz_radial(f, mu, rr))
    num = 2.0 * math.pi**2 * float(np.sum(ww * h(rr) * pot * rr**3))
    return HLSRatio(num / (nf * nh), False)


class NearKernel(NamedTuple):
    alignment: float
    eigenvalues: np.ndarray
    vector: np.ndarray
    t: np.ndarray


def near_kernel_check(mu: float, half_length: float = 12.0, n: int = 480) -> NearKernel:
    """Smallest eigenpair of the linearised operator on radial functions.

    Discretises ``r^3 (-Delta - g'(U)) (psi/r)`` on a uniform grid in
    ``t = ln r`` over ``[-L, L]`` with Dirichlet ends. The operator is
    symmetric; the eigenvector of smallest modulus is compared with
    ``r Z^0 = -sinh(t)/(2 cosh(t)^2)``.
    """
    p = 4.0 - mu / 2.0
    a = alpha_constant(mu)
    h = 2.0 * half_length / n
    t = -half_length + h * (np.arange(n) + 0.5)
    r = np.exp(t)
    U = a / (1.0 + r * r)
    main = np.full(n, 2.0 / h**2 + 1.0)
    M = np.diag(main) - np.diag(np.full(n - 1, 1.0 / h**2), 1) - np.diag(np.full(n - 1, 1.0 / h**2), -1)
    # nonlocal part: r_i^3 p U_i^{p-1} sum_n K(r_i, r_n) U_n^{p-1} r_n^3 h psi_n
    from .quadrature_engine import radial_kernel

    K = radial_kernel(r[:, None], r[None, :], mu)
    if mu >= 2.0:
        # diagonal singularity: replace the self term by the local cell average
        np.fill_diagonal(K, 0.0)
        ref = U**p
        RB = riesz_bubble_power(mu, r, a)
        corr = (RB - (K * (r**4 * h)[None, :]) @ ref) / ref
    else:
        corr = np.zeros(n)
    W = r**4 * h
    G = (K * W[None, :]) * (U ** (p - 1.0) / r)[None, :]
    G = G + np.diag(corr * U ** (p - 1.0) / r)
    RU = riesz_bubble_power(mu, r, a)
    M -= p * (r**3 * U ** (p - 1.0))[:, None] * G
    M -= np.diag((p - 1.0) * r**2 * RU * U ** (p - 2.0))
    Ms = 0.5 * (M + M.T)
    ev, vec = np.linalg.eigh(Ms)
    j = int(np.argmin(np.abs(ev)))
    z = -np.sinh(t) / (2.0 * np.cosh(t) ** 2)
    v = vec[:, j]
    align = abs(v @ z) / (np.linalg.norm(v) * np.linalg.norm(z))
    order = np.argsort(np.abs(ev))
    return NearKernel(float(align), ev[order[:4]], v, t)
