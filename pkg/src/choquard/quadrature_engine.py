"""Radial quadrature, Riesz potentials of radial profiles and cubature on R^4.

Radial integrals use composite Gauss-Legendre rules on a compactified
variable. Riesz potentials of radial profiles reduce the angular integral to
a Gauss hypergeometric function and integrate the remaining radial variable
with tanh-sinh quadrature, splitting off a band around the singular diagonal.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.integrate import tanhsinh
from scipy.special import hyp2f1, roots_legendre

from .bubble_core import DIM, _points, _sqnorm
from .exceptions import ContractError, DomainError, QuadratureError
from .specials import riesz_constant

SPHERE_AREA = 2.0 * math.pi**2  # |S^3|


def gauss_panels(breaks, order: int) -> tuple[np.ndarray, np.ndarray]:
    """Composite Gauss-Legendre nodes and weights on consecutive panels."""
    x0, w0 = roots_legendre(order)
    breaks = np.asarray(breaks, dtype=float)
    a, b = breaks[:-1, None], breaks[1:, None]
    nodes = 0.5 * (b - a) * x0 + 0.5 * (a + b)
    weights = 0.5 * (b - a) * w0
    return nodes.ravel(), weights.ravel()


@dataclass(frozen=True)
class RadialRule:
    """Composite Gauss rule for ``int_0^inf f(r) dr``.

    Nodes come from Gauss-Legendre panels in ``t in [0, 1)`` mapped by
    ``r = scale * t / (1 - t)``. Weights include the Jacobian of the map.
    Half of the panels are uniform on ``[0, 1/2]``; the rest shrink
    geometrically towards ``t = 1``, where algebraic tails of the integrand
    become endpoint singularities in ``t``.
    """

    panels: int = 32
    order: int = 16
    scale: float = 1.0

    def nodes_weights(self) -> tuple[np.ndarray, np.ndarray]:
        m = self.panels // 2
        tail = 1.0 - 0.5 ** np.arange(2, self.panels - m + 1)
        t, w = gauss_panels(np.concatenate([np.linspace(0.0, 0.5, m + 1), tail, [1.0]]), self.order)
        r = self.scale * t / (1.0 - t)
        return r, w * self.scale / (1.0 - t) ** 2

    @property
    def nodes(self) -> np.ndarray:
        return self.nodes_weights()[0]

    @property
    def weights(self) -> np.ndarray:
        return self.nodes_weights()[1]

    def refine(self) -> "RadialRule":
        """Rule with twice as many panels."""
        return RadialRule(2 * self.panels, self.order, self.scale)


def truncated_radial_rule(r_max: float, r_min_panel: float = 1e-3, order: int = 16):
    """Gauss rule on ``[0, r_max]`` with geometrically graded panels."""
    if r_max <= r_min_panel:
        return gauss_panels([0.0, r_max], order)
    n = max(2, int(math.ceil(math.log(r_max / r_min_panel) / math.log(1.5))))
    breaks = np.concatenate([[0.0], np.geomspace(r_min_panel, r_max, n + 1)])
    return gauss_panels(breaks, order)


def integrate_radial(f, rule: RadialRule | None = None, r_max: float | None = None) -> float:
    """``2 pi^2 int_0^inf f(r) r^3 dr`` (or up to ``r_max``).

    Raises
    ------
    QuadratureError
        If ``f`` returns a non-finite value at a node.
    """
    if r_max is None:
        r, w = (rule or RadialRule()).nodes_weights()
    else:
        r, w = truncated_radial_rule(r_max)
    vals = np.asarray(f(r), dtype=float) * np.ones_like(r)
    bad = ~np.isfinite(vals)
    if bad.any():
        raise QuadratureError("non-finite integrand sample", node=float(r[bad][0]))
    return SPHERE_AREA * math.fsum(w * vals * r**3)


def riesz_closed_form(s: float, x) -> np.ndarray:
    """``I(s) (1 + |x|^2)^{-s}``: the Riesz potential of ``(1+|y|^2)^{-(4-s)}``.

    Parameters
    ----------
    s : float
        Half the Riesz exponent, in ``(0, 2)``.
    x : array_like
        Points with last axis 4, or radii.
    """
    c = riesz_constant(s)
    x = np.asarray(x, dtype=float)
    r2 = _sqnorm(x) if (x.ndim and x.shape[-1] == DIM) else x * x
    return c * (1.0 + r2) ** (-s)


def _sphere_mean_series(m: float, t: np.ndarray) -> np.ndarray:
    """``2 pi^2 2F1(m, m-1; 2; t^2)``: angular integral of ``(1 - 2 t cos + t^2)^{-m}``."""
    return SPHERE_AREA * hyp2f1(m, m - 1.0, 2.0, t * t)


_THETA_X, _THETA_W = gauss_panels(np.linspace(0.0, math.pi, 5), 16)


def radial_kernel(r, rho, mu: float, ell: int = 0) -> np.ndarray:
    """Angular kernel ``K_ell(r, rho)`` of the Riesz potential in R^4.

    ``K_ell = 4 pi int_0^pi (r^2 + rho^2 - 2 r rho cos th)^{-mu/2} c_ell(th) sin^2 th dth``
    with ``c_0 = 1`` and ``c_1 = cos th``, so that a profile ``f(|y|) y_1/|y|``
    has Riesz potential ``x_1/|x| int f(rho) rho^3 K_1(|x|, rho) drho``.
    """
    if ell not in (0, 1):
        raise DomainError("only harmonic degrees 0 and 1 are supported")
    r, rho = np.broadcast_arrays(np.asarray(r, float), np.asarray(rho, float))
    big = np.maximum(r, rho)
    small = np.minimum(r, rho)
    with np.errstate(divide="ignore", invalid="ignore"):
        t = np.where(big > 0, small / big, 0.0)
        m = mu / 2.0
        if ell == 0:
            out = big ** (-mu) * _sphere_mean_series(m, t)
        else:
            lead = (1.0 + t * t) / (2.0 * t) * _sphere_mean_series(m, t)
            lower = _sphere_mean_series(m - 1.0, t) / (2.0 * t)
            out = big ** (-mu) * (lead - lower)
            # direct angular sum where the hypergeometric difference cancels
            sm = t < 0.05
            if np.any(sm):
                ts = t[sm][..., None]
                q = 1.0 + ts * ts - 2.0 * ts * np.cos(_THETA_X)
                val = 4.0 * math.pi * np.sum(
                    _THETA_W * q ** (-m) * np.cos(_THETA_X) * np.sin(_THETA_X) ** 2, axis=-1
                )
                out[sm] = big[sm] ** (-mu) * val
    if ell == 1:
        out = np.where(small == 0.0, 0.0, out)
    return out


def riesz_radial(f, mu: float, r, ell: int = 0, eps: float = 0.1, rtol: float = 1e-11) -> np.ndarray:
    """Riesz potential ``|.|^{-mu} * f`` of a radial profile, at radii ``r``.

    Parameters
    ----------
    f : callable
        Radial profile ``f(rho)`` (vectorised). For ``ell = 1`` the density is
        ``f(|y|) y_1/|y|`` and the result is the coefficient of ``x_1/|x|``.
    mu : float
        Riesz exponent in ``(0, 4)``.
    r : float or array_like
        Radii ``|x - xi|`` at which to evaluate.
    eps : float
        Relative half-width of the band around ``rho = r`` that is integrated
        separately with a square-root substitution.

    Raises
    ------
    DomainError
        If ``mu`` is outside ``(0, 4)`` or the tail of ``f`` makes the
        integral diverge.
    """
    if not (0.0 < mu < 4.0):
        raise DomainError(f"mu must lie in (0, 4), got {mu}")
    r_in = np.asarray(r, dtype=float)
    r_arr = np.atleast_1d(r_in).ravel()
    big = 1e6 * max(1.0, float(r_arr.max(initial=0.0)))
    f1, f2 = (abs(float(np.asarray(f(np.array([v]))).ravel()[0])) for v in (big, 2.0 * big))
    if not (np.isfinite(f1) and np.isfinite(f2)):
        raise DomainError("profile is not finite in the far field")
    if f1 > 0.0 and (f2 == 0.0 or math.log(f1 / f2) / math.log(2.0) <= 4.0 - mu):
        raise DomainError("profile does not decay fast enough for the Riesz integral")

    def smooth_part(rho, rr):
        return np.asarray(f(rho), float) * rho**3 * radial_kernel(rr, rho, mu, ell)

    def band(u, rr, sign, width):
        # rho = r + sign * width * u^2 flattens the diagonal singularity
        rho = rr + sign * width * u * u
        return 2.0 * width * u * smooth_part(rho, rr)

    total = np.zeros_like(r_arr)
    lo, hi = r_arr * (1.0 - eps), r_arr * (1.0 + eps)
    pieces = [
        (smooth_part, np.zeros_like(r_arr), lo, (r_arr,)),
        (smooth_part, hi, np.full_like(r_arr, np.inf), (r_arr,)),
        (band, np.zeros_like(r_arr), np.ones_like(r_arr), (r_arr, -1.0, r_arr * eps)),
        (band, np.zeros_like(r_arr), np.ones_like(r_arr), (r_arr, 1.0, r_arr * eps)),
    ]
    zero = r_arr == 0.0
    for fun, a, b, args in pieces:
        with np.errstate(invalid="ignore", divide="ignore", over="ignore"):
            res = tanhsinh(fun, a, b, args=args, rtol=rtol)
        val = np.where(np.isfinite(res.integral), res.integral, np.nan)
        failed = ~np.isfinite(val) | ((res.status < 0) & (res.status != -2))
        if not np.all(np.isinf(b)):
            # intervals collapse at r = 0
            val = np.where(zero, 0.0, val)
            failed &= ~zero
        if failed.any():
            raise QuadratureError("Riesz radial quadrature failed", node=float(r_arr[failed][0]))
        total += val
    return total.reshape(r_in.shape) if r_in.ndim else float(total[0])


def riesz_bubble_power(mu: float, r, amplitude: float = 1.0, scale: float = 1.0) -> np.ndarray:
    """Closed-form Riesz potential of ``U_{lam,xi}^{4-mu/2}`` at distance ``r`` from ``xi``.

    Equals ``amplitude^{4-mu/2} I(mu/2) (lam/(1 + lam^2 r^2))^{mu/2}``.
    """
    s = mu / 2.0
    r = np.asarray(r, dtype=float)
    return amplitude ** (4.0 - s) * riesz_constant(s) * (scale / (1.0 + (scale * r) ** 2)) ** s


# ---------------------------------------------------------------------------
# cubature over R^4 for callables concentrated at a few centres


def _smoothstep(u):
    """C-infinity transition from 1 (u <= 0) to 0 (u >= 1)."""
    u = np.clip(u, 0.0, 1.0)
    with np.errstate(divide="ignore", over="ignore"):
        a = np.where(u < 1.0, np.exp(-1.0 / np.maximum(1.0 - u, 1e-300)), 0.0)
        b = np.where(u > 0.0, np.exp(-1.0 / np.maximum(u, 1e-300)), 0.0)
    return a / (a + b)


def _sphere_frame(center: np.ndarray) -> np.ndarray:
    """Orthonormal frame whose first vector points along ``center``."""
    n = np.linalg.norm(center[:2])
    if n == 0.0:
        e1, e2 = np.array([1.0, 0, 0, 0]), np.array([0, 1.0, 0, 0])
    else:
        e1 = np.array([center[0] / n, center[1] / n, 0, 0])
        e2 = np.array([-e1[1], e1[0], 0, 0])
    return np.stack([e1, e2, np.array([0, 0, 1.0, 0]), np.array([0, 0, 0, 1.0])])


def _spherical_block(radii, rw, n_theta, n_phi, n_psi):
    """Points and weights of a 4D spherical product rule in the canonical frame."""
    th, tw = gauss_panels(np.linspace(0.0, math.pi, 3), n_theta // 2)
    ph, pw = gauss_panels(np.linspace(0.0, math.pi, 3), n_phi // 2)
    ps = 2.0 * math.pi * np.arange(n_psi) / n_psi
    pws = np.full(n_psi, 2.0 * math.pi / n_psi)
    R, T, P, S = np.meshgrid(radii, th, ph, ps, indexing="ij")
    W = (
        rw[:, None, None, None]
        * tw[None, :, None, None]
        * pw[None, None, :, None]
        * pws[None, None, None, :]
    )
    W = W * R**3 * np.sin(T) ** 2 * np.sin(P)
    d = np.stack(
        [
            np.cos(T),
            np.sin(T) * np.cos(P),
            np.sin(T) * np.sin(P) * np.cos(S),
            np.sin(T) * np.sin(P) * np.sin(S),
        ],
        axis=-1,
    )
    return (R[..., None] * d).reshape(-1, DIM), W.ravel()


@dataclass(frozen=True)
class ConcentratedRule:
    """Cubature on R^4 for integrands concentrated at given centres.

    The inner region ``|x| < r_outer`` is split by a partition of unity into
    pieces each integrated in spherical coordinates about one centre, with
    radial panels graded down to the concentration length ``1/lam``. The
    outer shell up to the truncation radius uses spherical coordinates
    about the origin.
    """

    centers: np.ndarray
    lam: float
    trunc: float | None = None
    r_inner: float = 2.0
    r_outer: float = 3.0
    order: int = 8
    n_theta: int = 32
    n_phi: int = 16
    n_psi: int = 4
    partition_power: float = 3.0

    def _cutoff(self, x):
        r = np.sqrt(_sqnorm(x))
        return _smoothstep((r - self.r_inner) / (self.r_outer - self.r_inner))

    def _partition(self, x, j):
        c = np.asarray(self.centers)
        b = np.stack([(1.0 + self.lam**2 * _sqnorm(x - cj)) ** (-self.partition_power) for cj in c])
        return b[j] / b.sum(axis=0)

    def blocks(self):
        """Yield ``(points, weights)`` blocks covering R^4 (or the ball)."""
        c = np.atleast_2d(np.asarray(self.centers, dtype=float))
        reach = self.r_outer + float(np.max(np.linalg.norm(c, axis=1)))
        h = 1.0 / self.lam
        breaks = [0.0, 0.5 * h]
        while breaks[-1] < reach:
            breaks.append(min(2.0 * breaks[-1], reach))
        rr, rw = gauss_panels(breaks, self.order)
        for j, cj in enumerate(c):
            pts, w = _spherical_block(rr, rw, self.n_theta, self.n_phi, self.n_psi)
            x = cj + pts @ _sphere_frame(cj)
            w = w * self._cutoff(x) * self._partition(x, j)
            keep = w != 0.0
            yield x[keep], w[keep]
        top = self.trunc if self.trunc is not None else None
        if top is not None and top <= self.r_inner:
            return
        if top is None:
            # compactified tail r = r_inner / (1 - t)
            t, tw = gauss_panels(np.linspace(0.0, 1.0, 17), self.order)
            rr = self.r_inner / (1.0 - t)
            rw = tw * self.r_inner / (1.0 - t) ** 2
        else:
            n = max(2, int(math.ceil(math.log(top / self.r_inner) / math.log(1.5))))
            rr, rw = gauss_panels(np.geomspace(self.r_inner, top, n + 1), self.order)
        pts, w = _spherical_block(rr, rw, 16, 8, self.n_psi)
        w = w * (1.0 - self._cutoff(pts))
        keep = w != 0.0
        yield pts[keep], w[keep]

    def integrate(self, f) -> float:
        total = []
        for x, w in self.blocks():
            v = np.asarray(f(x), dtype=float)
            bad = ~np.isfinite(v)
            if bad.any():
                raise QuadratureError("non-finite integrand sample", node=tuple(x[bad][0]))
            total.append(math.fsum(w * v))
        return math.fsum(total)


def integrate_reduced(f, ansatz=None, trunc: float | None = None, rule: ConcentratedRule | None = None,
                      tail_correction: bool = False) -> float:
    """Integral over R^4 (or the ball of radius ``trunc``).

    Parameters
    ----------
    f : callable or ReducedField
        Callables are integrated with a :class:`ConcentratedRule` adapted
        to the centres of ``ansatz``; grid fields use their own weights.
    ansatz : PolygonAnsatz, optional
        Supplies the centres and concentration scale. Without it the rule is
        centred at the origin with unit scale.
    trunc : float, optional
        Truncation radius; ``None`` integrates over all of R^4.
    tail_correction : bool
        With ``trunc`` set, add the power-law tail beyond ``trunc`` estimated
        from spherical means at ``trunc/2`` and ``trunc``.
    """
    from .reduced_grid import ReducedField

    if isinstance(f, ReducedField):
        if ansatz is not None and f.grid.k != ansatz.k:
            raise ContractError(f"field symmetry k={f.grid.k} does not match ansatz k={ansatz.k}")
        return f.integrate()
    if rule is None:
        if ansatz is None:
            rule = ConcentratedRule(np.zeros((1, DIM)), 1.0, trunc=trunc)
        else:
            rule = ConcentratedRule(ansatz.centers, ansatz.lam, trunc=trunc)
    val = rule.integrate(f)
    if trunc is not None and tail_correction:
        val += _power_tail(f, trunc)
    return val


def _sphere_mean(f, radius: float, n: int = 12) -> float:
    pts, w = _spherical_block(np.array([radius]), np.array([1.0]), n, n, 4)
    return float(np.sum(w * f(pts)) / (SPHERE_AREA * radius**3))


def _power_tail(f, trunc: float) -> float:
    m1, m2 = _sphere_mean(f, trunc / 2.0), _sphere_mean(f, trunc)
    if m1 == 0.0 or m2 == 0.0 or np.sign(m1) != np.sign(m2):
        return 0.0
    p = math.log(m1 / m2) / math.log(2.0)
    if p <= 4.0:
        raise DomainError(f"integrand decays like r^-{p:.3g}; tail is not integrable")
    return SPHERE_AREA * m2 * trunc**4 / (p - 4.0)


# ---------------------------------------------------------------------------
# Riesz potentials of grid fields


def reference_density(grid, mu: float):
    """Positive symmetric density with a closed-form Riesz potential.

    Sum of the critical powers of the unit bubble and of the polygon bubbles
    matching the grid's concentration scale. Returns ``(B, R_B)`` callables.
    """
    from .bubble_core import polygon_centers

    p = 4.0 - mu / 2.0
    lam = grid.lam
    cs = [np.zeros(DIM)]
    if lam > 1.0:
        cs += list(polygon_centers(grid.k, math.sqrt(1.0 - lam**-2)))
    scales = [1.0] + [lam] * (len(cs) - 1)

    def B(x):
        x = _points(x)
        return sum((s / (1.0 + s * s * _sqnorm(x - c))) ** p for c, s in zip(cs, scales))

    def RB(x):
        x = _points(x)
        return sum(riesz_bubble_power(mu, np.sqrt(_sqnorm(x - c)), 1.0, s) for c, s in zip(cs, scales))

    return B, RB


def riesz_general(f, mu: float, x, route: str = "auto", chunk: int = 256) -> np.ndarray:
    """Riesz potential ``|.|^{-mu} * f`` of a symmetric grid field at points ``x``.

    Parameters
    ----------
    f : ReducedField
        Density with Kelvin weight ``8 - mu``.
    mu : float
    x : array_like, shape (..., 4)
    route : {'auto', 'poisson', 'direct'}
        ``poisson`` solves ``-Delta w = 4 pi^2 f`` on the grid (``mu = 2``
        only) and interpolates. ``direct`` sums the folded kernel over the
        grid with a closed-form reference density subtracted near the target.
        ``auto`` picks ``poisson`` when ``mu = 2``.

    Raises
    ------
    ExtrapolationError
        If a point lies outside the truncated domain.
    ContractError
        If ``f`` lacks a tail tag or has the wrong Kelvin weight.
    """
    from .reduced_grid import ReducedField

    if not isinstance(f, ReducedField):
        raise ContractError("riesz_general expects a ReducedField")
    if f.decay is None:
        raise ContractError("field has no tail tag")
    if not (0.0 < mu < 4.0):
        raise DomainError(f"mu must lie in (0, 4), got {mu}")
    if abs(f.weight - (8.0 - mu)) > 1e-12:
        raise ContractError(f"density must have Kelvin weight {8 - mu}, got {f.weight}")
    x = _points(x)
    lead = x.shape[:-1]
    x = x.reshape(-1, DIM)
    grid = f.grid
    if route == "auto":
        route = "poisson" if mu == 2.0 else "direct"
    if route == "poisson":
        if mu != 2.0:
            raise ContractError("the Poisson route needs mu = 2")
        w = grid_riesz(f, mu)
        return w(x).reshape(lead)
    red, scale = grid.reduce_points(x)
    r2 = _sqnorm(x)
    xin = np.where((r2 > 1.0)[:, None], x / np.maximum(r2, 1e-300)[:, None], x)
    B, RB = reference_density(grid, mu)
    Bn = B(grid.points())
    out = np.empty(len(x))
    fx = f(xin)
    for s in range(0, len(x), chunk):
        xs = xin[s : s + chunk]
        KF = grid.folded_kernel(xs, mu, f.weight, f.parity)
        KB = KF if f.parity == 1 else grid.folded_kernel(xs, mu, 8.0 - mu, 1)
        c = fx[s : s + chunk] / B(xs)
        out[s : s + chunk] = KF @ f.values - c * (KB @ Bn) + c * RB(xs)
    out *= np.where(scale > 1.0, f.parity * scale ** (-mu), 1.0)
    return out.reshape(lead)


def grid_riesz(f, mu: float):
    """Riesz potential of a grid density as a grid field of weight ``mu``.

    Uses the Poisson route when ``mu = 2`` and the dense direct route
    otherwise; the result is cached on the grid by field token.
    """
    from .reduced_grid import ReducedField

    grid = f.grid

    def build():
        if mu == 2.0:
            vals = grid.newton_potential(f.values, f.parity)
        else:
            vals = riesz_operator(grid, mu, f.parity)(f.values)
        return ReducedField(grid, vals, weight=mu, parity=f.parity, decay=mu, mu=mu)

    return grid._cached(("riesz", f.token, float(mu)), build)


def riesz_operator(grid, mu: float, parity: int = 1, route: str = "auto"):
    """Linear map from node values of a weight-``(8-mu)`` density to its potential at the nodes."""
    if route == "auto":
        route = "poisson" if mu == 2.0 else "direct"
    if route == "poisson":
        return lambda F: grid.newton_potential(np.asarray(F, float), parity)

    if grid.n > 40_000:
        raise ContractError(
            f"dense direct Riesz operator on {grid.n} nodes is beyond desk scale; use mu = 2 or a coarser grid"
        )

    def build():
        pts = grid.points()
        B, RB = reference_density(grid, mu)
        Bn = B(pts)
        KF = grid.folded_kernel(pts, mu, 8.0 - mu, parity)
        KB = KF if parity == 1 else grid.folded_kernel(pts, mu, 8.0 - mu, 1)
        corr = (RB(pts) - KB @ Bn) / Bn
        return KF, corr

    KF, corr = grid._cached(("riesz_dense", float(mu), int(parity)), build)
    return lambda F: KF @ np.asarray(F, float) + corr * np.asarray(F, float)
