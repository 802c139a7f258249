"""Property suites for the two convolution and product estimates.

LEM1: for ``alpha, beta >= 1`` and ``0 < sigma <= min(alpha, beta)``

    (1+|x-xi_i|)^-alpha (1+|x-xi_j|)^-beta
        <= C |xi_i-xi_j|^-sigma ((1+|x-xi_i|)^-(alpha+beta-sigma) + (1+|x-xi_j|)^-(alpha+beta-sigma)).

LEM2: ``int |y|^-mu (1+|z-y|)^-(alpha+eta) dy <= C (1+|z|)^-(alpha-4+mu)`` with
``z = lam (x - xi)``. The integral is the Riesz potential of the radial
profile ``(1+s)^-(alpha+eta)`` at radius ``|z|``.

Each suite fits ``C`` on a held-out prefix of the samples and counts
violations of ``1.01 C`` on the rest. The fit climbs from every held-out
sample to a local maximum of the ratio in scale-invariant coordinates, since
the suprema sit at limits (separation to infinity) that a finite sample only
approaches. A climb that ends on the cap of an unbounded coordinate with the
ratio still growing marks the constant as unbounded.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.special import beta as beta_fn

from .exceptions import DomainError
from .quadrature_engine import riesz_radial

__all__ = [
    "SuiteResult",
    "lem1_ratio",
    "lem2_integral",
    "lem2_ratio",
    "lem2_at_origin",
    "fit_constant",
    "lem1_suite",
    "lem2_suite",
]

DEFAULT_ETA = 0.25
LOG_CAP = math.log(1e8)


def lem1_ratio(x, xi_i, xi_j, alpha: float, beta: float, sigma: float) -> np.ndarray:
    """Left side over the ``C``-free right side of LEM1 (vectorised over leading axes)."""
    if not (alpha >= 1 and beta >= 1 and 0 < sigma <= min(alpha, beta)):
        raise DomainError("need alpha, beta >= 1 and 0 < sigma <= min(alpha, beta)")
    x, xi_i, xi_j = (np.asarray(v, dtype=float) for v in (x, xi_i, xi_j))
    di = 1.0 + np.linalg.norm(x - xi_i, axis=-1)
    dj = 1.0 + np.linalg.norm(x - xi_j, axis=-1)
    d = np.linalg.norm(xi_i - xi_j, axis=-1)
    e = alpha + beta - sigma
    # work in logs so that far samples do not underflow
    lhs = -alpha * np.log(di) - beta * np.log(dj)
    rhs = -sigma * np.log(d) + np.logaddexp(-e * np.log(di), -e * np.log(dj))
    return np.exp(lhs - rhs)


def lem2_integral(z, mu: float, alpha: float, eta: float = DEFAULT_ETA, chunk: int = 256) -> np.ndarray:
    """``int_{R^4} |y|^-mu (1+|z-y|)^-(alpha+eta) dy`` as a function of ``|z|``."""
    gamma = alpha + eta
    if not gamma > 4.0 - mu:
        raise DomainError(f"alpha + eta = {gamma} must exceed 4 - mu = {4.0 - mu}")
    z = np.abs(np.asarray(z, dtype=float))
    flat = z.ravel()
    out = np.empty_like(flat)
    # chunks bound the memory of the vectorised quadrature
    for i in range(0, flat.size, chunk):
        out[i : i + chunk] = riesz_radial(lambda s: (1.0 + s) ** (-gamma), mu, flat[i : i + chunk], rtol=1e-9)
    return out.reshape(z.shape)


def lem2_at_origin(mu: float, alpha: float, eta: float = DEFAULT_ETA) -> float:
    """Closed form at ``z = 0``: ``2 pi^2 B(4 - mu, alpha + eta - 4 + mu)``."""
    return 2.0 * math.pi**2 * float(beta_fn(4.0 - mu, alpha + eta - 4.0 + mu))


def lem2_ratio(z, mu: float, alpha: float, eta: float = DEFAULT_ETA) -> np.ndarray:
    z = np.abs(np.asarray(z, dtype=float))
    return lem2_integral(z, mu, alpha, eta) * (1.0 + z) ** (alpha - 4.0 + mu)


def fit_constant(ratios, n_fit: int = 100) -> float:
    """Maximum of the first ``n_fit`` ratios (the plain sample fit)."""
    r = np.asarray(ratios, dtype=float)
    return float(np.max(r[:n_fit]))


def _ascend(fun, seeds, lo, hi, step: float = 1.0, min_step: float = 1e-4, max_iter: int = 400):
    """Coordinate hill climb of ``fun`` from every seed, vectorised over seeds.

    ``fun`` maps ``(n, p)`` to ``(n,)``; coordinates are clipped to ``[lo, hi]``.
    """
    x = np.clip(np.array(seeds, dtype=float), lo, hi)
    f = fun(x)
    h = np.full(len(x), step)
    for _ in range(max_iter):
        if np.all(h < min_step):
            break
        moved = np.zeros(len(x), dtype=bool)
        for j in range(x.shape[1]):
            for sgn in (1.0, -1.0):
                y = x.copy()
                y[:, j] = np.clip(y[:, j] + sgn * h, lo[j], hi[j])
                fy = fun(y)
                better = fy > f * (1.0 + 1e-13)
                x[better], f[better] = y[better], fy[better]
                moved |= better
        h = np.where(moved, h, h / 2.0)
    return x, f


@dataclass
class SuiteResult:
    """Outcome of one property suite.

    Attributes
    ----------
    name : str
    params : dict
    C : float
        Constant fitted on the held-out prefix.
    C_samples : float
        Plain maximum over the held-out samples.
    unbounded : bool
        The climb escaped to infinity along a scale coordinate.
    violations : int
        Verification samples with ratio above ``slack * C``.
    max_ratio : float
        Largest verification ratio.
    growth : float
        Ratio at the maximiser over the ratio one decade back along the scale
        coordinate when the climb ended on its cap; 1 otherwise.
    worst : dict
        Sample attaining ``max_ratio``.
    """

    name: str
    params: dict
    n_fit: int
    n_verify: int
    C: float
    C_samples: float
    unbounded: bool
    slack: float
    violations: int
    max_ratio: float
    worst: dict = field(default_factory=dict)
    growth: float = 1.0

    @property
    def passed(self) -> bool:
        return self.violations == 0 and not self.unbounded


def _log_uniform(rng, lo, hi, n):
    return np.exp(rng.uniform(math.log(lo), math.log(hi), n))


def _unit(rng, n):
    g = rng.normal(size=(n, 4))
    return g / np.linalg.norm(g, axis=1, keepdims=True)


def lem1_suite(alpha: float, beta: float, sigma: float, n_verify: int = 10_000, n_fit: int = 100,
               seed: int = 0, slack: float = 1.01) -> SuiteResult:
    """LEM1 at random ``(x, xi_i, xi_j)``.

    Separations are log-uniform on ``[1e-2, 1e3]``; ``x`` is placed at a
    log-uniform distance in ``[1e-3, 1e4]`` from ``xi_i``, ``xi_j`` or
    their midpoint.
    """
    rng = np.random.default_rng(seed)
    n = n_fit + n_verify
    xi_i = rng.uniform(-1, 1, (n, 4))
    d = _log_uniform(rng, 1e-2, 1e3, n)
    e = _unit(rng, n)
    xi_j = xi_i + d[:, None] * e
    anchor = rng.integers(0, 3, n)
    base = np.where(anchor[:, None] == 0, xi_i, np.where(anchor[:, None] == 1, xi_j, 0.5 * (xi_i + xi_j)))
    x = base + _log_uniform(rng, 1e-3, 1e4, n)[:, None] * _unit(rng, n)
    r = lem1_ratio(x, xi_i, xi_j, alpha, beta, sigma)

    def invariant(q):
        # (ln d, t, ln s): x = xi_i + t d e1 + s d e2 with xi_j = xi_i + d e1
        d = np.exp(q[:, 0])
        e1 = np.zeros((len(q), 4))
        e1[:, 0] = d
        xx = np.zeros((len(q), 4))
        xx[:, 0] = q[:, 1] * d
        xx[:, 1] = np.exp(q[:, 2]) * d
        return lem1_ratio(xx, np.zeros((len(q), 4)), e1, alpha, beta, sigma)

    v = x[:n_fit] - xi_i[:n_fit]
    t = np.einsum("ij,ij->i", v, e[:n_fit]) / d[:n_fit]
    perp = np.linalg.norm(v - (t * d[:n_fit])[:, None] * e[:n_fit], axis=1) / d[:n_fit]
    seeds = np.column_stack([np.log(d[:n_fit]), t, np.log(np.maximum(perp, 1e-8))])
    lo, hi = np.array([math.log(1e-4), -10.0, math.log(1e-8)]), np.array([LOG_CAP, 10.0, math.log(1e3)])
    return _summarise("LEM1", {"alpha": alpha, "beta": beta, "sigma": sigma}, r, n_fit, slack,
                      {"x": x, "xi_i": xi_i, "xi_j": xi_j}, invariant, seeds, lo, hi, 0)


def lem2_suite(mu: float, alpha: float, eta: float = DEFAULT_ETA, n_verify: int = 10_000, n_fit: int = 100,
               seed: int = 0, slack: float = 1.01, lam_range=(1.0, 1e4), dist_range=(1e-4, 2.0)) -> SuiteResult:
    """LEM2 at random ``(lam, x, xi)``.

    ``lam`` is log-uniform on ``lam_range``, ``xi`` uniform in the unit
    ball and ``x = xi + d e`` with ``d`` log-uniform on ``dist_range``.
    """
    rng = np.random.default_rng(seed)
    n = n_fit + n_verify
    lam = _log_uniform(rng, *lam_range, n)
    xi = _unit(rng, n) * rng.uniform(0, 1, n)[:, None] ** 0.25
    x = xi + _log_uniform(rng, *dist_range, n)[:, None] * _unit(rng, n)
    z = lam * np.linalg.norm(x - xi, axis=1)
    r = lem2_ratio(z, mu, alpha, eta)
    seeds = np.log(z[:n_fit])[:, None]
    lo, hi = np.array([math.log(1e-8)]), np.array([LOG_CAP])
    return _summarise("LEM2", {"mu": mu, "alpha": alpha, "eta": eta}, r, n_fit, slack,
                      {"lam": lam, "x": x, "xi": xi, "z": z},
                      lambda q: lem2_ratio(np.exp(q[:, 0]), mu, alpha, eta), seeds, lo, hi, 0)


def _summarise(name, params, r, n_fit, slack, samples, fun, seeds, lo, hi, scale_axis) -> SuiteResult:
    q, f = _ascend(fun, seeds, lo, hi)
    i = int(np.argmax(f))
    C = float(f[i])
    # growth over the last decade of the scale coordinate at its cap
    growth = 1.0
    if q[i, scale_axis] >= hi[scale_axis] - 1e-9:
        back = q[i : i + 1].copy()
        back[0, scale_axis] -= math.log(10.0)
        growth = C / float(fun(back)[0])
    unbounded = bool(growth > slack)
    C = max(C, fit_constant(r, n_fit))
    ver = r[n_fit:]
    j = int(np.argmax(ver))
    worst = {k: np.asarray(v)[n_fit + j].tolist() for k, v in samples.items()}
    return SuiteResult(name, params, n_fit, len(ver), C, fit_constant(r, n_fit), unbounded, slack,
                       int(np.sum(ver > slack * C)), float(ver[j]), worst, float(growth))
