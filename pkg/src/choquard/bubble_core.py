"""Bubble profiles, the polygon ansatz, kernel functions and symmetries.

Points are arrays whose last axis has length four; every evaluator is
vectorised over the leading axes.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field

import numpy as np

from .exceptions import DomainError, InvalidScaleError
from .specials import alpha_constant

DIM = 4


def _points(x) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    if x.shape[-1] != DIM:
        raise DomainError(f"points must have last axis {DIM}, got shape {x.shape}")
    return x


def _sqnorm(x: np.ndarray) -> np.ndarray:
    return np.einsum("...i,...i->...", x, x)


@dataclass(frozen=True)
class ChoquardParams:
    """Global problem parameters.

    Attributes
    ----------
    mu : float
        Riesz exponent, ``0 < mu < 4``.
    beta : float
        Coupling, ``beta < 0``.
    tau : float
        Norm weight, ``0 < tau < 1``.
    trunc_radius : float
        Truncation radius ``Lambda > 10``.
    """

    mu: float = 2.0
    beta: float = -0.01
    tau: float = 0.5
    trunc_radius: float = 100.0

    def __post_init__(self):
        if not (0.0 < self.mu < 4.0):
            raise DomainError(f"mu must lie in (0, 4), got {self.mu}")
        if not self.beta < 0.0:
            raise DomainError(f"beta must be negative, got {self.beta}")
        if not (0.0 < self.tau < 1.0):
            raise DomainError(f"tau must lie in (0, 1), got {self.tau}")
        if not self.trunc_radius > 10.0:
            raise DomainError(f"trunc_radius must exceed 10, got {self.trunc_radius}")
        if self.mu + self.tau > 3.5:
            warnings.warn(
                f"mu + tau = {self.mu + self.tau:.3g} > 3.5: weighted-norm exponents "
                "leave little decay margin",
                RuntimeWarning,
                stacklevel=3,
            )

    @property
    def p(self) -> float:
        """Critical power ``4 - mu/2``."""
        return 4.0 - self.mu / 2.0

    def with_beta(self, beta: float) -> "ChoquardParams":
        return ChoquardParams(self.mu, beta, self.tau, self.trunc_radius)


@dataclass(frozen=True)
class Bubble:
    """Profile ``alpha * lam / (1 + lam^2 |x - center|^2)``."""

    center: np.ndarray
    scale: float
    amplitude: float

    def __post_init__(self):
        object.__setattr__(self, "center", np.asarray(self.center, dtype=float).reshape(DIM))
        if not self.scale > 0:
            raise InvalidScaleError(f"bubble scale must be positive, got {self.scale}")

    def __call__(self, x) -> np.ndarray:
        return eval_bubble(self, x)

    def laplacian(self, x) -> np.ndarray:
        """Analytic ``Delta`` of the bubble."""
        y2 = self.scale**2 * _sqnorm(_points(x) - self.center)
        return -8.0 * self.amplitude * self.scale**3 / (1.0 + y2) ** 3


def eval_bubble(b: Bubble, x) -> np.ndarray:
    """Evaluate ``alpha lam / (1 + lam^2 |x - xi|^2)``."""
    d2 = _sqnorm(_points(x) - b.center)
    return b.amplitude * b.scale / (1.0 + b.scale**2 * d2)


@dataclass(frozen=True)
class KernelFunction:
    """Scaled kernel element ``lam Z^i(lam (x - center))``.

    ``Z^0 = (1 - |y|^2)/(1 + |y|^2)^2`` and ``Z^i = y_i/(1 + |y|^2)^2`` for
    ``i = 1..4``.
    """

    index: int
    scale: float = 1.0
    center: np.ndarray = field(default_factory=lambda: np.zeros(DIM))

    def __post_init__(self):
        if self.index not in (0, 1, 2, 3, 4):
            raise DomainError(f"kernel index must be in 0..4, got {self.index}")
        object.__setattr__(self, "center", np.asarray(self.center, dtype=float).reshape(DIM))

    def _y(self, x):
        return self.scale * (_points(x) - self.center)

    def __call__(self, x) -> np.ndarray:
        y = self._y(x)
        q = 1.0 + _sqnorm(y)
        num = (2.0 - q) if self.index == 0 else y[..., self.index - 1]
        return self.scale * num / q**2

    def neg_laplacian(self, x) -> np.ndarray:
        """Analytic ``-Delta`` (``24 (1-|y|^2)/(1+|y|^2)^4`` resp. ``24 y_i/(1+|y|^2)^4``)."""
        y = self._y(x)
        q = 1.0 + _sqnorm(y)
        num = (2.0 - q) if self.index == 0 else y[..., self.index - 1]
        return 24.0 * self.scale**3 * num / q**4


@dataclass(frozen=True)
class PolygonAnsatz:
    """Two-component approximate solution ``(U, V)``.

    ``U = alpha/(1 + |x|^2)`` and ``V`` is the sum of ``k`` bubbles of scale
    ``lam`` centred at the vertices of a regular polygon of radius ``rho``.
    """

    k: int
    lam: float
    rho: float
    centers: np.ndarray
    amplitude: float
    params: ChoquardParams

    @property
    def bubbles(self) -> list[Bubble]:
        return [Bubble(c, self.lam, self.amplitude) for c in self.centers]

    @property
    def big_bubble(self) -> Bubble:
        return Bubble(np.zeros(DIM), 1.0, self.amplitude)

    def U(self, x) -> np.ndarray:
        return eval_bubble(self.big_bubble, x)

    def V(self, x) -> np.ndarray:
        return eval_V(self, x)

    def Z(self, x) -> np.ndarray:
        return eval_Z(self, x)

    def kernels(self, index: int = 0) -> list[KernelFunction]:
        return [KernelFunction(index, self.lam, c) for c in self.centers]

    @property
    def min_separation(self) -> float:
        """Distance between neighbouring centres, ``2 rho sin(pi/k)``."""
        return 2.0 * self.rho * math.sin(math.pi / self.k)


def polygon_centers(k: int, rho: float) -> np.ndarray:
    ang = 2.0 * np.pi * np.arange(k) / k
    c = np.zeros((k, DIM))
    c[:, 0] = rho * np.cos(ang)
    c[:, 1] = rho * np.sin(ang)
    return c


def make_polygon_ansatz(k: int, lam: float, params: ChoquardParams | None = None) -> PolygonAnsatz:
    """Build the polygon ansatz with ``1/lam^2 + rho^2 = 1``.

    Raises
    ------
    InvalidScaleError
        If ``lam <= 1`` (``rho`` would not be positive).
    DomainError
        If ``k < 1``.
    """
    params = params or ChoquardParams()
    if int(k) != k or k < 1:
        raise DomainError(f"k must be a positive integer, got {k}")
    if not lam > 1.0:
        raise InvalidScaleError(f"lambda must exceed 1, got {lam}")
    rho = math.sqrt(-math.expm1(-2.0 * math.log(lam)))  # sqrt(1 - lam^-2) without cancellation
    return PolygonAnsatz(
        k=int(k),
        lam=float(lam),
        rho=rho,
        centers=polygon_centers(int(k), rho),
        amplitude=alpha_constant(params.mu),
        params=params,
    )


def eval_V(a: PolygonAnsatz, x) -> np.ndarray:
    """Sum of the ``k`` polygon bubbles."""
    x = _points(x)
    out = np.zeros(x.shape[:-1])
    for b in a.bubbles:
        out += eval_bubble(b, x)
    return out


def eval_Z(a: PolygonAnsatz, x) -> np.ndarray:
    """Sum of the dilation kernels ``lam Z^0(lam (x - xi_j))``."""
    x = _points(x)
    out = np.zeros(x.shape[:-1])
    for z in a.kernels(0):
        out += z(x)
    return out


def kelvin_map(x) -> np.ndarray:
    """Inversion ``x / |x|^2``; raises at the origin."""
    x = _points(x)
    r2 = _sqnorm(x)
    if np.any(r2 == 0.0):
        raise DomainError("Kelvin transform is undefined at the origin")
    return x / r2[..., None]


def kelvin_transform(f, weight: float = 2.0):
    """Return ``x -> |x|^{-weight} f(x/|x|^2)``.

    The default weight 2 is the Kelvin transform of four-dimensional harmonic
    analysis; other weights give the covariant transforms of densities.
    """

    def kf(x):
        x = _points(x)
        r2 = _sqnorm(x)
        if np.any(r2 == 0.0):
            raise DomainError("Kelvin transform is undefined at the origin")
        return r2 ** (-weight / 2.0) * np.asarray(f(x / r2[..., None]))

    return kf


def symmetry_reduce(x, k: int):
    """Map points to the fundamental sector of the polygon group.

    Parameters
    ----------
    x : array_like, shape (..., 4)
    k : int

    Returns
    -------
    reduced : ndarray, shape (..., 3)
        ``(x1, x2, s)`` with ``(x1, x2)`` rotated into the sector around
        ``xi_1`` and ``s = |(x3, x4)|``.
    sector : ndarray of int
        Index ``j`` (1-based) of the sector that contained ``x``. Points on
        a sector boundary go to the lower index.
    """
    x = _points(x)
    x1, x2 = x[..., 0], x[..., 1]
    s = np.hypot(x[..., 2], x[..., 3])
    width = 2.0 * np.pi / k
    ang = np.mod(np.arctan2(x2, x1), 2.0 * np.pi)
    j = np.ceil((ang - np.pi / k) / width - 1e-12).astype(int)
    j = np.where(j >= k, 0, j)
    # the ray between sector k and sector 1 belongs to sector 1
    j = np.where(np.isclose(ang, 2.0 * np.pi - np.pi / k, rtol=0, atol=1e-12), 0, j)
    theta = -j * width
    c, sn = np.cos(theta), np.sin(theta)
    red = np.stack([c * x1 - sn * x2, sn * x1 + c * x2, s], axis=-1)
    return red, j + 1


def group_images(x, k: int, reflections: bool = True) -> np.ndarray:
    """All images of ``x`` under the rotations (and reflections) of the k-gon.

    Returns an array of shape ``(n_images, ..., 4)``.
    """
    x = _points(x)
    out = []
    for j in range(k):
        th = 2.0 * np.pi * j / k
        c, s = math.cos(th), math.sin(th)
        for refl in ((1.0, -1.0) if reflections else (1.0,)):
            y = x.copy()
            x2 = refl * x[..., 1]
            y[..., 0] = c * x[..., 0] - s * x2
            y[..., 1] = s * x[..., 0] + c * x2
            out.append(y)
    return np.stack(out)
