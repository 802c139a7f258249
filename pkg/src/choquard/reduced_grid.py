"""Symmetry-reduced grids and fields on them.

Fields of the construction are invariant under the polygon group, under
rotations of the ``(x3, x4)`` plane and, up to a sign, under the Kelvin
inversion ``x -> x/|x|^2``. A field ``F`` has *Kelvin weight* ``q`` and
*parity* ``P`` when ``F(x) = P |x|^{-q} F(x/|x|^2)``. Such a field is fixed by
its values in the unit ball, so grids only cover ``1/Lambda <= |x| <= 1``.

Grids use Emden-Fowler coordinates ``t = ln|x|`` plus angles on the sphere.
For a weight-2 field ``phi`` the substitution ``phi = psi/r`` turns
``-Delta phi`` into ``r^{-3} (-psi_tt + psi - Delta_S psi)``, and the Kelvin
condition becomes ``psi_t = 0`` (even) or ``psi = 0`` (odd) at ``t = 0``.

Two grid kinds exist:

``axisym``
    For ``k = 2`` every field depends on ``(x1, |(x2,x3,x4)|)`` only. The
    sphere coordinate is the polar angle ``omega`` from the ``x1`` axis.
``sector``
    General ``k``. Sphere coordinates ``(chi, theta)`` with
    ``x = r (cos chi cos theta, cos chi sin theta, sin chi cos psi, sin chi sin psi)``
    restricted to ``theta in [0, pi/k]``.

Operators are cell-centred finite volumes, conservative and symmetric.
"""

from __future__ import annotations

import io
import math
import struct
import threading
import uuid
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla
from scipy.interpolate import RegularGridInterpolator

from .bubble_core import DIM, _points, _sqnorm, symmetry_reduce
from .exceptions import ContractError, ExtrapolationError, QuadratureError, RefinementError

_MAGIC = b"CHQF"
_VERSION = 1


@dataclass(frozen=True)
class GridSpec:
    """Resolution controls.

    Attributes
    ----------
    nodes_per_unit : float
        Cells per unit of ``lam |x - xi|`` in the core around each centre.
    core : float
        Half-width of the uniformly resolved core, in units of ``1/lam``.
    ratio : float
        Geometric growth of cell sizes outside the core.
    h_max : float
        Largest cell size (in ``t`` and in radians).
    trunc : float
        Truncation radius ``Lambda``; the grid starts at ``t = -ln Lambda``.
    axisym_refinements : int
        Extra halvings applied on two-dimensional (axisymmetric) grids,
        which are cheap enough to afford them.
    """

    nodes_per_unit: float = 8.0
    core: float = 4.0
    ratio: float = 1.3
    h_max: float = 0.25
    trunc: float = 100.0
    axisym_refinements: int = 1

    def refined(self) -> "GridSpec":
        """Spec with all cell sizes roughly halved."""
        return GridSpec(2 * self.nodes_per_unit, self.core, math.sqrt(self.ratio), self.h_max / 2, self.trunc,
                        self.axisym_refinements)

    def with_trunc(self, trunc: float) -> "GridSpec":
        return GridSpec(self.nodes_per_unit, self.core, self.ratio, self.h_max, trunc, self.axisym_refinements)

    def effective(self, kind: str) -> "GridSpec":
        """Spec actually used for a grid of the given kind."""
        s = self
        if kind == "axisym":
            for _ in range(self.axisym_refinements):
                s = s.refined()
        return s


GRID_PRESETS = {
    "coarse": GridSpec(8.0, 4.0, 1.5, 0.4, axisym_refinements=0),
    "default": GridSpec(8.0, 4.0, 1.3, 0.25, axisym_refinements=1),
    "fine": GridSpec(16.0, 4.0, 1.14, 0.125, axisym_refinements=1),
}


def graded_faces(length: float, h0: float, core: float, ratio: float, h_max: float) -> np.ndarray:
    """Faces ``0 = f_0 < ... < f_n = length``: uniform ``h0`` up to ``core``, then geometric."""
    h0 = min(h0, h_max, length)
    faces = [0.0]
    h = h0
    while faces[-1] < length * (1 - 1e-12):
        if faces[-1] >= core - 1e-14:
            h = min(h * ratio, h_max)
        faces.append(faces[-1] + h)
    faces[-1] = length
    if len(faces) > 2 and faces[-1] - faces[-2] < 0.3 * (faces[-2] - faces[-3]):
        del faces[-2]
    return np.asarray(faces)


class ReducedGrid:
    """Tensor grid in Emden-Fowler coordinates over the reduced unit ball.

    Parameters
    ----------
    k : int
        Polygon order. ``k = 2`` yields the axisymmetric grid unless
        ``kind='sector'`` is forced.
    lam : float
        Concentration scale (1 for a grid resolving only the unit scale).
    spec : GridSpec
    kind : {'axisym', 'sector'}, optional
    """

    def __init__(self, k: int, lam: float, spec: GridSpec | None = None, kind: str | None = None):
        self.k = int(k)
        self.lam = float(lam)
        self.spec = spec or GridSpec()
        self.kind = kind or ("axisym" if self.k in (1, 2) else "sector")
        if self.kind == "axisym" and self.k not in (1, 2):
            raise ContractError("the axisymmetric grid only represents k = 1 or k = 2")
        s = self.spec.effective(self.kind)
        T = math.log(s.trunc)
        h0 = 1.0 / (s.nodes_per_unit * self.lam)
        rho2 = max(0.0, 1.0 - 1.0 / self.lam**2) if self.lam > 1 else 1.0
        t_xi = 0.5 * math.log(rho2) if rho2 > 0 else 0.0
        core = s.core / self.lam
        tf = -graded_faces(T, h0, core + abs(t_xi), s.ratio, s.h_max)[::-1]
        self.faces = [tf]
        if self.kind == "axisym":
            top = math.pi if self.k == 1 else math.pi / 2
            self.faces.append(graded_faces(top, h0, core, s.ratio, s.h_max))
        else:
            self.faces.append(graded_faces(math.pi / 2, h0, core, s.ratio, s.h_max))
            self.faces.append(graded_faces(math.pi / self.k, h0, core, s.ratio, s.h_max))
        self.centers = [0.5 * (f[1:] + f[:-1]) for f in self.faces]
        self.widths = [np.diff(f) for f in self.faces]
        self.shape = tuple(len(c) for c in self.centers)
        self.n = int(np.prod(self.shape))
        self.id = uuid.uuid4().hex
        self._lock = threading.RLock()
        self._cache: dict = {}

    # -- geometry -------------------------------------------------------
    @classmethod
    def from_faces(cls, k: int, lam: float, kind: str, faces, trunc: float) -> "ReducedGrid":
        g = cls.__new__(cls)
        g.k, g.lam, g.kind = int(k), float(lam), kind
        g.spec = GridSpec(trunc=trunc)
        g.faces = [np.asarray(f, dtype=float) for f in faces]
        g.centers = [0.5 * (f[1:] + f[:-1]) for f in g.faces]
        g.widths = [np.diff(f) for f in g.faces]
        g.shape = tuple(len(c) for c in g.centers)
        g.n = int(np.prod(g.shape))
        g.id = uuid.uuid4().hex
        g._lock = threading.RLock()
        g._cache = {}
        return g

    @property
    def T(self) -> float:
        return -float(self.faces[0][0])

    @property
    def trunc(self) -> float:
        return math.exp(self.T)

    @property
    def multiplicity(self) -> float:
        """Orbit measure of the suppressed coordinates times the number of reduced copies."""
        if self.kind == "axisym":
            return 4.0 * math.pi * (1 if self.k == 1 else 2)
        return 4.0 * math.pi * self.k

    def mesh(self) -> list[np.ndarray]:
        return [m.ravel() for m in np.meshgrid(*self.centers, indexing="ij")]

    @property
    def t(self) -> np.ndarray:
        return self._cached("t", lambda: self.mesh()[0])

    @property
    def r(self) -> np.ndarray:
        return self._cached("r", lambda: np.exp(self.t))

    def points(self) -> np.ndarray:
        """Cartesian representatives of the nodes, shape ``(n, 4)``."""

        def build():
            m = self.mesh()
            r = np.exp(m[0])
            x = np.zeros((self.n, DIM))
            if self.kind == "axisym":
                x[:, 0] = r * np.cos(m[1])
                x[:, 1] = r * np.sin(m[1])
            else:
                x[:, 0] = r * np.cos(m[1]) * np.cos(m[2])
                x[:, 1] = r * np.cos(m[1]) * np.sin(m[2])
                x[:, 2] = r * np.sin(m[1])
            return x

        return self._cached("points", build)

    def _angular_cell_measure(self) -> np.ndarray:
        if self.kind == "axisym":
            a, b = self.faces[1][:-1], self.faces[1][1:]
            return (b - a) / 2 - (np.sin(2 * b) - np.sin(2 * a)) / 4
        a, b = self.faces[1][:-1], self.faces[1][1:]
        c = (np.sin(b) ** 2 - np.sin(a) ** 2) / 2
        return (c[:, None] * self.widths[2][None, :]).ravel()

    @property
    def cell_measure(self) -> np.ndarray:
        """``dt x`` angular measure of each cell (no radial factor, no multiplicity)."""
        return self._cached(
            "m", lambda: np.outer(self.widths[0], self._angular_cell_measure()).ravel()
        )

    def weights(self, q: float = 8.0, parity: int = 1) -> np.ndarray:
        """Quadrature weights for ``int_{|x|<Lambda} F`` of a field with weight ``q`` and parity.

        The radial factor integrates ``e^{4t} + P e^{(q-4)t}`` exactly over each
        cell, so the inner ball and its Kelvin image are both accounted for.
        """

        def build():
            a, b = self.faces[0][:-1], self.faces[0][1:]
            inner = (np.exp(4 * b) - np.exp(4 * a)) / 4
            c = q - 4.0
            outer = (np.exp(c * b) - np.exp(c * a)) / c if abs(c) > 1e-14 else b - a
            radial = inner + parity * outer
            ang = self._angular_cell_measure()
            return self.multiplicity * np.outer(radial, ang).ravel()

        return self._cached(("w", float(q), int(parity)), build)

    def inner_weights(self) -> np.ndarray:
        """Weights of ``int_{1/Lambda<|x|<1}``."""
        return self._cached(
            "w_inner",
            lambda: self.multiplicity
            * np.outer(
                (np.exp(4 * self.faces[0][1:]) - np.exp(4 * self.faces[0][:-1])) / 4,
                self._angular_cell_measure(),
            ).ravel(),
        )

    def check_resolution(self, min_nodes: float = 8.0) -> None:
        """Raise if the core cells are coarser than ``1/(min_nodes lam)``."""
        h = 1.0 / (min_nodes * self.lam) * (1 + 1e-9)
        for ax, w in enumerate(self.widths):
            edge = w[-1] if ax == 0 else w[0]
            if edge > h and edge < w.sum():
                raise RefinementError(
                    f"axis {ax}: core cell {edge:.3g} exceeds 1/({min_nodes:g} lambda) = {h:.3g}"
                )

    def _cached(self, key, build):
        with self._lock:
            if key not in self._cache:
                self._cache[key] = build()
            return self._cache[key]

    # -- point location ---------------------------------------------------
    def reduce_points(self, x) -> tuple[np.ndarray, np.ndarray]:
        """Reduced coordinates of arbitrary points and the Kelvin factor ``|x|``.

        Points outside the unit ball are mapped inside by inversion; the
        returned ``scale`` is ``|x|`` for those points and 1 otherwise.
        """
        x = _points(x).reshape(-1, DIM)
        r2 = _sqnorm(x)
        outside = r2 > 1.0
        scale = np.where(outside, np.sqrt(r2), 1.0)
        y = np.where(outside[:, None], x / np.where(outside, r2, 1.0)[:, None], x)
        ry = np.sqrt(_sqnorm(y))
        with np.errstate(divide="ignore"):
            t = np.log(ry)
        if np.any(t < -self.T - 1e-9):
            bad = x[np.argmin(t)]
            raise ExtrapolationError(f"point {bad} lies outside the truncated domain")
        t = np.clip(t, -self.T, 0.0)
        if self.kind == "axisym":
            x1 = y[:, 0] if self.k == 1 else np.abs(y[:, 0])
            w = np.arctan2(np.sqrt(y[:, 1] ** 2 + y[:, 2] ** 2 + y[:, 3] ** 2), x1)
            return np.stack([t, w], axis=-1), scale
        red, _ = symmetry_reduce(y, self.k)
        chi = np.arctan2(red[:, 2], np.hypot(red[:, 0], red[:, 1]))
        th = np.abs(np.arctan2(red[:, 1], red[:, 0]))
        th = np.minimum(th, 2 * math.pi / self.k - th) if self.k > 1 else th
        return np.stack([t, chi, th], axis=-1), scale

    # -- operators --------------------------------------------------------
    def stiffness(self, parity: int = 1) -> sp.csr_matrix:
        """Finite-volume matrix of ``-d_tt + 1 - Delta_S`` acting on ``psi``.

        Boundary closures: Robin ``psi_t = psi`` at ``t = -T``; at ``t = 0``
        Neumann (``parity = 1``) or Dirichlet (``parity = -1``); natural
        no-flux conditions on the angular boundaries.
        """
        return self._cached(("A", int(parity)), lambda: self._assemble(parity))

    def _assemble(self, parity: int) -> sp.csr_matrix:
        shape = self.shape
        idx = np.arange(self.n).reshape(shape)
        rows, cols, vals = [], [], []
        diag = np.zeros(shape)

        def couple(ia, ib, g):
            ia, ib, g = ia.ravel(), ib.ravel(), np.broadcast_to(g, ia.shape).ravel()
            rows.extend([ia, ib, ia, ib])
            cols.extend([ia, ib, ib, ia])
            vals.extend([g, g, -g, -g])

        dt = self.widths[0]
        tc = self.centers[0]
        if self.kind == "axisym":
            ang = self._angular_cell_measure()  # per omega cell
            wf = self.faces[1]
            wc = self.centers[1]
            # t fluxes
            g = ang[None, :] / np.diff(tc)[:, None]
            couple(idx[:-1, :], idx[1:, :], g)
            # omega fluxes
            g = dt[:, None] * (np.sin(wf[1:-1]) ** 2 / np.diff(wc))[None, :]
            couple(idx[:, :-1], idx[:, 1:], g)
            area = ang[None, :]
        else:
            cf, cc = self.faces[1], self.centers[1]
            thw, thc = self.widths[2], self.centers[2]
            cmeas = (np.sin(cf[1:]) ** 2 - np.sin(cf[:-1]) ** 2) / 2
            area = cmeas[None, :, None] * thw[None, None, :]
            g = area / np.diff(tc)[:, None, None]
            couple(idx[:-1], idx[1:], g)
            gface = np.cos(cf[1:-1]) * np.sin(cf[1:-1]) / np.diff(cc)
            g = dt[:, None, None] * gface[None, :, None] * thw[None, None, :]
            couple(idx[:, :-1, :], idx[:, 1:, :], g)
            with np.errstate(divide="ignore"):
                tan_int = np.log(np.cos(cf[:-1]) / np.cos(cf[1:]))
            tan_int[-1] = math.tan(cc[-1]) * (cf[-1] - cf[-2])
            g = dt[:, None, None] * tan_int[None, :, None] / np.diff(thc)[None, None, :]
            couple(idx[:, :, :-1], idx[:, :, 1:], g)
        # Robin at t = -T and Kelvin closure at t = 0
        diag[0] += (area / (1.0 + dt[0] / 2)).reshape(diag[0].shape)
        if parity == -1:
            diag[-1] += (area / (dt[-1] / 2)).reshape(diag[-1].shape)
        diag += self.cell_measure.reshape(shape)
        rows.append(idx.ravel())
        cols.append(idx.ravel())
        vals.append(diag.ravel())
        A = sp.coo_matrix(
            (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))), shape=(self.n, self.n)
        )
        return A.tocsr()

    def neg_laplacian(self, phi: np.ndarray, parity: int = 1) -> np.ndarray:
        """Discrete ``-Delta phi`` at the nodes of a weight-2 field."""
        r = self.r
        return self.stiffness(parity) @ (r * phi) / (self.cell_measure * r**3)

    def poisson_solver(self, parity: int = 1):
        """Cached solver ``b -> A^{-1} b`` for the stiffness matrix."""

        def build():
            A = self.stiffness(parity).tocsc()
            if self.n <= 80_000 or self.kind == "axisym":
                return spla.factorized(A)
            import pyamg

            # symmetric diagonal scaling tames the angular anisotropy near the
            # s-axis; classical AMG then converges in a few dozen CG steps
            d = 1.0 / np.sqrt(A.diagonal())
            D = sp.diags(d)
            As = (D @ A @ D).tocsr()
            ml = pyamg.ruge_stuben_solver(As)

            def solve(b):
                res: list[float] = []
                y = ml.solve(d * b, tol=1e-12, maxiter=400, accel="cg", residuals=res)
                if res[-1] > 1e-10 * max(res[0], 1e-300):
                    raise QuadratureError(f"Poisson solve stalled at relative residual {res[-1] / res[0]:.2e}")
                return d * y

            return solve

        return self._cached(("poisson", int(parity)), build)

    def newton_potential(self, density: np.ndarray, parity: int = 1) -> np.ndarray:
        """Riesz potential with ``mu = 2`` of a weight-6 density, via ``-Delta w = 4 pi^2 F``."""
        r = self.r
        rhs = self.cell_measure * r**3 * (4.0 * math.pi**2) * density
        return self.poisson_solver(parity)(rhs) / r

    # -- direct Riesz quadrature ---------------------------------------------
    def orbit_kernel(self, x: np.ndarray, y: np.ndarray, mu: float) -> np.ndarray:
        """Kernel ``|x - y|^{-mu}`` integrated over the orbit of ``y`` under the
        suppressed rotation group (SO(3) about the ``x1`` axis or SO(2) in
        ``(x3, x4)``), for reduced representatives ``x`` (targets) and ``y``.
        """
        m = mu / 2.0
        if self.kind == "axisym":
            rx = np.sqrt(x[:, 1] ** 2 + x[:, 2] ** 2 + x[:, 3] ** 2)[:, None]
            ry = np.sqrt(y[:, 1] ** 2 + y[:, 2] ** 2 + y[:, 3] ** 2)[None, :]
            A = (x[:, 0:1] - y[None, :, 0]) ** 2 + rx**2 + ry**2
            B = 2.0 * rx * ry
            b = np.divide(B, A, out=np.zeros_like(A), where=A > 0)
            with np.errstate(divide="ignore", invalid="ignore"):
                if abs(m - 1.0) < 1e-12:
                    core = np.where(b > 1e-8, (np.log1p(b) - np.log1p(-b)) / np.where(b > 0, b, 1), 2.0)
                else:
                    c = 1.0 - m
                    diff = np.expm1(c * np.log1p(b)) - np.expm1(c * np.log1p(-b))
                    core = np.where(b > 1e-8, diff / (np.where(b > 0, b, 1) * c), 2.0)
                return 2.0 * math.pi * A ** (-m) * core
        from scipy.special import hyp2f1

        s_x = np.hypot(x[:, 2], x[:, 3])[:, None]
        s_y = np.hypot(y[:, 2], y[:, 3])[None, :]
        A = (x[:, 0:1] - y[None, :, 0]) ** 2 + (x[:, 1:2] - y[None, :, 1]) ** 2 + s_x**2 + s_y**2
        B = 2.0 * s_x * s_y
        with np.errstate(divide="ignore", invalid="ignore"):
            z = np.divide(2 * B, A + B, out=np.zeros_like(A), where=(A + B) > 0)
            return 2.0 * math.pi * (A + B) ** (-m) * hyp2f1(m, 0.5, 1.0, z)

    def _source_images(self) -> list[np.ndarray]:
        y = self.points()
        if self.kind == "axisym":
            y2 = y.copy()
            y2[:, 0] *= -1
            return [y] if self.k == 1 else [y, y2]
        from .bubble_core import group_images

        return list(group_images(y, self.k))

    def folded_kernel(self, targets: np.ndarray, mu: float, q: float, parity: int) -> np.ndarray:
        """Matrix ``K[i, n]`` with ``sum_n K[i, n] F_n ~ (|.|^{-mu} * F)(x_i)``.

        Sums the orbit kernel over the discrete symmetry images of each node
        and over the Kelvin image of the ball, times the inner-ball cell
        weights. Targets must lie in the closed unit ball. Entries where a
        target coincides with a source image are set to zero.
        """
        base = np.outer(
            (np.exp(4 * self.faces[0][1:]) - np.exp(4 * self.faces[0][:-1])) / 4,
            self._angular_cell_measure(),
        ).ravel()
        ry = self.r
        r2x = _sqnorm(targets)
        xk = targets / r2x[:, None]
        kel = parity * r2x[:, None] ** (-mu / 2.0) * ry[None, :] ** (q - 8.0 + mu)
        K = np.zeros((len(targets), self.n))
        for y in self._source_images():
            with np.errstate(divide="ignore", invalid="ignore"):
                Ki = self.orbit_kernel(targets, y, mu)
                Ko = self.orbit_kernel(xk, y, mu)
            Ki[~np.isfinite(Ki)] = 0.0
            Ko[~np.isfinite(Ko)] = 0.0
            K += Ki + kel * Ko
        return K * base[None, :]


@dataclass(frozen=True)
class ReducedField:
    """Values of a symmetric field at the nodes of a :class:`ReducedGrid`.

    Attributes
    ----------
    grid : ReducedGrid
    values : ndarray, shape ``(grid.n,)``
    weight : float
        Kelvin weight ``q``.
    parity : int
        Kelvin parity ``+1`` or ``-1``.
    decay : float or None
        Decay exponent at infinity (the tail tag); required by operators
        that take Riesz potentials.
    mu : float
        Exponent recorded in the serialised header.
    """

    grid: ReducedGrid
    values: np.ndarray
    weight: float = 2.0
    parity: int = 1
    decay: float | None = 2.0
    mu: float = 2.0
    token: str = field(default_factory=lambda: uuid.uuid4().hex, compare=False)

    def __post_init__(self):
        v = np.array(self.values, dtype=float).reshape(self.grid.n)
        v.setflags(write=False)
        object.__setattr__(self, "values", v)
        if self.parity not in (1, -1):
            raise ContractError("parity must be +1 or -1")

    @classmethod
    def sample(cls, grid: ReducedGrid, f, weight=2.0, parity=1, decay=2.0, mu=2.0) -> "ReducedField":
        """Sample a callable at the grid nodes."""
        return cls(grid, np.asarray(f(grid.points()), dtype=float), weight, parity, decay, mu)

    def like(self, values, weight=None, parity=None, decay="same") -> "ReducedField":
        return ReducedField(
            self.grid,
            values,
            self.weight if weight is None else weight,
            self.parity if parity is None else parity,
            self.decay if decay == "same" else decay,
            self.mu,
        )

    def _check(self, other: "ReducedField"):
        if other.grid is not self.grid:
            raise ContractError("fields live on different grids")
        if other.weight != self.weight or other.parity != self.parity:
            raise ContractError("fields have different Kelvin tags")

    def __add__(self, other):
        if isinstance(other, ReducedField):
            self._check(other)
            return self.like(self.values + other.values)
        return NotImplemented

    def __sub__(self, other):
        if isinstance(other, ReducedField):
            self._check(other)
            return self.like(self.values - other.values)
        return NotImplemented

    def __mul__(self, c):
        if np.isscalar(c):
            return self.like(c * self.values)
        return NotImplemented

    __rmul__ = __mul__

    def __neg__(self):
        return self.like(-self.values)

    def interpolator(self):
        g = self.grid
        key = ("interp", self.token)

        def build():
            vals = self.values.reshape(g.shape)
            return RegularGridInterpolator(
                g.centers, vals, method="linear", bounds_error=False, fill_value=None
            )

        return g._cached(key, build)

    def __call__(self, x) -> np.ndarray:
        """Evaluate anywhere in ``|x| <= Lambda``.

        Points with ``|x| < 1/Lambda`` are the Kelvin images of the far tail;
        there the tail tag gives ``F(x) = F(x_hat / Lambda) (Lambda |x|)^(decay - q)``.
        """
        x = _points(x)
        lead = x.shape[:-1]
        x = x.reshape(-1, DIM)
        r = np.sqrt(_sqnorm(x))
        rin = 1.0 / self.grid.trunc
        inner = r < rin
        if inner.any():
            if self.decay is None:
                raise ExtrapolationError("field without tail tag cannot be evaluated inside 1/Lambda")
            xh = np.where((r > 0)[:, None], x / np.where(r > 0, r, 1.0)[:, None], np.eye(DIM)[0])
            x = np.where(inner[:, None], xh * rin, x)
        red, scale = self.grid.reduce_points(x)
        v = self.interpolator()(red)
        v = v * np.where(scale > 1.0, self.parity * scale ** (-self.weight), 1.0)
        if inner.any():
            with np.errstate(divide="ignore"):
                fac = (r[inner] / rin) ** (self.decay - self.weight)
            v[inner] = v[inner] * fac
        return v.reshape(lead)

    def integrate(self) -> float:
        """Integral over ``|x| < Lambda`` using the Kelvin tags."""
        return float(np.sum(self.grid.weights(self.weight, self.parity) * self.values))

    def integrate_against(self, g) -> float:
        """``int_{|x|<Lambda} F G`` for a callable ``G`` without Kelvin structure."""
        grid = self.grid
        x = grid.points()
        r2 = _sqnorm(x)
        gx = np.asarray(g(x))
        gk = np.asarray(g(x / r2[:, None]))
        # outer half: F(x~) G(x~) |x|^-8 with F(x~) = P |x|^q F(x)
        kel = self.parity * r2 ** ((self.weight - 8.0) / 2.0) * gk
        return float(np.sum(grid.inner_weights() * self.values * (gx + kel)))

    # -- serialisation ---------------------------------------------------------
    def to_bytes(self) -> bytes:
        g = self.grid
        buf = io.BytesIO()
        buf.write(_MAGIC)
        buf.write(struct.pack("<IIdd", _VERSION, g.k, g.lam, self.mu))
        buf.write(struct.pack("<B", 0 if g.kind == "axisym" else 1))
        buf.write(struct.pack("<I", len(g.shape)))
        buf.write(struct.pack(f"<{len(g.shape)}I", *g.shape))
        decay = np.nan if self.decay is None else self.decay
        buf.write(struct.pack("<ddi", self.weight, decay, self.parity))
        for f in g.faces:
            buf.write(np.asarray(f, dtype="<f8").tobytes())
        buf.write(self.values.astype("<f8").tobytes())
        return buf.getvalue()

    @classmethod
    def from_bytes(cls, data: bytes, grid: ReducedGrid | None = None) -> "ReducedField":
        if data[:4] != _MAGIC:
            raise ContractError("not a reduced-field container")
        off = 4
        version, k, lam, mu = struct.unpack_from("<IIdd", data, off)
        off += struct.calcsize("<IIdd")
        if version != _VERSION:
            raise ContractError(f"unsupported container version {version}")
        (kind,) = struct.unpack_from("<B", data, off)
        off += 1
        (nd,) = struct.unpack_from("<I", data, off)
        off += 4
        shape = struct.unpack_from(f"<{nd}I", data, off)
        off += 4 * nd
        weight, decay, parity = struct.unpack_from("<ddi", data, off)
        off += struct.calcsize("<ddi")
        faces = []
        for s in shape:
            faces.append(np.frombuffer(data, dtype="<f8", count=s + 1, offset=off).copy())
            off += 8 * (s + 1)
        vals = np.frombuffer(data, dtype="<f8", count=int(np.prod(shape)), offset=off).copy()
        if grid is None:
            grid = ReducedGrid.from_faces(
                k, lam, "axisym" if kind == 0 else "sector", faces, math.exp(-faces[0][0])
            )
        return cls(grid, vals, weight, parity, None if math.isnan(decay) else decay, mu)

    def save(self, path) -> None:
        with open(path, "wb") as fh:
            fh.write(self.to_bytes())

    @classmethod
    def load(cls, path) -> "ReducedField":
        with open(path, "rb") as fh:
            return cls.from_bytes(fh.read())

    def to_csv(self, path) -> None:
        """Write node coordinates (reduced and Cartesian) with values."""
        g = self.grid
        cols = g.mesh()
        x = g.points()
        names = ["t", "omega"] if g.kind == "axisym" else ["t", "chi", "theta"]
        header = ",".join(names + ["x1", "x2", "x3", "x4", "value"])
        data = np.column_stack(cols + [x, self.values])
        np.savetxt(path, data, delimiter=",", header=header, comments="", fmt="%.17g")
