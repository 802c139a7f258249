"""Projected linear problem, nonlinear terms and the contraction fixed point.

Fields live on a :class:`ReducedGrid` as node values of Kelvin-even
functions of weight 2 (unknowns) or weight 6 (right-hand sides). The
Laplacian is the finite-volume operator of the grid and the Riesz
potentials inside ``g'`` are grid potentials, so :func:`apply_L` and
:func:`solve_plin` are exact inverses of each other up to the ``c``
column.
"""

from __future__ import annotations

import json
import math
import struct
import time
import warnings
from collections import OrderedDict
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .ansatz_error import coupling_u2v, error_E1, in_regime, interaction_field
from .bubble_core import (
    DIM,
    ChoquardParams,
    KernelFunction,
    PolygonAnsatz,
    _points,
    _sqnorm,
    group_images,
    make_polygon_ansatz,
)
from .choquard_operator import OperatorContext
from .exceptions import ContractError, SingularSystemError
from .quadrature_engine import riesz_bubble_power, riesz_operator
from .reduced_grid import GRID_PRESETS, GridSpec, ReducedField, ReducedGrid
from .weighted_norms import NormWeights, norm_weights, star_norm, starstar_norm

__all__ = [
    "LinearSystem",
    "FixedPointState",
    "linear_system",
    "clear_system_cache",
    "apply_L",
    "solve_plin",
    "apply_N",
    "fixed_point",
    "random_symmetric_rhs",
    "invertibility_study",
    "error_nodes",
    "kelvin_even_part",
    "taylor_remainder",
    "load_checkpoint",
]

# sparse LU limits per grid kind (axisymmetric grids are two-dimensional) and
# the dense limit for exponents without the Poisson route
MAX_DIRECT_NODES = {"axisym": 150_000, "sector": 40_000}
MAX_DENSE_NODES = 3_000
# symmetric-pattern ordering keeps the dense border of the projected system last
PERMC_SPEC = "MMD_AT_PLUS_A"

# relative increment below which the iteration has reached round-off
ROUNDOFF_FLOOR = 1e-8


def taylor_remainder(s, d, a: float, odd: bool = False) -> np.ndarray:
    """``f(s + d) - f(s) - f'(s) d`` for ``f = |s|^a`` or ``f = |s|^{a-1} s`` (``odd``).

    Uses a binomial series when ``|d/s|`` is small so that the second-order
    remainder is computed without cancellation.
    """
    s = np.asarray(s, dtype=float)
    d = np.asarray(d, dtype=float)
    s, d = np.broadcast_arrays(s, d)
    out = np.empty(s.shape)
    with np.errstate(divide="ignore", invalid="ignore"):
        x = np.where(s != 0, d / s, np.inf)
    small = np.abs(x) < 0.25
    # f(s) (1 + x)^a with f(s) = |s|^a or |s|^{a-1} s
    fs = np.abs(s) ** a if not odd else np.abs(s) ** (a - 1.0) * s
    if small.any():
        xs = x[small]
        acc = np.zeros_like(xs)
        coef = a * (a - 1.0) / 2.0
        pw = xs * xs
        for n in range(2, 60):
            acc += coef * pw
            coef *= (a - n) / (n + 1.0)
            pw = pw * xs
            if coef == 0.0:
                break
        out[small] = fs[small] * acc
    big = ~small
    if big.any():
        w = s[big] + d[big]
        if odd:
            fw = np.abs(w) ** (a - 1.0) * w
            dfs = a * np.abs(s[big]) ** (a - 1.0)
        else:
            fw = np.abs(w) ** a
            dfs = a * np.abs(s[big]) ** (a - 2.0) * s[big]
        dfs = np.where(s[big] != 0, dfs, 0.0)
        out[big] = fw - fs[big] - dfs * d[big]
    return out


def kelvin_even_part(f, x: np.ndarray, weight: float) -> np.ndarray:
    """``(f(x) + |x|^{-weight} f(x/|x|^2)) / 2`` at points ``x``."""
    r2 = _sqnorm(x)
    return 0.5 * (np.asarray(f(x)) + r2 ** (-weight / 2.0) * np.asarray(f(x / r2[:, None])))


def kelvin_odd_part(f, x: np.ndarray, weight: float) -> np.ndarray:
    r2 = _sqnorm(x)
    return 0.5 * (np.asarray(f(x)) - r2 ** (-weight / 2.0) * np.asarray(f(x / r2[:, None])))


class LinearSystem:
    """Discrete ``L = (L1, L2)`` on a reduced grid with the projected solve.

    Parameters
    ----------
    a : PolygonAnsatz
    ctx : OperatorContext, optional
    grid : ReducedGrid, GridSpec or preset name, optional
    """

    def __init__(self, a: PolygonAnsatz, ctx: OperatorContext | None = None, grid=None):
        self.a = a
        self.ctx = ctx or OperatorContext(a.params)
        mu = self.mu = self.ctx.mu
        self.p = self.ctx.p
        if isinstance(grid, ReducedGrid):
            self.grid = grid
        else:
            spec = GRID_PRESETS[grid] if isinstance(grid, str) else (grid or GRID_PRESETS["default"])
            self.grid = ReducedGrid(a.k, a.lam, spec.with_trunc(a.params.trunc_radius))
        g = self.grid
        if g.k != a.k:
            raise ContractError("grid and ansatz have different k")
        self.x = g.points()
        self.r = g.r
        self.m = g.cell_measure
        self.U = a.U(self.x)
        self.Us = np.stack([b(self.x) for b in a.bubbles])
        self.V = self.Us.sum(axis=0)
        self.RU = riesz_bubble_power(mu, self.r, a.amplitude)
        self.inter = interaction_field(a, self.ctx, g)
        RV = sum(riesz_bubble_power(mu, np.sqrt(_sqnorm(self.x - c)), a.amplitude, a.lam) for c in a.centers)
        if self.inter.cross_potential is not None:
            RV = RV + self.inter.cross_potential.values
        self.RV = RV
        # Y = sum_j g'(U_j) Z^0_j = sum_j -Delta Z^0_j, restricted to its Kelvin-even part
        kern = a.kernels(0)
        self.Y_full = lambda y: sum(kz.neg_laplacian(y) for kz in kern)
        self.Y = kelvin_even_part(self.Y_full, self.x, 6.0)
        self.W8 = g.weights(8.0, 1)
        self._lu = {}

    # -- pieces -----------------------------------------------------------
    @property
    def n(self) -> int:
        return self.grid.n

    def base(self, which: int):
        """``(u, R[|u|^p])`` at the nodes for component 1 (``U``) or 2 (``V``)."""
        return (self.U, self.RU) if which == 1 else (self.V, self.RV)

    def riesz(self, density: np.ndarray, parity: int = 1) -> np.ndarray:
        """Grid Riesz potential of node values of a weight ``8 - mu`` density."""
        return riesz_operator(self.grid, self.mu, parity)(density)

    def neg_laplacian(self, phi: np.ndarray, parity: int = 1) -> np.ndarray:
        return self.grid.neg_laplacian(phi, parity)

    def g_prime(self, which: int, phi: np.ndarray, parity: int = 1) -> np.ndarray:
        u, Ru = self.base(which)
        p = self.p
        w = self.riesz(u ** (p - 1.0) * phi, parity)
        return p * w * u ** (p - 1.0) + (p - 1.0) * Ru * u ** (p - 2.0) * phi

    def apply(self, which: int, phi: np.ndarray, parity: int = 1) -> np.ndarray:
        """``-Delta phi - g'(u) phi`` at the nodes."""
        return self.neg_laplacian(phi, parity) - self.g_prime(which, phi, parity)

    def constraint(self, phi2: np.ndarray) -> float:
        """``int Y phi2`` over ``|x| < Lambda``."""
        return float(np.sum(self.W8 * self.Y * phi2))

    # -- assembly ---------------------------------------------------------
    def _matrix(self, which: int, parity: int):
        key = (which, parity)
        if key in self._lu:
            return self._lu[key]
        limit = MAX_DIRECT_NODES[self.grid.kind] if self.mu == 2.0 else MAX_DENSE_NODES
        if self.n > limit:
            raise ContractError(
                f"direct solve on {self.n} nodes exceeds the desk-scale limit {limit}; "
                "use k <= 2 or a coarser grid"
            )
        g, r, m = self.grid, self.r, self.m
        u, Ru = self.base(which)
        p = self.p
        A = g.stiffness(parity)
        mr3 = m * r**3
        bordered = which == 2
        n = self.n
        if self.mu == 2.0:
            # unknowns (psi, psi_w[, c]) with psi = r phi and -Delta w = 4 pi^2 u^{p-1} phi
            D1 = sp.diags(mr3 * (p - 1.0) * Ru * u ** (p - 2.0) / r)
            D2 = sp.diags(mr3 * p * u ** (p - 1.0) / r)
            D3 = sp.diags(mr3 * 4.0 * math.pi**2 * u ** (p - 1.0) / r)
            blocks = [[A - D1, -D2], [-D3, A]]
            M = sp.bmat(blocks, format="csc")
            if bordered:
                col = sp.csc_matrix(np.concatenate([-mr3 * self.Y, np.zeros(n)])[:, None])
                row = sp.csr_matrix(np.concatenate([self.W8 * self.Y / r, np.zeros(n), [0.0]])[None, :])
                M = sp.vstack([sp.hstack([M, col]), row], format="csc")
            # equilibrate: the cell measures span many decades near the axis
            d = np.abs(M.diagonal())
            if bordered:
                d[-1] = max(np.abs(M[-1, :]).max(), 1e-300)
                d[-1] = d[-1] * max(np.abs(M[:, -1]).max(), 1e-300)
            s_ = 1.0 / np.sqrt(np.where(d > 0, d, 1.0))
            Sd = sp.diags(s_)
            lu = spla.splu((Sd @ M @ Sd).tocsc(), permc_spec=PERMC_SPEC)
            self._lu[key] = ("sparse", (lu, s_), M)
        else:
            R = riesz_operator(g, self.mu, parity)
            eye = np.eye(n)
            KR = np.column_stack([R(eye[:, i] * u ** (p - 1.0)) for i in range(n)])
            L = (A.toarray() * r[None, :]) / mr3[:, None]
            L -= p * (u ** (p - 1.0))[:, None] * KR
            L -= np.diag((p - 1.0) * Ru * u ** (p - 2.0))
            if bordered:
                L = np.block([[L, -self.Y[:, None]], [(self.W8 * self.Y)[None, :], np.zeros((1, 1))]])
            self._lu[key] = ("dense", L, None)
        return self._lu[key]

    def solve(self, which: int, h: np.ndarray, parity: int = 1):
        """Solve ``L phi = h (+ c Y)``; returns ``(phi, c, relative residual)``."""
        kind, op, M = self._matrix(which, parity)
        n, r = self.n, self.r
        bordered = which == 2
        if kind == "sparse":
            mr3 = self.m * r**3
            rhs = np.concatenate([mr3 * h, np.zeros(n)] + ([[0.0]] if bordered else []))
            lu, s_ = op
            sol = s_ * lu.solve(s_ * rhs)
            for _ in range(3):
                # iterative refinement in the equilibrated norm
                dr = rhs - M @ sol
                if np.linalg.norm(s_ * dr) <= 1e-15 * np.linalg.norm(s_ * rhs):
                    break
                sol = sol + s_ * lu.solve(s_ * dr)
            res = np.linalg.norm(s_ * (M @ sol - rhs)) / max(np.linalg.norm(s_ * rhs), 1e-300)
            phi = sol[:n] / r
            c = float(sol[-1]) if bordered else 0.0
        else:
            rhs = np.concatenate([h, [0.0]]) if bordered else h
            try:
                sol = np.linalg.solve(op, rhs)
            except np.linalg.LinAlgError as exc:
                raise self._singular(op) from exc
            res = np.linalg.norm(op @ sol - rhs) / max(np.linalg.norm(rhs), 1e-300)
            phi = sol[:n]
            c = float(sol[n]) if bordered else 0.0
        if not np.all(np.isfinite(phi)):
            raise self._singular(M.toarray() if kind == "sparse" and n < 3000 else op if kind == "dense" else None)
        return phi, c, float(res)

    @staticmethod
    def _singular(mat):
        if mat is None:
            return SingularSystemError("collocation matrix is singular", singular_values=None, vectors=None)
        u, s, vt = np.linalg.svd(mat)
        return SingularSystemError(
            f"collocation matrix is singular; smallest singular values {s[-3:]}",
            singular_values=s[-3:],
            vectors=vt[-3:],
        )

    def field(self, values, weight=2.0, parity=1, decay=2.0) -> ReducedField:
        return ReducedField(self.grid, values, weight=weight, parity=parity, decay=decay, mu=self.mu)

    def sample_rhs(self, h) -> np.ndarray:
        """Node values of the Kelvin-even part of a weight-6 right-hand side."""
        if h is None or (np.isscalar(h) and h == 0):
            return np.zeros(self.n)
        if isinstance(h, ReducedField):
            if h.grid is not self.grid:
                return kelvin_even_part(h, self.x, 6.0)
            if h.parity != 1:
                raise ContractError("right-hand sides must be Kelvin-even")
            return np.asarray(h.values)
        if isinstance(h, np.ndarray) and h.shape == (self.n,):
            return h
        return kelvin_even_part(h, self.x, 6.0)


_SYSTEMS: "OrderedDict" = None
_SYSTEMS_MAX = 3


def clear_system_cache() -> None:
    """Drop cached systems and their factorisations."""
    global _SYSTEMS
    _SYSTEMS = None


def linear_system(a: PolygonAnsatz, ctx: OperatorContext | None = None, grid=None) -> LinearSystem:
    """Cached :class:`LinearSystem` per ansatz, exponent and grid choice."""
    if isinstance(grid, ReducedGrid):
        key = (id(grid), a.k, a.lam, a.params.mu)
    else:
        key = (repr(grid), a.k, a.lam, a.params)
    global _SYSTEMS
    if _SYSTEMS is None:
        _SYSTEMS = OrderedDict()
    sys_ = _SYSTEMS.get(key)
    if sys_ is None:
        sys_ = _SYSTEMS[key] = LinearSystem(a, ctx, grid)
        while len(_SYSTEMS) > _SYSTEMS_MAX:
            _SYSTEMS.popitem(last=False)
    else:
        _SYSTEMS.move_to_end(key)
    return sys_


def _as_parts(sys_: LinearSystem, phi, weight=2.0):
    """Split a field into ``[(values, parity)]`` parts on the system grid."""
    if phi is None or (np.isscalar(phi) and phi == 0):
        return []
    if isinstance(phi, ReducedField) and phi.grid is sys_.grid:
        return [(np.asarray(phi.values), phi.parity)]
    x = sys_.x
    ev = kelvin_even_part(phi, x, weight)
    od = kelvin_odd_part(phi, x, weight)
    parts = [(ev, 1)]
    if np.max(np.abs(od)) > 1e-14 * max(np.max(np.abs(ev)), 1e-300):
        parts.append((od, -1))
    return parts


class _Sum:
    """Callable sum of grid fields (used for fields with mixed Kelvin parity)."""

    def __init__(self, fields):
        self.fields = fields

    def __call__(self, x):
        return sum(f(x) for f in self.fields)


def apply_L(phi1, phi2, a: PolygonAnsatz, ctx: OperatorContext | None = None, grid=None, system=None):
    """``(-Delta phi1 - g'(U) phi1, -Delta phi2 - g'(V) phi2)``.

    Inputs may be grid fields or callables; callables are split into Kelvin
    even and odd parts which are handled with the matching boundary closure.

    Raises
    ------
    RefinementError
        If the grid has fewer than 8 cells per concentration length.
    """
    sys_ = system or linear_system(a, ctx, grid)
    sys_.grid.check_resolution(8.0)
    out = []
    for which, phi in ((1, phi1), (2, phi2)):
        parts = _as_parts(sys_, phi)
        fields = [sys_.field(sys_.apply(which, v, par), weight=6.0, parity=par, decay=4.0) for v, par in parts]
        if not fields:
            out.append(sys_.field(np.zeros(sys_.n), weight=6.0, decay=4.0))
        elif len(fields) == 1:
            out.append(fields[0])
        else:
            out.append(_Sum(fields))
    return tuple(out)


@dataclass
class PlinSolution:
    phi1: ReducedField
    phi2: ReducedField
    c: float
    residual: float
    orthogonality: float

    def __iter__(self):
        return iter((self.phi1, self.phi2, self.c))


def solve_plin(h1, h2, a: PolygonAnsatz, ctx: OperatorContext | None = None, grid=None, system=None) -> PlinSolution:
    """Solve the projected linear problem.

    ``L1 phi1 = h1``, ``L2 phi2 = h2 + c Y`` and ``int Y phi2 = 0`` with
    ``Y = sum_j g'(U_j) Z^0_j`` (its Kelvin-even part). Right-hand sides are
    grid fields, node arrays or callables (Kelvin-symmetrised on sampling).

    Returns
    -------
    PlinSolution
        Unpacks as ``(phi1, phi2, c)``; also carries the relative residual of
        the discrete system and the constraint value.
    """
    sys_ = system or linear_system(a, ctx, grid)
    h1v, h2v = sys_.sample_rhs(h1), sys_.sample_rhs(h2)
    if np.any(h1v):
        p1, _, res1 = sys_.solve(1, h1v)
    else:
        p1, res1 = np.zeros(sys_.n), 0.0
    if np.any(h2v):
        p2, c, res2 = sys_.solve(2, h2v)
    else:
        p2, c, res2 = np.zeros(sys_.n), 0.0, 0.0
    return PlinSolution(sys_.field(p1), sys_.field(p2), c, max(res1, res2), sys_.constraint(p2))


def _choquard_remainder(sys_: LinearSystem, which: int, phi: np.ndarray) -> np.ndarray:
    """``g(u + phi) - g(u) - g'(u) phi`` at the nodes without cancellation."""
    u, Ru = sys_.base(which)
    p = sys_.p
    Tp = taylor_remainder(u, phi, p)
    Tq = taylor_remainder(u, phi, p - 1.0, odd=True)
    w1 = sys_.riesz(u ** (p - 1.0) * phi)
    wT = sys_.riesz(Tp)
    up = u + phi
    gw = np.abs(up) ** (p - 2.0) * up
    return Ru * Tq + p * w1 * ((p - 1.0) * u ** (p - 2.0) * phi + Tq) + wT * gw


def apply_N(phi1, phi2, a: PolygonAnsatz, params=None, ctx: OperatorContext | None = None, grid=None,
            system=None, beta: float | None = None):
    """Nonlinear terms ``(N1, N2)`` as weight-6 grid fields.

    ``N1 = g(U+phi1) - g(U) - g'(U)phi1 + beta (2 U V phi2 + U phi2^2 + V^2 phi1 + 2 V phi1 phi2 + phi1 phi2^2)``
    and ``N2 = g(V+phi2) - g(V) - g'(V)phi2 + beta (U^2 phi2 + 2 U V phi1 + 2 U phi1 phi2 + V phi1^2 + phi1^2 phi2)``.
    """
    sys_ = system or linear_system(a, ctx, grid)
    params = params or a.params
    b = params.beta if beta is None else float(beta)
    f1 = _node_values(sys_, phi1)
    f2 = _node_values(sys_, phi2)
    U, V = sys_.U, sys_.V
    n1 = _choquard_remainder(sys_, 1, f1) if np.any(f1) else np.zeros(sys_.n)
    n2 = _choquard_remainder(sys_, 2, f2) if np.any(f2) else np.zeros(sys_.n)
    n1 = n1 + b * (2 * U * V * f2 + U * f2**2 + V**2 * f1 + 2 * V * f1 * f2 + f1 * f2**2)
    n2 = n2 + b * (U**2 * f2 + 2 * U * V * f1 + 2 * U * f1 * f2 + V * f1**2 + f1**2 * f2)
    return sys_.field(n1, weight=6.0, decay=4.0), sys_.field(n2, weight=6.0, decay=4.0)


def _node_values(sys_: LinearSystem, phi) -> np.ndarray:
    if phi is None or (np.isscalar(phi) and phi == 0):
        return np.zeros(sys_.n)
    if isinstance(phi, ReducedField):
        if phi.grid is sys_.grid:
            if phi.parity != 1:
                raise ContractError("nonlinear terms need Kelvin-even fields")
            return np.asarray(phi.values)
        return kelvin_even_part(phi, sys_.x, 2.0)
    if isinstance(phi, np.ndarray) and phi.shape == (sys_.n,):
        return phi
    return kelvin_even_part(phi, sys_.x, 2.0)


def error_nodes(sys_: LinearSystem, beta: float):
    """``(E1, E2)`` at the nodes of the system grid."""
    a, x = sys_.a, sys_.x
    U, V = sys_.U, sys_.V
    e1 = beta * U * V**2
    e2 = sys_.inter(x) + beta * U**2 * V
    return e1, e2


@dataclass
class FixedPointState:
    """State of the contraction iteration.

    Attributes
    ----------
    iterate : int
    phi1, phi2 : ReducedField
    c : float
        Multiplier of the last projected solve.
    star_norms : tuple of float
    residual_norms : tuple of float
        ``|N(phi_prev) - N(phi)|_**`` componentwise, the defect of the
        fixed-point equation given an exact projected solve (the discrete
        solve residual is logged separately as ``solve_residual``).
    ratio : float
        Last contraction ratio (increment ratio).
    converged : bool
    flagged : bool
        True when the ratio stayed ``>= 1`` for three consecutive iterations.
    history : list of dict
    """

    iterate: int
    phi1: ReducedField
    phi2: ReducedField
    c: float
    star_norms: tuple
    residual_norms: tuple
    ratio: float
    converged: bool
    flagged: bool = False
    history: list = field(default_factory=list)

    @property
    def total_norm(self) -> float:
        return float(sum(self.star_norms))

    @property
    def max_ratio(self) -> float:
        rs = [h["ratio"] for h in self.history
              if h.get("ratio") is not None and np.isfinite(h["ratio"]) and not h.get("plateau")]
        return max(rs) if rs else float("nan")


_CKPT = b"CHQS"


def _write_checkpoint(path: Path, st: FixedPointState) -> None:
    b1, b2 = st.phi1.to_bytes(), st.phi2.to_bytes()
    scal = np.array([st.iterate, st.c, *st.star_norms, st.ratio], dtype="<f8")
    with open(path, "wb") as fh:
        fh.write(_CKPT + struct.pack("<QQI", len(b1), len(b2), len(scal)))
        fh.write(b1)
        fh.write(b2)
        fh.write(scal.tobytes())


def load_checkpoint(path):
    """Read ``(phi1, phi2, scalars)`` from an iterate checkpoint."""
    data = Path(path).read_bytes()
    if data[:4] != _CKPT:
        raise ContractError("not a fixed-point checkpoint")
    n1, n2, ns = struct.unpack_from("<QQI", data, 4)
    off = 4 + struct.calcsize("<QQI")
    f1 = ReducedField.from_bytes(data[off : off + n1])
    f2 = ReducedField.from_bytes(data[off + n1 : off + n1 + n2], grid=f1.grid)
    scal = np.frombuffer(data, dtype="<f8", count=ns, offset=off + n1 + n2).copy()
    return f1, f2, scal


def fixed_point(a: PolygonAnsatz, params=None, ctx: OperatorContext | None = None, max_iter: int = 30,
                tol: float = 1e-8, grid=None, system=None, beta: float | None = None, initial=None,
                weights: NormWeights | None = None, checkpoint_dir=None, log_path=None) -> FixedPointState:
    """Iterate ``phi <- solve_plin(E + N(phi))``.

    Stops when the star-norm increment is below ``tol`` times the current
    norm (or below ``tol`` absolutely when the norm vanishes), or when the
    increment sits below ``ROUNDOFF_FLOOR`` times the norm and has stopped
    shrinking. Ratios on that round-off plateau are excluded from
    ``max_ratio`` and from the divergence flag.

    Parameters
    ----------
    initial : {'zero', 'preimage'} or tuple, optional
        Starting pair; ``preimage`` starts from ``solve_plin(E)``.
    checkpoint_dir : path, optional
        One binary container per iterate.
    log_path : path, optional
        JSON convergence log.
    """
    params = params or a.params
    b = params.beta if beta is None else float(beta)
    if b > 0:
        raise ContractError("beta must be non-positive")
    if b < 0 and not in_regime(a.lam, b):
        warnings.warn(f"lam = {a.lam:g} lies outside the regime 1/lam < exp(-1/sqrt|beta|) for beta = {b:g}",
                      RuntimeWarning, stacklevel=2)
    sys_ = system or linear_system(a, ctx, grid)
    w = weights or norm_weights(a)
    e1, e2 = error_nodes(sys_, b)
    n = sys_.n
    if initial is None or initial == "zero":
        f1, f2 = np.zeros(n), np.zeros(n)
    elif initial == "preimage":
        s0 = solve_plin(e1, e2, a, system=sys_)
        f1, f2 = s0.phi1.values.copy(), s0.phi2.values.copy()
    else:
        f1, f2 = _node_values(sys_, initial[0]), _node_values(sys_, initial[1])
    ckdir = Path(checkpoint_dir) if checkpoint_dir else None
    if ckdir:
        ckdir.mkdir(parents=True, exist_ok=True)
    history = []
    prev_inc = None
    bad = 0
    state = None
    for it in range(1, max_iter + 1):
        N1, N2 = apply_N(f1, f2, a, params, system=sys_, beta=b)
        sol = solve_plin(e1 + N1.values, e2 + N2.values, a, system=sys_)
        g1, g2 = sol.phi1.values, sol.phi2.values
        d1, d2 = sys_.field(g1 - f1), sys_.field(g2 - f2)
        inc = star_norm(d1, w) + star_norm(d2, w)
        s1, s2 = star_norm(sol.phi1, w), star_norm(sol.phi2, w)
        ratio = inc / prev_inc if prev_inc else float("nan")
        # increments at the round-off floor carry no contraction information
        plateau = inc <= ROUNDOFF_FLOOR * (s1 + s2)
        bad = bad + 1 if (prev_inc and ratio >= 1.0 and not plateau) else 0
        # the new iterate solves L g = E + N(f) + c Y to round-off, so its
        # fixed-point defect is N(f) - N(g); re-applying the discrete Laplacian
        # pointwise would amplify rounding on thin cells near the axis
        M1, M2 = apply_N(g1, g2, a, params, system=sys_, beta=b)
        r1 = N1.values - M1.values
        r2 = N2.values - M2.values
        res = (starstar_norm(sys_.field(r1, 6.0, decay=4.0), w), starstar_norm(sys_.field(r2, 6.0, decay=4.0), w))
        history.append({"iterate": it, "increment": inc, "ratio": None if not prev_inc else ratio, "plateau": plateau,
                        "phi1_star": s1, "phi2_star": s2, "c": sol.c, "residual1": res[0], "residual2": res[1],
                        "solve_residual": sol.residual})
        conv = inc <= tol * max(s1 + s2, 0.0) or inc == 0.0 or (s1 + s2 == 0.0) or (plateau and ratio >= 0.5)
        state = FixedPointState(it, sol.phi1, sol.phi2, sol.c, (s1, s2), res,
                                ratio if prev_inc else float("nan"), conv, bad >= 3, history)
        if ckdir:
            _write_checkpoint(ckdir / f"iterate_{it:03d}.chqs", state)
        f1, f2 = g1, g2
        prev_inc = inc
        if conv or bad >= 3:
            break
    if log_path:
        Path(log_path).write_text(json.dumps({"k": a.k, "lambda": a.lam, "beta": b, "mu": sys_.mu,
                                              "grid_nodes": n, "history": history}, indent=2))
    return state


def random_symmetric_rhs(a: PolygonAnsatz, rng: np.random.Generator, modes: int = 6, tau: float | None = None):
    """Smooth random right-hand side, symmetric under the polygon group and Kelvin-even.

    Built from oscillating profiles concentrated at ``xi_1`` with the decay of
    the ``**`` weight, averaged over the group; sampling through
    :func:`solve_plin` applies the Kelvin symmetrisation.
    """
    tau = a.params.tau if tau is None else tau
    lam, xi = a.lam, a.centers[0]
    amp = rng.normal(size=modes)
    freq = rng.normal(size=(modes, 3)) * 0.7
    phase = rng.uniform(0, 2 * math.pi, modes)
    rad = rng.uniform(0.5, 3.0, modes)
    axisym = a.k <= 2

    def one(x):
        y = lam * (x - xi)
        d = np.sqrt(_sqnorm(y))
        # reduced coordinates: (y1, |y2,y3,y4|) for k <= 2, (y1, y2, |y3,y4|) otherwise
        if axisym:
            z = np.stack([y[..., 0], np.sqrt(_sqnorm(y[..., 1:])), np.zeros(d.shape)], axis=-1)
        else:
            z = np.stack([y[..., 0], y[..., 1], np.hypot(y[..., 2], y[..., 3])], axis=-1)
        out = np.zeros(d.shape)
        for m in range(modes):
            out += amp[m] * np.cos(z @ freq[m] + phase[m]) * (1.0 + d / rad[m]) ** (-(3.0 + tau) - 0.5)
        return lam**3 * out

    def h(x):
        x = _points(x)
        # averaging over the polygon group symmetrises
        return np.mean([one(im) for im in group_images(x, a.k)], axis=0)

    return h


def invertibility_study(k: int = 2, lambdas=(1e2, 1e3), n_rhs: int = 10, seed: int = 0,
                        params: ChoquardParams | None = None, grid=None) -> dict:
    """Uniform-invertibility surrogate over random symmetric right-hand sides.

    For each ``lam`` and each of ``n_rhs`` independent pairs ``(h1, h2)`` from
    :func:`random_symmetric_rhs`, solves the projected problem and records
    ``(|phi1|_* + |phi2|_*) / (|h1|_** + |h2|_**)`` and ``|c| lam / |h2|_**``.

    Returns
    -------
    dict
        ``rows`` plus ``phi_spread`` and ``c_spread`` (max over min of each
        ratio across all rows), the per-``lam`` maxima and their drift across
        ``lam`` (``phi_constant_drift``, ``c_constant_drift``), which track the
        fitted constants themselves.
    """
    params = params or ChoquardParams()
    rng = np.random.default_rng(seed)
    rows = []
    for lam in lambdas:
        a = make_polygon_ansatz(k, float(lam), params)
        sys_ = linear_system(a, grid=grid)
        w = norm_weights(a)
        for i in range(n_rhs):
            h1 = random_symmetric_rhs(a, rng)
            h2 = random_symmetric_rhs(a, rng)
            v1, v2 = sys_.sample_rhs(h1), sys_.sample_rhs(h2)
            n1 = starstar_norm(sys_.field(v1, 6.0, decay=4.0), w)
            n2 = starstar_norm(sys_.field(v2, 6.0, decay=4.0), w)
            sol = solve_plin(v1, v2, a, system=sys_)
            s = star_norm(sol.phi1, w) + star_norm(sol.phi2, w)
            rows.append({"lambda": float(lam), "sample": i, "h_norm": n1 + n2, "phi_norm": s, "c": sol.c,
                         "phi_ratio": s / (n1 + n2), "c_ratio": abs(sol.c) * lam / n2,
                         "solve_residual": sol.residual})
    pr = np.array([r["phi_ratio"] for r in rows])
    cr = np.array([r["c_ratio"] for r in rows])
    per = {float(l): {"phi_ratio_max": max(r["phi_ratio"] for r in rows if r["lambda"] == l),
                      "c_ratio_max": max(r["c_ratio"] for r in rows if r["lambda"] == l)} for l in lambdas}
    pm = [v["phi_ratio_max"] for v in per.values()]
    cm = [v["c_ratio_max"] for v in per.values()]
    return {"rows": rows, "phi_spread": float(pr.max() / pr.min()), "c_spread": float(cr.max() / cr.min()),
            "phi_constant_drift": float(max(pm) / min(pm)), "c_constant_drift": float(max(cm) / min(cm)),
            "per_lambda": per}
