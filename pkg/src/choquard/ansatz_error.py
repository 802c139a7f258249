"""Error of the polygon ansatz and its scaling in ``lam`` and ``beta``.

``E1 = beta U V^2`` and ``E2 = g(V) - sum_j g(U_j) + beta U^2 V``. The
interaction ``g(V) - sum_j g(U_j)`` is evaluated without expansion:

    g(V) - sum_j g(U_j) = sum_j R_j (V^{p-1} - U_j^{p-1}) + R[D] V^{p-1},

with ``R_j`` the closed-form potential of ``U_j^p`` and ``D = V^p - sum_j U_j^p``
whose potential is computed on the reduced grid.
"""

from __future__ import annotations

import csv
import math
import warnings
from dataclasses import asdict, dataclass, field

import numpy as np

from .bubble_core import ChoquardParams, PolygonAnsatz, _points, _sqnorm, make_polygon_ansatz
from .choquard_operator import OperatorContext
from .exceptions import ContractError
from .quadrature_engine import grid_riesz, riesz_bubble_power
from .reduced_grid import GRID_PRESETS, GridSpec, ReducedField, ReducedGrid
from .weighted_norms import NormWeights, norm_weights, starstar_norm

__all__ = [
    "ErrorReport",
    "InteractionField",
    "error_E1",
    "error_E2",
    "coupling_u2v",
    "error_report",
    "in_regime",
    "scaling_study",
    "write_table_csv",
]


def _beta(params: ChoquardParams, beta: float | None) -> float:
    b = params.beta if beta is None else float(beta)
    if b > 0:
        raise ContractError(f"beta must be non-positive, got {b}")
    return b


def in_regime(lam: float, beta: float) -> bool:
    """``1/lam < exp(-1/sqrt|beta|)``; always false for ``beta = 0``."""
    if beta == 0:
        return False
    return -math.log(lam) < -1.0 / math.sqrt(abs(beta))


def error_E1(a: PolygonAnsatz, params: ChoquardParams | None = None, beta: float | None = None):
    """``E1 = beta U V^2`` as a callable of points.

    ``beta`` overrides ``params.beta`` and may be 0 for diagnostics.
    """
    b = _beta(params or a.params, beta)
    return lambda x: b * a.U(x) * a.V(x) ** 2


def coupling_u2v(a: PolygonAnsatz, params: ChoquardParams | None = None, beta: float | None = None):
    """``beta U^2 V`` as a callable of points."""
    b = _beta(params or a.params, beta)
    return lambda x: b * a.U(x) ** 2 * a.V(x)


@dataclass
class InteractionField:
    """``g(V) - sum_j g(U_j)`` with the cross-density potential on a grid."""

    ansatz: PolygonAnsatz
    mu: float
    cross_potential: ReducedField | None

    def __call__(self, x) -> np.ndarray:
        a, mu = self.ansatz, self.mu
        p = 4.0 - mu / 2.0
        x = _points(x)
        lead = x.shape[:-1]
        x = x.reshape(-1, x.shape[-1])
        Us = np.stack([b(x) for b in a.bubbles])
        V = Us.sum(axis=0)
        out = np.zeros(len(x))
        for j, c in enumerate(a.centers):
            Rj = riesz_bubble_power(mu, np.sqrt(_sqnorm(x - c)), a.amplitude, a.lam)
            others = V - Us[j]
            # V^{p-1} - U_j^{p-1} without cancellation
            diff = Us[j] ** (p - 1.0) * np.expm1((p - 1.0) * np.log1p(others / Us[j]))
            out += Rj * diff
        if self.cross_potential is not None:
            out += self.cross_potential(x) * V ** (p - 1.0)
        return out.reshape(lead)


def _grid_for(a: PolygonAnsatz, spec: GridSpec | str | None) -> ReducedGrid:
    if isinstance(spec, str):
        spec = GRID_PRESETS[spec]
    spec = spec or GRID_PRESETS["default"]
    spec = spec.with_trunc(a.params.trunc_radius)
    return ReducedGrid(a.k, a.lam, spec)


def interaction_field(a: PolygonAnsatz, ctx: OperatorContext | None = None, grid=None) -> InteractionField:
    """Build ``g(V) - sum_j g(U_j)``; the grid Riesz solve is skipped for one bubble."""
    ctx = ctx or OperatorContext(a.params)
    mu, p = ctx.mu, ctx.p
    if a.k == 1:
        return InteractionField(a, mu, None)
    grid = grid if isinstance(grid, ReducedGrid) else _grid_for(a, grid)

    def density(x):
        Us = np.stack([b(x) for b in a.bubbles])
        V = Us.sum(axis=0)
        return V**p - np.sum(Us**p, axis=0)

    D = ReducedField.sample(grid, density, weight=8.0 - mu, parity=1, decay=8.0 - mu, mu=mu)
    w = grid_riesz(D, mu)
    return InteractionField(a, mu, w)


def error_E2(a: PolygonAnsatz, params: ChoquardParams | None = None, ctx: OperatorContext | None = None,
             beta: float | None = None, grid=None):
    """``E2 = g(V) - sum_j g(U_j) + beta U^2 V`` as a callable of points.

    The returned callable carries ``interaction`` and ``coupling`` attributes
    holding the two split members.
    """
    params = params or a.params
    inter = interaction_field(a, ctx or OperatorContext(params), grid)
    coup = coupling_u2v(a, params, beta)

    def e2(x):
        return inter(x) + coup(x)

    e2.interaction = inter
    e2.coupling = coup
    return e2


@dataclass
class ErrorReport:
    """Weighted norms of the ansatz error.

    ``split`` holds ``coupling_e1`` (``|E1|_**``), ``coupling_u2v``
    (``|beta U^2 V|_**``) and ``interaction`` (``|g(V) - sum g(U_j)|_**``).
    """

    lam: float
    beta: float
    mu: float
    k: int
    tau: float
    e1_norm: float
    e2_norm: float
    split: dict = field(default_factory=dict)
    in_regime: bool = False


def error_report(a: PolygonAnsatz, beta: float | None = None, ctx: OperatorContext | None = None,
                 weights: NormWeights | None = None, grid=None, interaction=None) -> ErrorReport:
    """Evaluate ``|E1|_**``, ``|E2|_**`` and the split on the norm sample cloud."""
    params = a.params
    b = _beta(params, beta)
    w = weights or norm_weights(a)
    inter = interaction or interaction_field(a, ctx or OperatorContext(params), grid)
    e1 = error_E1(a, params, b)
    cp = coupling_u2v(a, params, b)
    n1 = starstar_norm(e1, w)
    ni = starstar_norm(inter, w)
    nc = starstar_norm(cp, w)
    n2 = starstar_norm(lambda x: inter(x) + cp(x), w)
    return ErrorReport(a.lam, b, params.mu, a.k, w.tau, n1, n2,
                       {"coupling_e1": n1, "coupling_u2v": nc, "interaction": ni}, in_regime(a.lam, b))


def _slope(xs, ys) -> float:
    return float(np.polyfit(np.log(np.abs(xs)), np.log(ys), 1)[0])


def scaling_study(k: int, mu: float, betas, lambdas, tau: float = 0.5, grid="default",
                  trunc: float = 100.0) -> dict:
    """Table of error norms over a ``(beta, lam)`` grid with fitted log-log slopes.

    Rows outside the regime ``1/lam < exp(-1/sqrt|beta|)`` are kept and
    flagged (a warning is issued).

    Returns
    -------
    dict
        ``rows`` (list of dicts in deterministic order) and ``slopes`` with
        keys ``e1_lambda``, ``e1_beta``, ``interaction_lambda`` (each the
        mean over the other variable) plus per-line values.
    """
    betas = [float(b) for b in betas]
    lambdas = [float(l) for l in lambdas]
    rows = []
    outside = 0
    for lam in lambdas:
        params = ChoquardParams(mu=mu, beta=min(betas) if min(betas) < 0 else -0.01, tau=tau,
                                trunc_radius=trunc)
        a = make_polygon_ansatz(k, lam, params)
        w = norm_weights(a, tau)
        inter = interaction_field(a, OperatorContext(params), grid)
        for b in betas:
            rep = error_report(a, b, weights=w, interaction=inter)
            outside += not rep.in_regime
            row = {"k": k, "mu": mu, "beta": b, "lambda": lam, "tau": tau,
                   "e1_norm": rep.e1_norm, "e2_norm": rep.e2_norm, **rep.split, "in_regime": rep.in_regime}
            rows.append(row)
    if outside:
        warnings.warn(f"{outside} row(s) lie outside the regime 1/lam < exp(-1/sqrt|beta|)", RuntimeWarning,
                      stacklevel=2)
    slopes: dict = {"e1_lambda_per_beta": {}, "e1_beta_per_lambda": {}, "interaction_lambda": float("nan")}
    if len(lambdas) > 1:
        for b in betas:
            sub = [r for r in rows if r["beta"] == b]
            if b != 0:
                slopes["e1_lambda_per_beta"][b] = _slope([r["lambda"] for r in sub], [r["e1_norm"] for r in sub])
        first = [r for r in rows if r["beta"] == betas[0]]
        slopes["interaction_lambda"] = _slope([r["lambda"] for r in first], [r["interaction"] for r in first])
    nz = [b for b in betas if b != 0]
    if len(nz) > 1:
        for lam in lambdas:
            sub = [r for r in rows if r["lambda"] == lam and r["beta"] != 0]
            slopes["e1_beta_per_lambda"][lam] = _slope([r["beta"] for r in sub], [r["e1_norm"] for r in sub])
    vals = list(slopes["e1_lambda_per_beta"].values())
    slopes["e1_lambda"] = float(np.mean(vals)) if vals else float("nan")
    vals = list(slopes["e1_beta_per_lambda"].values())
    slopes["e1_beta"] = float(np.mean(vals)) if vals else float("nan")
    return {"rows": rows, "slopes": slopes}


TABLE_COLUMNS = ["k", "mu", "beta", "lambda", "tau", "e1_norm", "e2_norm", "coupling_e1", "coupling_u2v",
                 "interaction", "in_regime"]


def write_table_csv(rows, path) -> None:
    with open(path, "w", newline="") as fh:
        wr = csv.DictWriter(fh, fieldnames=TABLE_COLUMNS, extrasaction="ignore")
        wr.writeheader()
        for r in rows:
            wr.writerow(r)
