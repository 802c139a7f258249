"""The reduced scalar ``c(lam)``, its asymptotic coefficients and the rate ``lam(beta)``.

``c(lam) = int (E2 + N2 - L2 phi2) Z / int Z^2`` with ``Z = sum_j lam Z^0(lam (x - xi_j))``.
The denominator grows like ``k 2 pi^2 ln(lam Lambda) / lam^2`` on the ball of
radius ``Lambda``; since it is positive it does not move the root, and the fit
is carried out on ``lam^2`` times the numerator, which is where the model
``-a + b beta ln(1/lam)`` has constant coefficients.
"""

from __future__ import annotations

import csv
import json
import math
import warnings
from dataclasses import asdict, dataclass, field

import numpy as np

from .ansatz_error import in_regime
from .bubble_core import ChoquardParams, PolygonAnsatz, make_polygon_ansatz
from .choquard_operator import OperatorContext
from .exceptions import ContractError, DegenerateError, DomainError, PoorFitError
from .reduced_grid import ReducedField
from .reduction_solver import (
    FixedPointState,
    LinearSystem,
    apply_N,
    fixed_point,
    kelvin_even_part,
    linear_system,
)

__all__ = [
    "ReducedTerms",
    "ReducedCoefficients",
    "LambdaRoot",
    "denominator",
    "denominator_model",
    "reduced_terms",
    "c_of_lambda",
    "fit_from_values",
    "fit_coefficients",
    "solve_lambda",
    "write_surface_csv",
]

LOG_THRESHOLD = 50.0


def denominator_model(lam: float, trunc: float = 100.0, k: int = 1) -> float:
    """Diagonal part of ``int_{|x|<Lambda} Z^2``: ``k 2 pi^2 (ln(lam Lambda) - 7/6) / lam^2``.

    The cross terms ``int Z_i Z_j`` add about ``2 pi^2 ln(Lambda) / lam^2`` per
    ordered pair and are not included.
    """
    return k * 2.0 * math.pi**2 * (math.log(lam * trunc) - 7.0 / 6.0) / lam**2


def _ones(grid) -> ReducedField:
    # weight 0 makes integrate_against apply the bare inversion Jacobian
    return ReducedField(grid, np.ones(grid.n), weight=0.0, parity=1, decay=0.0)


def denominator(a: PolygonAnsatz, grid=None, system: LinearSystem | None = None) -> float:
    """``int_{|x|<Lambda} Z^2`` on the reduced grid.

    Raises
    ------
    DegenerateError
        If the value is below ``1e-14``.
    """
    sys_ = system or linear_system(a, grid=grid)
    val = _ones(sys_.grid).integrate_against(lambda x: a.Z(x) ** 2)
    if not val > 1e-14:
        raise DegenerateError(f"denominator int Z^2 = {val:.3e} is degenerate")
    return val


@dataclass
class ReducedTerms:
    """Pieces of ``c(lam)`` at one ``(lam, beta)``.

    Attributes
    ----------
    interaction : float
        ``int (g(V) - sum_j g(U_j)) Z``.
    coupling : float
        ``beta int U^2 V Z``.
    correction : float
        ``int N2 Z - int phi2 L2 Z`` (zero for the leading-order variant).
    numerator, denominator, c : float
    projection_check : float
        ``-c_plin int Y Z`` from the projected solve; equals the full numerator
        up to discretisation (nan for the leading-order variant).
    """

    lam: float
    beta: float
    k: int
    mu: float
    variant: str
    interaction: float
    coupling: float
    correction: float
    numerator: float
    denominator: float
    c: float
    projection_check: float = float("nan")

    @property
    def scaled_numerator(self) -> float:
        """``lam^2`` times the numerator, the quantity fitted by the model."""
        return self.lam**2 * self.numerator


def reduced_terms(a: PolygonAnsatz, beta: float | None = None, ctx: OperatorContext | None = None,
                  phis=None, grid=None, system: LinearSystem | None = None, **fp_kwargs) -> ReducedTerms:
    """Evaluate the numerator pieces and the denominator of ``c(lam)``.

    Parameters
    ----------
    phis : None, 'fixed_point', FixedPointState or (phi1, phi2), optional
        ``None`` gives the leading-order variant (``phi = 0``); ``'fixed_point'``
        runs :func:`fixed_point` at this ``(lam, beta)``.
    """
    b = a.params.beta if beta is None else float(beta)
    if b > 0:
        raise ContractError("beta must be non-positive")
    sys_ = system or linear_system(a, ctx, grid)
    W8 = sys_.W8
    Ze = kelvin_even_part(a.Z, sys_.x, 2.0)
    inter = float(np.sum(W8 * sys_.inter(sys_.x) * Ze))
    coup = float(np.sum(W8 * b * sys_.U**2 * sys_.V * Ze))
    corr, check, variant, c_plin = 0.0, float("nan"), "leading", None
    if isinstance(phis, str) and phis == "fixed_point":
        phis = fixed_point(a, beta=b, system=sys_, **fp_kwargs)
    if phis is not None:
        variant = "full"
        if isinstance(phis, FixedPointState):
            f1, f2, c_plin = phis.phi1.values, phis.phi2.values, phis.c
        else:
            f1, f2 = (np.asarray(getattr(p, "values", p), dtype=float) for p in phis)
        _, N2 = apply_N(f1, f2, a, system=sys_, beta=b)
        # L2 Z = -Delta Z - g'(V) Z with -Delta Z analytic
        L2Z = sys_.Y - sys_.g_prime(2, Ze)
        corr = float(np.sum(W8 * N2.values * Ze) - np.sum(W8 * f2 * L2Z))
        if c_plin is not None:
            check = -c_plin * float(np.sum(W8 * sys_.Y * Ze))
    num = inter + coup + corr
    den = denominator(a, system=sys_)
    return ReducedTerms(a.lam, b, a.k, sys_.mu, variant, inter, coup, corr, num, den, num / den, check)


def c_of_lambda(lam: float, beta: float, a: PolygonAnsatz | None = None, ctx: OperatorContext | None = None,
                phis=None, k: int = 2, mu: float = 2.0, grid=None) -> float:
    """``c(lam)`` for the polygon ansatz; see :func:`reduced_terms`."""
    if a is None:
        params = ChoquardParams(mu=mu, beta=beta if beta < 0 else -0.01)
        a = make_polygon_ansatz(k, lam, params)
    elif abs(a.lam - lam) > 1e-12 * lam:
        raise ContractError("ansatz concentration does not match lam")
    return reduced_terms(a, beta, ctx, phis, grid).c


@dataclass
class ReducedCoefficients:
    """Fitted coefficients of ``lam^2 num(lam) = -a + b beta ln(1/lam)``.

    Attributes
    ----------
    a_hat, b_hat : float
        ``b_hat`` is nan when every ``beta`` is zero (``b_identifiable`` False).
    fit_r2 : float
    lambda_of_beta : dict
        ``beta -> ln lam`` of the model root.
    d_beta : dict
        ``beta -> |beta| ln lam(beta)`` from the joint fit.
    d_beta_per_line : dict
        The same from separate fits of each ``beta`` line (needs two or more
        ``lam`` per ``beta``); a non-trivial check of the model.
    residuals : list of dict
        Per-point fit residuals.
    signs : dict
        Measured signs of the two numerator pieces.
    """

    a_hat: float
    b_hat: float
    fit_r2: float
    lambda_of_beta: dict = field(default_factory=dict)
    d_beta: dict = field(default_factory=dict)
    d_beta_per_line: dict = field(default_factory=dict)
    residuals: list = field(default_factory=list)
    signs: dict = field(default_factory=dict)
    b_identifiable: bool = True
    rows: list = field(default_factory=list)
    setup: dict = field(default_factory=dict)

    @property
    def signs_ok(self) -> bool:
        return self.a_hat > 0 and self.b_hat > 0

    def to_json(self) -> str:
        d = asdict(self)
        d["lambda_of_beta"] = {repr(k): v for k, v in self.lambda_of_beta.items()}
        d["d_beta"] = {repr(k): v for k, v in self.d_beta.items()}
        d["d_beta_per_line"] = {repr(k): v for k, v in self.d_beta_per_line.items()}
        return json.dumps(d, indent=2, sort_keys=True, default=float)


def fit_from_values(betas, lambdas, values, min_r2: float = 0.9) -> ReducedCoefficients:
    """Least-squares fit of ``lam^2 value = -a + b beta ln(1/lam)``.

    ``betas``, ``lambdas`` and ``values`` are equal-length sequences.

    Raises
    ------
    PoorFitError
        If ``r^2 < min_r2``; the residual table is attached.
    """
    B = np.asarray(betas, dtype=float)
    L = np.asarray(lambdas, dtype=float)
    y = np.asarray(values, dtype=float) * L**2
    if not (B.shape == L.shape == y.shape) or y.size < 2:
        raise ContractError("need at least two (beta, lam, value) triples of equal length")
    x = B * np.log(1.0 / L)
    ident = bool(np.ptp(x) > 1e-14 * max(1.0, np.abs(x).max()))
    if ident:
        A = np.column_stack([-np.ones_like(y), x])
        (a_hat, b_hat), *_ = np.linalg.lstsq(A, y, rcond=None)
        pred = A @ np.array([a_hat, b_hat])
    else:
        a_hat, b_hat = float(-np.mean(y)), float("nan")
        pred = np.full_like(y, -a_hat)
    res = y - pred
    sst = float(np.sum((y - y.mean()) ** 2))
    ssr = float(np.sum(res**2))
    # constant data leave only rounding in sst; judge them by the residual alone
    floor = 1e-24 * max(1.0, float(np.sum(y**2)))
    r2 = 1.0 - ssr / sst if sst > floor else (1.0 if ssr <= floor else 0.0)
    table = [{"beta": float(b), "lambda": float(l), "scaled_value": float(v), "residual": float(e)}
             for b, l, v, e in zip(B, L, y, res)]
    if r2 < min_r2:
        raise PoorFitError(f"fit r^2 = {r2:.4f} below {min_r2}", residuals=table)
    coeffs = ReducedCoefficients(float(a_hat), float(b_hat), float(min(max(r2, 0.0), 1.0)), residuals=table,
                                 b_identifiable=ident)
    if ident and a_hat > 0 and b_hat > 0:
        for b in sorted(set(B.tolist())):
            if b < 0:
                root = solve_lambda(b, coeffs)
                coeffs.lambda_of_beta[b] = root.log_lambda
                coeffs.d_beta[b] = abs(b) * root.log_lambda
                sel = B == b
                if np.unique(L[sel]).size >= 2:
                    # line fit: y = -a_b + b_b beta ln(1/lam)
                    slope, icpt = np.polyfit(x[sel], y[sel], 1)
                    if slope > 0 and icpt < 0:
                        coeffs.d_beta_per_line[b] = float(-icpt / slope)
    return coeffs


def fit_coefficients(k: int = 2, mu: float = 2.0, betas=(-0.02, -0.01, -0.005), lambdas=None,
                     variant: str = "leading", grid="default", tau: float = 0.5, trunc: float = 100.0,
                     min_r2: float = 0.9, fp_kwargs: dict | None = None) -> ReducedCoefficients:
    """Evaluate the numerator over a ``(beta, lam)`` grid and fit ``(a, b)``.

    Parameters
    ----------
    lambdas : sequence, optional
        Defaults to ``10^3 .. 10^5`` in half decades; must span at least 1.5
        decades. Below ``10^3`` the scaled interaction has not settled to its
        limit and the per-line fits drift.
    variant : {'leading', 'full'}
        ``full`` runs the fixed point at every point (slow).
    """
    lambdas = [float(l) for l in (lambdas if lambdas is not None else np.logspace(3, 5, 5))]
    if math.log10(max(lambdas) / min(lambdas)) < 1.5 - 1e-9:
        raise ContractError("lam grid must span at least 1.5 decades")
    betas = [float(b) for b in betas]
    if any(b > 0 for b in betas):
        raise ContractError("beta must be non-positive")
    rows, B, L, vals = [], [], [], []
    inter_sign, coup_sign = set(), set()
    for lam in lambdas:
        params = ChoquardParams(mu=mu, beta=min(betas) if min(betas) < 0 else -0.01, tau=tau, trunc_radius=trunc)
        a = make_polygon_ansatz(k, lam, params)
        sys_ = linear_system(a, grid=grid)
        for b in betas:
            if variant == "full" and b < 0:
                with warnings.catch_warnings():
                    warnings.simplefilter("ignore", RuntimeWarning)
                    t = reduced_terms(a, b, phis="fixed_point", system=sys_, **(fp_kwargs or {}))
            else:
                t = reduced_terms(a, b, system=sys_)
            inter_sign.add(int(np.sign(t.interaction)))
            if b != 0:
                coup_sign.add(int(np.sign(t.coupling)))
            rows.append({"k": k, "mu": mu, "beta": b, "lambda": lam, "interaction": t.interaction,
                         "coupling": t.coupling, "correction": t.correction, "numerator": t.numerator,
                         "denominator": t.denominator, "c": t.c, "scaled_numerator": t.scaled_numerator,
                         "scaled_c": lam**2 * t.c, "in_regime": in_regime(lam, b), "variant": t.variant})
            B.append(b)
            L.append(lam)
            vals.append(t.numerator)
    coeffs = fit_from_values(B, L, vals, min_r2)
    coeffs.rows = rows
    coeffs.signs = {"interaction": sorted(inter_sign), "coupling": sorted(coup_sign)}
    coeffs.setup = {"k": k, "mu": mu, "grid": grid if isinstance(grid, str) else repr(grid), "tau": tau,
                    "trunc": trunc, "variant": variant}
    return coeffs


@dataclass(frozen=True)
class LambdaRoot:
    """Root ``lam(beta)`` held as ``ln lam``.

    ``value`` is ``exp(log_lambda)`` when ``log_lambda <= 50`` and None
    otherwise, so large roots never overflow.
    """

    log_lambda: float
    polished: bool = False

    @property
    def value(self) -> float | None:
        return math.exp(self.log_lambda) if self.log_lambda <= LOG_THRESHOLD else None

    @property
    def is_log_form(self) -> bool:
        return self.log_lambda > LOG_THRESHOLD

    def __float__(self) -> float:
        if self.is_log_form:
            raise OverflowError(f"lam = exp({self.log_lambda:g}) is only available in log form")
        return self.value


def solve_lambda(beta: float, coeffs: ReducedCoefficients, polish=None, tol: float = 1e-10,
                 max_iter: int = 40) -> LambdaRoot:
    """Root of ``-a + b beta ln(1/lam) = 0``, i.e. ``ln lam = a / (b |beta|)``.

    Parameters
    ----------
    polish : callable, optional
        ``lam -> c(lam)`` (or any positive multiple of it); when given the
        model root seeds a secant iteration in ``ln lam``.

    Raises
    ------
    DomainError
        If ``beta >= 0`` or the coefficients are not positive.
    DegenerateError
        If the secant iteration stalls.
    """
    if not beta < 0:
        raise DomainError(f"beta must be negative, got {beta}")
    a, b = coeffs.a_hat, coeffs.b_hat
    if not (a > 0 and b > 0):
        raise DomainError(f"coefficients must be positive, got a={a}, b={b}")
    s0 = a / (b * abs(beta))
    if polish is None:
        return LambdaRoot(s0)
    f = lambda s: float(polish(math.exp(s)))
    s1 = s0 * 1.05
    f0, f1 = f(s0), f(s1)
    for _ in range(max_iter):
        if f1 == f0:
            raise DegenerateError("secant iteration stalled (equal function values)")
        s2 = s1 - f1 * (s1 - s0) / (f1 - f0)
        if not math.isfinite(s2) or s2 <= 0:
            raise DegenerateError(f"secant iteration left the domain (ln lam = {s2})")
        s0, f0 = s1, f1
        s1, f1 = s2, f(s2)
        if abs(s1 - s0) <= tol * max(1.0, abs(s1)):
            return LambdaRoot(s1, polished=True)
    raise DegenerateError(f"secant iteration did not converge in {max_iter} steps")


SURFACE_COLUMNS = ["k", "mu", "beta", "lambda", "interaction", "coupling", "correction", "numerator",
                   "denominator", "c", "scaled_numerator", "scaled_c", "in_regime", "variant"]


def write_surface_csv(rows, path) -> None:
    with open(path, "w", newline="") as fh:
        wr = csv.DictWriter(fh, fieldnames=SURFACE_COLUMNS, extrasaction="ignore")
        wr.writeheader()
        for r in rows:
            wr.writerow(r)
