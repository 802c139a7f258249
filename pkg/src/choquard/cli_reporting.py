"""Command-line front end and machine-readable verification reports.

``choquard <command> [options]`` runs one pipeline, prints a summary, writes
``<command>.json`` (and CSV tables) into ``--out`` and exits with 0 when all
checks pass, 1 when a check fails and 2 on usage errors. Reports have the
layout ``{config, results, checks}`` and contain no timestamps, so identical
configurations give byte-identical files.

A configuration file (``--config``) uses INI sections named after modules::

    [bubble_core]
    mu = 2
    beta = -0.01
    tau = 0.5
    trunc_radius = 100

    [ansatz_error]
    k = 2
    betas = -0.02, -0.01
    lambdas = 100, 1000, 10000

    [reduced_grid]
    grid = default

    [cli_reporting]
    out = reports
    format = csv, json
    seed = 0

Flags given on the command line override file values.
"""

from __future__ import annotations

import argparse
import configparser
import csv
import io
import json
import math
import re
import sys
import warnings
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

import numpy as np

from . import __version__
from .bubble_core import ChoquardParams, Bubble, kelvin_transform, make_polygon_ansatz
from .choquard_operator import OperatorContext, linearized_residual, near_kernel_check, residual_single
from .exceptions import ChoquardError, ContractError
from .quadrature_engine import integrate_radial, riesz_radial
from .reduced_grid import GRID_PRESETS
from .specials import alpha_constant, riesz_constant

__all__ = ["RunConfig", "Check", "COMMANDS", "parse_config", "run", "main"]

COMMANDS = ("constants", "verify-identities", "residual", "error-norms", "solve", "reduce", "report-all")

DEFAULT_SWEEPS = {
    "error-norms": ((-0.02, -0.01), (1e2, 1e3, 1e4)),
    "solve": ((-0.02, -0.01), (1e5,)),
    "reduce": ((-0.02, -0.01, -0.005), (1e3, 10**3.5, 1e4, 10**4.5, 1e5)),
}


class UsageError(ChoquardError):
    """Invalid configuration or output location (exit status 2)."""


@dataclass(frozen=True)
class RunConfig:
    """Fully resolved run configuration.

    ``betas`` and ``lambdas`` left empty take the per-command defaults.
    """

    command: str
    mu: float = 2.0
    beta: float = -0.01
    tau: float = 0.5
    trunc_radius: float = 100.0
    k: int = 2
    betas: tuple = ()
    lambdas: tuple = ()
    grid: str = "default"
    out: str | None = None
    formats: tuple = ("json",)
    seed: int = 0

    def __post_init__(self):
        if self.command not in COMMANDS:
            raise UsageError(f"unknown command {self.command!r}; choose from {', '.join(COMMANDS)}")
        if not (0.0 < self.mu < 4.0):
            raise UsageError(f"mu must lie in (0, 4), got {self.mu}")
        if not (0.0 < self.tau < 1.0):
            raise UsageError(f"tau must lie in (0, 1), got {self.tau}")
        if not self.beta < 0:
            raise UsageError(f"beta must be negative, got {self.beta}")
        if self.trunc_radius <= 10.0:
            raise UsageError("trunc_radius must exceed 10")
        if self.k < 1:
            raise UsageError("k must be at least 1")
        if any(b > 0 for b in self.betas):
            raise UsageError("betas must be non-positive")
        if any(l < 1.0 for l in self.lambdas):
            raise UsageError("lambdas must be at least 1")
        if self.grid not in GRID_PRESETS:
            raise UsageError(f"grid must be one of {', '.join(GRID_PRESETS)}")
        if not self.formats or any(f not in ("csv", "json") for f in self.formats):
            raise UsageError("format must be a subset of csv,json")
        if self.seed < 0:
            raise UsageError("seed must be non-negative")

    @property
    def params(self) -> ChoquardParams:
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", RuntimeWarning)
            return ChoquardParams(mu=self.mu, beta=self.beta, tau=self.tau, trunc_radius=self.trunc_radius)

    def sweep(self, command: str | None = None) -> tuple[tuple, tuple]:
        db, dl = DEFAULT_SWEEPS.get(command or self.command, ((self.beta,), (1e3,)))
        return (self.betas or db), (self.lambdas or dl)

    def canonical(self) -> dict:
        """Plain dict with sorted keys and lists; round-trips through :func:`parse_config`."""
        d = asdict(self)
        d["betas"], d["lambdas"], d["formats"] = list(self.betas), list(self.lambdas), list(self.formats)
        return dict(sorted(d.items()))

    def to_ini(self) -> str:
        """INI rendering in the sectioned file format."""
        cp = configparser.ConfigParser()
        cp["bubble_core"] = {"mu": repr(self.mu), "beta": repr(self.beta), "tau": repr(self.tau),
                             "trunc_radius": repr(self.trunc_radius)}
        cp["ansatz_error"] = {"k": str(self.k), "betas": ", ".join(map(repr, self.betas)),
                              "lambdas": ", ".join(map(repr, self.lambdas))}
        cp["reduced_grid"] = {"grid": self.grid}
        cp["cli_reporting"] = {"command": self.command, "out": self.out or "", "format": ", ".join(self.formats),
                               "seed": str(self.seed)}
        buf = io.StringIO()
        cp.write(buf)
        return buf.getvalue()


def _floats(text: str) -> tuple:
    text = text.strip()
    return tuple(float(v) for v in text.split(",") if v.strip()) if text else ()


_KEYS = {
    "mu": ("bubble_core", float), "beta": ("bubble_core", float), "tau": ("bubble_core", float),
    "trunc_radius": ("bubble_core", float), "command": ("cli_reporting", str), "k": ("ansatz_error", int),
    "betas": ("ansatz_error", _floats), "lambdas": ("ansatz_error", _floats), "grid": ("reduced_grid", str),
    "out": ("cli_reporting", lambda s: s or None), "formats": ("cli_reporting", lambda s: tuple(
        v.strip() for v in s.split(",") if v.strip())), "seed": ("cli_reporting", int),
}


def parse_config(text: str, command: str | None = None) -> RunConfig:
    """Parse the INI configuration format into a :class:`RunConfig`."""
    cp = configparser.ConfigParser()
    try:
        cp.read_string(text)
    except configparser.Error as exc:
        raise UsageError(f"invalid configuration file: {exc}") from exc
    values: dict = {}
    for key, (section, conv) in _KEYS.items():
        opt = "format" if key == "formats" else key
        if cp.has_option(section, opt):
            try:
                values[key] = conv(cp.get(section, opt))
            except ValueError as exc:
                raise UsageError(f"invalid value for {section}.{opt}: {exc}") from exc
    if command is not None:
        values["command"] = command
    if "command" not in values:
        raise UsageError("no command given")
    return RunConfig(**values)


# -- reports ---------------------------------------------------------------


@dataclass
class Check:
    """One named check: ``value`` compared with ``tolerance`` by ``relation``."""

    name: str
    value: float
    tolerance: float
    relation: str = "<="
    note: str = ""

    @property
    def passed(self) -> bool:
        v, t = self.value, self.tolerance
        if not np.isfinite(v):
            return False
        return {"<=": v <= t, ">=": v >= t, "<": v < t, ">": v > t}[self.relation]

    def as_dict(self) -> dict:
        d = {"name": self.name, "value": self.value, "tolerance": self.tolerance, "relation": self.relation,
             "pass": self.passed}
        if self.note:
            d["note"] = self.note
        return d

    def line(self) -> str:
        status = "PASS" if self.passed else "FAIL"
        return f"{status} {self.name}: measured {self.value:.6g} vs tolerance {self.relation} {self.tolerance:.6g}"


def _jsonable(x):
    if isinstance(x, dict):
        return {str(k): _jsonable(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_jsonable(v) for v in x]
    if isinstance(x, np.ndarray):
        return [_jsonable(v) for v in x.tolist()]
    if isinstance(x, (np.floating, float)):
        v = float(x)
        return v if math.isfinite(v) else repr(v)
    if isinstance(x, (np.integer,)):
        return int(x)
    if isinstance(x, np.bool_):
        return bool(x)
    return x


def report_body(cfg: RunConfig, results: dict, checks: list) -> str:
    body = {"config": cfg.canonical(), "version": __version__, "results": results,
            "checks": [c.as_dict() for c in checks]}
    return json.dumps(_jsonable(body), indent=2, sort_keys=True) + "\n"


def _write_csv(path: Path, rows: list) -> None:
    if not rows:
        return
    cols = list(rows[0].keys())
    with open(path, "w", newline="") as fh:
        wr = csv.DictWriter(fh, fieldnames=cols, extrasaction="ignore")
        wr.writeheader()
        for r in rows:
            wr.writerow({k: _jsonable(r.get(k)) for k in cols})


# -- pipelines ---------------------------------------------------------------


def _relmax(a, b) -> float:
    a, b = np.asarray(a, float), np.asarray(b, float)
    return float(np.max(np.abs(a - b) / np.abs(b)))


def cmd_constants(cfg: RunConfig):
    mu = cfg.mu
    I = riesz_constant(mu / 2.0)
    a = alpha_constant(mu)
    res = {"mu": mu, "p": 4.0 - mu / 2.0, "riesz_constant": I, "alpha": a, "sigma": a * I}
    checks = [Check("bubble_core.alpha_identity (8 alpha = I alpha^(7-mu))", abs(I * a ** (7 - mu) - 8 * a) / (8 * a),
                    1e-12)]
    if mu == 2.0:
        checks.append(Check("specials.riesz_constant(1) = pi^2/2", abs(I - math.pi**2 / 2) / (math.pi**2 / 2), 1e-14))
    lines = [f"I(mu/2) = {I:.15g}", f"alpha = {a:.15g}", f"p = {4.0 - mu / 2.0:g}"]
    return res, checks, {}, lines


def riesz_identity_error(mu: float, n: int = 50) -> tuple[float, float]:
    """Max relative error of numeric Riesz potentials of ``U^p``; (all radii, away from the diagonal band)."""
    a = alpha_constant(mu)
    p = 4.0 - mu / 2.0
    r = np.linspace(0.0, 10.0, n)
    num = np.asarray(riesz_radial(lambda s: (a / (1 + s * s)) ** p, mu, r))
    ref = riesz_constant(mu / 2.0) * (1 + r * r) ** (-mu / 2.0) * a**p
    err = np.abs(num - ref) / ref
    return float(err.max()), float(err[1:].max())


def classification_residuals(mu: float, n: int = 200) -> tuple[float, float]:
    a = alpha_constant(mu)
    r = np.linspace(0.0, 10.0, n)
    w = (1 + r * r) ** 3 / (8 * a)
    an = float(np.max(np.abs(residual_single(mu, route="analytic")(r)) * w))
    nu = float(np.max(np.abs(residual_single(mu, route="numeric")(r)) * w))
    return an, nu


def kernel_residuals(mu: float, n: int = 40, seed: int = 0) -> dict:
    ctx = OperatorContext(ChoquardParams(mu=mu))
    rng = np.random.default_rng(seed)
    out = {}
    for i in (0, 1):
        g = rng.normal(size=(n, 4))
        x = g / np.linalg.norm(g, axis=1, keepdims=True) * np.linspace(0.05, 8.0, n)[:, None]
        res = linearized_residual(i, ctx)(x)
        # relative to the size of -Delta Z
        w = (1 + np.sum(x * x, axis=1)) ** 3 / 24.0
        out[f"Z{i}"] = float(np.max(np.abs(res) * w))
    nk = near_kernel_check(mu)
    out["near_kernel_alignment"] = nk.alignment
    return out


def kelvin_defect(mu: float, n: int = 100, seed: int = 0) -> float:
    rng = np.random.default_rng(seed)
    a = alpha_constant(mu)
    worst = 0.0
    x = rng.normal(size=(n, 4)) * rng.uniform(0.2, 3.0, (n, 1))
    for lam in (1.5, 4.0, 30.0):
        rho = math.sqrt(1 - 1 / lam**2)
        d = rng.normal(size=4)
        xi = rho * d / np.linalg.norm(d)
        for f in (Bubble(xi, lam, a), Bubble(np.zeros(4), 1.0, a)):
            v = f(x)
            worst = max(worst, float(np.max(np.abs(kelvin_transform(f)(x) - v) / np.abs(v))))
    return worst


def integral_identity() -> tuple[float, float]:
    lhs = integrate_radial(lambda r: (1 - r * r) / (1 + r * r) ** 4)
    rhs = -integrate_radial(lambda r: (1 + r * r) ** -3.0) / 3.0
    return lhs, rhs


def cmd_verify_identities(cfg: RunConfig):
    mu = cfg.mu
    e_all, e_off = riesz_identity_error(mu)
    an, nu = classification_residuals(mu)
    kr = kernel_residuals(mu, seed=cfg.seed)
    kel = kelvin_defect(mu, seed=cfg.seed)
    lhs, rhs = integral_identity()
    target = -math.pi**2 / 6
    checks = [
        Check("quadrature_engine.riesz_identity", e_all if mu < 3 else e_off, 1e-6 if mu < 3 else 1e-4),
        Check("choquard_operator.classification_residual_analytic", an, 1e-6),
        Check("choquard_operator.classification_residual_numeric", nu, 1e-3),
        Check("choquard_operator.kernel_residual_Z0", kr["Z0"], 1e-3),
        Check("choquard_operator.kernel_residual_Z1", kr["Z1"], 1e-3),
        Check("choquard_operator.near_kernel_alignment", kr["near_kernel_alignment"], 0.99, ">="),
        Check("bubble_core.kelvin_invariance", kel, 1e-12),
        Check("quadrature_engine.integral_identity_lhs", abs(lhs - target), 1e-8),
        Check("quadrature_engine.integral_identity_rhs", abs(rhs - target), 1e-8),
    ]
    res = {"riesz_identity_rel_error": e_all, "riesz_identity_rel_error_off_origin": e_off,
           "classification_residual": {"analytic": an, "numeric": nu}, "kernel": kr, "kelvin_defect": kel,
           "integral_identity": {"lhs": lhs, "rhs": rhs, "target": target}}
    return res, checks, {}, []


def cmd_residual(cfg: RunConfig):
    mu = cfg.mu
    a = alpha_constant(mu)
    r = np.linspace(0.0, 10.0, 200)
    w = (1 + r * r) ** 3 / (8 * a)
    ra = residual_single(mu, route="analytic")(r)
    rn = residual_single(mu, route="numeric")(r)
    rows = [{"r": float(x), "analytic": float(u), "numeric": float(v), "weight": float(s)}
            for x, u, v, s in zip(r, ra, rn, w)]
    an, nu = float(np.max(np.abs(ra) * w)), float(np.max(np.abs(rn) * w))
    checks = [Check("choquard_operator.classification_residual_analytic", an, 1e-6),
              Check("choquard_operator.classification_residual_numeric", nu, 1e-3)]
    return {"weighted_sup": {"analytic": an, "numeric": nu}, "alpha": a}, checks, {"residual": rows}, []


def cmd_error_norms(cfg: RunConfig):
    from .ansatz_error import scaling_study

    betas, lambdas = cfg.sweep("error-norms")
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)
        st = scaling_study(cfg.k, cfg.mu, betas, lambdas, cfg.tau, cfg.grid, cfg.trunc_radius)
    sl = st["slopes"]
    checks = []
    if len(lambdas) > 1:
        checks.append(Check("ansatz_error.e1_lambda_slope_deviation", abs(sl["e1_lambda"] + 1.0), 0.1))
        checks.append(Check("ansatz_error.interaction_lambda_slope", sl["interaction_lambda"], -0.85))
    if len([b for b in betas if b != 0]) > 1:
        checks.append(Check("ansatz_error.e1_beta_slope_deviation", abs(sl["e1_beta"] - 1.0), 0.05))
    return {"slopes": sl, "rows": st["rows"]}, checks, {"error_norms": st["rows"]}, []


def cmd_solve(cfg: RunConfig):
    from .ansatz_error import in_regime
    from .reduction_solver import fixed_point

    betas, lambdas = cfg.sweep("solve")
    rows, checks = [], []
    for lam in lambdas:
        norms = []
        for b in betas:
            a = make_polygon_ansatz(cfg.k, lam, replace(cfg.params, beta=b) if b < 0 else cfg.params)
            with warnings.catch_warnings():
                warnings.simplefilter("ignore", RuntimeWarning)
                st = fixed_point(a, beta=b, grid=cfg.grid)
            reg = in_regime(lam, b)
            rows.append({"k": cfg.k, "lambda": lam, "beta": b, "in_regime": reg, "iterations": st.iterate,
                         "converged": st.converged, "max_ratio": st.max_ratio, "phi1_star": st.star_norms[0],
                         "phi2_star": st.star_norms[1], "total_norm": st.total_norm, "c": st.c,
                         "residual1": st.residual_norms[0], "residual2": st.residual_norms[1]})
            norms.append(st.total_norm)
            if reg:
                checks.append(Check(f"reduction_solver.contraction_ratio[lam={lam:g},beta={b:g}]", st.max_ratio, 1.0,
                                    "<"))
        nz = [(abs(b), n) for b, n in zip(betas, norms) if b < 0 and n > 0]
        if len(nz) > 1:
            s = float(np.polyfit(np.log([v[0] for v in nz]), np.log([v[1] for v in nz]), 1)[0])
            checks.append(Check(f"reduction_solver.beta_slope_deviation[lam={lam:g}]", abs(s - 1.0), 0.15))
    return {"rows": rows}, checks, {"fixed_point": rows}, []


def cmd_reduce(cfg: RunConfig):
    from .reduced_equation import fit_coefficients

    betas, lambdas = cfg.sweep("reduce")
    co = fit_coefficients(cfg.k, cfg.mu, betas, lambdas, grid=cfg.grid, tau=cfg.tau, trunc=cfg.trunc_radius)
    checks = [Check("reduced_equation.a_hat_positive", co.a_hat, 0.0, ">"),
              Check("reduced_equation.b_hat_positive", co.b_hat, 0.0, ">"),
              Check("reduced_equation.fit_r2", co.fit_r2, 0.99, ">=")]
    # the joint fit makes |beta| ln lam(beta) constant by construction; separate line fits do not
    d = list(co.d_beta_per_line.values())
    if len(d) > 1:
        checks.append(Check("reduced_equation.d_beta_spread (per-line max/min - 1)", max(d) / min(d) - 1.0, 0.10))
    b0 = co.rows[0]["beta"]
    line = [r for r in co.rows if r["beta"] == b0]
    inter = [r["interaction"] for r in co.rows]
    islope = float(np.polyfit(np.log([r["lambda"] for r in line]), np.log([-r["interaction"] for r in line]), 1)[0]) \
        if max(inter) < 0 and len(line) > 1 else float("nan")
    checks.append(Check("reduced_equation.interaction_sign (max over grid)", max(inter), 0.0, "<"))
    checks.append(Check("reduced_equation.interaction_lambda_slope_deviation", abs(islope + 2.0), 0.1))
    res = {"a_hat": co.a_hat, "b_hat": co.b_hat, "fit_r2": co.fit_r2, "log_lambda_of_beta": co.lambda_of_beta,
           "d_beta": co.d_beta, "d_beta_per_line": co.d_beta_per_line,
           "interaction_lambda_slope": islope, "signs": co.signs,
           "residuals": co.residuals}
    return res, checks, {"reduced_surface": co.rows}, []


def cmd_report_all(cfg: RunConfig):
    from .estimates import lem1_suite, lem2_suite
    from .reduction_solver import clear_system_cache, invertibility_study

    results, checks, tables, lines = {}, [], {}, []
    for name, fn in (("constants", cmd_constants), ("verify-identities", cmd_verify_identities),
                     ("residual", cmd_residual), ("error-norms", cmd_error_norms), ("solve", cmd_solve),
                     ("reduce", cmd_reduce)):
        sub = replace(cfg, command=name)
        r, c, t, l = fn(sub)
        results[name] = r
        checks += c
        tables.update(t)
        lines += l
        clear_system_cache()
    inv = invertibility_study(cfg.k, seed=cfg.seed, params=cfg.params, grid=cfg.grid)
    results["invertibility"] = {k: v for k, v in inv.items() if k != "rows"}
    tables["invertibility"] = inv["rows"]
    checks += [Check("reduction_solver.phi_ratio_spread", inv["phi_spread"], 4.0),
               Check("reduction_solver.c_ratio_spread", inv["c_spread"], 4.0),
               Check("reduction_solver.phi_constant_drift (per-lambda max)", inv["phi_constant_drift"], 4.0),
               Check("reduction_solver.c_constant_drift (per-lambda max)", inv["c_constant_drift"], 4.0)]
    clear_system_cache()
    suites = [lem1_suite(a, b, s, seed=cfg.seed) for a, b, s in ((1, 1, 1), (2, 3, 1.5), (4, 4, 4))]
    suites += [lem2_suite(cfg.mu, al, seed=cfg.seed) for al in (4.0 - cfg.mu, 5.0, 6.0)]
    results["estimates"] = [{"name": s.name, "params": s.params, "C": s.C, "C_samples": s.C_samples,
                             "unbounded": s.unbounded, "growth": s.growth, "violations": s.violations,
                             "max_ratio": s.max_ratio}
                            for s in suites]
    for s in suites:
        tag = ",".join(f"{k}={v:g}" for k, v in s.params.items())
        checks.append(Check(f"estimates.{s.name}[{tag}] violations", s.violations, 0))
        checks.append(Check(f"estimates.{s.name}[{tag}] growth over last decade at cap", s.growth, s.slack))
    return results, checks, tables, lines


PIPELINES = {"constants": cmd_constants, "verify-identities": cmd_verify_identities, "residual": cmd_residual,
             "error-norms": cmd_error_norms, "solve": cmd_solve, "reduce": cmd_reduce, "report-all": cmd_report_all}


def _prepare_out(cfg: RunConfig) -> Path | None:
    if cfg.out is None:
        return None
    out = Path(cfg.out)
    try:
        out.mkdir(parents=True, exist_ok=True)
        probe = out / ".write_probe"
        probe.write_text("")
        probe.unlink()
    except OSError as exc:
        raise UsageError(f"output directory {out} is not writable: {exc}") from exc
    return out


def run(cfg: RunConfig, stdout=None, stderr=None) -> int:
    """Execute a configuration; returns the exit status."""
    stdout = stdout or sys.stdout
    stderr = stderr or sys.stderr
    out = _prepare_out(cfg)
    results, checks, tables, lines = PIPELINES[cfg.command](cfg)
    for ln in lines:
        print(ln, file=stdout)
    for c in checks:
        print(c.line(), file=stdout)
    if out is not None:
        stem = cfg.command.replace("-", "_")
        if "json" in cfg.formats:
            (out / f"{stem}.json").write_text(report_body(cfg, results, checks))
        if "csv" in cfg.formats:
            _write_csv(out / f"{stem}_checks.csv", [c.as_dict() for c in checks])
            for name, rows in tables.items():
                _write_csv(out / f"{name}.csv", rows)
    failed = [c for c in checks if not c.passed]
    for c in failed:
        print(c.line(), file=stderr)
    return 1 if failed else 0


_NEG = re.compile(r"^-\d|^-\.\d")


def _join_negative_values(argv: list[str]) -> list[str]:
    # lets "--betas -0.02,-0.01" through argparse's option detection
    out = []
    i = 0
    while i < len(argv):
        a = argv[i]
        if a in ("--betas", "--lambdas", "--beta", "--mu", "--tau") and i + 1 < len(argv) and _NEG.match(argv[i + 1]):
            out.append(f"{a}={argv[i + 1]}")
            i += 2
            continue
        out.append(a)
        i += 1
    return out


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="choquard", description="Multi-bubble construction for the critical "
                                "Choquard system on R^4: constants, identities, error norms, fixed point and "
                                "reduced equation.")
    p.add_argument("command", choices=COMMANDS)
    p.add_argument("--config", help="INI configuration file (flags override it)")
    p.add_argument("--mu", type=float)
    p.add_argument("--beta", type=float, help="coupling used where a single value is needed")
    p.add_argument("--tau", type=float)
    p.add_argument("--trunc", type=float, dest="trunc_radius", help="truncation radius Lambda")
    p.add_argument("--k", type=int)
    p.add_argument("--betas", type=_floats, help="comma-separated list")
    p.add_argument("--lambdas", type=_floats, help="comma-separated list")
    p.add_argument("--grid", choices=sorted(GRID_PRESETS))
    p.add_argument("--out", help="output directory for reports")
    p.add_argument("--format", dest="formats",
                   type=lambda s: tuple(v.strip() for v in s.split(",") if v.strip()), help="csv,json")
    p.add_argument("--seed", type=int)
    return p


def config_from_args(argv: list[str]) -> RunConfig:
    ns = build_parser().parse_args(_join_negative_values(argv))
    if ns.config:
        try:
            text = Path(ns.config).read_text()
        except OSError as exc:
            raise UsageError(f"cannot read configuration file: {exc}") from exc
        base = parse_config(text, ns.command)
    else:
        base = RunConfig(ns.command)
    over = {k: v for k, v in vars(ns).items() if k not in ("command", "config") and v is not None}
    return replace(base, **over)


def main(argv: list[str] | None = None) -> int:
    argv = sys.argv[1:] if argv is None else list(argv)
    try:
        cfg = config_from_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    except (UsageError, TypeError) as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return 2
    try:
        return run(cfg)
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return 2
    except ContractError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
