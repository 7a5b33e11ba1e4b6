"""Command-line front end.

Subcommands (all read a JSON :class:`~solvdiff.config.RunConfig`):

``volcurve``  columns ``F, sigma, sigma_loc`` with ``sigma_loc = sigma / F``;
              an optional calibration block first solves one free parameter.
``density``   columns ``F, p_F`` of the transition density from ``F0`` at ``t``;
              summary ``mass`` (probability of not being absorbed) and ``defect``.
``greens``    columns ``x, G, symmetry_error`` of the underlying Green's function
              at ``(x0, s)``; ``symmetry_error`` compares ``G/m`` with the swapped pair.
``classify``  JSON boundary classification and conservation report.
``simulate``  columns ``path, time, F, status``; absorbed rows carry the killing
              endpoint value of F and status ``ABSORBED``.
``verify``    JSON report of the invariant checks for the configured model.

CSV output has a header row and 12 significant digits; summary values are
appended as ``# name,value`` lines.  Exit status: 0 on success, 1 on a failed
verification, 2 on configuration or certification errors.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import math
import sys
from typing import Sequence

import numpy as np

from . import classify as C
from . import montecarlo as MC
from . import transform as T
from . import underlying as U
from .config import SCHEMA_VERSION, ConfigError, RunConfig, load
from .numerics import BracketError
from .specfun import DomainError
from .transform import CertificationError

COMMANDS = ("volcurve", "density", "greens", "classify", "simulate", "verify")

__all__ = ["COMMANDS", "Table", "main", "cmd_volcurve", "cmd_density", "cmd_greens", "cmd_classify",
           "cmd_simulate", "cmd_verify"]


class Table:
    """Rows of numbers (or strings) with named columns and a summary."""

    def __init__(self, command: str, columns: Sequence[str], rows: list, summary: dict | None = None):
        self.command = command
        self.columns = list(columns)
        self.rows = rows
        self.summary = summary or {}

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(self.columns)
        for r in self.rows:
            w.writerow([_fmt(v) for v in r])
        for k, v in self.summary.items():
            buf.write(f"# {k},{_fmt(v)}\n")
        return buf.getvalue()

    def to_json(self) -> str:
        doc = {"schema_version": SCHEMA_VERSION, "command": self.command, "columns": self.columns,
               "rows": [[_jsonable(v) for v in r] for r in self.rows],
               "summary": {k: _jsonable(v) for k, v in self.summary.items()}}
        return json.dumps(doc, indent=2)


def _fmt(v) -> str:
    if isinstance(v, (bool, np.bool_)):
        return "true" if v else "false"
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        return format(float(v), ".12g")
    return str(v)


def _jsonable(v):
    if isinstance(v, (np.floating, float)):
        v = float(v)
        return v if math.isfinite(v) else str(v)
    if isinstance(v, np.integer):
        return int(v)
    if isinstance(v, np.bool_):
        return bool(v)
    return v


# ----------------------------------------------------------------------------
# Helpers
# ----------------------------------------------------------------------------

def _build(cfg: RunConfig, classify: bool = False) -> T.FDiffusion:
    return T.build(cfg.model, cfg.map, classify=classify)


def _default_x(model: U.UnderlyingModel, n: int) -> np.ndarray:
    if model.kind is U.Kind.OU:
        return model.shift + np.linspace(-3.0, 3.0, n) / math.sqrt(model.kappa)
    scale = 1.0 if model.kind is U.Kind.SQB else 1.0 / model.kappa
    return scale * np.geomspace(0.05, 5.0, n)


def _axis(grid, n: int) -> np.ndarray:
    if n == 1 or grid.lo == grid.hi:
        return np.full(n, grid.lo, dtype=float)
    if grid.spacing == "log":
        return np.geomspace(grid.lo, grid.hi, n)
    return np.linspace(grid.lo, grid.hi, n)


def _f_grid(cfg: RunConfig, fd: T.FDiffusion) -> np.ndarray:
    g = cfg.grid
    if g.lo is None or g.hi is None:
        F = np.sort(np.atleast_1d(T.map_f(fd, _default_x(fd.model, g.n))))
    elif g.variable == "x":
        F = np.atleast_1d(T.map_f(fd, _axis(g, g.n)))
    else:
        F = _axis(g, g.n)
    lo, hi = fd.state_space_f
    if not np.all((F > lo) & (F < hi)):
        raise ConfigError(f"grid leaves the F state space ({lo:.6g}, {hi:.6g})")
    return F


def _x_grid(cfg: RunConfig) -> np.ndarray:
    g, m = cfg.grid, cfg.model
    if g.lo is None or g.hi is None:
        return _default_x(m, g.n)
    if g.variable != "x":
        raise ConfigError("greens needs an x grid (grid.variable = 'x')")
    x = _axis(g, g.n)
    if not np.all(m.contains(x)):
        raise ConfigError("grid leaves the state space of the underlying model")
    return x


def _start(cfg: RunConfig, fd: T.FDiffusion, value: float | None) -> float:
    """Start value in F; defaults to the image of the reference point."""
    return float(T.map_f(fd, T.map_reference_point(fd.model))) if value is None else value


# ----------------------------------------------------------------------------
# Commands
# ----------------------------------------------------------------------------

def cmd_volcurve(cfg: RunConfig) -> Table:
    summary = {}
    if cfg.calibration is not None:
        c = cfg.calibration
        fd, resid = T.calibrate(cfg.model, cfg.map, c.F_star, c.target, param=c.param)
        summary = {"calibration_F_star": c.F_star, "calibration_target": c.target,
                   "calibration_residual": resid}
        summary.update({f"calibrated_{k}": v for k, v in {"c1": fd.spec.c1, "c2": fd.spec.c2,
                                                             "nu0": fd.model.nu0}.items()})
    else:
        fd = _build(cfg)
    F = _f_grid(cfg, fd)
    sig = np.atleast_1d(T.sigma_f(fd, F))
    with np.errstate(divide="ignore", invalid="ignore"):
        loc = np.where(F != 0, sig / F, np.nan)
    return Table("volcurve", ["F", "sigma", "sigma_loc"], [list(r) for r in zip(F, sig, loc)], summary)


def cmd_density(cfg: RunConfig, t: float | None = None, F0: float | None = None) -> Table:
    fd = _build(cfg)
    t = cfg.density.t if t is None else t
    F0 = _start(cfg, fd, cfg.density.F0 if F0 is None else F0)
    F = _f_grid(cfg, fd)
    p = np.atleast_1d(T.transition_pdf_f(fd, t, F0, F).value())
    mass, _ = C.expectation_f(fd, t, F0)
    return Table("density", ["F", "p_F"], [list(r) for r in zip(F, p)],
                 {"t": t, "F0": F0, "mass": mass, "defect": 1.0 - mass})


def cmd_greens(cfg: RunConfig, x0: float | None = None, s: float | None = None) -> Table:
    m = cfg.model
    x0 = cfg.greens.x0 if x0 is None else x0
    s = cfg.greens.s if s is None else s
    if not m.contains(x0):
        raise ConfigError(f"x0 = {x0} is outside the state space")
    x = _x_grid(cfg)
    G = np.atleast_1d(U.greens_function(m, x, x0, s).value())
    Gs = np.atleast_1d(U.greens_function(m, x0, x, s).value())
    sym_a = G / U.speed_density(m, x).value()
    sym_b = Gs / U.speed_density(m, x0).value()
    err = np.abs(sym_a - sym_b) / np.abs(sym_a)
    return Table("greens", ["x", "G", "symmetry_error"], [list(r) for r in zip(x, G, err)],
                 {"x0": x0, "s": s, "max_symmetry_error": float(np.max(err)),
                  "symmetry_ok": bool(np.max(err) <= 1e-10)})


def cmd_classify(cfg: RunConfig) -> dict:
    fd = _build(cfg, classify=True)
    rep = fd.classification.to_dict()
    return {"schema_version": SCHEMA_VERSION, "command": "classify", "model": cfg.to_dict()["model"],
            "map": cfg.to_dict()["map"], "map_sign": fd.map_sign,
            "certificate": {"rule": fd.certificate.rule, "scan_ok": fd.certificate.scan_ok},
            "state_space_f": [_jsonable(v) for v in fd.state_space_f], **rep}


def cmd_simulate(cfg: RunConfig) -> Table:
    fd = _build(cfg)
    sim = cfg.simulation
    sched = MC.PathSchedule(sim.times, _start(cfg, fd, sim.f0))
    paths = MC.sample_paths(fd, sched, sim.paths, sim.seed, workers=sim.workers, tol=cfg.tolerance.quadrature)
    dead = fd.endpoint_f[0]
    rows = []
    for p in paths:
        for tm, v in zip(sim.times, p.values):
            rows.append([p.index, tm, dead if MC.is_absorbed(v) else v, "ABSORBED" if MC.is_absorbed(v) else "alive"])
    n_abs = sum(p.absorbed for p in paths)
    return Table("simulate", ["path", "time", "F", "status"], rows,
                 {"seed": sim.seed, "f0": sched.f0, "paths": sim.paths, "absorbed_fraction": n_abs / sim.paths})


def _check(name: str, measured: float, tol: float, passed: bool | None = None, note: str = "") -> dict:
    ok = bool(measured <= tol) if passed is None else bool(passed)
    d = {"name": name, "measured": _jsonable(float(measured)), "tolerance": tol, "passed": ok}
    if note:
        d["note"] = note
    return d


def _documented_offset_case(fd: T.FDiffusion, rule: str) -> bool:
    """Killed spec with ``c2 = 0`` and ``a != 0``: absorbed mass is valued at ``-a/b``."""
    _, _, _, q2 = fd.spec.weights()
    return fd.model.kind is not U.Kind.OU and rule == "c2 = 0" and fd.spec.a != 0 and q2 > 0


def cmd_verify(cfg: RunConfig) -> dict:
    m, s = cfg.model, cfg.map
    checks = []

    # fundamental solutions: W / scale density is the constant w_s
    x = _default_x(m, 9)
    for sp in (s.rho, s.rho_b):
        w = ((U.phi(m, sp, "-", x) * U.phi_deriv(m, sp, "+", x)).value()
             - (U.phi(m, sp, "+", x) * U.phi_deriv(m, sp, "-", x)).value())
        r = w / U.scale_density(m, x).value() / U.wronskian_const(m, sp)
        checks.append(_check(f"wronskian constant, s = {sp:g}", float(np.max(np.abs(r - 1))), 1e-8))

    # underlying density normalization
    x0 = T.map_reference_point(m)
    from .numerics import integrate_on_support

    mass = integrate_on_support(lambda y: U.transition_pdf_x(m, 0.5, x0, y).value(), m.state_space,
                                center=x0, rtol=1e-12).value
    checks.append(_check("underlying density normalization", abs(mass - 1), 1e-8))

    # certification and the ODE for the map
    try:
        fd = T.build(m, s, classify=True)
    except CertificationError as e:
        checks.append(_check("monotone certification", 1.0, 0.0, False, str(e)))
        return _verify_report(cfg, checks)
    scan = T.state_grid(m, 2000)
    signs = np.asarray(T.wronskian_w(fd, scan).sign)
    checks.append(_check("certificate agrees with a 2000-point sign scan", float(np.mean(signs != fd.map_sign)), 0.0,
                         note=fd.certificate.rule))
    xi = T.state_grid(m, 11)[2:-2]
    f, f1, f2 = T.map_derivs(fd, xi)
    u0, u1 = T.u_hat(fd, xi).value(), T.u_hat_deriv(fd, xi, 1).value()
    nu, lam = U.diffusion(m, xi), U.drift(m, xi)
    drift_f = s.b * (T.v_hat(fd, xi) / T.u_hat(fd, xi)).value()
    terms = np.array([0.5 * nu**2 * f2, (lam + nu**2 * u1 / u0) * f1, drift_f])
    res = np.max(np.abs(terms[0] + terms[1] - terms[2]) / np.max(np.abs(terms), axis=0))
    checks.append(_check("map ODE residual", float(res), 1e-7))

    # classification
    rep = fd.classification
    num = rep.details.get("numeric_boundaries")
    checks.append(_check("boundary probes match the closed form", 0.0, 0.0,
                         num == [rep.left.value, rep.right.value]))
    lt = C.theorem2_limit_test(fd)
    agree = not lt.inconclusive and lt.passed == rep.conserves_rate
    verdict, rule = C.conserves_expectation_rate(fd)
    note = rule
    if not agree and _documented_offset_case(fd, rule):
        agree, note = True, rule + "; live-part bracket nonzero because absorbed mass is valued at -a/b"
    checks.append(_check("conservation rule matches the limit test", 0.0, 0.0, agree, note))

    # expectations
    Y, t = float(T.map_f(fd, x0)), 1.0
    mass_f, mean = C.expectation_f(fd, t, Y)
    if m.kind is U.Kind.OU:
        checks.append(_check("F density mass", abs(mass_f - 1), 1e-8))
    else:
        checks.append(_check("F density mass <= 1", max(mass_f - 1, 0.0), 1e-8))
    if verdict and s.a == 0:
        target = Y * math.exp(s.b * t)
        checks.append(_check("mean law E[F_t] = F0 exp(bt)", abs(mean / target - 1), 1e-5))
    elif not verdict:
        d = C.martingale_defect(fd, Y, t)
        checks.append(_check("non-conserving spec has a nonzero bias term", abs(d), math.inf,
                             abs(d) > 1e-8, f"defect = {d:.6g}"))
    return _verify_report(cfg, checks)


def _verify_report(cfg: RunConfig, checks: list) -> dict:
    return {"schema_version": SCHEMA_VERSION, "command": "verify", "model": cfg.to_dict()["model"],
            "map": cfg.to_dict()["map"], "passed": all(c["passed"] for c in checks), "checks": checks}


# ----------------------------------------------------------------------------
# Entry point
# ----------------------------------------------------------------------------

def _parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="solvdiff", description=__doc__.split("\n\n")[0])
    p.add_argument("command", choices=COMMANDS)
    p.add_argument("--config", required=True, help="JSON run configuration")
    p.add_argument("--out", help="output file (default: output.path or stdout)")
    p.add_argument("--seed", type=int, help="overrides simulation.seed")
    p.add_argument("--format", choices=("csv", "json"), help="overrides output.format")
    return p


def main(argv: Sequence[str] | None = None) -> int:
    args = _parser().parse_args(argv)
    try:
        cfg = load(args.config)
        if args.seed is not None:
            cfg = cfg.with_seed(args.seed)
        fmt = args.format or cfg.output.format
        status = 0
        if args.command in ("classify", "verify"):
            doc = cmd_classify(cfg) if args.command == "classify" else cmd_verify(cfg)
            text = json.dumps(doc, indent=2, default=_jsonable) + "\n"
            status = 0 if doc.get("passed", True) else 1
        else:
            table = {"volcurve": cmd_volcurve, "density": cmd_density, "greens": cmd_greens,
                     "simulate": cmd_simulate}[args.command](cfg)
            text = table.to_csv() if fmt == "csv" else table.to_json() + "\n"
    except CertificationError as e:
        print(f"certification failed: {e}", file=sys.stderr)
        return 2
    except (ConfigError, DomainError, BracketError, OSError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 2
    out = args.out or cfg.output.path
    if out:
        with open(out, "w", encoding="utf-8", newline="") as fh:
            fh.write(text)
    else:
        sys.stdout.write(text)
    return status


if __name__ == "__main__":
    sys.exit(main())
