"""Quadrature, root finding and tabulated CDFs.

Thin, explicit wrappers around :func:`scipy.integrate.quad` and
:func:`scipy.optimize.brentq`, plus an adaptive CDF table used for exact
sampling from one-dimensional densities.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field
from typing import Callable, NamedTuple

import numpy as np
from scipy import integrate as _integrate
from scipy import optimize as _optimize

__all__ = [
    "QuadratureSpec",
    "QuadResult",
    "RootSpec",
    "CdfTable",
    "NonConvergenceWarning",
    "BracketError",
    "NegativeDensityError",
    "MassExceedsOneError",
    "integrate",
    "find_root",
    "expand_bracket",
    "build_cdf_table",
    "invert_cdf",
    "cdf_at",
    "integrate_on_support",
    "limit_trend",
]

TRANSFORMS = ("none", "log-map-to-infinity", "square-root-map")


class NonConvergenceWarning(RuntimeWarning):
    """Quadrature or iteration stopped before meeting its tolerance."""


class BracketError(ValueError):
    """The root bracket does not contain a sign change."""


class NegativeDensityError(ValueError):
    pass


class MassExceedsOneError(ValueError):
    pass


# ----------------------------------------------------------------------------
# Quadrature
# ----------------------------------------------------------------------------

@dataclass(frozen=True)
class QuadratureSpec:
    abs_tol: float = 1e-12
    rel_tol: float = 1e-10
    max_subdivisions: int = 200
    transform: str = "none"

    def __post_init__(self):
        if not (self.abs_tol > 0 and self.rel_tol > 0):
            raise ValueError("tolerances must be strictly positive")
        if self.max_subdivisions < 1:
            raise ValueError("max_subdivisions must be >= 1")
        if self.transform not in TRANSFORMS:
            raise ValueError(f"transform must be one of {TRANSFORMS}")


class QuadResult(NamedTuple):
    value: float
    err_est: float
    converged: bool


def _quad(g, a, b, spec: QuadratureSpec, points=None):
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", _integrate.IntegrationWarning)
        out = _integrate.quad(
            g, a, b, epsabs=spec.abs_tol, epsrel=spec.rel_tol,
            limit=spec.max_subdivisions, full_output=1, points=points,
        )
    val, err, info = out[0], out[1], out[2]
    ier = out[3] if len(out) > 3 else 0
    ok = ier == 0 and math.isfinite(val) and err <= max(spec.abs_tol, spec.rel_tol * abs(val))
    return val, err, ok


def integrate(f: Callable[[float], float], lo: float, hi: float,
              spec: QuadratureSpec | None = None, points=None) -> QuadResult:
    """Integrate ``f`` over ``(lo, hi)``; either limit may be infinite.

    ``spec.transform`` selects a change of variables:

    * ``"none"``: hand the interval to QUADPACK as is.
    * ``"log-map-to-infinity"``: ``x = lo + t/(1-t)`` (or the mirror image for
      ``(-inf, hi)``), integrated over ``t`` in ``[0, 1)``.  The doubly infinite
      line is split at 0.
    * ``"square-root-map"``: ``x = lo + u**2``, suited to ``exp(-c sqrt(x))``
      tails and ``x**(-1/2)`` endpoint behaviour.

    Non-convergence is returned in the flag and also emitted as a
    :class:`NonConvergenceWarning`.
    """
    spec = spec or QuadratureSpec()
    if not lo < hi:
        raise ValueError("integration requires lo < hi")
    if spec.transform == "none" or (math.isfinite(lo) and math.isfinite(hi) and spec.transform != "square-root-map"):
        pts = points if (points is not None and math.isfinite(lo) and math.isfinite(hi)) else None
        val, err, ok = _quad(f, lo, hi, spec, pts)
    elif spec.transform == "log-map-to-infinity":
        if math.isinf(lo) and math.isinf(hi):
            a = integrate(f, -math.inf, 0.0, spec)
            b = integrate(f, 0.0, math.inf, spec)
            val, err, ok = a.value + b.value, a.err_est + b.err_est, a.converged and b.converged
        elif math.isinf(hi):
            def g(t):
                s = 1.0 - t
                return f(lo + t / s) / (s * s) if s > 0 else 0.0
            val, err, ok = _quad(g, 0.0, 1.0, spec)
        else:
            def g(t):
                s = 1.0 - t
                return f(hi - t / s) / (s * s) if s > 0 else 0.0
            val, err, ok = _quad(g, 0.0, 1.0, spec)
    else:  # square-root-map
        if math.isinf(lo):
            raise ValueError("square-root-map needs a finite lower limit")
        umax = math.sqrt(hi - lo) if math.isfinite(hi) else math.inf
        val, err, ok = _quad(lambda u: 2.0 * u * f(lo + u * u), 0.0, umax, spec)
    if not ok:
        warnings.warn(
            f"quadrature on ({lo}, {hi}) did not reach tolerance (estimate {val:.6g}, err {err:.3g})",
            NonConvergenceWarning, stacklevel=2,
        )
    return QuadResult(float(val), float(err), bool(ok))


# ----------------------------------------------------------------------------
# Root finding
# ----------------------------------------------------------------------------

@dataclass(frozen=True)
class RootSpec:
    bracket_lo: float
    bracket_hi: float
    x_tol: float = 1e-12
    f_tol: float = 1e-12
    max_iter: int = 200

    def __post_init__(self):
        if not self.bracket_lo < self.bracket_hi:
            raise ValueError("bracket_lo must be < bracket_hi")
        if not (self.x_tol > 0 and self.f_tol > 0):
            raise ValueError("tolerances must be positive")


def find_root(f: Callable[[float], float], spec: RootSpec) -> float:
    """Root of ``f`` inside ``[bracket_lo, bracket_hi]`` by Brent's method."""
    flo, fhi = f(spec.bracket_lo), f(spec.bracket_hi)
    if flo == 0:
        return float(spec.bracket_lo)
    if fhi == 0:
        return float(spec.bracket_hi)
    if not (np.isfinite(flo) and np.isfinite(fhi)) or np.sign(flo) == np.sign(fhi):
        raise BracketError(f"no sign change on [{spec.bracket_lo}, {spec.bracket_hi}]: f = {flo:.3g}, {fhi:.3g}")
    x, res = _optimize.brentq(
        f, spec.bracket_lo, spec.bracket_hi, xtol=spec.x_tol, rtol=4 * np.finfo(float).eps,
        maxiter=spec.max_iter, full_output=True, disp=False,
    )
    if not res.converged:
        warnings.warn(f"brentq stopped after {res.iterations} iterations", NonConvergenceWarning, stacklevel=2)
    return float(x)


def expand_bracket(f, lo: float, hi: float, factor: float = 2.0, max_steps: int = 60,
                   lower_limit: float = -math.inf, upper_limit: float = math.inf) -> tuple[float, float]:
    """Grow ``[lo, hi]`` geometrically until ``f`` changes sign across it."""
    flo, fhi = f(lo), f(hi)
    for _ in range(max_steps):
        if np.sign(flo) != np.sign(fhi):
            return lo, hi
        width = hi - lo
        if abs(flo) < abs(fhi) and lo > lower_limit:
            lo = max(lo - factor * width, lower_limit)
            flo = f(lo)
        elif hi < upper_limit:
            hi = min(hi + factor * width, upper_limit)
            fhi = f(hi)
        else:
            lo = max(lo - factor * width, lower_limit)
            flo = f(lo)
    raise BracketError("could not bracket a sign change")


# ----------------------------------------------------------------------------
# Tabulated CDF
# ----------------------------------------------------------------------------

_GL_X, _GL_W = np.polynomial.legendre.leggauss(12)


def _support_map(lo: float, hi: float):
    """Smooth bijection from the real line onto (lo, hi) with its derivative."""
    if math.isfinite(lo) and math.isfinite(hi):
        span = hi - lo
        def x_of(y):
            return lo + span / (1.0 + np.exp(-y))
        def dx(y):
            e = np.exp(-np.abs(y))
            return span * e / (1.0 + e) ** 2
        def y_of(x):
            return np.log((x - lo) / (hi - x))
        return x_of, dx, y_of
    if math.isfinite(lo):
        return (lambda y: lo + np.exp(y)), np.exp, (lambda x: np.log(x - lo))
    if math.isfinite(hi):
        return (lambda y: hi - np.exp(-y)), (lambda y: np.exp(-y)), (lambda x: -np.log(hi - x))
    return np.sinh, np.cosh, np.arcsinh


def _vectorize(density):
    def g(x):
        x = np.asarray(x, dtype=float)
        try:
            v = np.asarray(density(x), dtype=float)
            if v.shape == x.shape:
                return v
        except (TypeError, ValueError):
            pass
        return np.array([float(density(float(xi))) for xi in x.ravel()]).reshape(x.shape)
    return g


@dataclass(frozen=True)
class CdfTable:
    """Piecewise cubic Hermite CDF in a mapped coordinate ``y``.

    ``x = x_of(y)`` maps the real line onto the support.  ``cum`` holds the
    cumulative probability at the ``y`` nodes and ``g`` the mapped density,
    so that inside each panel the CDF is the Hermite cubic through both.
    """

    lo: float
    hi: float
    y: np.ndarray
    cum: np.ndarray
    g: np.ndarray
    mass: float
    tol: float
    _maps: tuple = field(repr=False, compare=False, default=())

    def x_of(self, y):
        return self._maps[0](y)

    def y_of(self, x):
        return self._maps[2](x)

    @property
    def nodes(self) -> np.ndarray:
        return self.x_of(self.y)


def _hermite(c0, c1, g0, g1, h, t):
    t2, t3 = t * t, t * t * t
    return (c0 * (2 * t3 - 3 * t2 + 1) + h * g0 * (t3 - 2 * t2 + t)
            + c1 * (-2 * t3 + 3 * t2) + h * g1 * (t3 - t2))


def build_cdf_table(density: Callable, support: tuple[float, float], n_min: int = 64,
                    tol: float = 1e-10, center: float | None = None, max_panels: int = 20000) -> CdfTable:
    """Tabulate the CDF of ``density`` on ``support = (lo, hi)``.

    The density need not be normalised; its total mass ``m`` must satisfy
    ``m <= 1 + tol`` (a defective density has ``m < 1``).  Panels are split
    until both the 12-point Gauss rule agrees with its two halves and the
    Hermite interpolant agrees with the exact panel-midpoint CDF, each to
    ``tol``.
    """
    lo, hi = float(support[0]), float(support[1])
    if not lo < hi:
        raise ValueError("support must satisfy lo < hi")
    x_of, dx, y_of = _support_map(lo, hi)
    dens = _vectorize(density)

    def g(y):
        y = np.asarray(y, dtype=float)
        x = x_of(y)
        with np.errstate(over="ignore", invalid="ignore"):
            d = dens(x)
        if np.any(d < 0):
            bad = float(x[np.argmin(d)]) if np.ndim(x) else float(x)
            raise NegativeDensityError(f"density is negative near x = {bad:.6g}")
        d = np.where(np.isfinite(x) & (x > lo) & (x < hi), np.nan_to_num(d, nan=0.0, posinf=0.0), 0.0)
        return d * dx(y)

    def panel(a, b):
        m, r = 0.5 * (a + b), 0.5 * (b - a)
        return r * np.sum(_GL_W * g(m + r * _GL_X), axis=-1)

    # centre of mass guess and a window that holds all but ~tol of the mass
    yc = float(y_of(center)) if center is not None else 0.0
    probe = yc + np.linspace(-40, 40, 801)
    gp = g(probe)
    if np.any(gp > 0):
        yc = float(probe[np.argmax(gp)])
    a, b = yc - 2.0, yc + 2.0
    step = 1.0
    for _ in range(200):
        if panel(a - step, a) <= 1e-3 * tol and g(a - step) <= g(a):
            break
        a -= step
        step *= 1.5
    step = 1.0
    for _ in range(200):
        if panel(b, b + step) <= 1e-3 * tol and g(b + step) <= g(b):
            break
        b += step
        step *= 1.5

    # refine all pending panels in one vectorised pass per level
    edges = np.linspace(a, b, max(int(n_min), 2) + 1)
    pa, pb = edges[:-1], edges[1:]
    done_a, done_b, done_m = [], [], []
    npan = pa.size
    while pa.size:
        pm = 0.5 * (pa + pb)
        r = 0.25 * (pb - pa)
        nodes = np.concatenate([(pa + r)[:, None] + r[:, None] * _GL_X, (pm + r)[:, None] + r[:, None] * _GL_X], axis=1)
        gv = g(nodes)
        h1 = r * (gv[:, :12] @ _GL_W)
        h2 = r * (gv[:, 12:] @ _GL_W)
        whole = 2 * r * (g(pm[:, None] + 2 * r[:, None] * _GL_X) @ _GL_W)
        ge = g(np.stack([pa, pb], axis=1))
        herm_mid = _hermite(0.0, whole, ge[:, 0], ge[:, 1], pb - pa, 0.5)
        err = np.maximum(np.abs(whole - h1 - h2), np.abs(herm_mid - h1))
        split = (err > tol / 4) & ((pb - pa) > 1e-9)
        if npan + split.sum() > max_panels:
            split[:] = False
        keep = ~split
        done_a.append(pa[keep])
        done_b.append(pb[keep])
        done_m.append((h1 + h2)[keep])
        npan += int(split.sum())
        pa, pb = np.concatenate([pa[split], pm[split]]), np.concatenate([pm[split], pb[split]])
    da, db, dm = np.concatenate(done_a), np.concatenate(done_b), np.concatenate(done_m)
    order = np.argsort(da)
    done_y = np.concatenate([[da[order][0]], db[order]])
    done_m = dm[order]
    y = np.asarray(done_y)
    cum = np.concatenate([[0.0], np.cumsum(done_m)])
    mass = float(cum[-1])
    if mass > 1.0 + tol:
        raise MassExceedsOneError(f"total mass {mass:.12g} exceeds one")
    return CdfTable(lo, hi, y, cum, g(y), mass, tol, (x_of, dx, y_of))


def integrate_on_support(f: Callable, support: tuple[float, float], center: float | None = None,
                         rtol: float = 1e-11, n_min: int = 32, max_panels: int = 20000) -> QuadResult:
    """Integrate a (possibly signed, sharply peaked) ``f`` over ``support``.

    Uses the same mapped coordinate and window search as
    :func:`build_cdf_table`, followed by adaptive 12-point Gauss panels.
    ``rtol`` is relative to the integral of ``|f|``.  Unlike ``quad`` this
    cannot step over a narrow peak located near ``center``.
    """
    lo, hi = float(support[0]), float(support[1])
    x_of, dx, y_of = _support_map(lo, hi)
    fv = _vectorize(f)

    def g(y):
        y = np.asarray(y, dtype=float)
        x = x_of(y)
        with np.errstate(over="ignore", invalid="ignore"):
            d = fv(x) * dx(y)
        return np.where(np.isfinite(x) & (x > lo) & (x < hi), np.nan_to_num(d, nan=0.0, posinf=0.0, neginf=0.0), 0.0)

    def panel_abs(a, b):
        m, r = 0.5 * (a + b), 0.5 * (b - a)
        return r * np.sum(_GL_W * np.abs(g(m + r * _GL_X)), axis=-1)

    yc = float(y_of(center)) if center is not None else 0.0
    probe = yc + np.concatenate([np.linspace(-40, 40, 801), np.linspace(-2, 2, 401)])
    gp = np.abs(g(probe))
    if not np.any(gp > 0):
        return QuadResult(0.0, 0.0, True)
    yc = float(probe[np.argmax(gp)])
    scale = max(float(panel_abs(yc - 40.0, yc + 40.0)), float(np.max(gp)) * 1e-3)
    a, b = yc - 1.0, yc + 1.0
    step = 0.5
    for _ in range(200):
        if panel_abs(a - step, a) <= 1e-3 * rtol * scale and abs(g(a - step)) <= abs(g(a)):
            break
        a -= step
        step *= 1.5
    step = 0.5
    for _ in range(200):
        if panel_abs(b, b + step) <= 1e-3 * rtol * scale and abs(g(b + step)) <= abs(g(b)):
            break
        b += step
        step *= 1.5
    edges = np.linspace(a, b, max(int(n_min), 2) + 1)
    pa, pb = edges[:-1], edges[1:]
    total, err_total, npan, ok = 0.0, 0.0, pa.size, True
    tol = rtol * scale
    while pa.size:
        pm = 0.5 * (pa + pb)
        r = 0.25 * (pb - pa)
        nodes = np.concatenate([(pa + r)[:, None] + r[:, None] * _GL_X, (pm + r)[:, None] + r[:, None] * _GL_X], axis=1)
        gv = g(nodes)
        halves = r * (gv[:, :12] @ _GL_W) + r * (gv[:, 12:] @ _GL_W)
        whole = 2 * r * (g(pm[:, None] + 2 * r[:, None] * _GL_X) @ _GL_W)
        err = np.abs(whole - halves)
        split = (err > tol / 8) & ((pb - pa) > 1e-9)
        if npan + split.sum() > max_panels:
            ok = ok and not np.any(split)
            split[:] = False
        total += float(np.sum(halves[~split]))
        err_total += float(np.sum(err[~split]))
        npan += int(split.sum())
        pa, pb = np.concatenate([pa[split], pm[split]]), np.concatenate([pm[split], pb[split]])
    if not ok:
        warnings.warn("panel budget exhausted before reaching tolerance", NonConvergenceWarning, stacklevel=2)
    return QuadResult(total, err_total, ok)


def cdf_at(table: CdfTable, x) -> np.ndarray | float:
    """Tabulated CDF at ``x``."""
    xa = np.atleast_1d(np.asarray(x, dtype=float))
    with np.errstate(divide="ignore", invalid="ignore"):
        y = table.y_of(np.clip(xa, table.lo, table.hi))
    y = np.clip(np.nan_to_num(y, nan=table.y[0], posinf=table.y[-1], neginf=table.y[0]), table.y[0], table.y[-1])
    i = np.clip(np.searchsorted(table.y, y, side="right") - 1, 0, len(table.y) - 2)
    h = table.y[i + 1] - table.y[i]
    t = (y - table.y[i]) / h
    out = _hermite(table.cum[i], table.cum[i + 1], table.g[i], table.g[i + 1], h, t)
    return float(out[0]) if np.ndim(x) == 0 else out


def invert_cdf(table: CdfTable, u) -> np.ndarray | float:
    """x with CDF(x) = u.  Returns NaN where ``u`` exceeds the table mass.

    A NaN marks the defect event: the sampled probability falls into the
    missing mass ``1 - m`` of a defective (killed) density.
    """
    ua = np.atleast_1d(np.asarray(u, dtype=float))
    if np.any((ua < 0) | (ua > 1)):
        raise ValueError("u must lie in [0, 1]")
    out = np.full(ua.shape, np.nan)
    ok = ua <= table.mass
    uu = ua[ok]
    i = np.clip(np.searchsorted(table.cum, uu, side="right") - 1, 0, len(table.y) - 2)
    c0, c1 = table.cum[i], table.cum[i + 1]
    g0, g1 = table.g[i], table.g[i + 1]
    h = table.y[i + 1] - table.y[i]
    # the Hermite cubic is monotone on accepted panels; safeguarded Newton
    ta = np.zeros_like(uu)
    tb = np.ones_like(uu)
    t = np.where(c1 > c0, np.clip((uu - c0) / np.where(c1 > c0, c1 - c0, 1.0), 0, 1), 0.5)
    for _ in range(60):
        f = _hermite(c0, c1, g0, g1, h, t) - uu
        ta = np.where(f < 0, t, ta)
        tb = np.where(f >= 0, t, tb)
        d = h * (g0 * (3 * t * t - 4 * t + 1) + g1 * (3 * t * t - 2 * t)) + (c1 - c0) * (6 * t - 6 * t * t)
        with np.errstate(divide="ignore", invalid="ignore"):
            tn = t - f / d
        bad = ~np.isfinite(tn) | (tn <= ta) | (tn >= tb)
        tn = np.where(bad, 0.5 * (ta + tb), tn)
        if np.all(np.abs(tn - t) < 1e-15):
            t = tn
            break
        t = tn
    out[ok] = table.x_of(table.y[i] + t * h)
    return float(out[0]) if np.ndim(u) == 0 else out


# ----------------------------------------------------------------------------
# Endpoint limits
# ----------------------------------------------------------------------------

def limit_trend(values, vanish_tol: float = 1e-6, blowup: float = 1e6, flat_tol: float = 1e-3) -> str:
    """Classify the trend of a sequence sampled toward an endpoint.

    The sequence is assumed to be sampled on a geometric grid (for example
    one point per decade).  Returns ``"finite"`` when the last three values
    agree to ``flat_tol`` relative, ``"zero"`` / ``"infinite"`` when the
    magnitudes move monotonically either by more than ``vanish_tol`` /
    ``blowup`` overall or at a non-decaying rate per step (power-law
    behaviour), and ``"unclear"`` otherwise.
    """
    v = np.abs(np.asarray(values, dtype=float))
    if v.size < 3 or np.any(np.isnan(v)):
        return "unclear"
    if v[-1] == 0:
        return "zero"
    if np.isinf(v[-1]):
        return "infinite"
    tail = v[-3:]
    if np.max(tail) - np.min(tail) <= flat_tol * np.max(tail):
        return "finite"
    with np.errstate(divide="ignore"):
        steps = np.diff(np.log(v))
    if np.all(steps < 0) and (v[-1] <= vanish_tol * v[0] or abs(steps[-1]) >= 0.5 * abs(steps[0])):
        return "zero"
    if np.all(steps > 0) and (v[-1] >= blowup * v[0] or abs(steps[-1]) >= 0.5 * abs(steps[0])):
        return "infinite"
    return "unclear"
