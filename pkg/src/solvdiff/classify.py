"""Boundary classification and expectation-rate conservation of F-diffusions.

Closed-form rules decide; independent numerical tests confirm.  The
integrability probes estimate the inner products ``(f, g) = int m f g`` on
nested endpoint neighbourhoods, and the limit test evaluates the two
boundary brackets whose vanishing is equivalent to conservation of the
expectation rate.  Numerical verdicts never override the closed forms; a
disagreement or an inconclusive probe only clears ``numeric_confirmed``.

Boundary types are reported at the underlying endpoints: ``left`` is the
F-boundary ``F(l+)`` and ``right`` is ``F(r-)``.  For a decreasing map
``F(l+)`` is the upper end of the F state space (see
:attr:`ClassificationReport.lower` and :attr:`ClassificationReport.upper`).
"""

from __future__ import annotations

import functools
import math
import warnings
from dataclasses import dataclass, field
from enum import Enum
from typing import NamedTuple

import numpy as np
from scipy.special import logsumexp

from . import transform as tr
from . import underlying as und
from .logvalue import LogValue
from .numerics import integrate_on_support, limit_trend
from .underlying import Kind, UnderlyingModel

__all__ = [
    "BoundaryType",
    "ClassificationReport",
    "LimitTest",
    "TAGS",
    "closed_form_integrability",
    "classify_x_rho",
    "classify_numeric",
    "integrability_probe",
    "conserves_expectation_rate",
    "theorem2_bracket",
    "theorem2_limit_test",
    "expectation_f",
    "martingale_defect",
    "classify_report",
]


class BoundaryType(str, Enum):
    ENTRANCE = "entrance"
    EXIT = "exit"
    REGULAR_KILLING = "regular-killing"
    ATTRACTING_NATURAL = "attracting-natural"
    NON_ATTRACTING_NATURAL = "non-attracting-natural"


@dataclass(frozen=True)
class ClassificationReport:
    left: BoundaryType
    right: BoundaryType
    conserves_rate: bool
    rule_fired: str
    numeric_confirmed: bool
    map_sign: int = 1
    details: dict = field(default_factory=dict, compare=False)

    @property
    def lower(self) -> BoundaryType:
        """Type of the lower F-boundary ``F^(l)``."""
        return self.left if self.map_sign > 0 else self.right

    @property
    def upper(self) -> BoundaryType:
        """Type of the upper F-boundary ``F^(r)``."""
        return self.right if self.map_sign > 0 else self.left

    def to_dict(self) -> dict:
        return {
            "left": self.left.value,
            "right": self.right.value,
            "lower": self.lower.value,
            "upper": self.upper.value,
            "conserves_rate": self.conserves_rate,
            "rule_fired": self.rule_fired,
            "numeric_confirmed": self.numeric_confirmed,
            "details": self.details,
        }


# ----------------------------------------------------------------------------
# Integrability of phi products
# ----------------------------------------------------------------------------

# "+-@l" is (phi+, phi-) on (l, x]; "++@r" is (phi+, phi+) on [x, r), etc.
TAGS = ("+-@l", "--@l", "+-@r", "++@r")


def closed_form_integrability(model: UnderlyingModel, tag: str) -> bool:
    """True when the inner product named by ``tag`` is finite."""
    if tag not in TAGS:
        raise ValueError(f"unknown tag {tag!r}")
    if model.kind is Kind.OU:
        return False
    if tag == "+-@l":
        return True
    if tag == "--@l":
        return model.mu < 1.0
    return False


def _lemma(q1: float, q2: float, finite) -> tuple[BoundaryType, BoundaryType, str] | None:
    """Boundary types from the integrability answers ``finite(tag)``.

    ``finite`` returns True, False or None (unknown); None propagates.
    """
    def ask(tag):
        v = finite(tag)
        if v is None:
            raise LookupError(tag)
        return v

    try:
        if q2 > 0:
            if not ask("+-@l"):
                left = BoundaryType.ATTRACTING_NATURAL
            elif not ask("--@l"):
                left = BoundaryType.EXIT
            else:
                left = BoundaryType.REGULAR_KILLING
        else:
            left = BoundaryType.NON_ATTRACTING_NATURAL if not ask("+-@l") else BoundaryType.ENTRANCE
        if q1 > 0:
            if not ask("+-@r"):
                right = BoundaryType.ATTRACTING_NATURAL
            elif not ask("++@r"):
                right = BoundaryType.EXIT
            else:
                right = BoundaryType.REGULAR_KILLING
        else:
            right = BoundaryType.NON_ATTRACTING_NATURAL if not ask("+-@r") else BoundaryType.ENTRANCE
    except LookupError:
        return None
    case = "q1 = 0" if q1 == 0 else ("q2 = 0" if q2 == 0 else "q1, q2 > 0")
    return left, right, f"integrability rule, {case}"


def classify_x_rho(fd) -> tuple[BoundaryType, BoundaryType]:
    """Closed-form boundary types of ``X^(rho)`` (and of the F-diffusion)."""
    model, spec = tr._parts(fd)
    _, _, q1, q2 = spec.weights()
    left, right, _ = _lemma(q1, q2, lambda tag: closed_form_integrability(model, tag))
    return left, right


def _probe_points(model: UnderlyingModel, tag: str) -> np.ndarray:
    """Nested neighbourhood edges, ordered towards the endpoint."""
    at_left = tag.endswith("@l")
    if model.kind is Kind.OU:
        d = np.logspace(0, 6, 13) / math.sqrt(model.kappa)
        return model.shift - d if at_left else model.shift + d
    x_ref = 1.0 if model.kind is Kind.SQB else 1.0 / model.kappa
    return x_ref * (np.logspace(0, -16, 17) if at_left else np.logspace(0, 10, 11))


_GL_X, _GL_W = np.polynomial.legendre.leggauss(16)


def _segment_log_integral(model, rho, branches, a, b, panels: int = 24) -> float:
    """``log int_a^b m phi phi`` in the variable log x (SQB/CIR) or x (OU)."""
    log_space = model.kind is not Kind.OU
    ta, tb = (math.log(a), math.log(b)) if log_space else (a, b)
    lo, hi = min(ta, tb), max(ta, tb)
    edges = np.linspace(lo, hi, panels + 1)
    half = 0.5 * np.diff(edges)
    t = (0.5 * (edges[:-1] + edges[1:]))[:, None] + half[:, None] * _GL_X
    y = np.exp(t) if log_space else t
    h = np.asarray(und.speed_density(model, y).log_abs, dtype=float) + (t if log_space else 0.0)
    for br in branches:
        h = h + und._phi_parts(model, rho, br, y.ravel(), 0)[1].reshape(y.shape)
    h = h + np.log(_GL_W) + np.log(half)[:, None]
    return float(logsumexp(h))


@functools.lru_cache(maxsize=256)
def _probe_cached(model: UnderlyingModel, rho: float, tag: str) -> tuple[str, tuple, tuple]:
    branches = (1, -1) if tag.startswith("+-") else ((1, 1) if tag.startswith("++") else (-1, -1))
    pts = _probe_points(model, tag)
    logd = np.array([_segment_log_integral(model, rho, branches, pts[k], pts[k + 1]) for k in range(len(pts) - 1)])
    log_ratios = np.diff(logd)
    last = log_ratios[-3:]
    log_partial = float(logsumexp(logd))
    verdict = "inconclusive"
    if np.all(last >= math.log(0.98)):
        verdict = "infinite"
    elif np.all(last <= math.log(0.9)):
        rmax = math.exp(float(np.max(last)))
        tail = logd[-1] + math.log(rmax / (1.0 - rmax))
        if tail - log_partial <= math.log(1e-6):
            verdict = "finite"
    return verdict, tuple(logd), tuple(log_ratios)


def integrability_probe(fd, tag: str) -> str:
    """Numerical verdict ``"finite"``, ``"infinite"`` or ``"inconclusive"``.

    Partial integrals over successive decades (half-decades for OU) towards
    the endpoint are compared: the product is declared non-integrable when
    the increments stop shrinking over the last three steps (the partial
    sums grow at least logarithmically), and integrable when they shrink
    geometrically and the extrapolated tail is below ``1e-6`` of the sum.
    """
    if tag not in TAGS:
        raise ValueError(f"unknown tag {tag!r}")
    if isinstance(fd, UnderlyingModel):
        raise TypeError("pass an FDiffusion or a (model, MapSpec) pair")
    model, spec = tr._parts(fd)
    return _probe_cached(model, float(spec.rho), tag)[0]


def classify_numeric(fd) -> tuple[BoundaryType, BoundaryType] | None:
    """Boundary types from the integrability probes; None if inconclusive."""
    model, spec = tr._parts(fd)
    _, _, q1, q2 = spec.weights()

    def finite(tag):
        v = integrability_probe(fd, tag)
        return None if v == "inconclusive" else v == "finite"

    out = _lemma(q1, q2, finite)
    return None if out is None else (out[0], out[1])


# ----------------------------------------------------------------------------
# Conservation of the expectation rate
# ----------------------------------------------------------------------------

def conserves_expectation_rate(fd) -> tuple[bool, str]:
    """Closed-form conservation verdict and the rule that decided it.

    ``c2`` is the weight of ``phi^-_{rho+b}`` in the general form of the
    numerator (for F5 this is ``-eps c2``).
    """
    model, spec = tr._parts(fd)
    if model.kind is Kind.OU:
        return True, "OU family: conserves for every parameter choice"
    _, c2, _, q2 = spec.weights()
    if c2 == 0:
        return True, "c2 = 0"
    if q2 == 0:
        return False, "c2 != 0 and q2 = 0"
    f0 = fd.endpoint_f[0] if isinstance(fd, tr.FDiffusion) else tr.endpoint_values(model, spec)[0]
    scale = 1.0 + abs(spec.offset)
    if math.isfinite(f0) and abs(f0) <= 1e-10 * scale:
        return True, "c2 != 0, q2 > 0 and F(0+) = 0"
    return False, f"c2 != 0, q2 > 0 and F(0+) = {f0:.6g} != 0"


def _grid_towards(model: UnderlyingModel, right: bool) -> tuple[np.ndarray, float]:
    """Limit-test abscissas ordered towards the endpoint, and the midpoint."""
    if model.kind is Kind.OU:
        d = np.logspace(0, 5, 21) / math.sqrt(model.kappa)
        return (model.shift + d if right else model.shift - d), model.shift
    x_ref = 1.0 if model.kind is Kind.SQB else 1.0 / model.kappa
    if not right:
        return x_ref * np.logspace(-1, -30, 30), x_ref
    top = 8.0 if model.kind is Kind.SQB else 6.0
    return x_ref * np.logspace(0.5, top, int(round(4 * (top - 0.5))) + 1), x_ref


def theorem2_bracket(fd, s: float, endpoint: str, x, literal: bool = False) -> tuple[LogValue, np.ndarray]:
    """Boundary bracket of the conservation criterion at ``x``.

    With ``phi = phi^+_{rho+s}`` (left) or ``phi^-_{rho+s}`` (right)::

        F W[u, phi]/s_x - (W[u, v]/s_x) phi/u  =  (-a/b) W[u, phi]/s_x + W[v, phi]/s_x

    The right-hand form (the default) avoids the cancellation between the
    two terms; ``literal=True`` evaluates the left-hand form.  Also returns
    the magnitude of the largest term, which sets the round-off floor.
    """
    model, spec = tr._parts(fd)
    c1, c2, q1, q2 = spec.weights()
    br = "+" if endpoint in ("l", "L") else "-"
    xa = np.atleast_1d(np.asarray(x, dtype=float))
    scale = und.scale_density(model, xa)
    zero = LogValue(np.zeros_like(xa), np.full_like(xa, -np.inf))

    def w_sum(s_left, weights):
        out = zero
        for w, b in zip(weights, ("+", "-")):
            if w != 0:
                with warnings.catch_warnings():
                    warnings.simplefilter("ignore", und.PrecisionLossWarning)
                    cw = und.cross_wronskian(model, s_left, spec.rho + s, (b, br), xa)
                out = out + LogValue(np.sign(w) * cw.sign, cw.log_abs + math.log(abs(w)))
        return out / scale

    wu = w_sum(spec.rho, (q1, q2))
    offset = spec.offset
    if literal:
        f = LogValue.from_value(tr.map_f((model, spec), xa))
        ww = tr.wronskian_w((model, spec), xa) / scale
        ratio = LogValue(*und._phi_parts(model, spec.rho + s, 1 if br == "+" else -1, xa, 0)) / tr.u_hat((model, spec), xa)
        t1, t2 = f * wu, -(ww * ratio)
    else:
        t1 = wu * LogValue.from_value(np.full_like(xa, offset)) if offset != 0 else zero
        t2 = w_sum(spec.rho_b, (c1, c2))
    mag = np.maximum(np.exp(np.asarray(t1.log_abs, float)), np.exp(np.asarray(t2.log_abs, float)))
    return t1 + t2, mag


def _limit_verdict(vals: np.ndarray, mags: np.ndarray, grid: np.ndarray, mid: float, model) -> str:
    """``"zero"``, ``"nonzero"`` or ``"inconclusive"`` for a sampled limit."""
    floor = vals <= 1e-12 * mags
    eff = np.where(floor, 0.0, vals)
    tail = eff[-4:]
    if tail[-1] == 0.0 and np.all(np.diff(eff[-4:][eff[-4:] > 0]) < 0):
        return "zero"
    decreasing = np.all(np.diff(tail) < 0)
    if decreasing and tail[-1] <= 1e-6 * mid:
        return "zero"
    if decreasing:
        # power-law or faster decay in the distance to the endpoint
        dist = np.abs(grid[-4:] - model.shift) if model.kind is Kind.OU else grid[-4:]
        slopes = np.diff(np.log(tail)) / np.abs(np.diff(np.log(dist)))
        if np.all(slopes <= -0.05) and abs(slopes[-1]) >= 0.5 * abs(slopes[0]):
            return "zero"
    trend = limit_trend(eff)
    if trend in ("finite", "infinite") or np.all(np.diff(tail) > 0):
        return "nonzero"
    return "inconclusive"


class LimitTest(NamedTuple):
    passed: bool
    inconclusive: bool
    cases: dict


def theorem2_limit_test(fd, s_values=None) -> LimitTest:
    """Check that both boundary brackets tend to zero for each real ``s > b``.

    A limit counts as zero when the bracket decreases monotonically over the
    last grid points and is below ``1e-6`` of its midpoint value, reaches
    the round-off floor of its terms, or decays at least like a power of the
    distance to the endpoint.  ``passed`` is False when any limit is
    clearly nonzero; undecided cases set ``inconclusive``.
    """
    model, spec = tr._parts(fd)
    if s_values is None:
        s_values = (spec.b + 0.5, spec.b + 1.0, spec.b + 2.0)
    cases = {}
    for s in s_values:
        if not s > spec.b:
            raise ValueError("the limit test needs s > b")
        for ep, right in (("l", False), ("r", True)):
            grid, mid = _grid_towards(model, right)
            val, mag = theorem2_bracket(fd, s, ep, grid)
            vm, _ = theorem2_bracket(fd, s, ep, mid)
            vals = np.exp(np.asarray(val.log_abs, float))
            mid_v = float(np.exp(vm.log_abs[0]))
            cases[(float(s), ep)] = _limit_verdict(vals, mag, grid, mid_v, model)
    verdicts = set(cases.values())
    passed = verdicts == {"zero"}
    return LimitTest(passed, "nonzero" not in verdicts and not passed, cases)


# ----------------------------------------------------------------------------
# Expectations and the bias term
# ----------------------------------------------------------------------------

def _x_moments(fd, t: float, y: float) -> tuple[float, float]:
    """``(mass, int F p_rho dx)`` of the X^(rho) transition density from ``y``."""
    model, spec = tr._parts(fd)
    off = spec.offset

    def dens(x):
        return tr.transition_pdf_x_rho(fd, t, y, x).value()

    def first(x):
        p = tr.transition_pdf_x_rho(fd, t, y, x)
        r = tr.v_hat(fd, x) / tr.u_hat(fd, x)
        return (p * r).value() + off * p.value()

    mass = integrate_on_support(dens, model.state_space, center=y, rtol=1e-12).value
    mean = integrate_on_support(first, model.state_space, center=y, rtol=1e-12).value
    return mass, mean


def expectation_f(fd, t: float, Y: float) -> tuple[float, float]:
    """``(P(alive), E[F_t 1_alive])`` given ``F_0 = Y``, by quadrature."""
    y = tr.inverse_map(fd, Y)
    return _x_moments(fd, t, y)


def martingale_defect(fd, Y: float, t: float, h: float | None = None) -> float:
    """Bias ``d/dt E[F_t | Y] - int (a + bF) p_F dF`` (live part).

    The time derivative is a central difference of the quadrature mean.
    """
    _, spec = tr._parts(fd)
    h = 1e-3 * t if h is None else h
    y = tr.inverse_map(fd, Y)
    _, m_up = _x_moments(fd, t + h, y)
    _, m_dn = _x_moments(fd, t - h, y)
    mass, mean = _x_moments(fd, t, y)
    return (m_up - m_dn) / (2.0 * h) - (spec.a * mass + spec.b * mean)


# ----------------------------------------------------------------------------
# Report
# ----------------------------------------------------------------------------

def classify_report(fd, numeric: bool = True) -> ClassificationReport:
    """Closed-form classification with numerical confirmation."""
    model, spec = tr._parts(fd)
    _, _, q1, q2 = spec.weights()
    left, right, b_rule = _lemma(q1, q2, lambda tag: closed_form_integrability(model, tag))
    verdict, c_rule = conserves_expectation_rate(fd)
    details = {}
    confirmed = False
    if numeric:
        num = classify_numeric(fd)
        lt = theorem2_limit_test(fd)
        details = {
            "probes": {tag: integrability_probe(fd, tag) for tag in TAGS},
            "numeric_boundaries": None if num is None else [num[0].value, num[1].value],
            "limit_test": {f"s={k[0]:g},{k[1]}": v for k, v in lt.cases.items()},
        }
        confirmed = num == (left, right) and not lt.inconclusive and lt.passed == verdict
    sign = fd.map_sign if isinstance(fd, tr.FDiffusion) else 1
    return ClassificationReport(left, right, verdict, f"{b_rule}; conservation: {c_rule}", confirmed, sign, details)
