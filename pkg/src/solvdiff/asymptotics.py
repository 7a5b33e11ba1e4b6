"""Leading-order endpoint behaviour of ``phi^{+/-}_s`` and their Wronskians.

Every leading term has the form

    coef * |y|^power * log(1/|y|)^log_power * exp(exp_rate * gauge(y))

with ``y = x - origin`` (``origin`` is the OU mean level, zero otherwise) and
``gauge`` one of ``sqrt`` (``sqrt(y)``), ``linear`` (``y``) or ``square``
(``y^2``).  The coefficient is held in log form so that large exponents do
not overflow.  :meth:`LeadingTerm.limit` reads the limit off the term
symbolically; :func:`wronskian_limit_table` encodes the published table of
limits, which the tests compare against.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from enum import Enum

import numpy as np
from scipy import special as sc

from .logvalue import LogValue
from .specfun import DomainError
from .underlying import Kind, UnderlyingModel, _s, branch_sign

__all__ = [
    "Endpoint",
    "Limit",
    "LeadingTerm",
    "asymptotic_phi",
    "asymptotic_wronskian",
    "wronskian_limit_table",
    "gamma_ratio_s",
    "gamma_ratio_r",
    "endpoint_grid",
    "term_product",
    "dominant_sum",
]


class Endpoint(str, Enum):
    L = "l"
    R = "r"


class Limit(str, Enum):
    ZERO = "zero"
    FINITE = "finite"
    INFINITE = "infinite"


@dataclass(frozen=True)
class LeadingTerm:
    coef_sign: float
    coef_log: float
    power: float = 0.0
    log_power: float = 0.0
    exp_rate: float = 0.0
    gauge: str = "linear"
    endpoint: Endpoint = Endpoint.L
    at_infinity: bool = False
    origin: float = 0.0

    @classmethod
    def make(cls, coef: float, **kw) -> "LeadingTerm":
        if coef == 0:
            return cls(0.0, -math.inf, **kw)
        return cls(math.copysign(1.0, coef), math.log(abs(coef)), **kw)

    def _log_gauge(self, y):
        if self.gauge == "sqrt":
            return np.sqrt(y)
        if self.gauge == "square":
            return y * y
        return y

    def log_at(self, x) -> LogValue:
        y = np.asarray(x, dtype=float) - self.origin
        ay = np.abs(y)
        la = self.coef_log + self.power * np.log(ay) + self.exp_rate * self._log_gauge(y)
        if self.log_power:
            la = la + self.log_power * np.log(np.abs(np.log(ay)))
        return LogValue(np.full_like(la, self.coef_sign), la) if np.ndim(la) else LogValue(self.coef_sign, float(la))

    def at(self, x):
        return self.log_at(x).value()

    def limit(self) -> tuple[float, Limit]:
        """(sign, zero | finite | infinite) as the endpoint is approached."""
        if self.coef_sign == 0:
            return 0.0, Limit.ZERO
        if self.at_infinity:
            order = (self.exp_rate, self.power, self.log_power)
        else:
            # |y| -> 0: the exponential factor tends to one, log(1/|y|) -> inf
            order = (0.0, -self.power, self.log_power)
        for o in order:
            if o > 0:
                return self.coef_sign, Limit.INFINITE
            if o < 0:
                return self.coef_sign, Limit.ZERO
        return self.coef_sign, Limit.FINITE


def _ep(endpoint) -> Endpoint:
    return Endpoint(endpoint.value if isinstance(endpoint, Endpoint) else str(endpoint))


def _at_inf(model: UnderlyingModel, ep: Endpoint) -> bool:
    return model.kind is Kind.OU or ep is Endpoint.R


def asymptotic_phi(model: UnderlyingModel, sp, branch, endpoint) -> LeadingTerm:
    """Leading term of ``phi^{branch}_s(x)`` as ``x`` tends to the endpoint."""
    s, sign, ep = _s(sp), branch_sign(branch), _ep(endpoint)
    base = dict(endpoint=ep, at_infinity=_at_inf(model, ep))
    mu = model.mu
    if model.kind is Kind.SQB:
        nu = model.nu0
        c = math.sqrt(2.0 * s) / nu
        if ep is Endpoint.L:
            if sign > 0:
                return LeadingTerm.make(math.exp(0.5 * mu * math.log(c * c) - sc.gammaln(mu + 1.0)), **base)
            return LeadingTerm.make(math.exp(sc.gammaln(mu) - 0.5 * mu * math.log(c * c)) / 2.0, power=-mu, **base)
        p = -0.5 * mu - 0.25
        if sign > 0:
            return LeadingTerm.make(0.5 / math.sqrt(math.pi * c), power=p, exp_rate=2.0 * c, gauge="sqrt", **base)
        return LeadingTerm.make(0.5 * math.sqrt(math.pi / c), power=p, exp_rate=-2.0 * c, gauge="sqrt", **base)
    kap, v = model.kappa, model.upsilon(s)
    if model.kind is Kind.CIR:
        if ep is Endpoint.L:
            if sign > 0:
                return LeadingTerm.make(1.0, **base)
            return LeadingTerm(1.0, sc.gammaln(mu) - sc.gammaln(v) - mu * math.log(kap), power=-mu, **base)
        if sign > 0:
            p = v - mu - 1.0
            return LeadingTerm(1.0, sc.gammaln(mu + 1.0) - sc.gammaln(v) + p * math.log(kap), power=p,
                               exp_rate=kap, **base)
        return LeadingTerm(1.0, -v * math.log(kap), power=-v, **base)
    # OU: phi^{+} grows at r, phi^{-} grows at l
    growing = (sign > 0) == (ep is Endpoint.R)
    base["origin"] = model.shift
    if growing:
        p = v - 1.0
        return LeadingTerm(1.0, 0.5 * math.log(2.0 * math.pi) - sc.gammaln(v) + 0.5 * p * math.log(kap),
                           power=p, exp_rate=0.5 * kap, gauge="square", **base)
    return LeadingTerm(1.0, -0.5 * v * math.log(kap), power=-v, **base)


def _pair(branches) -> str:
    b1, b2 = (branch_sign(b) for b in branches)
    return {(1, 1): "++", (1, -1): "+-", (-1, -1): "--"}.get((b1, b2), "-+")


def asymptotic_wronskian(model: UnderlyingModel, sp1, sp2, branches, endpoint) -> LeadingTerm:
    """Leading term of ``W[phi^{b1}_{s1}, phi^{b2}_{s2}]`` at the endpoint.

    The pair ``(-, +)`` is obtained from ``(+, -)`` by antisymmetry.
    """
    s1, s2, ep = _s(sp1), _s(sp2), _ep(endpoint)
    pair = _pair(branches)
    if pair == "-+":
        t = asymptotic_wronskian(model, s2, s1, ("+", "-"), ep)
        return LeadingTerm(-t.coef_sign, t.coef_log, t.power, t.log_power, t.exp_rate, t.gauge, t.endpoint,
                           t.at_infinity, t.origin)
    base = dict(endpoint=ep, at_infinity=_at_inf(model, ep))
    mu = model.mu
    if model.kind is Kind.SQB:
        return _sqb_w(model, s1, s2, pair, ep, base)
    if model.kind is Kind.CIR:
        return _cir_w(model, s1, s2, pair, ep, base)
    return _ou_w(model, s1, s2, pair, ep, base)


def _sqb_w(model, s1, s2, pair, ep, base):
    mu, nu = model.mu, model.nu0
    nu2 = nu * nu
    g = sc.gammaln
    if ep is Endpoint.L:
        if pair == "++":
            c = math.exp(mu * math.log(2.0 * math.sqrt(s1 * s2) / nu2) - g(mu + 1.0) - g(mu + 2.0))
            return LeadingTerm.make(c * 2.0 * (s2 - s1) / nu2, **base)
        if pair == "+-":
            return LeadingTerm.make(-0.5 * (s1 / s2) ** (0.5 * mu), power=-mu - 1.0, **base)
        if mu > 1:
            c = math.exp(g(mu) + g(mu - 1.0) - mu * math.log(2.0 * math.sqrt(s1 * s2) / nu2)) / (2.0 * nu2)
            return LeadingTerm.make(c * (s1 - s2), power=-2.0 * mu, **base)
        if mu == 1:
            return LeadingTerm.make((s1 - s2) / (4.0 * math.sqrt(s1 * s2)), power=-2.0, log_power=1.0, **base)
        c = math.exp(g(mu) + g(1.0 - mu)) / 4.0
        return LeadingTerm.make(c * (s1**mu - s2**mu) / (s1 * s2) ** (0.5 * mu), power=-mu - 1.0, **base)
    q = (s1 * s2) ** 0.25
    r1, r2 = math.sqrt(s1), math.sqrt(s2)
    k = 2.0 * math.sqrt(2.0) / nu
    kw = dict(power=-mu - 1.0, gauge="sqrt", **base)
    if pair == "++":
        return LeadingTerm.make((r2 - r1) / (4.0 * math.pi * q), exp_rate=k * (r1 + r2), **kw)
    if pair == "+-":
        return LeadingTerm.make(-0.25 * (r1 + r2) / q, exp_rate=k * (r1 - r2), **kw)
    return LeadingTerm.make(0.25 * math.pi * (r1 - r2) / q, exp_rate=-k * (r1 + r2), **kw)


def _signed(log_abs: float, sign: float, **kw) -> LeadingTerm:
    if sign == 0:
        return LeadingTerm(0.0, -math.inf, **kw)
    return LeadingTerm(float(np.sign(sign)), log_abs, **kw)


def _cir_w(model, s1, s2, pair, ep, base):
    mu, k = model.mu, model.kappa
    v1, v2 = model.upsilon(s1), model.upsilon(s2)
    g = sc.gammaln
    lk = math.log(k)
    if ep is Endpoint.L:
        if pair == "++":
            return LeadingTerm.make((v2 - v1) * k / (mu + 1.0), **base)
        if pair == "+-":
            return LeadingTerm(-1.0, g(mu + 1.0) - g(v2) - mu * lk, power=-mu - 1.0, **base)
        if mu > 1:
            la = g(mu) + g(mu - 1.0) - g(v1) - g(v2) + (1.0 - 2.0 * mu) * lk
            return _signed(la + _log_abs(v1 - v2), v1 - v2, power=-2.0 * mu, **base)
        if mu == 1:
            la = -lk - g(v1) - g(v2)
            return _signed(la + _log_abs(v1 - v2), v1 - v2, power=-2.0, log_power=1.0, **base)
        diff = gamma_ratio_r(v1, mu) - gamma_ratio_r(v2, mu)
        la = -mu * lk + g(mu) + g(1.0 - mu) - g(v1) - g(v2) + _log_abs(diff)
        return _signed(la, diff, power=-mu - 1.0, **base)
    if pair == "++":
        p = v1 + v2 - 2.0 * mu - 3.0
        la = lk + 2.0 * g(mu + 1.0) - g(v1) - g(v2) + p * lk + _log_abs(v2 - v1)
        return _signed(la, v2 - v1, power=p, exp_rate=2.0 * k, **base)
    if pair == "+-":
        p = v1 - v2 - mu - 1.0
        return LeadingTerm(-1.0, lk + g(mu + 1.0) - g(v1) + p * lk, power=p, exp_rate=k, **base)
    p = -v1 - v2 - 1.0
    return _signed(lk + p * lk + _log_abs(v1 - v2), v1 - v2, power=p, **base)


def _ou_w(model, s1, s2, pair, ep, base):
    k = model.kappa
    v1, v2 = model.upsilon(s1), model.upsilon(s2)
    g = sc.gammaln
    lk = math.log(k)
    base["origin"] = model.shift
    # written in a = sqrt(k)|y|; a^p = k^{p/2} |y|^p
    decay = ("++", Endpoint.L), ("--", Endpoint.R)
    if (pair, ep) in decay:
        p = -v1 - v2 - 1.0
        d = v2 - v1 if pair == "++" else v1 - v2
        return _signed(0.5 * lk + 0.5 * p * lk + _log_abs(d), d, power=p, **base)
    if pair == "+-":
        p = v2 - v1 if ep is Endpoint.L else v1 - v2
        gv = g(v2) if ep is Endpoint.L else g(v1)
        return LeadingTerm(-1.0, 0.5 * math.log(2.0 * math.pi * k) - gv + 0.5 * p * lk, power=p,
                           exp_rate=0.5 * k, gauge="square", **base)
    p = v1 + v2 - 3.0
    d = v2 - v1 if pair == "++" else v1 - v2
    la = math.log(2.0 * math.pi) + 0.5 * lk - g(v1) - g(v2) + 0.5 * p * lk + _log_abs(d)
    return _signed(la, d, power=p, exp_rate=k, gauge="square", **base)


def _log_abs(v: float) -> float:
    return math.log(abs(v)) if v != 0 else -math.inf


def wronskian_limit_table(kind, pair: str, endpoint, s1: float, s2: float) -> tuple[float, Limit]:
    """The published limit table for ``W`` at an endpoint, as (sign, limit).

    ``C`` at the left end of the ``(+, +)`` row is a positive constant, zero
    for OU.  For SQB ``(+, -)`` at the right end the table lists ``-0`` for
    ``s1 < s2`` and ``-inf`` otherwise.
    """
    kind, ep = Kind(kind), _ep(endpoint)
    if pair == "++":
        sg = float(np.sign(s2 - s1))
        if ep is Endpoint.L:
            return sg, (Limit.ZERO if kind is Kind.OU else Limit.FINITE)
        return sg, Limit.INFINITE
    if pair == "--":
        sg = float(np.sign(s1 - s2))
        return sg, (Limit.INFINITE if ep is Endpoint.L else Limit.ZERO)
    if pair == "+-":
        if ep is Endpoint.L or kind is not Kind.SQB:
            return -1.0, Limit.INFINITE
        return -1.0, (Limit.ZERO if s1 < s2 else Limit.INFINITE)
    raise ValueError(f"unknown pair {pair!r}")


def gamma_ratio_s(x, a):
    """``S(x; a) = x^{-a} Gamma(x + a) / Gamma(x)``, increasing in ``x > 0``."""
    x = np.asarray(x, dtype=float)
    if not 0 < a < 1:
        raise DomainError("gamma_ratio_s requires 0 < a < 1")
    if np.any(x <= 0):
        raise DomainError("gamma_ratio_s requires x > 0")
    out = np.exp(sc.gammaln(x + a) - sc.gammaln(x) - a * np.log(x))
    return float(out) if out.ndim == 0 else out


def gamma_ratio_r(x, a):
    """``R(x; a) = Gamma(x) / Gamma(x - a)``, increasing in ``x > a``.

    Defined for every ``x > 0`` through ``1/Gamma``; for ``0 < x <= a`` it
    is zero or negative, which is what the CIR left-end sign needs.
    """
    x = np.asarray(x, dtype=float)
    if not 0 < a < 1:
        raise DomainError("gamma_ratio_r requires 0 < a < 1")
    if np.any(x <= 0):
        raise DomainError("gamma_ratio_r requires x > 0")
    out = sc.gamma(x) * sc.rgamma(x - a)
    return float(out) if out.ndim == 0 else out


def endpoint_grid(model: UnderlyingModel, endpoint, n: int = 5) -> np.ndarray:
    """Abscissas approaching the endpoint, ordered towards it."""
    ep = _ep(endpoint)
    if model.kind is Kind.OU:
        a = np.geomspace(8.0, 30.0, n)
        return model.shift + (a if ep is Endpoint.R else -a)
    return np.geomspace(1e-4, 1e-8, n) if ep is Endpoint.L else np.geomspace(1e3, 1e5, n)


def _growth_key(t: LeadingTerm) -> tuple:
    if t.at_infinity:
        return (t.exp_rate, t.power, t.log_power)
    return (-t.power, t.log_power)


def _with(t: LeadingTerm, sign: float, log_abs: float) -> LeadingTerm:
    return LeadingTerm(sign, log_abs, t.power, t.log_power, t.exp_rate, t.gauge, t.endpoint, t.at_infinity,
                       t.origin)


def term_product(a: LeadingTerm, b: LeadingTerm, power_b: int = 1) -> LeadingTerm:
    """Leading term of ``a * b**power_b`` (``power_b`` = +1 or -1)."""
    if a.gauge != b.gauge and a.exp_rate and b.exp_rate:
        raise ValueError("cannot combine different exponential gauges")
    if power_b < 0 and b.coef_sign == 0:
        raise ZeroDivisionError("leading term of the divisor vanishes")
    gauge = a.gauge if a.exp_rate else b.gauge
    return LeadingTerm(
        a.coef_sign * b.coef_sign,
        a.coef_log + power_b * b.coef_log,
        a.power + power_b * b.power,
        a.log_power + power_b * b.log_power,
        a.exp_rate + power_b * b.exp_rate,
        gauge,
        a.endpoint,
        a.at_infinity,
        a.origin,
    )


def dominant_sum(terms, weights, tol: float = 1e-12) -> LeadingTerm | None:
    """Leading term of ``sum(w_i * t_i)``.

    Terms with the largest growth at the endpoint dominate; ties add their
    coefficients.  Returns ``None`` when the dominant coefficients cancel,
    in which case a higher-order expansion would be needed.
    """
    live = [(w, t) for w, t in zip(weights, terms) if w != 0 and t.coef_sign != 0]
    if not live:
        return None
    keys = [_growth_key(t) for _, t in live]
    best = max(keys)
    top = [(w, t) for (w, t), k in zip(live, keys) if np.allclose(k, best, rtol=tol, atol=tol)]
    total = LogValue(0.0, -math.inf)
    for w, t in top:
        total = total + LogValue(math.copysign(1.0, w) * t.coef_sign, math.log(abs(w)) + t.coef_log)
    ref = max(math.log(abs(w)) + t.coef_log for w, t in top)
    if total.sign == 0 or total.log_abs < ref + math.log(1e-12):
        return None
    return _with(top[0][1], float(total.sign), float(total.log_abs))
