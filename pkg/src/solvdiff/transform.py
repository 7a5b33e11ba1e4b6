"""Affine-drift maps ``F = -a/b + v_hat / u_hat`` of the solvable diffusions.

``u_hat = q1 phi^+_rho + q2 phi^-_rho`` is the positive generating function
of the measure change ``X -> X^(rho)`` and ``v_hat = c1 phi^+_{rho+b} +
c2 phi^-_{rho+b}``.  With ``W = W[u_hat, v_hat]`` the map derivative is
``W / u_hat^2`` and the new diffusion coefficient is
``sigma(F) = nu(x) |W(x)| / u_hat(x)^2`` at ``x = X(F)``.

A :class:`MapSpec` stores the parameters as they appear in the chosen map
family; :meth:`MapSpec.weights` converts them to the four weights of the
general form.  :func:`build` certifies monotonicity, computes the endpoint
values and returns an immutable :class:`FDiffusion`.
"""

from __future__ import annotations

import dataclasses
import math
import warnings
from dataclasses import dataclass
from functools import lru_cache
from enum import Enum

import numpy as np
from scipy import integrate as _integrate
from scipy import optimize

from . import asymptotics as asy
from . import specfun as sf
from . import underlying as und
from .logvalue import LogValue
from .numerics import BracketError
from .specfun import DomainError
from .underlying import Kind, UnderlyingModel

__all__ = [
    "Family",
    "MapSpec",
    "FDiffusion",
    "CertificationError",
    "Certificate",
    "build",
    "certify_monotone",
    "state_grid",
    "u_hat",
    "v_hat",
    "u_hat_deriv",
    "v_hat_deriv",
    "map_f",
    "map_derivs",
    "wronskian_w",
    "endpoint_values",
    "inverse_map",
    "sigma_x",
    "sigma_f",
    "sigma_closed_form",
    "densities_rho",
    "transition_pdf_x_rho",
    "transition_pdf_f",
    "densities_f",
    "map_reference_point",
    "calibrate",
]


class Family(str, Enum):
    F1P = "F1+"
    F1M = "F1-"
    F2P = "F2+"
    F2M = "F2-"
    F3P = "F3+"
    F3M = "F3-"
    F4P = "F4+"
    F4M = "F4-"
    F5 = "F5"
    GENERAL = "GENERAL"
    DRIFTLESS = "DRIFTLESS"


class CertificationError(ValueError):
    """The map is not (or cannot be shown to be) strictly monotone."""


_SINGLE = {Family.F1P, Family.F1M, Family.F2P, Family.F2M, Family.F4P, Family.F4M}


@dataclass(frozen=True)
class MapSpec:
    """Map parameters in the convention of the chosen family.

    * F1+/-, F2+/-: ``eps * c1 * phi^{+/-}_{rho+b} / (q phi^{-/+ or +/-}_rho)``
      with ``c1 = c > 0``, ``c2 = 0`` and the unused ``q`` equal to zero.
    * F3+/-: ``eps * (c1 phi^+ + c2 phi^-)_{rho+b} / (q phi^{-/+}_rho)``,
      ``c1, c2 > 0``.
    * F4+/-: ``eps * c1 * phi^{+/-}_{rho+b} / (q1 phi^+ + q2 phi^-)_rho``,
      ``q1, q2 > 0``, ``c1 = c > 0``.
    * F5: ``eps * (c1 phi^+ - c2 phi^-)_{rho+b} / (q1 phi^+ + q2 phi^-)_rho``
      with ``c1, c2 > 0`` and at most one of ``q1, q2`` zero.
    * GENERAL: the weights are used as given, ``eps`` is ignored.
    * DRIFTLESS: ``a = b = 0`` and the quotient
      ``(c1 phi^+ + c2 phi^-) / (q1 phi^+ + q2 phi^-)`` at ``rho``.
    """

    rho: float
    b: float
    a: float = 0.0
    q1: float = 0.0
    q2: float = 0.0
    c1: float = 0.0
    c2: float = 0.0
    family: Family = Family.GENERAL
    epsilon: int = 1

    def __post_init__(self):
        object.__setattr__(self, "family", Family(self.family))
        for name in ("rho", "b", "a", "q1", "q2", "c1", "c2"):
            v = float(getattr(self, name))
            if not math.isfinite(v):
                raise ValueError(f"{name} must be finite")
            object.__setattr__(self, name, v)
        if self.epsilon not in (1, -1):
            raise ValueError("epsilon must be +1 or -1")
        if not self.rho > 0:
            raise ValueError("rho must be positive")
        if not self.rho + self.b > 0:
            raise ValueError("rho + b must be positive")
        if self.b == 0 and self.a != 0:
            raise ValueError("b = 0 requires a = 0")
        if self.q1 < 0 or self.q2 < 0 or (self.q1 == 0 and self.q2 == 0):
            raise ValueError("q1, q2 must be non-negative and not both zero")
        f = self.family
        if f is Family.DRIFTLESS:
            if self.b != 0:
                raise ValueError("the driftless quotient needs a = b = 0")
            if self.q1 * self.c2 - self.q2 * self.c1 == 0:
                raise ValueError("driftless quotient needs q1 c2 - q2 c1 != 0")
            return
        if self.b == 0:
            raise ValueError("b = 0 is only available for the DRIFTLESS family")
        if f is Family.GENERAL:
            if self.c1 == 0 and self.c2 == 0:
                raise ValueError("c1, c2 must not both be zero")
            return
        need_q = {
            Family.F1P: (False, True), Family.F1M: (True, False),
            Family.F2P: (True, False), Family.F2M: (False, True),
            Family.F3P: (False, True), Family.F3M: (True, False),
            Family.F4P: (True, True), Family.F4M: (True, True),
        }
        if f in need_q:
            want = need_q[f]
            have = (self.q1 > 0, self.q2 > 0)
            if have != want:
                raise ValueError(f"{f.value} needs (q1 > 0, q2 > 0) = {want}")
        if f in _SINGLE:
            if not (self.c1 > 0 and self.c2 == 0):
                raise ValueError(f"{f.value} takes c = c1 > 0 and c2 = 0")
        else:
            if not (self.c1 > 0 and self.c2 > 0):
                raise ValueError(f"{f.value} needs c1, c2 > 0")

    # -- constructors ------------------------------------------------------
    @classmethod
    def f1(cls, branch: str, rho: float, b: float, c: float, a: float = 0.0, epsilon: int = 1, q: float = 1.0):
        fam = Family.F1P if und.branch_sign(branch) > 0 else Family.F1M
        q1, q2 = (0.0, q) if fam is Family.F1P else (q, 0.0)
        return cls(rho, b, a, q1, q2, c, 0.0, fam, epsilon)

    @classmethod
    def f2(cls, branch: str, rho: float, b: float, c: float, a: float = 0.0, epsilon: int = 1, q: float = 1.0):
        fam = Family.F2P if und.branch_sign(branch) > 0 else Family.F2M
        q1, q2 = (q, 0.0) if fam is Family.F2P else (0.0, q)
        return cls(rho, b, a, q1, q2, c, 0.0, fam, epsilon)

    @classmethod
    def f3(cls, branch: str, rho: float, b: float, c1: float, c2: float, a: float = 0.0, epsilon: int = 1,
           q: float = 1.0):
        fam = Family.F3P if und.branch_sign(branch) > 0 else Family.F3M
        q1, q2 = (0.0, q) if fam is Family.F3P else (q, 0.0)
        return cls(rho, b, a, q1, q2, c1, c2, fam, epsilon)

    @classmethod
    def f4(cls, branch: str, rho: float, b: float, q1: float, q2: float, a: float = 0.0, epsilon: int = 1,
           c: float = 1.0):
        fam = Family.F4P if und.branch_sign(branch) > 0 else Family.F4M
        return cls(rho, b, a, q1, q2, c, 0.0, fam, epsilon)

    @classmethod
    def f5(cls, rho: float, b: float, c1: float, c2: float, q1: float, q2: float, a: float = 0.0,
           epsilon: int = 1):
        return cls(rho, b, a, q1, q2, c1, c2, Family.F5, epsilon)

    @classmethod
    def driftless(cls, rho: float, c1: float, c2: float, q1: float, q2: float):
        return cls(rho, 0.0, 0.0, q1, q2, c1, c2, Family.DRIFTLESS, 1)

    # -- derived -----------------------------------------------------------
    @property
    def rho_b(self) -> float:
        return self.rho + self.b

    @property
    def offset(self) -> float:
        """The constant ``-a/b`` (zero in the driftless case)."""
        return -self.a / self.b + 0.0 if self.b != 0 else 0.0

    def weights(self) -> tuple[float, float, float, float]:
        """``(c1, c2, q1, q2)`` of the general form ``v_hat / u_hat``."""
        f, e = self.family, float(self.epsilon)
        if f in (Family.GENERAL, Family.DRIFTLESS):
            return self.c1, self.c2, self.q1, self.q2
        if f in (Family.F1P, Family.F2P, Family.F4P):
            return e * self.c1, 0.0, self.q1, self.q2
        if f in (Family.F1M, Family.F2M, Family.F4M):
            return 0.0, e * self.c1, self.q1, self.q2
        if f is Family.F5:
            return e * self.c1, -e * self.c2, self.q1, self.q2
        return e * self.c1, e * self.c2, self.q1, self.q2

    def with_scale(self, factor: float) -> "MapSpec":
        """Numerator weights multiplied by ``factor > 0``."""
        return dataclasses.replace(self, c1=self.c1 * factor, c2=self.c2 * factor)

    def to_dict(self) -> dict:
        d = dataclasses.asdict(self)
        d["family"] = self.family.value
        return d


@dataclass(frozen=True)
class Certificate:
    ok: bool
    sign: int
    rule: str
    scan_ok: bool | None = None


@dataclass(frozen=True)
class FDiffusion:
    model: UnderlyingModel
    spec: MapSpec
    map_sign: int
    state_space_f: tuple[float, float]
    endpoint_f: tuple[float, float]
    certificate: Certificate
    classification: object | None = None

    @property
    def kind(self) -> Kind:
        return self.model.kind


# ----------------------------------------------------------------------------
# Building blocks
# ----------------------------------------------------------------------------

def _combo(model, s, w_plus, w_minus, xa, k) -> LogValue:
    """k-th derivative of ``w_plus phi^+_s + w_minus phi^-_s``."""
    out = LogValue(np.zeros_like(xa), np.full_like(xa, -np.inf))
    for w, br in ((w_plus, 1), (w_minus, -1)):
        if w != 0:
            sg, la = und._phi_parts(model, s, br, xa, k)
            out = out + LogValue(np.sign(w) * sg * np.ones_like(xa), la + math.log(abs(w)))
    return out


def _parts(fd):
    if isinstance(fd, FDiffusion):
        return fd.model, fd.spec
    return fd


def _xa(model, x):
    return np.atleast_1d(und._x(model, x)).astype(float)


def _ret(lv: LogValue, x) -> LogValue:
    if np.ndim(x) == 0:
        return LogValue(float(lv.sign[0]), float(lv.log_abs[0]))
    shape = np.shape(x)
    return LogValue(np.reshape(lv.sign, shape), np.reshape(lv.log_abs, shape))


def u_hat_deriv(fd, x, order: int = 1) -> LogValue:
    model, spec = _parts(fd)
    _, _, q1, q2 = spec.weights()
    return _ret(_combo(model, spec.rho, q1, q2, _xa(model, x), order), x)


def v_hat_deriv(fd, x, order: int = 1) -> LogValue:
    model, spec = _parts(fd)
    c1, c2, _, _ = spec.weights()
    return _ret(_combo(model, spec.rho_b, c1, c2, _xa(model, x), order), x)


def u_hat(fd, x) -> LogValue:
    """Generating function ``q1 phi^+_rho + q2 phi^-_rho`` (positive)."""
    return u_hat_deriv(fd, x, 0)


def v_hat(fd, x) -> LogValue:
    """Numerator ``c1 phi^+_{rho+b} + c2 phi^-_{rho+b}`` (signed)."""
    return v_hat_deriv(fd, x, 0)


_FAST_W_RATIO = 1e-5


def _pairwise_w(model, spec, xa):
    c1, c2, q1, q2 = spec.weights()
    total = LogValue(np.zeros_like(xa), np.full_like(xa, -np.inf))
    lost = np.zeros(xa.shape, bool)
    for qw, bq in ((q1, "+"), (q2, "-")):
        for cw, bc in ((c1, "+"), (c2, "-")):
            w = qw * cw
            if w == 0:
                continue
            with warnings.catch_warnings():
                warnings.simplefilter("ignore", und.PrecisionLossWarning)
                cw_, fl = und.cross_wronskian(model, spec.rho, spec.rho_b, (bq, bc), xa, return_flag=True)
            lost |= np.asarray(fl, bool)
            total = total + LogValue(np.sign(w) * cw_.sign, cw_.log_abs + math.log(abs(w)))
    return total, lost


def wronskian_w(fd, x, return_flag: bool = False):
    """``W = u_hat v_hat' - u_hat' v_hat`` from the four cross Wronskians.

    Where ``u_hat v_hat'`` and ``u_hat' v_hat`` do not nearly cancel the
    product form is used directly; elsewhere, and always when ``b = 0``, the
    weighted sum of cross Wronskians is evaluated.
    """
    model, spec = _parts(fd)
    c1, c2, q1, q2 = spec.weights()
    xa = _xa(model, x)
    sign = np.zeros(xa.shape)
    la = np.full(xa.shape, -np.inf)
    bad = np.ones(xa.shape, bool)
    if spec.b != 0:
        u0, u1 = (_combo(model, spec.rho, q1, q2, xa, k) for k in (0, 1))
        v0, v1 = (_combo(model, spec.rho_b, c1, c2, xa, k) for k in (0, 1))
        direct, ratio = (u0 * v1).add(-(u1 * v0), with_cancellation=True)
        bad = ~(np.asarray(ratio) >= _FAST_W_RATIO)
        sign[:] = np.broadcast_to(direct.sign, xa.shape)
        la[:] = np.broadcast_to(direct.log_abs, xa.shape)
    lost = np.zeros(xa.shape, bool)
    if np.any(bad):
        full, lost_full = _pairwise_w(model, spec, xa[bad])
        sign[bad], la[bad], lost[bad] = full.sign, full.log_abs, lost_full
    out = _ret(LogValue(sign, la), x)
    if return_flag:
        return out, (bool(lost[0]) if np.ndim(x) == 0 else lost.reshape(np.shape(x)))
    return out


def map_f(fd, x):
    """``F(x) = -a/b + v_hat(x) / u_hat(x)``."""
    model, spec = _parts(fd)
    r = (v_hat(fd, x) / u_hat(fd, x)).value()
    return spec.offset + r


def map_derivs(fd, x):
    """``(F, F', F'')`` from the special-function recurrences."""
    model, spec = _parts(fd)
    u0, u1, u2 = (u_hat_deriv(fd, x, k) for k in range(3))
    v0, v2 = v_hat_deriv(fd, x, 0), v_hat_deriv(fd, x, 2)
    w = wronskian_w(fd, x)
    dw = u0 * v2 - u2 * v0
    f = spec.offset + (v0 / u0).value()
    f1 = (w / (u0 * u0)).value()
    f2 = (dw / (u0 * u0)).value() - 2.0 * (w * u1 / (u0 * u0 * u0)).value()
    return f, f1, f2


# ----------------------------------------------------------------------------
# Endpoints and monotonicity
# ----------------------------------------------------------------------------

def state_grid(model: UnderlyingModel, n: int = 200) -> np.ndarray:
    """A grid spanning the state space far into both endpoint regions."""
    if model.kind is Kind.OU:
        half = 25.0 / math.sqrt(model.kappa)
        return model.shift + np.linspace(-half, half, n)
    hi = 1e4 if model.kind is Kind.SQB else max(1e3, 300.0 / model.kappa)
    return np.geomspace(1e-8, hi, n)


def _endpoint_w_term(model, spec, ep) -> asy.LeadingTerm | None:
    c1, c2, q1, q2 = spec.weights()
    terms, weights = [], []
    for qw, bq in ((q1, "+"), (q2, "-")):
        for cw, bc in ((c1, "+"), (c2, "-")):
            if qw * cw != 0:
                terms.append(asy.asymptotic_wronskian(model, spec.rho, spec.rho_b, (bq, bc), ep))
                weights.append(qw * cw)
    return asy.dominant_sum(terms, weights)


def _endpoint_w_sign(model, spec, ep) -> int:
    t = _endpoint_w_term(model, spec, ep)
    if t is not None:
        return int(t.coef_sign)
    # dominant terms cancel: fall back to the computed W at the extreme abscissa
    x = asy.endpoint_grid(model, ep)[-1]
    return int(wronskian_w((model, spec), x).sign)


def _ratio_term(model, spec, ep) -> asy.LeadingTerm | None:
    c1, c2, q1, q2 = spec.weights()
    num = asy.dominant_sum(
        [asy.asymptotic_phi(model, spec.rho_b, "+", ep), asy.asymptotic_phi(model, spec.rho_b, "-", ep)], [c1, c2])
    den = asy.dominant_sum(
        [asy.asymptotic_phi(model, spec.rho, "+", ep), asy.asymptotic_phi(model, spec.rho, "-", ep)], [q1, q2])
    if num is None or den is None:
        return None
    return asy.term_product(num, den, -1)


def endpoint_values(model: UnderlyingModel, spec: MapSpec) -> tuple[float, float]:
    """``(F(l+), F(r-))`` read off the endpoint leading terms."""
    out = []
    for ep in (asy.Endpoint.L, asy.Endpoint.R):
        t = _ratio_term(model, spec, ep)
        if t is None:
            out.append(float(map_f((model, spec), asy.endpoint_grid(model, ep)[-1])))
            continue
        sign, lim = t.limit()
        if lim is asy.Limit.ZERO:
            out.append(spec.offset)
        elif lim is asy.Limit.INFINITE:
            out.append(sign * math.inf)
        else:
            out.append(spec.offset + sign * math.exp(t.coef_log))
    return out[0], out[1]


def _scan(model, spec, sign, n) -> bool:
    w = wronskian_w((model, spec), state_grid(model, n))
    return bool(np.all(np.asarray(w.sign) == sign))


def certify_monotone(model: UnderlyingModel, spec: MapSpec, scan_points: int = 200) -> Certificate:
    """Closed-form monotonicity rules plus a sign scan of ``W``.

    Returns ``ok = False`` with the violated rule named rather than raising.
    """
    f, e, b = spec.family, spec.epsilon, spec.b
    c1, c2, q1, q2 = spec.weights()
    if f is Family.DRIFTLESS:
        d = c1 * q2 - c2 * q1
        sign, rule = int(np.sign(d)), "driftless: W/s = (c1 q2 - c2 q1) w_rho is constant"
    elif f in (Family.F1P, Family.F1M):
        sign, rule = (e if f is Family.F1P else -e), "family rule: F1 monotone for all parameters"
    elif f in (Family.F2P, Family.F2M):
        sign = (e if f is Family.F2P else -e) * int(np.sign(b))
        rule = "family rule: F2 monotone for all parameters"
    elif f in (Family.F3P, Family.F3M):
        if b >= 0:
            return Certificate(False, 0, "family rule: F3 requires b < 0")
        sign, rule = (e if f is Family.F3P else -e), "family rule: F3 with b < 0"
    elif f in (Family.F4P, Family.F4M):
        if b <= 0:
            return Certificate(False, 0, "family rule: F4 requires b > 0")
        sign, rule = (e if f is Family.F4P else -e), "family rule: F4 with b > 0"
    elif f is Family.F5:
        if b <= 0:
            return Certificate(False, 0, "family rule: F5 is monotone if and only if b > 0")
        sign, rule = e, "family rule: F5 with b > 0"
    else:
        sl = _endpoint_w_sign(model, spec, asy.Endpoint.L)
        sr = _endpoint_w_sign(model, spec, asy.Endpoint.R)
        if c1 * c2 >= 0:
            if sl != sr or sl == 0:
                return Certificate(False, 0, "endpoint-sign rule: W changes sign between the endpoints")
            sign, rule = sl, "endpoint-sign rule: c1, c2 of one sign and equal endpoint signs of W"
        elif b > 0:
            sign, rule = int(np.sign(c1)), "opposite-sign rule, b > 0: c1, c2 of opposite signs and b > 0"
        else:
            if not (sl == sr == int(np.sign(c1))):
                return Certificate(False, 0, "opposite-sign rule, b < 0: b < 0 needs sign W(l+) = sign W(r-) = sign c1")
            sign, rule = sl, "opposite-sign rule, b < 0: b < 0 with endpoint signs equal to sign c1"
    scan_ok = _scan(model, spec, sign, scan_points) if scan_points else None
    if scan_ok is False:
        return Certificate(False, sign, rule + "; contradicted by the sign scan of W", False)
    return Certificate(True, sign, rule, scan_ok)


def build(model: UnderlyingModel, spec: MapSpec, classify: bool = True, scan_points: int = 200) -> FDiffusion:
    """Certify the map and assemble the F-diffusion."""
    cert = certify_monotone(model, spec, scan_points)
    if not cert.ok:
        raise CertificationError(cert.rule)
    fl, fr = endpoint_values(model, spec)
    fd = FDiffusion(model, spec, cert.sign, (min(fl, fr), max(fl, fr)), (fl, fr), cert)
    if classify:
        from .classify import classify_report

        fd = dataclasses.replace(fd, classification=classify_report(fd))
    return fd


# ----------------------------------------------------------------------------
# Inverse map and diffusion coefficient
# ----------------------------------------------------------------------------

def _to_x(model, u):
    return math.exp(u) if model.kind is not Kind.OU else u


def _to_u(model, x):
    return math.log(x) if model.kind is not Kind.OU else x


def _inverse_scalar(fd: FDiffusion, F: float, f_tol: float) -> float:
    model, sgn = fd.model, fd.map_sign
    lo_f, hi_f = fd.state_space_f
    if not lo_f < F < hi_f:
        raise DomainError(f"F = {F} outside the state space {fd.state_space_f}")
    ou = model.kind is Kind.OU

    def g(u):
        return sgn * (map_f(fd, _to_x(model, u)) - F)

    seed = model.shift if ou else 0.0
    limit = 1e6 if ou else 700.0
    lo, hi = seed - 1.0, seed + 1.0
    glo, ghi = g(lo), g(hi)
    step = 1.0
    while glo > 0 and lo > -limit:
        step *= 2.0
        lo = max(lo - step, -limit)
        glo = g(lo)
    step = 1.0
    while ghi < 0 and hi < limit:
        step *= 2.0
        hi = min(hi + step, limit)
        ghi = g(hi)
    if not (glo <= 0 <= ghi):
        raise BracketError(f"could not bracket X({F})")
    u = optimize.brentq(g, lo, hi, xtol=1e-15, rtol=4 * np.finfo(float).eps, maxiter=400)
    # Newton polish in x using F' = W / u_hat^2
    x = _to_x(model, u)
    for _ in range(3):
        f, d1, _ = map_derivs(fd, x)
        if not (math.isfinite(d1) and d1 != 0):
            break
        dx = (f - F) / d1
        xn = x - dx
        if not model.contains(xn):
            break
        x = xn
        if abs(dx) <= 1e-16 * max(1.0, abs(x)):
            break
    return float(x)


@lru_cache(maxsize=64)
def _inverse_grid(model: UnderlyingModel, spec: MapSpec, sgn: int) -> tuple[np.ndarray, np.ndarray]:
    """``u = log x`` (or ``x`` for OU) on a grid with ``sgn * F`` there, increasing."""
    xs = state_grid(model, 400)
    with np.errstate(over="ignore", invalid="ignore"):
        g = sgn * np.asarray(map_f((model, spec), xs), dtype=float)
    u = xs if model.kind is Kind.OU else np.log(xs)
    keep = np.isfinite(g)
    return u[keep], np.maximum.accumulate(g[keep])


def _polish(fd, x, F):
    model = fd.model
    for _ in range(3):
        f, d1, _ = map_derivs(fd, x)
        dx = np.where(np.isfinite(d1) & (d1 != 0), (f - F) / np.where(d1 != 0, d1, 1.0), 0.0)
        xn = x - dx
        x = np.where(model.contains(xn) & np.isfinite(xn), xn, x)
        if np.all(np.abs(dx) <= 1e-16 * np.maximum(1.0, np.abs(x))):
            break
    return x


def _inverse_many(fd: FDiffusion, F: np.ndarray) -> np.ndarray:
    """Vectorised inverse: grid bracket, then Illinois false position in u."""
    model, sgn = fd.model, fd.map_sign
    ou = model.kind is Kind.OU
    ug, gg = _inverse_grid(model, fd.spec, sgn)
    tgt = sgn * F
    idx = np.searchsorted(gg, tgt)
    inside = (idx > 0) & (idx < gg.size)
    out = np.full(F.shape, np.nan)
    if np.any(~inside):
        out[~inside] = [_inverse_scalar(fd, float(v), 0.0) for v in F[~inside]]
    if not np.any(inside):
        return out
    i = idx[inside]
    t = tgt[inside]
    lo, hi = ug[i - 1].copy(), ug[i].copy()
    glo, ghi = gg[i - 1] - t, gg[i] - t
    to_x = (lambda v: v) if ou else np.exp
    u = lo.copy()
    side = np.zeros(t.shape, int)
    for _ in range(100):
        width = hi - lo
        active = width > 4e-16 * np.maximum(1.0, np.abs(lo))
        if not np.any(active):
            break
        den = ghi - glo
        frac = np.where(den > 0, -glo / np.where(den > 0, den, 1.0), 0.5)
        frac = np.clip(frac, 0.0, 1.0)
        cand = lo + frac * width
        cand = np.where((cand <= lo) | (cand >= hi), 0.5 * (lo + hi), cand)
        with np.errstate(over="ignore", invalid="ignore"):
            gc = sgn * np.asarray(map_f(fd, to_x(cand[active])), dtype=float) - t[active]
        g = np.zeros(t.shape)
        g[active] = gc
        u = np.where(active, cand, u)
        exact = active & (g == 0)
        up = active & (g > 0)
        dn = active & (g < 0)
        # Illinois: halve the stale endpoint value when the same side moves twice
        glo = np.where(up & (side == 1), 0.5 * glo, glo)
        ghi = np.where(dn & (side == -1), 0.5 * ghi, ghi)
        hi, ghi = np.where(up, cand, hi), np.where(up, g, ghi)
        lo, glo = np.where(dn, cand, lo), np.where(dn, g, glo)
        side = np.where(up, 1, np.where(dn, -1, side))
        lo, hi = np.where(exact, cand, lo), np.where(exact, cand, hi)
        bad = active & ~np.isfinite(g)
        if np.any(bad):
            mid = 0.5 * (lo + hi)
            lo = np.where(bad, mid, lo)
    out[inside] = _polish(fd, to_x(u), F[inside])
    return out


def inverse_map(fd: FDiffusion, F, f_tol: float = 1e-12):
    """``X(F)``, the inverse of the certified monotone map."""
    Fa = np.asarray(F, dtype=float)
    lo_f, hi_f = fd.state_space_f
    flat = Fa.reshape(-1)
    bad = ~((flat > lo_f) & (flat < hi_f))
    if np.any(bad):
        raise DomainError(f"F = {flat[bad][0]} outside the state space {fd.state_space_f}")
    if flat.size < 4:
        out = np.array([_inverse_scalar(fd, float(v), f_tol) for v in flat])
    else:
        out = _inverse_many(fd, flat)
    return float(out[0]) if Fa.ndim == 0 else out.reshape(Fa.shape)


def sigma_x(fd, x):
    """``nu(x) |W(x)| / u_hat(x)^2``, i.e. ``sigma(F(x))``."""
    model, _ = _parts(fd)
    u0 = u_hat(fd, x)
    w = wronskian_w(fd, x)
    nu = und.diffusion(model, x)
    return nu * np.exp(np.asarray(w.log_abs) - 2.0 * np.asarray(u0.log_abs))


def sigma_f(fd: FDiffusion, F):
    """Diffusion coefficient of the F-diffusion at ``F``."""
    return sigma_x(fd, inverse_map(fd, F))


def sigma_closed_form(fd, x):
    """Closed-form sigma for the dual subfamilies ``F1+`` (i) and ``F1-`` (ii).

    Written directly in terms of I/K, M/U and D for ``eps = +1``; used as an
    independent check of :func:`sigma_x`.
    """
    model, spec = _parts(fd)
    if spec.family not in (Family.F1P, Family.F1M) or spec.epsilon != 1:
        raise ValueError("closed forms exist for F1+/- with eps = +1")
    q = spec.q2 if spec.family is Family.F1P else spec.q1
    c = spec.c1 / q
    rho, rb = spec.rho, spec.rho_b
    xa = np.asarray(und._x(model, x), dtype=float)
    first = spec.family is Family.F1P
    if model.kind is Kind.SQB:
        mu, nu0 = model.mu, model.nu0
        z = 2.0 / nu0 * np.sqrt(2.0 * rho * xa)
        zb = 2.0 / nu0 * np.sqrt(2.0 * rb * xa)
        if first:
            t1 = math.sqrt(rho) * np.exp(sf.log_bessel_i(mu, zb) + sf.log_bessel_k(mu + 1, z) - 2 * sf.log_bessel_k(mu, z))
            t2 = math.sqrt(rb) * np.exp(sf.log_bessel_i(mu + 1, zb) - sf.log_bessel_k(mu, z))
        else:
            t1 = math.sqrt(rho) * np.exp(sf.log_bessel_k(mu, zb) + sf.log_bessel_i(mu + 1, z) - 2 * sf.log_bessel_i(mu, z))
            t2 = math.sqrt(rb) * np.exp(sf.log_bessel_k(mu + 1, zb) - sf.log_bessel_i(mu, z))
        return c * math.sqrt(2.0) * (t1 + t2)
    if model.kind is Kind.CIR:
        mu, kap, nu0 = model.mu, model.kappa, model.nu0
        v, vb = rho / model.lambda1, rb / model.lambda1
        z = kap * xa
        lm, lu = sf.log_kummer_m, sf.log_kummer_u
        if first:
            t1 = v * np.exp(lm(vb, mu + 1, z) + lu(v + 1, mu + 2, z) - 2 * lu(v, mu + 1, z))
            t2 = vb / (mu + 1) * np.exp(lm(vb + 1, mu + 2, z) - lu(v, mu + 1, z))
        else:
            t1 = v / (mu + 1) * np.exp(lu(vb, mu + 1, z) + lm(v + 1, mu + 2, z) - 2 * lm(v, mu + 1, z))
            t2 = vb * np.exp(lu(vb + 1, mu + 2, z) - lm(v, mu + 1, z))
        return c * kap * nu0 * np.sqrt(xa) * (t1 + t2)
    kap, l1 = model.kappa, model.lambda1
    v, vb = rho / l1, rb / l1
    z = math.sqrt(kap) * (xa - model.shift)
    ld = sf.log_pcf_d
    sgn = 1.0 if first else -1.0  # (ii) is (i) with z -> -z
    t1 = rb * np.exp(ld(-(vb + 1), -sgn * z) - ld(-v, sgn * z))
    t2 = rho * np.exp(ld(-vb, -sgn * z) + ld(-(v + 1), sgn * z) - 2 * ld(-v, sgn * z))
    return c * math.sqrt(2.0 / l1) * (t1 + t2)


# ----------------------------------------------------------------------------
# Densities
# ----------------------------------------------------------------------------

def densities_rho(fd, x) -> tuple[LogValue, LogValue]:
    """Speed and scale densities of ``X^(rho)``: ``u^2 m`` and ``s / u^2``."""
    model, _ = _parts(fd)
    u0 = u_hat(fd, x)
    m = und.speed_density(model, x)
    s = und.scale_density(model, x)
    return m * u0 * u0, s / (u0 * u0)


def transition_pdf_x_rho(fd, t: float, x0: float, x, u_x0: LogValue | None = None) -> LogValue:
    """``exp(-rho t) u_hat(x) / u_hat(x0) p_X(t; x0, x)``.

    ``u_x0`` may pass a precomputed ``u_hat(x0)`` for repeated calls.
    """
    model, spec = _parts(fd)
    p = und.transition_pdf_x(model, t, x0, x)
    r = u_hat(fd, x) / (u_hat(fd, x0) if u_x0 is None else u_x0)
    return p * r * LogValue(1.0, -spec.rho * t)


def transition_pdf_f(fd: FDiffusion, t: float, F0, F) -> LogValue:
    """Transition density of the F-diffusion, ``p_rho(t; X(F0), X(F)) / |F'(X(F))|``.

    ``F0`` and ``F`` broadcast against each other.
    """
    x0 = inverse_map(fd, F0)
    x = inverse_map(fd, F)
    p = transition_pdf_x_rho(fd, t, x0, x)
    w = wronskian_w(fd, x)
    u0 = u_hat(fd, x)
    la = np.asarray(p.log_abs) - np.asarray(w.log_abs) + 2.0 * np.asarray(u0.log_abs)
    return LogValue(1.0, float(la)) if np.ndim(la) == 0 else LogValue(np.ones_like(la), la)


def densities_f(fd: FDiffusion, F) -> tuple[LogValue, LogValue]:
    """``m_F = m_rho |X'|`` and ``s_F = s_rho |X'|`` with ``|X'| = nu / sigma``."""
    x = inverse_map(fd, F)
    m_r, s_r = densities_rho(fd, x)
    u0 = u_hat(fd, x)
    w = wronskian_w(fd, x)
    l_xp = 2.0 * np.asarray(u0.log_abs) - np.asarray(w.log_abs)  # |X'(F)| = u^2 / |W|
    return (LogValue(m_r.sign, np.asarray(m_r.log_abs) + l_xp), LogValue(s_r.sign, np.asarray(s_r.log_abs) + l_xp))


def map_reference_point(model: UnderlyingModel) -> float:
    """Interior point used as the lower limit in the W/s integral identity."""
    return model.shift if model.kind is Kind.OU else 1.0


def wronskian_integral(fd, x, x0: float | None = None) -> float:
    """``b * int_{x0}^{x} m u_hat v_hat dy`` by adaptive quadrature."""
    model, spec = _parts(fd)
    x0 = map_reference_point(model) if x0 is None else x0

    def f(y):
        return (und.speed_density(model, y) * u_hat(fd, y) * v_hat(fd, y)).value()

    val, _ = _integrate.quad(f, x0, x, epsabs=0.0, epsrel=1e-12, limit=400)
    return spec.b * val


# ----------------------------------------------------------------------------
# Calibration
# ----------------------------------------------------------------------------

def calibrate(model: UnderlyingModel, spec: MapSpec, F_star: float, target: float, param: str = "c",
              bounds: tuple[float, float] = (-25.0, 25.0), n_scan: int = 101):
    """Solve one free parameter so that ``sigma(F*) / F* = target``.

    ``param = "c"`` scales the numerator weights; ``param = "nu0"`` scales
    the underlying diffusion.  The log of the scale factor is scanned on
    ``bounds`` for a sign change, then refined with Brent's method.
    Returns ``(fd, residual)``.
    """

    def make(logk):
        k = math.exp(logk)
        if param == "c":
            return model, spec.with_scale(k)
        if param == "nu0":
            return dataclasses.replace(model, nu0=model.nu0 * k), spec
        raise ValueError("param must be 'c' or 'nu0'")

    def resid(logk):
        m, s = make(logk)
        fd = build(m, s, classify=False, scan_points=0)
        lo, hi = fd.state_space_f
        if not lo < F_star < hi:
            return math.nan
        return float(sigma_f(fd, F_star)) / F_star - target

    grid = np.linspace(bounds[0], bounds[1], n_scan)
    vals = np.array([resid(g) for g in grid])
    ok = np.isfinite(vals)
    for i in range(n_scan - 1):
        if ok[i] and ok[i + 1] and vals[i] * vals[i + 1] <= 0:
            root = optimize.brentq(resid, grid[i], grid[i + 1], xtol=1e-14, rtol=1e-14, maxiter=200)
            m, s = make(root)
            fd = build(m, s)
            return fd, abs(float(sigma_f(fd, F_star)) / F_star - target)
    raise BracketError(f"sigma_loc({F_star}) = {target} not attained for {param} in exp({bounds})")
