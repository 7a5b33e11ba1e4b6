"""The three solvable underlying diffusions.

* SQB: ``dX = lambda0 dt + nu0 sqrt(X) dW`` on ``(0, inf)``
* CIR: ``dX = (lambda0 - lambda1 X) dt + nu0 sqrt(X) dW`` on ``(0, inf)``
* OU:  ``dX = (lambda0 - lambda1 X) dt + nu0 dW`` on the real line

For each model this module provides the coefficients, scale and speed
densities, the increasing/decreasing fundamental solutions ``phi^{+/-}_s`` of
``G phi = s phi`` with derivatives of any order, Wronskians, transition
densities and the Green's function.  Everything overflow-prone is returned
as a :class:`LogValue`.

Notation: ``mu = 2 lambda0 / nu0^2 - 1``, ``kappa = 2 lambda1 / nu0^2`` and
``upsilon = s / lambda1``.  The OU formulas are written for ``lambda0 = 0``;
a nonzero ``lambda0`` is handled by the shift ``x -> x - lambda0/lambda1``.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass
from enum import Enum

import numpy as np
from scipy import integrate as _integrate
from scipy import special as sc

from . import specfun as sf
from .logvalue import LogValue
from .specfun import DomainError

__all__ = [
    "Kind",
    "UnderlyingModel",
    "SpectralParam",
    "PrecisionLossWarning",
    "branch_sign",
    "drift",
    "diffusion",
    "scale_density",
    "speed_density",
    "phi",
    "phi_deriv",
    "wronskian_const",
    "cross_wronskian",
    "transition_pdf_x",
    "greens_function",
]


class PrecisionLossWarning(RuntimeWarning):
    """A difference of nearly equal log-space products lost most digits."""


class Kind(str, Enum):
    SQB = "SQB"
    CIR = "CIR"
    OU = "OU"


@dataclass(frozen=True)
class UnderlyingModel:
    """Validated parameters of an underlying diffusion."""

    kind: Kind
    nu0: float
    lambda0: float = 0.0
    lambda1: float | None = None

    def __post_init__(self):
        object.__setattr__(self, "kind", Kind(self.kind))
        if not (self.nu0 > 0 and math.isfinite(self.nu0)):
            raise ValueError("nu0 must be positive")
        if self.kind is Kind.SQB:
            if self.lambda1 not in (None, 0, 0.0):
                raise ValueError("SQB has no mean reversion (lambda1)")
            object.__setattr__(self, "lambda1", None)
        elif not (self.lambda1 is not None and self.lambda1 > 0):
            raise ValueError("lambda1 must be positive for CIR and OU")
        if self.kind is not Kind.OU:
            if not self.mu > 0:
                raise ValueError("need lambda0 > nu0^2/2 (mu > 0) for SQB and CIR")

    @classmethod
    def sqb(cls, nu0: float, lambda0: float) -> "UnderlyingModel":
        return cls(Kind.SQB, nu0, lambda0)

    @classmethod
    def cir(cls, nu0: float, lambda0: float, lambda1: float) -> "UnderlyingModel":
        return cls(Kind.CIR, nu0, lambda0, lambda1)

    @classmethod
    def ou(cls, nu0: float, lambda1: float, lambda0: float = 0.0) -> "UnderlyingModel":
        return cls(Kind.OU, nu0, lambda0, lambda1)

    @property
    def mu(self) -> float:
        return 2.0 * self.lambda0 / self.nu0**2 - 1.0

    @property
    def kappa(self) -> float | None:
        return None if self.lambda1 is None else 2.0 * self.lambda1 / self.nu0**2

    @property
    def shift(self) -> float:
        """Location of the OU mean level; zero for the other models."""
        return self.lambda0 / self.lambda1 if self.kind is Kind.OU else 0.0

    @property
    def state_space(self) -> tuple[float, float]:
        return (-math.inf, math.inf) if self.kind is Kind.OU else (0.0, math.inf)

    @property
    def l(self) -> float:
        return self.state_space[0]

    @property
    def r(self) -> float:
        return self.state_space[1]

    def upsilon(self, s: float) -> float:
        if self.lambda1 is None:
            raise ValueError("upsilon is defined for CIR and OU only")
        return float(s) / self.lambda1

    def contains(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        lo, hi = self.state_space
        return (x > lo) & (x < hi)

    def to_dict(self) -> dict:
        d = {"kind": self.kind.value, "nu0": self.nu0, "lambda0": self.lambda0}
        if self.lambda1 is not None:
            d["lambda1"] = self.lambda1
        return d


@dataclass(frozen=True)
class SpectralParam:
    """The Laplace-type parameter ``s > 0`` at which ``phi^{+/-}_s`` is taken."""

    s: float

    def __post_init__(self):
        if not self.s > 0:
            raise ValueError("s must be positive")

    def upsilon(self, model: UnderlyingModel) -> float:
        return model.upsilon(self.s)


def _s(sp) -> float:
    s = sp.s if isinstance(sp, SpectralParam) else float(sp)
    if not s > 0:
        raise ValueError("s must be positive")
    return s


def branch_sign(branch) -> int:
    """Normalise ``'+'``, ``'plus'``, ``+1`` (and the minus analogues)."""
    if branch in ("+", "plus", 1, +1.0):
        return 1
    if branch in ("-", "minus", -1, -1.0):
        return -1
    raise ValueError(f"unknown branch {branch!r}")


def _x(model: UnderlyingModel, x) -> np.ndarray:
    xa = np.asarray(x, dtype=float)
    if not np.all(model.contains(xa)):
        raise DomainError(f"x outside the state space {model.state_space}")
    return xa


def _out(lv: LogValue, x) -> LogValue:
    if np.ndim(x) == 0:
        return LogValue(float(np.asarray(lv.sign).reshape(-1)[0]), float(np.asarray(lv.log_abs).reshape(-1)[0]))
    return lv


# ----------------------------------------------------------------------------
# Coefficients and densities
# ----------------------------------------------------------------------------

def drift(model: UnderlyingModel, x):
    xa = _x(model, x)
    if model.kind is Kind.SQB:
        out = np.full_like(xa, model.lambda0)
    else:
        out = model.lambda0 - model.lambda1 * xa
    return float(out) if np.ndim(x) == 0 else out


def diffusion(model: UnderlyingModel, x):
    xa = _x(model, x)
    out = np.full_like(xa, model.nu0) if model.kind is Kind.OU else model.nu0 * np.sqrt(xa)
    return float(out) if np.ndim(x) == 0 else out


def _log_scale(model, xa):
    if model.kind is Kind.OU:
        y = xa - model.shift
        return 0.5 * model.kappa * y * y
    la = -(model.mu + 1.0) * np.log(xa)
    if model.kind is Kind.CIR:
        la = la + model.kappa * xa
    return la


def scale_density(model: UnderlyingModel, x) -> LogValue:
    """Scale density, normalised as in the closed forms (``s = x^{-mu-1}`` etc.)."""
    xa = _x(model, x)
    return _out(LogValue(1.0, _log_scale(model, xa)), x)


def speed_density(model: UnderlyingModel, x) -> LogValue:
    """Speed density ``m = 2 / (nu^2 s)``."""
    xa = _x(model, x)
    la = math.log(2.0 / model.nu0**2) - _log_scale(model, xa)
    if model.kind is not Kind.OU:
        la = la - np.log(xa)  # nu^2 = nu0^2 x
    return _out(LogValue(1.0, la), x)


# ----------------------------------------------------------------------------
# Fundamental solutions
# ----------------------------------------------------------------------------

def _log_poch(a, k):
    return sc.gammaln(a + k) - sc.gammaln(a)


def _phi_parts(model: UnderlyingModel, s: float, sign: int, xa: np.ndarray, k: int):
    """(sign, log|.|) of the k-th x-derivative of phi^{sign}_s."""
    if k < 0:
        raise ValueError("derivative order must be non-negative")
    if model.kind is Kind.SQB:
        c = math.sqrt(2.0 * s) / model.nu0
        z = 2.0 * c * np.sqrt(xa)
        order = model.mu + k
        lb = sf.log_bessel_i(order, z) if sign > 0 else sf.log_bessel_k(order, z)
        la = k * math.log(c) - 0.5 * order * np.log(xa) + lb
        sg = 1.0 if sign > 0 else (-1.0) ** k
    elif model.kind is Kind.CIR:
        kap, v, b = model.kappa, s / model.lambda1, model.mu + 1.0
        z = kap * xa
        if sign > 0:
            la = k * math.log(kap) + _log_poch(v, k) - _log_poch(b, k) + sf.log_kummer_m(v + k, b + k, z)
            sg = 1.0
        else:
            la = k * math.log(kap) + _log_poch(v, k) + sf.log_kummer_u(v + k, b + k, z)
            sg = (-1.0) ** k
    else:
        kap, v = model.kappa, s / model.lambda1
        y = xa - model.shift
        z = math.sqrt(kap) * y
        arg = z if sign < 0 else -z
        la = 0.5 * k * math.log(kap) + _log_poch(v, k) + 0.25 * kap * y * y + sf.log_pcf_d(-(v + k), arg)
        sg = 1.0 if sign > 0 else (-1.0) ** k
    return sg, la


def phi(model: UnderlyingModel, sp, branch, x) -> LogValue:
    """Fundamental solution ``phi^{+/-}_s(x)`` (increasing / decreasing)."""
    xa = _x(model, x)
    sg, la = _phi_parts(model, _s(sp), branch_sign(branch), xa, 0)
    return _out(LogValue(sg, la), x)


def phi_deriv(model: UnderlyingModel, sp, branch, x, order: int = 1) -> LogValue:
    """``order``-th derivative in ``x`` from the special-function recurrences."""
    xa = _x(model, x)
    sg, la = _phi_parts(model, _s(sp), branch_sign(branch), xa, int(order))
    return _out(LogValue(sg, la), x)


def wronskian_const(model: UnderlyingModel, sp) -> float:
    """``w_s`` in ``phi^- phi^+' - phi^+ phi^-' = w_s * scale_density``."""
    s = _s(sp)
    if model.kind is Kind.SQB:
        return 0.5
    v = s / model.lambda1
    if model.kind is Kind.CIR:
        return math.exp(-model.mu * math.log(model.kappa) + sc.gammaln(model.mu + 1.0) - sc.gammaln(v))
    return math.sqrt(2.0 * model.kappa * math.pi) * math.exp(-sc.gammaln(v))


def log_wronskian_const(model: UnderlyingModel, sp) -> float:
    s = _s(sp)
    if model.kind is Kind.SQB:
        return math.log(0.5)
    v = s / model.lambda1
    if model.kind is Kind.CIR:
        return -model.mu * math.log(model.kappa) + sc.gammaln(model.mu + 1.0) - sc.gammaln(v)
    return 0.5 * math.log(2.0 * model.kappa * math.pi) - sc.gammaln(v)


# ----------------------------------------------------------------------------
# Wronskians
# ----------------------------------------------------------------------------

CANCELLATION_LIMIT = 1e-12


def _same_branch_integral(model, s1, s2, sign, x) -> LogValue:
    """W/scale for two same-branch solutions via the Abel-type identity.

    ``(W[f, g] / scale)' = (s_g - s_f) * speed * f * g``; the boundary term
    vanishes at ``l`` for the increasing pair and at ``r`` for the
    decreasing pair, so no cancellation occurs.
    """
    log_space = model.kind is not Kind.OU

    def log_integrand(t):
        # integrand in the variable u with y = exp(u) (SQB/CIR) or y = u (OU)
        y = math.exp(t) if log_space else t
        a = _phi_parts(model, s1, sign, np.array([y]), 0)[1][0]
        b = _phi_parts(model, s2, sign, np.array([y]), 0)[1][0]
        lm = float(speed_density(model, y).log_abs)
        return a + b + lm + (t if log_space else 0.0)

    t0 = math.log(x) if log_space else x
    direction = -1.0 if sign > 0 else 1.0
    step = 0.5 if log_space else 0.5 / math.sqrt(model.kappa)
    # walk towards the endpoint until the integrand is negligible
    ref = log_integrand(t0)
    end = t0
    for _ in range(4000):
        nxt = end + direction * step
        if log_space and abs(nxt) > 700.0:
            break
        val = log_integrand(nxt)
        if not np.isfinite(val):
            break
        end = nxt
        ref = max(ref, val)
        if val < ref - 80.0:
            break

    def f(t):
        return math.exp(log_integrand(t) - ref)

    lo, hi = (end, t0) if sign > 0 else (t0, end)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", _integrate.IntegrationWarning)
        val, _ = _integrate.quad(f, lo, hi, epsabs=0.0, epsrel=1e-12, limit=400)
    coef = s2 - s1 if sign > 0 else s1 - s2
    return LogValue(np.sign(coef), math.log(abs(coef)) + ref + math.log(val)) if coef != 0 else LogValue(0.0, -np.inf)


def cross_wronskian(model: UnderlyingModel, sp1, sp2, branches, x, return_flag: bool = False):
    """``W[phi^{b1}_{s1}, phi^{b2}_{s2}](x) = f g' - g f'``.

    When the two products cancel to more than 12 digits, same-branch
    Wronskians are recomputed from their integral representation and the
    loss of precision is reported (flag and :class:`PrecisionLossWarning`).
    """
    b1, b2 = (branch_sign(b) for b in branches)
    s1, s2 = _s(sp1), _s(sp2)
    xa = _x(model, x)
    f = LogValue(*_phi_parts(model, s1, b1, xa, 0))
    df = LogValue(*_phi_parts(model, s1, b1, xa, 1))
    g = LogValue(*_phi_parts(model, s2, b2, xa, 0))
    dg = LogValue(*_phi_parts(model, s2, b2, xa, 1))
    if b1 == b2 and s1 == s2:
        w = LogValue(np.zeros_like(xa), np.full_like(xa, -np.inf))
        return (_out(w, x), np.zeros(xa.shape, bool)) if return_flag else _out(w, x)
    w, ratio = (f * dg).add(-(g * df), with_cancellation=True)
    ratio = np.asarray(ratio)
    lost = ratio < CANCELLATION_LIMIT
    if np.any(lost):
        if b1 == b2:
            sign_arr = np.array(w.sign, dtype=float, ndmin=1).copy()
            la_arr = np.array(w.log_abs, dtype=float, ndmin=1).copy()
            xs = np.atleast_1d(xa)
            scale_la = np.atleast_1d(_log_scale(model, xs))
            for i in np.flatnonzero(np.atleast_1d(lost)):
                v = _same_branch_integral(model, s1, s2, b1, float(xs[i]))
                sign_arr[i], la_arr[i] = v.sign, v.log_abs + scale_la[i]
            w = LogValue(sign_arr.reshape(xa.shape), la_arr.reshape(xa.shape))
        else:
            warnings.warn("cross_wronskian lost precision to cancellation", PrecisionLossWarning, stacklevel=2)
    w = _out(w, x)
    if return_flag:
        return w, (bool(np.any(lost)) if np.ndim(x) == 0 else lost)
    return w


# ----------------------------------------------------------------------------
# Transition density and Green's function
# ----------------------------------------------------------------------------

def transition_pdf_x(model: UnderlyingModel, t: float, x0: float, x) -> LogValue:
    """Transition density ``p_X(t; x0, x)`` of the underlying diffusion; broadcasts ``x0`` and ``x``."""
    if not t > 0:
        raise DomainError("t must be positive")
    xa, x0 = np.broadcast_arrays(_x(model, x), _x(model, x0))
    nu2 = model.nu0**2
    if model.kind is Kind.SQB:
        mu = model.mu
        la = (0.5 * mu * (np.log(xa) - np.log(x0)) - 2.0 * (xa + x0) / (nu2 * t)
              - math.log(nu2 * t / 2.0) + sf.log_bessel_i(mu, 4.0 * np.sqrt(xa * x0) / (nu2 * t)))
    elif model.kind is Kind.CIR:
        mu, l1 = model.mu, model.lambda1
        # c_t = kappa / (e^{l1 t} - 1), kept in logs for long horizons
        log_ct = math.log(model.kappa) - l1 * t - math.log(-math.expm1(-l1 * t))
        ct = math.exp(log_ct)
        ct_up = -model.kappa / math.expm1(-l1 * t)  # c_t e^{l1 t}
        la = (log_ct + l1 * t + 0.5 * mu * (np.log(xa) + l1 * t - np.log(x0))
              - ct_up * xa - ct * x0
              + sf.log_bessel_i(mu, 2.0 * np.sqrt(ct * ct_up * x0 * xa)))
    else:
        kap, l1 = model.kappa, model.lambda1
        y, y0 = xa - model.shift, x0 - model.shift
        v = -math.expm1(-2.0 * l1 * t)
        la = 0.5 * math.log(kap / (2.0 * math.pi * v)) - kap * (y - y0 * math.exp(-l1 * t)) ** 2 / (2.0 * v)
    return _out(LogValue(1.0, la), x if np.ndim(x0) == 0 else xa)


def greens_function(model: UnderlyingModel, x, x0, sp) -> LogValue:
    """``G(x, x0, s) = speed(x) phi^+_s(min) phi^-_s(max) / w_s``."""
    s = _s(sp)
    xa, x0a = np.broadcast_arrays(_x(model, x), _x(model, x0))
    lo, hi = np.minimum(xa, x0a), np.maximum(xa, x0a)
    la = (np.asarray(speed_density(model, xa).log_abs) + _phi_parts(model, s, 1, lo, 0)[1]
          + _phi_parts(model, s, -1, hi, 0)[1] - log_wronskian_const(model, s))
    return _out(LogValue(1.0, la), x if np.ndim(x0) == 0 else x0a)
