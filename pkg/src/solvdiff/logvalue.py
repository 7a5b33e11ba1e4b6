"""Signed log-magnitude numbers.

Special functions and densities in this package routinely leave the double
range (``exp(kappa * x**2 / 2)`` for the OU family, ``exp(2*sqrt(2*s*x))`` for
squared Bessel solutions).  :class:`LogValue` keeps ``sign * exp(log_abs)``
so that products and quotients never overflow, and sums are carried out
relative to the larger magnitude.

Both scalar and numpy-array payloads are supported; arithmetic broadcasts
like numpy.
"""

from __future__ import annotations

import numpy as np

__all__ = ["LogValue", "logsumexp_signed"]


def _as_payload(x):
    a = np.asarray(x, dtype=float)
    return float(a) if a.ndim == 0 else a


class LogValue:
    """A real number stored as ``sign * exp(log_abs)``.

    ``sign`` is one of -1, 0, +1 and ``log_abs`` is ``-inf`` whenever the
    sign is 0.
    """

    __slots__ = ("sign", "log_abs")

    def __init__(self, sign, log_abs):
        sign = np.sign(np.asarray(sign, dtype=float))
        log_abs = np.asarray(log_abs, dtype=float)
        sign, log_abs = np.broadcast_arrays(sign, log_abs)
        zero = (sign == 0) | (log_abs == -np.inf)
        if np.any(zero):
            sign = np.where(zero, 0.0, sign)
            log_abs = np.where(zero, -np.inf, log_abs)
        self.sign = _as_payload(sign)
        self.log_abs = _as_payload(log_abs)

    # -- construction ---------------------------------------------------------
    @classmethod
    def from_value(cls, x) -> "LogValue":
        x = np.asarray(x, dtype=float)
        with np.errstate(divide="ignore"):
            return cls(np.sign(x), np.log(np.abs(x)))

    @classmethod
    def from_log(cls, log_abs, sign=1.0) -> "LogValue":
        return cls(sign, log_abs)

    @staticmethod
    def coerce(x) -> "LogValue":
        return x if isinstance(x, LogValue) else LogValue.from_value(x)

    # -- inspection -----------------------------------------------------------
    def value(self):
        with np.errstate(over="ignore"):
            return _as_payload(self.sign * np.exp(self.log_abs))

    def __float__(self) -> float:
        return float(self.value())

    @property
    def shape(self):
        return np.shape(self.log_abs)

    def __len__(self):
        return len(self.log_abs)

    def __getitem__(self, idx) -> "LogValue":
        return LogValue(np.asarray(self.sign)[idx], np.asarray(self.log_abs)[idx])

    def __repr__(self) -> str:
        if np.ndim(self.log_abs) == 0:
            return f"LogValue(sign={int(self.sign):+d}, log_abs={self.log_abs!r})"
        return f"LogValue(shape={self.shape})"

    # -- arithmetic -----------------------------------------------------------
    def __neg__(self) -> "LogValue":
        return LogValue(-np.asarray(self.sign), self.log_abs)

    def __abs__(self) -> "LogValue":
        return LogValue(np.abs(self.sign), self.log_abs)

    def __mul__(self, other) -> "LogValue":
        other = LogValue.coerce(other)
        with np.errstate(invalid="ignore"):
            la = np.asarray(self.log_abs) + np.asarray(other.log_abs)
        return LogValue(np.asarray(self.sign) * np.asarray(other.sign), np.nan_to_num(la, nan=-np.inf))

    __rmul__ = __mul__

    def __truediv__(self, other) -> "LogValue":
        other = LogValue.coerce(other)
        if np.any(np.asarray(other.sign) == 0):
            raise ZeroDivisionError("LogValue division by zero")
        return LogValue(np.asarray(self.sign) * np.asarray(other.sign),
                        np.asarray(self.log_abs) - np.asarray(other.log_abs))

    def __rtruediv__(self, other) -> "LogValue":
        return LogValue.coerce(other) / self

    def __pow__(self, p) -> "LogValue":
        p = float(p)
        if p == int(p):
            sign = np.asarray(self.sign) ** int(p)
        else:
            if np.any(np.asarray(self.sign) < 0):
                raise ValueError("non-integer power of a negative LogValue")
            sign = self.sign
        return LogValue(sign, p * np.asarray(self.log_abs))

    def add(self, other, with_cancellation: bool = False):
        """Sum of two LogValues.

        With ``with_cancellation=True`` also returns the ratio
        ``|a + b| / (|a| + |b|)``; values near machine epsilon mean the
        result carries few significant digits.
        """
        other = LogValue.coerce(other)
        la, lb = np.broadcast_arrays(np.asarray(self.log_abs), np.asarray(other.log_abs))
        sa, sb = np.broadcast_arrays(np.asarray(self.sign), np.asarray(other.sign))
        m = np.maximum(la, lb)
        m = np.where(np.isfinite(m), m, 0.0)
        ta = sa * np.exp(la - m)
        tb = sb * np.exp(lb - m)
        s = ta + tb
        with np.errstate(divide="ignore", invalid="ignore"):
            out = LogValue(np.sign(s), m + np.log(np.abs(s)))
            if not with_cancellation:
                return out
            denom = np.abs(ta) + np.abs(tb)
            ratio = np.where(denom > 0, np.abs(s) / np.where(denom > 0, denom, 1.0), 1.0)
        return out, _as_payload(ratio)

    def __add__(self, other) -> "LogValue":
        return self.add(other)

    __radd__ = __add__

    def __sub__(self, other) -> "LogValue":
        return self.add(-LogValue.coerce(other))

    def __rsub__(self, other) -> "LogValue":
        return LogValue.coerce(other).add(-self)

    def log(self):
        """Natural log of a positive LogValue."""
        if np.any(np.asarray(self.sign) <= 0):
            raise ValueError("log of a non-positive LogValue")
        return self.log_abs


def logsumexp_signed(values: list[LogValue]) -> LogValue:
    """Sum an iterable of LogValues."""
    it = iter(values)
    acc = next(it)
    for v in it:
        acc = acc + v
    return acc
