"""Exact sampling of the underlying and mapped diffusions.

Underlying paths use the exact transition laws: a scaled noncentral
chi-square for SQB and CIR and a Gaussian for OU.  F-diffusion steps are
drawn by inverting a tabulated CDF of the ``X^(rho)`` transition density;
the draw is then mapped through ``F``.  Because the map is monotone this is
the same law as inverting the CDF of ``p_F``.  A uniform draw that lands in
the missing mass of a killed density yields :data:`ABSORBED`.

Seeds: ``sample_paths(..., seed=s)`` gives path ``i`` its own generator
``numpy.random.default_rng(numpy.random.SeedSequence(s, spawn_key=(i,)))``,
so each path depends only on ``(s, i)``, whatever the worker count.
"""

from __future__ import annotations

import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

from . import transform as tr
from .numerics import CdfTable, build_cdf_table, invert_cdf
from .specfun import DomainError
from .underlying import Kind, UnderlyingModel

__all__ = [
    "ABSORBED",
    "is_absorbed",
    "PathSchedule",
    "PathSample",
    "DriftLaw",
    "path_rng",
    "sample_x",
    "step_table",
    "sample_f_step",
    "sample_path",
    "sample_paths",
    "estimate_drift_law",
]

ABSORBED = math.nan
"""Marker for a path that has been killed at a regular or exit boundary."""


def is_absorbed(v) -> np.ndarray | bool:
    return np.isnan(v)


@dataclass(frozen=True)
class PathSchedule:
    times: tuple[float, ...]
    f0: float

    def __post_init__(self):
        ts = tuple(float(t) for t in self.times)
        if not ts:
            raise ValueError("schedule needs at least one time")
        if not all(math.isfinite(t) and t > 0 for t in ts):
            raise ValueError("schedule times must be positive and finite")
        if any(b <= a for a, b in zip(ts, ts[1:])):
            raise ValueError("schedule times must be strictly increasing")
        object.__setattr__(self, "times", ts)

    @property
    def steps(self) -> np.ndarray:
        return np.diff(np.concatenate([[0.0], self.times]))


@dataclass(frozen=True)
class PathSample:
    values: tuple[float, ...]
    seed: int
    index: int = 0

    @property
    def absorbed(self) -> bool:
        return bool(self.values) and math.isnan(self.values[-1])

    def filled(self, absorbed_value: float) -> tuple[float, ...]:
        """Values with the absorbed marker replaced by the endpoint value."""
        return tuple(absorbed_value if math.isnan(v) else v for v in self.values)


class DriftLaw(NamedTuple):
    mean: float
    stderr: float
    discounted_mean: float
    discounted_stderr: float
    absorbed_fraction: float
    mean_excluding_absorbed: float


def path_rng(seed: int, index: int) -> np.random.Generator:
    """Generator of path ``index`` under root seed ``seed``."""
    return np.random.default_rng(np.random.SeedSequence(int(seed), spawn_key=(int(index),)))


# ----------------------------------------------------------------------------
# Underlying diffusion
# ----------------------------------------------------------------------------

def sample_x(model: UnderlyingModel, t: float, x0: float, rng: np.random.Generator, size=None):
    """Exact draw(s) from ``p_X(t; x0, .)``."""
    if not t > 0:
        raise DomainError("t must be positive")
    if not bool(model.contains(x0)):
        raise DomainError("x0 outside the state space")
    nu2 = model.nu0**2
    if model.kind is Kind.OU:
        e = math.exp(-model.lambda1 * t)
        mean = model.shift + (x0 - model.shift) * e
        sd = math.sqrt(-math.expm1(-2.0 * model.lambda1 * t) / model.kappa)
        return rng.normal(mean, sd, size)
    df = 4.0 * model.lambda0 / nu2
    if model.kind is Kind.SQB:
        c = nu2 * t / 4.0
        nc = x0 / c
    else:
        c = -nu2 * math.expm1(-model.lambda1 * t) / (4.0 * model.lambda1)
        nc = x0 * math.exp(-model.lambda1 * t) / c
    return c * rng.noncentral_chisquare(df, nc, size)


# ----------------------------------------------------------------------------
# F-diffusion
# ----------------------------------------------------------------------------

def _x_table(fd: tr.FDiffusion, t: float, x0: float, tol: float) -> CdfTable:
    u0 = tr.u_hat(fd, x0)

    def dens(x):
        return tr.transition_pdf_x_rho(fd, t, x0, x, u_x0=u0).value()

    return build_cdf_table(dens, fd.model.state_space, center=x0, tol=tol)


def step_table(fd: tr.FDiffusion, t: float, F0: float, tol: float = 1e-10) -> tuple[CdfTable, float]:
    """CDF table of ``X^(rho)_t`` started at ``X(F0)``; returns ``(table, x0)``."""
    lo, hi = fd.state_space_f
    if not lo < F0 < hi:
        raise DomainError(f"F0 = {F0} is outside the state space ({lo}, {hi})")
    x0 = tr.inverse_map(fd, F0)
    return _x_table(fd, t, x0, tol), x0


def _map_draws(fd, x):
    x = np.atleast_1d(x)
    out = np.full(x.shape, ABSORBED)
    live = ~np.isnan(x)
    if np.any(live):
        out[live] = tr.map_f(fd, x[live])
    return out


def sample_f_step(fd: tr.FDiffusion, t: float, F0: float, rng: np.random.Generator, size=None,
                  table: CdfTable | None = None, tol: float = 1e-10):
    """Draw(s) of ``F_t`` given ``F_0 = F0``; :data:`ABSORBED` marks killing."""
    if table is None:
        table, _ = step_table(fd, t, F0, tol)
    u = rng.random(size)
    f = _map_draws(fd, invert_cdf(table, u))
    return float(f[0]) if size is None else f.reshape(np.shape(u))


def sample_path(fd: tr.FDiffusion, schedule: PathSchedule, rng: np.random.Generator | int,
                tol: float = 1e-10, index: int = 0) -> PathSample:
    """One path on ``schedule``; a new CDF table is built for every step.

    The state is carried in ``x``, so only the start value is inverted.
    Each step consumes exactly one uniform, which makes a single-time
    schedule identical to :func:`sample_f_step` with the same generator.
    """
    seed = -1
    if not isinstance(rng, np.random.Generator):
        seed = int(rng)
        rng = path_rng(seed, index)
    lo, hi = fd.state_space_f
    if not lo < schedule.f0 < hi:
        raise DomainError(f"f0 = {schedule.f0} is outside the state space ({lo}, {hi})")
    x = tr.inverse_map(fd, schedule.f0)
    vals = []
    for dt in schedule.steps:
        if math.isnan(x):
            vals.append(ABSORBED)
            continue
        table = _x_table(fd, float(dt), x, tol)
        x = float(invert_cdf(table, rng.random()))
        vals.append(ABSORBED if math.isnan(x) else float(tr.map_f(fd, x)))
    return PathSample(tuple(vals), seed, index)


def _path_job(args):
    fd, schedule, seed, index, tol = args
    return sample_path(fd, schedule, seed, tol=tol, index=index)


def sample_paths(fd: tr.FDiffusion, schedule: PathSchedule, n_paths: int, seed: int,
                 workers: int = 1, tol: float = 1e-10) -> list[PathSample]:
    """``n_paths`` independent paths; identical output for any ``workers``."""
    jobs = [(fd, schedule, int(seed), i, tol) for i in range(int(n_paths))]
    if workers <= 1:
        return [_path_job(j) for j in jobs]
    with ProcessPoolExecutor(max_workers=workers) as ex:
        return list(ex.map(_path_job, jobs, chunksize=max(1, len(jobs) // (4 * workers))))


def estimate_drift_law(fd: tr.FDiffusion, t: float, F0: float, n: int, rng: np.random.Generator,
                       tol: float = 1e-10) -> DriftLaw:
    """Monte Carlo estimate of ``E[F_t]`` and of the discounted mean ``e^{-bt} E[F_t]``.

    Absorbed paths enter the mean with the killing endpoint's value
    ``F(l+)``; the mean over surviving paths is reported separately.
    Only for specs that conserve the expectation rate with ``a = 0``.
    """
    spec = fd.spec
    if spec.a != 0:
        raise ValueError("the drift law estimator needs a = 0")
    verdict = fd.classification.conserves_rate if fd.classification is not None else None
    if verdict is None:
        from .classify import conserves_expectation_rate

        verdict = conserves_expectation_rate(fd)[0]
    if not verdict:
        raise ValueError("spec does not conserve the expectation rate; use classify.martingale_defect")
    draws = sample_f_step(fd, t, F0, rng, size=int(n), tol=tol)
    dead = np.isnan(draws)
    endpoint = fd.endpoint_f[0]
    vals = np.where(dead, endpoint if np.any(dead) else 0.0, draws)
    mean = float(np.mean(vals))
    se = float(np.std(vals, ddof=1) / math.sqrt(n))
    disc = math.exp(-spec.b * t)
    live_mean = float(np.mean(draws[~dead])) if np.any(~dead) else math.nan
    return DriftLaw(mean, se, mean * disc, se * disc, float(np.mean(dead)), live_mean)
