"""Riemannian gradient descent for TT completion.

Each step: residual gradient on the samples, projection onto the tangent
space, a fixed step ``alpha = c * d* / n``, then retraction back to the rank
``r`` manifold.  The retraction either densifies, trims and runs TT-SVD, or
(when trimming is off or the tensor is too large) rounds the rank-``2r``
TT tensor directly.
"""

from __future__ import annotations

import csv
import logging
import math
import time
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .observations import ObservationSet, residuals
from .tangent import build_gauge_pair, embed, point_as_tangent, riemannian_gradient, tangent_norm
from .tensor import DENSE_CAP, dstar
from .tt import TTTensor, check_ranks, left_orthogonalize, tt_distance, tt_full, tt_norm, tt_rounding, tt_svd

logger = logging.getLogger(__name__)

TRACE_FIELDS = ("iter", "f", "grad_norm", "rel_change", "trim_count", "wall_ms")

# Objective values below this fraction of 1/2 sum v^2 are rounding noise: the
# iterate interpolates the samples.
INTERPOLATION_RTOL = 1e-26

# An estimated nu that still clips entries when the iteration settles is too
# small; it is raised by this factor and the iteration continues.
NU_RAISE_FACTOR = 1.5


@dataclass
class CompletionConfig:
    ranks: Sequence[int]
    step_constant: float = 0.12
    nu: float | None = None  # None: nu_margin times the plug-in estimate
    nu_margin: float = 1.5
    trim: bool | None = None  # None: trim whenever the dense path fits under the cap
    max_iters: int = 500
    rel_change_tol: float = 1e-3
    success_tol: float = 1e-2
    seed: int = 0
    workers: int | None = None
    dense_cap: int = DENSE_CAP
    divergence_factor: float = 10.0
    nu_raises: int = 10  # max raises of an estimated nu; a given nu is never changed

    def __post_init__(self):
        self.ranks = tuple(int(r) for r in self.ranks)
        if self.step_constant <= 0:
            raise ValueError("step_constant must be positive")
        if self.rel_change_tol <= 0 or self.success_tol <= 0:
            raise ValueError("tolerances must be positive")
        if self.nu is not None and self.nu < 0:
            raise ValueError("nu must be non-negative")
        if self.nu_margin <= 0:
            raise ValueError("nu_margin must be positive")
        if self.nu_raises < 0:
            raise ValueError("nu_raises must be non-negative")

    def use_trim(self, shape) -> bool:
        fits = dstar(shape) <= self.dense_cap
        if self.trim is None:
            return fits
        if self.trim and not fits:
            logger.warning("trimming requested but %s exceeds the dense cap; skipping", tuple(shape))
            return False
        return self.trim


@dataclass
class IterRecord:
    iter: int
    f: float
    grad_norm: float
    rel_change: float
    trim_count: int
    wall_ms: float
    err: float | None = None


@dataclass
class CompletionTrace:
    records: list = field(default_factory=list)
    status: str = "max-iters"
    retraction: str = "trim+ttsvd"
    nu: float = float("nan")
    best_iter: int = 0
    nu_raised_at: list = field(default_factory=list)  # iterations where nu was raised

    @property
    def iterations(self) -> int:
        return len(self.records) - 1

    def errors(self) -> list:
        return [r.err for r in self.records]

    def to_csv(self, path, with_error: bool = False) -> None:
        fields = TRACE_FIELDS + (("err",) if with_error else ())
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(fields)
            for r in self.records:
                w.writerow([_fmt(getattr(r, k)) for k in fields])


def _fmt(v):
    if v is None:
        return ""
    if isinstance(v, float):
        return repr(v)
    return str(v)


def trim(W: np.ndarray, zeta: float):
    """Clip entries with ``|w| >= zeta`` to ``zeta * sign(w)``.

    Returns the trimmed copy and the number of clipped entries.
    """
    if zeta < 0:
        raise ValueError("trim level must be non-negative")
    big = np.abs(W) >= zeta
    out = np.where(big, zeta * np.sign(W), W)
    return out, int(np.count_nonzero(big))


def trim_threshold(w_norm: float, d_star: int, nu: float) -> float:
    """``zeta = 10 ||W||_F nu / (9 sqrt(d*))``."""
    return 10.0 * w_norm * nu / (9.0 * math.sqrt(d_star))


def gradient_and_objective(T: TTTensor, obs: ObservationSet):
    """Sparse gradient ``P_Omega(T - T*)`` and ``f(T)`` from one residual pass."""
    idx, counts, res = residuals(T, obs)
    G = ObservationSet(obs.shape, idx, counts * res)
    return G, 0.5 * float(np.dot(counts, res * res))


@dataclass
class StepInfo:
    f: float
    grad_norm: float
    trim_count: int
    retraction: str


def rgrad_step(T: TTTensor, obs: ObservationSet, cfg: CompletionConfig, nu: float,
               G: ObservationSet | None = None):
    """One RGrad iteration from a left-orthogonal point of rank ``cfg.ranks``."""
    if T.ranks != cfg.ranks:
        raise ValueError(f"iterate ranks {T.ranks} != configured ranks {cfg.ranks}")
    if G is None:
        G, f = gradient_and_objective(T, obs)
    else:
        f = float("nan")
    gp = build_gauge_pair(T)
    xi = riemannian_gradient(gp, G, workers=cfg.workers)
    alpha = cfg.step_constant * dstar(T.shape) / len(obs)
    W = embed(gp, point_as_tangent(gp) + xi.scaled(-alpha))
    trimmed = 0
    if cfg.use_trim(T.shape):
        Wd = tt_full(W, cap=cfg.dense_cap)
        zeta = trim_threshold(float(np.linalg.norm(Wd)), Wd.size, nu)
        Wd, trimmed = trim(Wd, zeta)
        T_next = tt_svd(Wd, cfg.ranks)
        how = "trim+ttsvd"
    else:
        T_next = tt_rounding(W, cfg.ranks)
        how = "rounding"
    return T_next, StepInfo(f, tangent_norm(xi), trimmed, how)


def rgrad_complete(obs: ObservationSet, cfg: CompletionConfig, T0: TTTensor,
                   truth: TTTensor | None = None):
    """Run RGrad from ``T0`` until the relative change drops below tolerance.

    Returns the iterate with the smallest objective and the trace.  A run is
    flagged ``diverged`` (not raised) when the objective becomes non-finite or
    exceeds ``divergence_factor`` times its running minimum.
    """
    from .spectral_init import estimate_spikiness

    check_ranks(obs.shape, cfg.ranks)
    if T0.shape != obs.shape:
        raise ValueError(f"initial point shape {T0.shape} != {obs.shape}")
    if T0.ranks != cfg.ranks:
        raise ValueError(f"initial ranks {T0.ranks} != configured ranks {cfg.ranks}")
    nu = cfg.nu if cfg.nu is not None else cfg.nu_margin * estimate_spikiness(obs)
    trace = CompletionTrace(nu=nu, retraction="trim+ttsvd" if cfg.use_trim(obs.shape) else "rounding")

    T = T0 if T0.gauge == "left" else left_orthogonalize(T0)
    G, f = gradient_and_objective(T, obs)
    trace.records.append(IterRecord(0, f, float("nan"), float("nan"), 0, 0.0, _err(T, truth)))
    best_T, best_f = T, f
    f_floor = 0.5 * INTERPOLATION_RTOL * float(np.dot(obs.values, obs.values))
    if f <= f_floor:
        trace.status = "converged"
        return T, trace

    for it in range(1, cfg.max_iters + 1):
        t0 = time.perf_counter()
        T_next, info = rgrad_step(T, obs, cfg, nu, G=G)
        rel_change = tt_distance(T_next, T) / tt_norm(T)
        T = T_next
        G, f = gradient_and_objective(T, obs)
        wall = 1000.0 * (time.perf_counter() - t0)
        trace.records.append(
            IterRecord(it, f, info.grad_norm, rel_change, info.trim_count, wall, _err(T, truth))
        )
        if not math.isfinite(f) or f > max(cfg.divergence_factor * best_f, f_floor):
            trace.status = "diverged"
            break
        if f < best_f:
            best_T, best_f, trace.best_iter = T, f, it
        if f <= f_floor:
            trace.status = "converged"
            break
        if rel_change <= cfg.rel_change_tol:
            if info.trim_count and cfg.nu is None and len(trace.nu_raised_at) < cfg.nu_raises:
                # settled on a point of the trimmed map, not of the objective
                nu *= NU_RAISE_FACTOR
                trace.nu = nu
                trace.nu_raised_at.append(it)
                logger.info("iteration %d: %d entries still trimmed, raising nu to %.3g",
                            it, info.trim_count, nu)
                continue
            trace.status = "converged"
            break
    return best_T, trace


def _err(T, truth):
    return None if truth is None else tt_distance(T, truth)
