"""Sequential second-order moment initialization.

The samples are split into ``2m - 1`` groups.  Stage ``i`` estimates the
projected Gram matrix ``(T^{<=i-1} kron I)^T T<i> T<i>^T (T^{<=i-1} kron I)``
from two independent groups, takes its leading eigenvectors as ``L(T_i)``,
caps row norms and re-orthonormalises.  The last core is a least-squares fit
on the final group; the assembled tensor is trimmed and TT-SVD'd.
"""

from __future__ import annotations

import logging
import math
import time
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
import scipy.sparse

from .completion import trim, trim_threshold
from .observations import ObservationSet, dense_scatter, split_observations
from .tensor import DENSE_CAP, dstar
from .tt import TTTensor, check_ranks, tt_full, tt_norm, tt_rounding, tt_svd

logger = logging.getLogger(__name__)


class InitFailure(RuntimeError):
    def __init__(self, message: str, stage: int | None = None):
        where = "" if stage is None else f" at stage {stage}"
        super().__init__(f"initialization failed{where}: {message}")
        self.stage = stage


@dataclass
class InitConfig:
    nu: float | None = None
    mu: float | None = None
    seed: int = 0
    estimate_nu: bool = True
    nu_margin: float = 1.5
    kappa_hat: float = 1.0
    trim: bool = True
    dense_cap: int = DENSE_CAP

    def __post_init__(self):
        if self.nu is not None and self.nu <= 0:
            raise ValueError("nu must be positive")
        if self.mu is not None and self.mu <= 0:
            raise ValueError("mu must be positive")


@dataclass
class InitReport:
    nu_hat: float = float("nan")
    nu: float = float("nan")
    mu: float = float("nan")
    eigengaps: list = field(default_factory=list)
    fallbacks: list = field(default_factory=list)
    trim_count: int = 0
    trimmed: bool = False
    timings_ms: dict = field(default_factory=dict)
    estimate: TTTensor | None = None  # assembled estimate before trimming and retraction

    def as_dict(self) -> dict:
        return {
            "nu_hat": self.nu_hat,
            "nu": self.nu,
            "mu": self.mu,
            "eigengaps": self.eigengaps,
            "fallback_stages": self.fallbacks,
            "trim_count": self.trim_count,
            "trimmed": self.trimmed,
            "timings_ms": self.timings_ms,
        }


def estimate_spikiness(obs: ObservationSet) -> float:
    """Plug-in spikiness ``sqrt(d*) max|v| / sqrt((d*/n) sum v^2)``, floored at 1."""
    n = len(obs)
    if n < 2:
        raise ValueError("need at least two samples to estimate spikiness")
    v = obs.values
    ss = float(np.dot(v, v))
    if ss == 0.0:
        raise ValueError("all observed values are zero")
    d = dstar(obs.shape)
    nu = math.sqrt(d) * float(np.max(np.abs(v))) / math.sqrt(d / n * ss)
    return max(nu, 1.0)


def _prefix_rows(cores: Sequence[np.ndarray], idx: np.ndarray) -> np.ndarray:
    """Rows ``T^{<=k}(x_1..x_k, :)`` for each sample, ``k = len(cores)``."""
    u = np.ones((idx.shape[0], 1))
    for k, c in enumerate(cores):
        u = np.einsum("na,anb->nb", u, c[:, idx[:, k], :])
    return u


def _projected_columns(i: int, obs: ObservationSet, cores, keys: np.ndarray):
    """Sparse ``(T^{<=i-1} kron I)^T P_Omega(T*)<i>`` restricted to columns ``keys``.

    Rows of the result are positions in ``keys`` (sorted column indices of the
    ``i``-th separation); columns are ``a * d_i + x_i``.
    """
    shape = obs.shape
    di = shape[i - 1]
    col = np.ravel_multi_index(tuple(obs.idx[:, i:].T), shape[i:]) if len(obs) else np.zeros(0, np.int64)
    keep = np.isin(col, keys)
    idx = obs.idx[keep]
    pos = np.searchsorted(keys, col[keep])
    u = _prefix_rows(cores, idx) * obs.values[keep][:, None]
    r = u.shape[1]
    rows = np.repeat(pos, r)
    cols = (np.arange(r)[None, :] * di + idx[:, i - 1][:, None]).ravel()
    return scipy.sparse.csr_matrix(
        (u.ravel(), (rows, cols)), shape=(len(keys), r * di)
    )


def projected_moment(i: int, obs_a: ObservationSet, obs_b: ObservationSet,
                     left_cores: Sequence[np.ndarray]) -> np.ndarray:
    """Unbiased estimate of the projected Gram matrix of separation ``i``.

    ``left_cores`` are the already estimated cores ``T_1..T_{i-1}`` (empty for
    ``i = 1``).  Both groups are projected sample by sample and joined on the
    column index of ``T<i>``; nothing of size ``(d1..di)^2`` is formed.  The
    result is scaled by ``d*^2 / (n_a n_b)`` and symmetrised.
    """
    if len(obs_a) == 0 or len(obs_b) == 0:
        raise ValueError("moment groups must be non-empty")
    if obs_a.shape != obs_b.shape:
        raise ValueError("groups have different shapes")
    if len(left_cores) != i - 1:
        raise ValueError(f"stage {i} needs {i - 1} left cores, got {len(left_cores)}")
    shape = obs_a.shape
    r_prev = left_cores[-1].shape[2] if left_cores else 1
    p = r_prev * shape[i - 1]

    def colkeys(obs):
        return np.unique(np.ravel_multi_index(tuple(obs.idx[:, i:].T), shape[i:]))

    shared = np.intersect1d(colkeys(obs_a), colkeys(obs_b), assume_unique=True)
    if shared.size == 0:
        return np.zeros((p, p))
    Ba = _projected_columns(i, obs_a, left_cores, shared)
    Bb = _projected_columns(i, obs_b, left_cores, shared)
    M = (Ba.T @ Bb).toarray()
    scale = (dstar(shape) / len(obs_a)) * (dstar(shape) / len(obs_b))
    return scale * 0.5 * (M + M.T)


def truncate_renormalize(X: np.ndarray, row_bound: float) -> np.ndarray:
    """Shrink rows longer than ``row_bound``, then restore orthonormal columns.

    The re-normalisation multiplies by the inverse symmetric square root of
    the Gram matrix.  Raises :class:`InitFailure` when that Gram matrix is
    numerically singular.
    """
    norms = np.linalg.norm(X, axis=1)
    scale = np.ones_like(norms)
    big = norms > row_bound
    scale[big] = row_bound / norms[big]
    Xbar = X * scale[:, None]
    w, Q = np.linalg.eigh(Xbar.T @ Xbar)
    if w.size and w.min() < 1e-10:
        raise InitFailure(f"truncated Gram matrix is singular (min eig {w.min():.2e})")
    return Xbar @ ((Q / np.sqrt(w)) @ Q.T)


def _top_eigvecs(M: np.ndarray, r: int):
    w, V = np.linalg.eigh(M)
    order = np.argsort(-np.abs(w), kind="stable")
    w, V = w[order], V[:, order]
    gap = float(abs(w[r - 1]) - abs(w[r])) if r < len(w) else float(abs(w[r - 1]))
    return V[:, :r], gap


def initialize(obs: ObservationSet, ranks: Sequence[int], cfg: InitConfig | None = None,
               return_report: bool = False):
    """Sequential second-order moment estimate of a rank-``ranks`` TT tensor.

    The samples are split at random (seeded by ``cfg.seed``) into ``2m - 1``
    groups; see :func:`initialize_from_groups`.
    """
    cfg = cfg or InitConfig()
    m = len(obs.shape)
    check_ranks(obs.shape, ranks)
    if len(obs) < 2 * m - 1:
        raise ValueError(f"need at least {2 * m - 1} samples, got {len(obs)}")
    groups = split_observations(obs, 2 * m - 1, cfg.seed)
    return initialize_from_groups(groups, ranks, cfg, return_report, pooled=obs)


def initialize_from_groups(groups: Sequence[ObservationSet], ranks: Sequence[int],
                           cfg: InitConfig | None = None, return_report: bool = False,
                           pooled: ObservationSet | None = None):
    """Run the staged estimate on an explicit list of ``2m - 1`` sample groups.

    Groups ``2i-1`` and ``2i`` feed stage ``i``; the last group fits the last
    core.  ``pooled`` (default: all groups) is used to estimate the spikiness.
    """
    cfg = cfg or InitConfig()
    shape = groups[0].shape
    m = len(shape)
    r = check_ranks(shape, ranks)
    if len(groups) != 2 * m - 1:
        raise ValueError(f"need {2 * m - 1} groups, got {len(groups)}")
    if any(g.shape != shape for g in groups):
        raise ValueError("groups have different shapes")
    report = InitReport()
    t_start = time.perf_counter()
    if cfg.nu is not None:
        nu = cfg.nu
    elif cfg.estimate_nu:
        if pooled is None:
            pooled = ObservationSet(
                shape,
                np.concatenate([g.idx for g in groups]),
                np.concatenate([g.values for g in groups]),
            )
        report.nu_hat = estimate_spikiness(pooled)
        nu = cfg.nu_margin * report.nu_hat
    else:
        nu = 1.0
    mu = cfg.mu if cfg.mu is not None else (2.0 * cfg.kappa_hat**2 * nu) ** 2
    report.nu, report.mu = nu, mu

    cores: list[np.ndarray] = []
    for i in range(1, m):
        t0 = time.perf_counter()
        try:
            M = projected_moment(i, groups[2 * i - 2], groups[2 * i - 1], cores)
            X, gap = _top_eigvecs(M, r[i - 1])
        except (np.linalg.LinAlgError, ValueError) as exc:
            raise InitFailure(str(exc), stage=i) from exc
        report.eigengaps.append(gap)
        try:
            X = truncate_renormalize(X, math.sqrt(mu * r[i - 1] / shape[i - 1]))
        except InitFailure as exc:
            logger.warning("stage %d: %s; keeping untruncated eigenvectors", i, exc)
            report.fallbacks.append(i)
        r_prev = cores[-1].shape[2] if cores else 1
        cores.append(X.reshape(r_prev, shape[i - 1], r[i - 1]))
        report.timings_ms[f"stage_{i}"] = 1000.0 * (time.perf_counter() - t0)

    t0 = time.perf_counter()
    last = groups[-1]
    if len(last) == 0:
        raise InitFailure("last group is empty", stage=m)
    u = _prefix_rows(cores, last.idx) * (dstar(shape) / len(last) * last.values)[:, None]
    Tm = np.zeros((shape[-1], r[-1]))
    np.add.at(Tm, last.idx[:, -1], u)
    cores.append(Tm.T.reshape(r[-1], shape[-1], 1))
    T_hat = TTTensor(tuple(cores))
    report.estimate = T_hat
    report.timings_ms["last_core"] = 1000.0 * (time.perf_counter() - t0)

    t0 = time.perf_counter()
    if cfg.trim and dstar(shape) <= cfg.dense_cap:
        full = tt_full(T_hat, cap=cfg.dense_cap)
        zeta = trim_threshold(tt_norm(T_hat), full.size, nu)
        full, report.trim_count = trim(full, zeta)
        report.trimmed = True
        T0 = tt_svd(full, r)
    else:
        if cfg.trim:
            logger.warning("shape %s above the dense cap: skipping the trim step", shape)
        T0 = tt_rounding(T_hat, r)
    report.timings_ms["retraction"] = 1000.0 * (time.perf_counter() - t0)
    report.timings_ms["total"] = 1000.0 * (time.perf_counter() - t_start)
    if return_report:
        return T0, report
    return T0


def naive_init(obs: ObservationSet, ranks: Sequence[int], cap: int = DENSE_CAP) -> TTTensor:
    """One-shot spectral baseline: TT-SVD of the rescaled observed tensor."""
    A = dense_scatter(obs, cap=cap) * (dstar(obs.shape) / len(obs))
    return tt_svd(A, ranks)
