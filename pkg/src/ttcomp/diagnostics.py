"""Spikiness, incoherence, conditioning and error measures."""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field
from typing import Sequence

import numpy as np

from .tensor import DENSE_CAP, check_shape, dstar, separation
from .tt import (
    TTTensor,
    left_orthogonalize,
    right_interfaces,
    svd,
    tt_distance,
    tt_eval_many,
    tt_full,
    tt_norm,
)


def _dense(T, cap=DENSE_CAP) -> np.ndarray:
    if isinstance(T, TTTensor):
        return tt_full(T, cap=cap)
    A = np.asarray(T, dtype=np.float64)
    check_shape(A.shape, cap)
    return A


def spikiness(T, cap: int = DENSE_CAP) -> float:
    """``sqrt(d*) ||T||_inf / ||T||_F`` by a full scan (TT inputs are densified)."""
    A = _dense(T, cap)
    fro = float(np.linalg.norm(A))
    if fro == 0.0:
        raise ValueError("spikiness of the zero tensor is undefined")
    return math.sqrt(A.size) * float(np.max(np.abs(A))) / fro


def spikiness_lower_bound(T: TTTensor, n_samples: int = 100_000, seed=0) -> float:
    """Lower bound on the spikiness of a large TT tensor from random entries."""
    fro = tt_norm(T)
    if fro == 0.0:
        raise ValueError("spikiness of the zero tensor is undefined")
    rng = np.random.default_rng(seed)
    idx = np.stack([rng.integers(0, d, size=n_samples) for d in T.shape], axis=1)
    peak = float(np.max(np.abs(tt_eval_many(T, idx))))
    return math.sqrt(dstar(T.shape)) * peak / fro


def _row_coherence(U: np.ndarray) -> float:
    p, r = U.shape
    return math.sqrt(p / r) * float(np.max(np.linalg.norm(U, axis=1)))


def _tt_subspaces(T: TTTensor):
    """Yield orthonormal (U, V) for each separation from the gauge factors.

    Returns ``None`` when some interface factor is singular, in which case
    the TT ranks overstate the separation ranks.
    """
    L = T if T.gauge == "left" else left_orthogonalize(T)
    right, lams = right_interfaces(L)
    m = L.ndim
    for lam in lams:
        s = np.linalg.svd(lam, compute_uv=False)
        if s[0] == 0.0 or s[-1] < 1e-12 * s[0]:
            return None
    out = []
    U = np.ones((1, 1))
    for k in range(m - 1):
        c = L.cores[k]
        U = (U @ c.reshape(c.shape[0], -1)).reshape(-1, c.shape[2])
        V = np.ones((1, 1))
        for j in range(m - 1, k, -1):
            c2 = right[j]
            V = (c2.reshape(-1, c2.shape[2]) @ V).reshape(c2.shape[0], -1)
        out.append((U, V.T))
    return out


def incoherence(T, ranks: Sequence[int] | None = None, tol: float = 1e-12) -> float:
    """``Incoh(T)``: worst scaled row norm of the singular subspaces of every separation.

    TT inputs use the left part and the right-orthogonal factor, which span
    the same column and row spaces as the top singular vectors.  Dense inputs
    (or rank-deficient TT inputs) use an SVD per separation with the given
    ranks, or the numerical rank at ``tol``.
    """
    if isinstance(T, TTTensor):
        check_shape(T.shape)
        if tt_norm(T) == 0.0:
            raise ValueError("incoherence of the zero tensor is undefined")
        pairs = _tt_subspaces(T)
        if pairs is not None:
            return max(max(_row_coherence(U), _row_coherence(V)) for U, V in pairs)
        if ranks is None:
            ranks = T.ranks
    A = _dense(T)
    if not np.any(A):
        raise ValueError("incoherence of the zero tensor is undefined")
    best = 0.0
    for i in range(1, A.ndim):
        U, s, Vt = svd(separation(A, i))
        k = int(np.sum(s > tol * s[0]))
        if ranks is not None:
            k = min(k, int(ranks[i - 1]))
        k = max(k, 1)
        best = max(best, _row_coherence(U[:, :k]), _row_coherence(Vt[:k].T))
    return best


def relative_error(T_hat, T_ref) -> float:
    """``||T_hat - T_ref||_F / ||T_ref||_F``, in TT arithmetic when both are TT."""
    if isinstance(T_hat, TTTensor) and isinstance(T_ref, TTTensor):
        if T_hat.shape != T_ref.shape:
            raise ValueError(f"shape mismatch: {T_hat.shape} vs {T_ref.shape}")
        ref = tt_norm(T_ref)
        if ref == 0.0:
            raise ValueError("reference tensor is zero")
        return tt_distance(T_hat, T_ref) / ref
    A, B = _dense(T_hat), _dense(T_ref)
    if A.shape != B.shape:
        raise ValueError(f"shape mismatch: {A.shape} vs {B.shape}")
    ref = float(np.linalg.norm(B))
    if ref == 0.0:
        raise ValueError("reference tensor is zero")
    return float(np.linalg.norm(A - B)) / ref


def detect_tt_rank(A, tol: float = 1e-10) -> tuple[int, ...]:
    """Count singular values above ``tol * sigma_1`` for every separation."""
    A = _dense(A)
    out = []
    for i in range(1, A.ndim):
        s = np.linalg.svd(separation(A, i), compute_uv=False)
        out.append(0 if s[0] == 0.0 else int(np.sum(s > tol * s[0])))
    return tuple(out)


@dataclass
class DiagnosticsReport:
    spikiness: float
    spikiness_exact: bool
    incoherence: float | None
    condition_number: float
    sigma_min: float
    sigma_max: float
    singular_values: list = field(default_factory=list)
    relative_error: float | None = None

    def to_json(self, **kw) -> str:
        return json.dumps(asdict(self), **kw)


def diagnose(T, ranks: Sequence[int] | None = None, reference=None,
             cap: int = DENSE_CAP, seed=0) -> DiagnosticsReport:
    """Collect every diagnostic for a TT or dense tensor."""
    if isinstance(T, TTTensor):
        dense_ok = dstar(T.shape) <= cap
        L = T if T.gauge == "left" else left_orthogonalize(T)
        _, lams = right_interfaces(L)
        spectra = [np.linalg.svd(lam, compute_uv=False) for lam in lams]
    else:
        dense_ok = True
        A = _dense(T, cap)
        if ranks is None:
            ranks = detect_tt_rank(A)
        spectra = [
            np.linalg.svd(separation(A, i), compute_uv=False)[: max(int(ranks[i - 1]), 1)]
            for i in range(1, A.ndim)
        ]
    if dense_ok:
        nu, exact = spikiness(T, cap), True
    else:
        nu, exact = spikiness_lower_bound(T, seed=seed), False
    inc = incoherence(T, ranks) if dense_ok else None
    lo = float(min(s[-1] for s in spectra))
    hi = float(max(s[0] for s in spectra))
    return DiagnosticsReport(
        spikiness=nu,
        spikiness_exact=exact,
        incoherence=inc,
        condition_number=hi / lo if lo > 0 else math.inf,
        sigma_min=lo,
        sigma_max=hi,
        singular_values=[s.tolist() for s in spectra],
        relative_error=None if reference is None else relative_error(T, reference),
    )
