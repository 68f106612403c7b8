"""Tangent space of the fixed-TT-rank manifold at a left-orthogonal point.

A tangent vector is stored by its components ``X_1..X_m`` (same shapes as the
cores); it represents ``sum_i [T_1, .., X_i, .., T_m]`` under the gauge
``L(T_i)^T L(X_i) = 0`` for ``i < m``.  The projection uses a right-orthogonal
copy of the point so that ``T^{>=i+1} = Lambda_{i+1} V_{i+1}^T`` with
``V_{i+1}`` orthonormal; then

    (T^{>=i+1})^T (T^{>=i+1} T^{>=i+1,T})^{-1} = V_{i+1} Lambda_{i+1}^{-1}

and only a small triangular solve remains.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Sequence

import numpy as np
from scipy.linalg import solve_triangular

from .observations import ObservationSet
from .tensor import check_shape, left_unfold, right_unfold, separation, shift_left_forward
from .tt import IllConditionedPoint, TTTensor, left_orthogonalize, right_interfaces

# Interface factors whose smallest singular value falls below this fraction of
# the largest mark a point on the manifold boundary.
ILL_CONDITIONED_RTOL = 1e-12


@dataclass(frozen=True, eq=False)
class GaugePair:
    """A TT point in left-orthogonal form plus its right-orthogonal companions.

    ``right_cores[k]`` (k >= 1) are right-orthogonal; ``lams[i-1]`` is the
    ``r_i x r_i`` lower-triangular factor of ``T^{>=i+1} = lams[i-1] V_{i+1}^T``.
    """

    point: TTTensor
    right_cores: tuple
    lams: tuple

    @property
    def cores(self):
        return self.point.cores

    @property
    def shape(self):
        return self.point.shape

    @property
    def ranks(self):
        return self.point.ranks

    @property
    def ndim(self):
        return self.point.ndim


@dataclass(frozen=True, eq=False)
class TangentVector:
    base: GaugePair
    components: tuple

    def scaled(self, c: float) -> "TangentVector":
        return TangentVector(self.base, tuple(c * X for X in self.components))

    def __add__(self, other: "TangentVector") -> "TangentVector":
        _check_base(self, other)
        return TangentVector(
            self.base, tuple(a + b for a, b in zip(self.components, other.components))
        )


def _check_base(a: TangentVector, b: TangentVector):
    if a.base is not b.base:
        raise ValueError("tangent vectors live at different base points")


def build_gauge_pair(T: TTTensor) -> GaugePair:
    """Prepare ``T`` for projections; raises at rank-deficient points."""
    if T.gauge != "left":
        T = left_orthogonalize(T)
    right, lams = right_interfaces(T)
    for i, lam in enumerate(lams, start=1):
        s = np.linalg.svd(lam, compute_uv=False)
        if s[0] == 0.0 or s[-1] < ILL_CONDITIONED_RTOL * s[0]:
            raise IllConditionedPoint(
                f"separation {i} is rank deficient (sigma_min/sigma_max = "
                f"{s[-1] / s[0] if s[0] else 0.0:.3e})"
            )
    return GaugePair(T, tuple(right), tuple(lams))


def point_as_tangent(gp: GaugePair) -> TangentVector:
    """The base point itself as a tangent vector: ``X_m = T_m``, others zero."""
    comps = [np.zeros_like(c) for c in gp.cores[:-1]] + [np.array(gp.cores[-1])]
    return TangentVector(gp, tuple(comps))


def zero_tangent(gp: GaugePair) -> TangentVector:
    return TangentVector(gp, tuple(np.zeros_like(c) for c in gp.cores))


def _finish_component(gp: GaugePair, k: int, Z: np.ndarray) -> np.ndarray:
    """Apply the Lambda solve and gauge deflation to an accumulated component."""
    core = gp.cores[k]
    if k == gp.ndim - 1:
        return Z.reshape(core.shape)
    LZ = Z.reshape(-1, core.shape[2])
    X = solve_triangular(gp.lams[k], LZ.T, trans="T", lower=True).T
    LT = left_unfold(core)
    X = X - LT @ (LT.T @ X)
    return X.reshape(core.shape)


def _dense_right_parts(gp: GaugePair) -> list:
    """``V_{i+1}^T`` as dense ``r_i x (d_{i+1}..d_m)`` matrices, indexed by core."""
    m = gp.ndim
    out = [None] * m
    M = np.ones((1, 1))
    out[m - 1] = M
    for k in range(m - 1, 0, -1):
        c = gp.right_cores[k]
        M = (left_unfold(c) @ M).reshape(c.shape[0], -1)
        out[k - 1] = M
    return out


def project_dense(gp: GaugePair, A: np.ndarray) -> TangentVector:
    """Orthogonal projection of a dense tensor onto the tangent space."""
    A = np.ascontiguousarray(A, dtype=np.float64)
    if A.shape != gp.shape:
        raise ValueError(f"shape mismatch: {A.shape} vs {gp.shape}")
    check_shape(A.shape)
    m = gp.ndim
    Vts = _dense_right_parts(gp)
    comps = []
    C = separation(A, 1)  # (T^{<=k-1} kron I)^T A<k>
    for k in range(m):
        comps.append(_finish_component(gp, k, C @ Vts[k].T))
        if k < m - 1:
            NT = left_unfold(gp.cores[k]).T @ C
            if k < m - 2:
                C = shift_left_forward(NT, (NT.shape[0],) + gp.shape[k + 1:], 1)
            else:
                C = NT.reshape(-1, 1)
    return TangentVector(gp, tuple(comps))


def _prefix_suffix(gp: GaugePair, idx: np.ndarray):
    m = gp.ndim
    n = idx.shape[0]
    pre = [np.ones((n, 1))]
    for k in range(m - 1):
        pre.append(np.einsum("na,anb->nb", pre[-1], gp.cores[k][:, idx[:, k], :]))
    suf = [None] * m
    suf[m - 1] = np.ones((n, 1))
    for k in range(m - 2, -1, -1):
        suf[k] = np.einsum("anb,nb->na", gp.right_cores[k + 1][:, idx[:, k + 1], :], suf[k + 1])
    return pre, suf


def _accumulate(gp: GaugePair, idx: np.ndarray, g: np.ndarray) -> list:
    """Raw sums ``sum_w g_w u_k(w) v_k(w)^T`` scattered into slice ``x_k``."""
    pre, suf = _prefix_suffix(gp, idx)
    out = []
    for k, core in enumerate(gp.cores):
        r0, d, r1 = core.shape
        W = (g[:, None] * pre[k])[:, :, None] * suf[k][:, None, :]
        Z = np.zeros((d, r0, r1))
        np.add.at(Z, idx[:, k], W)
        out.append(Z.transpose(1, 0, 2))
    return out


def riemannian_gradient(gp: GaugePair, G: ObservationSet, workers: int | None = None) -> TangentVector:
    """Project the sparse tensor ``G`` onto the tangent space without densifying.

    Samples are accumulated in input order.  With ``workers > 1`` the samples
    are split into contiguous chunks reduced in a thread pool and merged in
    chunk order; results then differ from the serial path in the last bits.
    """
    if G.shape != gp.shape:
        raise ValueError(f"shape mismatch: {G.shape} vs {gp.shape}")
    idx, g = G.idx, G.values
    if workers is None or workers <= 1 or len(g) < 2 * workers:
        acc = _accumulate(gp, idx, g)
    else:
        chunks = np.array_split(np.arange(len(g)), workers)
        with ThreadPoolExecutor(max_workers=workers) as pool:
            parts = list(pool.map(lambda c: _accumulate(gp, idx[c], g[c]), chunks))
        acc = [sum(p[k] for p in parts[1:]) + parts[0][k] for k in range(gp.ndim)]
    comps = tuple(_finish_component(gp, k, Z) for k, Z in enumerate(acc))
    return TangentVector(gp, comps)


def embed(gp: GaugePair, xi: TangentVector) -> TTTensor:
    """``sum_i [T_1, .., X_i, .., T_m]`` as one TT tensor of ranks ``2 r``.

    Core blocks: ``[X_1 | T_1]``, then ``[[T_i, 0], [X_i, T_i]]``, then
    ``[T_m ; X_m]``, so the running row vector carries (partial sum, prefix).
    """
    if xi.base is not gp:
        raise ValueError("tangent vector belongs to a different base point")
    T, X = gp.cores, xi.components
    m = gp.ndim
    cores = [np.concatenate([X[0], T[0]], axis=2)]
    for k in range(1, m - 1):
        r0, d, r1 = T[k].shape
        c = np.zeros((2 * r0, d, 2 * r1))
        c[:r0, :, :r1] = T[k]
        c[r0:, :, :r1] = X[k]
        c[r0:, :, r1:] = T[k]
        cores.append(c)
    cores.append(np.concatenate([T[-1], X[-1]], axis=0))
    return TTTensor(tuple(cores))


def component_tensor(gp: GaugePair, xi: TangentVector, k: int) -> TTTensor:
    """``delta X_k = [T_1, .., X_k, .., T_m]`` (0-based ``k``)."""
    cores = list(gp.cores)
    cores[k] = xi.components[k]
    return TTTensor(tuple(cores))


def tangent_inner(xi: TangentVector, zeta: TangentVector) -> float:
    """Inner product of the represented tensors, computed per component."""
    _check_base(xi, zeta)
    gp = xi.base
    total = 0.0
    for k, (X, Z) in enumerate(zip(xi.components, zeta.components)):
        if k < gp.ndim - 1:
            lam = gp.lams[k]
            total += float(np.sum((left_unfold(X) @ lam) * (left_unfold(Z) @ lam)))
        else:
            total += float(np.sum(X * Z))
    return total


def tangent_norm(xi: TangentVector) -> float:
    return float(np.sqrt(max(tangent_inner(xi, xi), 0.0)))


def gauge_deviation(xi: TangentVector) -> float:
    """Largest ``||L(T_i)^T L(X_i)||_F`` over ``i < m``."""
    gp = xi.base
    devs = [
        np.linalg.norm(left_unfold(T).T @ left_unfold(X))
        for T, X in zip(gp.cores[:-1], xi.components[:-1])
    ]
    return float(max(devs, default=0.0))
