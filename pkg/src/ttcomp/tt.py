"""Tensor-train tensors: construction, TT-SVD, gauges, rounding and arithmetic.

Core ``i`` (0-based here) has shape ``(r_{i-1}, d_i, r_i)`` with
``r_{-1} = r_{m-1} = 1``; the entry at ``x`` is the matrix product
``T_1(x_1) T_2(x_2) ... T_m(x_m)``.
"""

from __future__ import annotations

import logging
import struct
from dataclasses import dataclass
from math import prod
from pathlib import Path
from typing import Sequence

import numpy as np
import scipy.linalg

from .tensor import (
    DENSE_CAP,
    DenseCapError,
    check_shape,
    dstar,
    left_unfold,
    right_unfold,
    separation,
    shift_left_forward,
)

logger = logging.getLogger(__name__)

GAUGES = ("none", "left", "right")

# Singular values below this fraction of the largest are treated as zero.
RANK_DEFICIENCY_RTOL = 1e-14


class IllConditionedPoint(ValueError):
    """The TT point lies (numerically) on the boundary of its rank manifold."""


@dataclass(frozen=True)
class TTTensor:
    """An m-way tensor stored as a train of 3-way cores.

    ``gauge`` records whether the cores are left-orthogonal (``L(T_i)^T L(T_i)
    = I`` for all but the last core), right-orthogonal (``R(T_i) R(T_i)^T = I``
    for all but the first core) or neither.  Cores are made read-only.
    """

    cores: tuple[np.ndarray, ...]
    gauge: str = "none"

    def __post_init__(self):
        cores = tuple(np.array(c, dtype=np.float64, order="C") for c in self.cores)
        if len(cores) < 2:
            raise ValueError("a TT tensor needs at least two cores")
        if self.gauge not in GAUGES:
            raise ValueError(f"unknown gauge {self.gauge!r}")
        prev = 1
        for k, c in enumerate(cores):
            if c.ndim != 3:
                raise ValueError(f"core {k} is not 3-way: shape {c.shape}")
            if c.shape[0] != prev:
                raise ValueError(f"core {k} has left rank {c.shape[0]}, expected {prev}")
            prev = c.shape[2]
            c.setflags(write=False)
        if prev != 1:
            raise ValueError(f"last core has right rank {prev}, expected 1")
        object.__setattr__(self, "cores", cores)

    @property
    def ndim(self) -> int:
        return len(self.cores)

    @property
    def shape(self) -> tuple[int, ...]:
        return tuple(c.shape[1] for c in self.cores)

    @property
    def ranks(self) -> tuple[int, ...]:
        return tuple(c.shape[2] for c in self.cores[:-1])

    def __repr__(self):
        return f"TTTensor(shape={self.shape}, ranks={self.ranks}, gauge={self.gauge!r})"


# ---------------------------------------------------------------------------
# linear algebra backend


def svd(M: np.ndarray):
    """Thin SVD ``M = U diag(s) Vt``; falls back to the QR-iteration driver."""
    try:
        return np.linalg.svd(M, full_matrices=False)
    except np.linalg.LinAlgError:
        logger.warning("gesdd failed on a %s matrix, retrying with gesvd", M.shape)
        return scipy.linalg.svd(M, full_matrices=False, lapack_driver="gesvd")


def _complete_orthonormal(U: np.ndarray, r: int) -> np.ndarray:
    """Pad orthonormal columns ``U`` to ``r`` columns with canonical directions."""
    n = U.shape[0]
    cols = [U[:, j] for j in range(U.shape[1])]
    for j in range(n):
        if len(cols) >= r:
            break
        v = np.zeros(n)
        v[j] = 1.0
        for _ in range(2):
            for c in cols:
                v -= (c @ v) * c
        nv = np.linalg.norm(v)
        if nv > 1e-8:
            cols.append(v / nv)
    return np.column_stack(cols) if cols else np.zeros((n, 0))


def top_left_singular_vectors(M: np.ndarray, r: int):
    """Leading ``r`` left singular vectors of ``M`` and all its singular values.

    Directions belonging to numerically zero singular values are replaced by
    a deterministic orthonormal completion.
    """
    if r > M.shape[0]:
        raise ValueError(f"cannot extract {r} orthonormal columns from {M.shape[0]} rows")
    U, s, _ = svd(M)
    if s.size == 0 or s[0] == 0.0:
        k = 0
    else:
        k = int(np.count_nonzero(s > RANK_DEFICIENCY_RTOL * s[0]))
    if k >= r:
        return U[:, :r], s
    return _complete_orthonormal(U[:, :k], r), s


# ---------------------------------------------------------------------------
# rank vectors


def check_ranks(shape: Sequence[int], ranks: Sequence[int]) -> tuple[int, ...]:
    """Validate a TT rank vector against a shape.

    Besides ``r_i <= min(d1..di, d_{i+1}..dm)`` the chain conditions
    ``r_i <= r_{i-1} d_i`` and ``r_i <= d_{i+1} r_{i+1}`` are enforced; every
    genuine TT rank satisfies them.
    """
    dims = tuple(int(d) for d in shape)
    r = tuple(int(x) for x in ranks)
    m = len(dims)
    if len(r) != m - 1:
        raise ValueError(f"need {m - 1} ranks for shape {dims}, got {r}")
    if any(x < 1 for x in r):
        raise ValueError(f"ranks must be positive, got {r}")
    full = (1,) + r + (1,)
    for i in range(1, m):
        ri = full[i]
        if ri > min(prod(dims[:i]), prod(dims[i:])):
            raise ValueError(f"rank r_{i}={ri} infeasible for shape {dims}")
        if ri > full[i - 1] * dims[i - 1] or ri > dims[i] * full[i + 1]:
            raise ValueError(f"rank vector {r} violates the TT rank chain bounds for {dims}")
    return r


# ---------------------------------------------------------------------------
# evaluation


def tt_eval(T: TTTensor, x: Sequence[int]) -> float:
    if len(x) != T.ndim:
        raise IndexError(f"index {tuple(x)} has wrong length for shape {T.shape}")
    v = np.ones((1,))
    for c, xi in zip(T.cores, x):
        if not 0 <= xi < c.shape[1]:
            raise IndexError(f"index {tuple(x)} out of range for shape {T.shape}")
        v = v @ c[:, xi, :]
    return float(v[0])


def tt_eval_many(T: TTTensor, idx: np.ndarray) -> np.ndarray:
    """Evaluate ``T`` at each row of an ``(n, m)`` integer index array."""
    idx = np.asarray(idx, dtype=np.int64)
    if idx.ndim != 2 or idx.shape[1] != T.ndim:
        raise IndexError(f"index array of shape {idx.shape} does not match order {T.ndim}")
    if np.any(idx < 0) or np.any(idx >= np.asarray(T.shape)):
        raise IndexError("index array has out-of-range entries")
    v = T.cores[0][0, idx[:, 0], :]
    for k in range(1, T.ndim):
        v = np.einsum("na,anb->nb", v, T.cores[k][:, idx[:, k], :])
    return v[:, 0].copy()


def left_part(T: TTTensor, i: int) -> np.ndarray:
    """Dense left part ``T^{<=i}`` of size ``(d1..di) x r_i`` (1-based ``i``)."""
    if not 0 <= i <= T.ndim:
        raise ValueError(f"left part index {i} out of range")
    M = np.ones((1, 1))
    for c in T.cores[:i]:
        M = (M @ right_unfold(c)).reshape(-1, c.shape[2])
    return M


def right_part(T: TTTensor, i: int) -> np.ndarray:
    """Dense right part ``T^{>=i}`` of size ``r_{i-1} x (d_i..dm)`` (1-based ``i``)."""
    if not 1 <= i <= T.ndim + 1:
        raise ValueError(f"right part index {i} out of range")
    M = np.ones((1, 1))
    for c in reversed(T.cores[i - 1:]):
        M = (left_unfold(c) @ M).reshape(c.shape[0], -1)
    return M


def tt_full(T: TTTensor, cap: int = DENSE_CAP) -> np.ndarray:
    """Densify ``T`` (C order)."""
    check_shape(T.shape, cap)
    M = np.ones((1, 1))
    for c in T.cores:
        M = M.reshape(-1, c.shape[0]) @ right_unfold(c)
    return M.reshape(T.shape)


# ---------------------------------------------------------------------------
# decomposition and gauges


def tt_svd(A: np.ndarray, ranks: Sequence[int]) -> TTTensor:
    """Sequential truncated SVD of a dense tensor; left-orthogonal output.

    Step ``i`` takes the top ``r_i`` left singular vectors of
    ``(T^{<=i-1} kron I)^T A<i>``, which is obtained from the previous step's
    projected separation by a reshape.
    """
    A = np.ascontiguousarray(A, dtype=np.float64)
    dims = check_shape(A.shape)
    r = check_ranks(dims, ranks)
    m = len(dims)
    cores = []
    C = separation(A, 1)
    r_prev = 1
    for i in range(1, m):
        U, _ = top_left_singular_vectors(C, r[i - 1])
        cores.append(U.reshape(r_prev, dims[i - 1], r[i - 1]))
        NT = U.T @ C
        if i < m - 1:
            C = shift_left_forward(NT, (r[i - 1],) + dims[i:], 1)
        else:
            cores.append(NT.reshape(r[i - 1], dims[-1], 1))
        r_prev = r[i - 1]
    return TTTensor(tuple(cores), gauge="left")


def left_orthogonalize(T: TTTensor) -> TTTensor:
    """QR sweep left to right.  Ranks shrink only where they exceed
    ``r_{i-1} d_i`` (then the representation was redundant)."""
    cores = list(T.cores)
    for k in range(T.ndim - 1):
        c = cores[k]
        Q, R = np.linalg.qr(left_unfold(c))
        cores[k] = Q.reshape(c.shape[0], c.shape[1], Q.shape[1])
        cores[k + 1] = np.tensordot(R, cores[k + 1], axes=(1, 0))
    return TTTensor(tuple(cores), gauge="left")


def right_orthogonalize(T: TTTensor) -> TTTensor:
    """QR sweep right to left, mirror image of :func:`left_orthogonalize`."""
    cores = list(T.cores)
    for k in range(T.ndim - 1, 0, -1):
        c = cores[k]
        Q, R = np.linalg.qr(right_unfold(c).T)
        cores[k] = Q.T.reshape(Q.shape[1], c.shape[1], c.shape[2])
        cores[k - 1] = np.tensordot(cores[k - 1], R.T, axes=(2, 0))
    return TTTensor(tuple(cores), gauge="right")


def right_interfaces(T: TTTensor):
    """Right-orthogonal cores and interface factors of a left-orthogonal ``T``.

    Returns ``(right_cores, lams)`` where ``right_cores[k]`` (k >= 1) is
    right-orthogonal and ``lams[i-1]`` is the lower-triangular ``r_i x r_i``
    matrix with ``T^{>=i+1} = lams[i-1] V_{i+1}^T``; ``V_{i+1}^T`` is the right
    part built from ``right_cores[i:]`` and has orthonormal rows.  Since
    ``T^{<=i}`` has orthonormal columns, the singular values of ``T<i>`` are
    those of ``lams[i-1]``.
    """
    m = T.ndim
    right = [None] * m
    lams = [None] * (m - 1)
    carry = np.ones((1, 1))
    for k in range(m - 1, 0, -1):
        c = np.tensordot(T.cores[k], carry, axes=(2, 0))
        Q, R = np.linalg.qr(right_unfold(c).T)
        if Q.shape[1] != c.shape[0]:
            raise IllConditionedPoint(f"core {k} is too thin to carry rank {c.shape[0]}")
        right[k] = Q.T.reshape(c.shape[0], c.shape[1], c.shape[2])
        carry = R.T
        lams[k - 1] = carry
    return right, lams


def tt_rounding(T: TTTensor, ranks: Sequence[int]) -> TTTensor:
    """Truncate ``T`` to smaller TT ranks without densifying.

    After a right-orthogonal sweep, each left-to-right truncation step only
    needs the SVD of an ``(r_{i-1} d_i) x s_i`` matrix; the result equals
    :func:`tt_svd` applied to the dense tensor, up to core rotations.
    """
    r = check_ranks(T.shape, ranks)
    if any(a > b for a, b in zip(r, T.ranks)):
        raise ValueError(f"target ranks {r} exceed current ranks {T.ranks}")
    cores = list(right_orthogonalize(T).cores)
    r_prev = 1
    for k in range(T.ndim - 1):
        c = cores[k]
        M = left_unfold(c)
        U, _ = top_left_singular_vectors(M, r[k])
        cores[k] = U.reshape(r_prev, c.shape[1], r[k])
        cores[k + 1] = np.tensordot(U.T @ M, cores[k + 1], axes=(1, 0))
        r_prev = r[k]
    return TTTensor(tuple(cores), gauge="left")


# ---------------------------------------------------------------------------
# arithmetic


def tt_add(A: TTTensor, B: TTTensor) -> TTTensor:
    """Sum with block cores; ranks add componentwise."""
    if A.shape != B.shape:
        raise ValueError(f"shape mismatch: {A.shape} vs {B.shape}")
    m = A.ndim
    cores = [np.concatenate([A.cores[0], B.cores[0]], axis=2)]
    for k in range(1, m - 1):
        a, b = A.cores[k], B.cores[k]
        c = np.zeros((a.shape[0] + b.shape[0], a.shape[1], a.shape[2] + b.shape[2]))
        c[: a.shape[0], :, : a.shape[2]] = a
        c[a.shape[0]:, :, a.shape[2]:] = b
        cores.append(c)
    cores.append(np.concatenate([A.cores[-1], B.cores[-1]], axis=0))
    return TTTensor(tuple(cores))


def tt_scale(A: TTTensor, c: float) -> TTTensor:
    """``c * A``; the last core is scaled so a left gauge is preserved."""
    cores = list(A.cores)
    gauge = A.gauge
    if gauge == "right":
        cores[0] = cores[0] * c
    else:
        cores[-1] = cores[-1] * c
    return TTTensor(tuple(cores), gauge=gauge)


def tt_sub(A: TTTensor, B: TTTensor) -> TTTensor:
    return tt_add(A, tt_scale(B, -1.0))


def tt_inner(A: TTTensor, B: TTTensor) -> float:
    if A.shape != B.shape:
        raise ValueError(f"shape mismatch: {A.shape} vs {B.shape}")
    G = np.ones((1, 1))
    for a, b in zip(A.cores, B.cores):
        t = np.tensordot(G, a, axes=(0, 0))
        G = np.tensordot(t, b, axes=([0, 1], [0, 1]))
    return float(G[0, 0])


def tt_norm(A: TTTensor) -> float:
    """Frobenius norm, computed from the last core of a left-orthogonal form."""
    if A.gauge != "left":
        A = left_orthogonalize(A)
    return float(np.linalg.norm(A.cores[-1]))


def tt_distance(A: TTTensor, B: TTTensor) -> float:
    """``||A - B||_F`` without densifying."""
    return tt_norm(tt_sub(A, B))


# ---------------------------------------------------------------------------
# random instances and spectra


def random_tt(shape: Sequence[int], ranks: Sequence[int], seed, cap: int = DENSE_CAP) -> TTTensor:
    """Random low-TT-rank tensor, deterministic in ``seed``.

    Below the dense cap a standard Gaussian tensor is truncated by
    :func:`tt_svd`.  Above it, Gaussian cores are drawn and left-orthogonalised
    instead; this changes the distribution (see :func:`random_tt_is_dense`).
    """
    dims = check_shape(shape, cap=None)
    r = check_ranks(dims, ranks)
    rng = np.random.default_rng(seed)
    if random_tt_is_dense(dims, cap):
        return tt_svd(rng.standard_normal(dims), r)
    logger.warning("shape %s above the dense cap: drawing Gaussian cores instead", dims)
    full = (1,) + r + (1,)
    cores = tuple(
        rng.standard_normal((full[k], dims[k], full[k + 1])) for k in range(len(dims))
    )
    return left_orthogonalize(TTTensor(cores))


def random_tt_is_dense(shape: Sequence[int], cap: int = DENSE_CAP) -> bool:
    """Whether :func:`random_tt` uses the dense truncation path for ``shape``."""
    return dstar(shape) <= cap


def singular_values(T, i: int) -> np.ndarray:
    """Singular values of the ``i``-th separation (1-based) of a dense or TT tensor.

    For TT input only the leading ``r_i`` values are returned, computed from
    the interface factor, so no densification happens.
    """
    if isinstance(T, TTTensor):
        if not 1 <= i <= T.ndim - 1:
            raise ValueError(f"separation mode {i} out of range")
        L = T if T.gauge == "left" else left_orthogonalize(T)
        _, lams = right_interfaces(L)
        return np.linalg.svd(lams[i - 1], compute_uv=False)
    A = np.asarray(T, dtype=np.float64)
    return np.linalg.svd(separation(A, i), compute_uv=False)


def separation_spectra(T, ranks: Sequence[int] | None = None) -> list[np.ndarray]:
    """Per-separation singular values; dense inputs are cut to ``ranks`` if given."""
    m = T.ndim
    out = []
    for i in range(1, m):
        s = singular_values(T, i)
        if ranks is not None and not isinstance(T, TTTensor):
            s = s[: ranks[i - 1]]
        out.append(s)
    return out


def sigma_min(T, ranks: Sequence[int] | None = None) -> float:
    """Smallest relevant singular value over all separations."""
    if ranks is None and not isinstance(T, TTTensor):
        raise ValueError("ranks are required for dense input")
    return float(min(s[-1] for s in separation_spectra(T, ranks)))


def sigma_max(T, ranks: Sequence[int] | None = None) -> float:
    return float(max(s[0] for s in separation_spectra(T, ranks)))


def condition_number(T, ranks: Sequence[int] | None = None) -> float:
    """``kappa_0 = sigma_max / sigma_min``; undefined for rank-deficient input."""
    lo = sigma_min(T, ranks)
    if lo == 0.0:
        raise ZeroDivisionError("condition number undefined: smallest singular value is zero")
    return sigma_max(T, ranks) / lo


# ---------------------------------------------------------------------------
# container format

MAGIC = b"TTC1"


def save_tt(T: TTTensor, path) -> None:
    """Write the little-endian TT container: magic, m, dims, ranks, cores."""
    m = T.ndim
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<I", m))
        fh.write(np.asarray(T.shape, dtype="<u4").tobytes())
        fh.write(np.asarray(T.ranks, dtype="<u4").tobytes())
        for c in T.cores:
            fh.write(np.ascontiguousarray(c, dtype="<f8").tobytes())


def load_tt(path) -> TTTensor:
    """Read a TT container, validating every size exactly."""
    data = Path(path).read_bytes()
    if data[:4] != MAGIC:
        raise ValueError(f"{path}: bad magic {data[:4]!r}")
    if len(data) < 8:
        raise ValueError(f"{path}: truncated header")
    (m,) = struct.unpack("<I", data[4:8])
    if m < 2:
        raise ValueError(f"{path}: order {m} < 2")
    off = 8
    head = 4 * (2 * m - 1)
    if len(data) < off + head:
        raise ValueError(f"{path}: truncated header")
    dims = np.frombuffer(data, dtype="<u4", count=m, offset=off).astype(int)
    ranks = np.frombuffer(data, dtype="<u4", count=m - 1, offset=off + 4 * m).astype(int)
    off += head
    full = [1] + list(ranks) + [1]
    sizes = [full[k] * dims[k] * full[k + 1] for k in range(m)]
    if len(data) != off + 8 * sum(sizes):
        raise ValueError(
            f"{path}: expected {off + 8 * sum(sizes)} bytes, found {len(data)}"
        )
    cores = []
    for k in range(m):
        c = np.frombuffer(data, dtype="<f8", count=sizes[k], offset=off)
        cores.append(c.astype(np.float64).reshape(full[k], dims[k], full[k + 1]))
        off += 8 * sizes[k]
    return TTTensor(tuple(cores), gauge=detect_gauge(cores))


def detect_gauge(cores, tol: float = 1e-12) -> str:
    """Infer the orthogonality gauge of a list of cores."""
    def dev(M):
        return np.linalg.norm(M - np.eye(M.shape[0])) / max(M.shape[0], 1)

    if all(dev(left_unfold(c).T @ left_unfold(c)) <= tol for c in cores[:-1]):
        return "left"
    if all(dev(right_unfold(c) @ right_unfold(c).T) <= tol for c in cores[1:]):
        return "right"
    return "none"
