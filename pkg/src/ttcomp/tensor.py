"""Dense tensors, index conventions and separations.

A dense tensor is a C-contiguous ``float64`` numpy array: the last index
varies fastest, so ``flat(x) = ((x1*d2 + x2)*d3 + ...) + xm``.  With this
convention every separation ``T<i>`` (rows grouped over the first ``i``
modes, columns over the rest) is a zero-copy reshape, and the Kronecker
identities

    T^{<=i} = (T^{<=i-1} kron I_{d_i}) L(T_i)
    T^{>=i} = R(T_i) (I_{d_i} kron T^{>=i+1})

hold with numpy's ``np.kron`` index rule.
"""

from __future__ import annotations

from math import prod
from typing import Sequence

import numpy as np

#: Maximum number of entries any operation is allowed to materialise densely.
DENSE_CAP = 2**27


class DenseCapError(MemoryError):
    """Raised when an operation would materialise more than the dense cap."""


def check_shape(shape: Sequence[int], cap: int | None = DENSE_CAP) -> tuple[int, ...]:
    """Validate a tensor shape and return it as a tuple of ints.

    If ``cap`` is not None the total number of entries must not exceed it.
    """
    dims = tuple(int(d) for d in shape)
    if len(dims) < 2:
        raise ValueError(f"tensor order must be at least 2, got shape {dims}")
    if any(d < 1 for d in dims):
        raise ValueError(f"all dimensions must be positive, got {dims}")
    if cap is not None and prod(dims) > cap:
        raise DenseCapError(
            f"shape {dims} has {prod(dims)} entries, above the dense cap {cap}"
        )
    return dims


def dstar(shape: Sequence[int]) -> int:
    """Total number of entries ``d1*...*dm`` (exact integer)."""
    return prod(int(d) for d in shape)


def as_dense(data, shape: Sequence[int] | None = None) -> np.ndarray:
    """Return ``data`` as a C-contiguous float64 array, optionally reshaped."""
    arr = np.ascontiguousarray(data, dtype=np.float64)
    if shape is not None:
        dims = check_shape(shape)
        if arr.size != dstar(dims):
            raise ValueError(f"buffer of length {arr.size} does not fit shape {dims}")
        arr = arr.reshape(dims)
    else:
        check_shape(arr.shape)
    return arr


def flat_index(shape: Sequence[int], x: Sequence[int]) -> int:
    dims = tuple(shape)
    if len(x) != len(dims):
        raise IndexError(f"index {tuple(x)} has wrong length for shape {dims}")
    flat = 0
    for xi, di in zip(x, dims):
        if not 0 <= xi < di:
            raise IndexError(f"index {tuple(x)} out of range for shape {dims}")
        flat = flat * di + int(xi)
    return flat


def multi_index(shape: Sequence[int], flat: int) -> tuple[int, ...]:
    dims = tuple(shape)
    if not 0 <= flat < dstar(dims):
        raise IndexError(f"flat index {flat} out of range for shape {dims}")
    out = []
    for di in reversed(dims):
        flat, r = divmod(flat, di)
        out.append(r)
    return tuple(reversed(out))


def flat_indices(shape: Sequence[int], idx: np.ndarray) -> np.ndarray:
    """Vectorised :func:`flat_index` for an ``(n, m)`` integer array."""
    idx = np.asarray(idx, dtype=np.int64)
    dims = np.asarray(shape, dtype=np.int64)
    if idx.ndim != 2 or idx.shape[1] != len(dims):
        raise IndexError(f"index array of shape {idx.shape} does not match {tuple(shape)}")
    if np.any(idx < 0) or np.any(idx >= dims):
        raise IndexError("index array has out-of-range entries")
    return np.ravel_multi_index(tuple(idx.T), tuple(shape))


def separation(T: np.ndarray, i: int) -> np.ndarray:
    """The ``i``-th separation ``T<i>``, a ``(d1..di) x (d_{i+1}..dm)`` view.

    ``i`` is 1-based and must lie in ``[1, m-1]``.  No data is copied for a
    C-contiguous input.
    """
    m = T.ndim
    if not 1 <= i <= m - 1:
        raise ValueError(f"separation mode {i} out of range [1, {m - 1}]")
    return T.reshape(prod(T.shape[:i]), -1)


def from_separation(M: np.ndarray, shape: Sequence[int]) -> np.ndarray:
    """Reassemble a dense tensor from any of its separations."""
    return np.ascontiguousarray(M).reshape(tuple(shape))


def left_unfold(U: np.ndarray) -> np.ndarray:
    """L(U)(j*p2 + x, k) = U(j, x, k)."""
    if U.ndim != 3:
        raise ValueError(f"left unfolding needs a 3-way tensor, got ndim={U.ndim}")
    p1, p2, p3 = U.shape
    return U.reshape(p1 * p2, p3)


def right_unfold(U: np.ndarray) -> np.ndarray:
    """R(U)(j, x*p3 + k) = U(j, x, k)."""
    if U.ndim != 3:
        raise ValueError(f"right unfolding needs a 3-way tensor, got ndim={U.ndim}")
    p1, p2, p3 = U.shape
    return U.reshape(p1, p2 * p3)


# Reshape identities.  For N of size dN x (d1..di) and M of size
# (d_{i+2}..dm) x dM:
#   reshape(N T<i>, [dN d_{i+1}, d_{i+2}..dm])      == (N kron I) T<i+1>
#   reshape((N kron I) T<i+1>, [dN, d_{i+1}..dm])    == N T<i>
#   reshape(T<i+1> M, [d1..di, d_{i+1} dM])          == T<i> (I kron M)
#   reshape(T<i> (I kron M), [d1..d_{i+1}, dM])      == T<i+1> M
# With last-index-fastest grouping all four are plain row-major reshapes; the
# functions below check conformality and perform them.


def _check_mode(shape: Sequence[int], i: int, need_next: bool = True) -> None:
    m = len(shape)
    hi = m - 2 if need_next else m - 1
    if not 1 <= i <= hi:
        raise ValueError(f"mode {i} out of range [1, {hi}] for shape {tuple(shape)}")


def shift_left_forward(NT: np.ndarray, shape: Sequence[int], i: int) -> np.ndarray:
    """``N T<i>`` -> ``(N kron I_{d_{i+1}}) T<i+1>``."""
    _check_mode(shape, i)
    rest = prod(shape[i:])
    if NT.ndim != 2 or NT.shape[1] != rest:
        raise ValueError(f"expected a matrix with {rest} columns, got {NT.shape}")
    return NT.reshape(NT.shape[0] * shape[i], rest // shape[i])


def shift_left_backward(X: np.ndarray, shape: Sequence[int], i: int) -> np.ndarray:
    """``(N kron I_{d_{i+1}}) T<i+1>`` -> ``N T<i>``."""
    _check_mode(shape, i)
    di1 = shape[i]
    rest = prod(shape[i + 1:])
    if X.ndim != 2 or X.shape[1] != rest or X.shape[0] % di1:
        raise ValueError(f"matrix of shape {X.shape} is not conformal at mode {i}")
    return X.reshape(X.shape[0] // di1, di1 * rest)


def shift_right_forward(TM: np.ndarray, shape: Sequence[int], i: int) -> np.ndarray:
    """``T<i+1> M`` -> ``T<i> (I_{d_{i+1}} kron M)``."""
    _check_mode(shape, i)
    rows = prod(shape[: i + 1])
    if TM.ndim != 2 or TM.shape[0] != rows:
        raise ValueError(f"expected a matrix with {rows} rows, got {TM.shape}")
    return TM.reshape(rows // shape[i], shape[i] * TM.shape[1])


def shift_right_backward(X: np.ndarray, shape: Sequence[int], i: int) -> np.ndarray:
    """``T<i> (I_{d_{i+1}} kron M)`` -> ``T<i+1> M``."""
    _check_mode(shape, i)
    rows = prod(shape[:i])
    di1 = shape[i]
    if X.ndim != 2 or X.shape[0] != rows or X.shape[1] % di1:
        raise ValueError(f"matrix of shape {X.shape} is not conformal at mode {i}")
    return X.reshape(rows * di1, X.shape[1] // di1)
