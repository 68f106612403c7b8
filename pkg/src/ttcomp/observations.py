"""Sampled entries, the least-squares objective and observation files."""

from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property
from typing import Sequence

import numpy as np

from .tensor import DENSE_CAP, check_shape, dstar
from .tt import TTTensor, tt_eval_many


class ObservationFormatError(ValueError):
    pass


@dataclass(frozen=True, eq=False)
class ObservationSet:
    """A multiset of observed entries ``(x, T*(x))``.

    ``idx`` is an ``(n, m)`` array of 0-based indices and ``values`` the
    matching entries.  Samples are kept in draw order, duplicates included;
    :attr:`aggregated` collapses them by coordinate.
    """

    shape: tuple[int, ...]
    idx: np.ndarray
    values: np.ndarray

    def __post_init__(self):
        shape = check_shape(self.shape, cap=None)
        idx = np.array(self.idx, dtype=np.int64).reshape(-1, len(shape))
        values = np.array(self.values, dtype=np.float64).reshape(-1)
        if idx.shape[0] != values.shape[0]:
            raise ValueError(f"{idx.shape[0]} indices but {values.shape[0]} values")
        if idx.size and (np.any(idx < 0) or np.any(idx >= np.asarray(shape))):
            raise IndexError(f"observation index out of range for shape {shape}")
        idx.setflags(write=False)
        values.setflags(write=False)
        object.__setattr__(self, "shape", shape)
        object.__setattr__(self, "idx", idx)
        object.__setattr__(self, "values", values)

    def __len__(self):
        return self.values.shape[0]

    @property
    def n(self) -> int:
        return len(self)

    @cached_property
    def flat(self) -> np.ndarray:
        if not len(self):
            return np.zeros(0, dtype=np.int64)
        return np.ravel_multi_index(tuple(self.idx.T), self.shape)

    @cached_property
    def aggregated(self):
        """``(idx, counts, values)`` over distinct coordinates, sorted by flat index.

        Raises if a duplicated coordinate carries different values.
        """
        flat = self.flat
        uniq, first, inverse, counts = np.unique(
            flat, return_index=True, return_inverse=True, return_counts=True
        )
        vals = self.values[first]
        if np.any(self.values != vals[inverse]):
            raise ValueError("duplicate coordinates carry different values")
        return self.idx[first], counts, vals

    def subset(self, rows: np.ndarray) -> "ObservationSet":
        return ObservationSet(self.shape, self.idx[rows], self.values[rows])


def sample_uniform(shape: Sequence[int], n: int, seed, source) -> ObservationSet:
    """Draw ``n`` coordinates i.i.d. uniformly (with replacement) and read ``source``.

    ``source`` is a :class:`TTTensor` or a dense array of the given shape.
    """
    dims = check_shape(shape, cap=None)
    if n < 0:
        raise ValueError("sample size must be non-negative")
    rng = np.random.default_rng(seed)
    flat = rng.integers(0, dstar(dims), size=n, dtype=np.int64)
    idx = np.stack(np.unravel_index(flat, dims), axis=1).astype(np.int64)
    return ObservationSet(dims, idx, read_entries(source, dims, idx))


def read_entries(source, shape, idx: np.ndarray) -> np.ndarray:
    if isinstance(source, TTTensor):
        if source.shape != tuple(shape):
            raise ValueError(f"source shape {source.shape} != {tuple(shape)}")
        return tt_eval_many(source, idx)
    A = np.asarray(source, dtype=np.float64)
    if A.shape != tuple(shape):
        raise ValueError(f"source shape {A.shape} != {tuple(shape)}")
    return A[tuple(idx.T)] if len(idx) else np.zeros(0)


def _check_same_shape(T, obs: ObservationSet):
    shape = T.shape if isinstance(T, TTTensor) else np.shape(T)
    if tuple(shape) != obs.shape:
        raise ValueError(f"tensor shape {tuple(shape)} != observation shape {obs.shape}")


def residuals(T, obs: ObservationSet):
    """Residuals ``T(x) - T*(x)`` at distinct coordinates, with multiplicities."""
    _check_same_shape(T, obs)
    idx, counts, vals = obs.aggregated
    return idx, counts, read_entries(T, obs.shape, idx) - vals


def objective_f(T, obs: ObservationSet) -> float:
    """``f = 1/2 sum_{w in Omega} (T(w) - T*(w))^2``, duplicates counted."""
    _, counts, res = residuals(T, obs)
    return 0.5 * float(np.dot(counts, res * res))


def residual_gradient(T, obs: ObservationSet) -> ObservationSet:
    """Sparse Euclidean gradient ``P_Omega(T - T*)`` of :func:`objective_f`."""
    idx, counts, res = residuals(T, obs)
    return ObservationSet(obs.shape, idx, counts * res)


def dense_scatter(obs: ObservationSet, cap: int = DENSE_CAP) -> np.ndarray:
    """``P_Omega`` of the observed values as a dense tensor (duplicates summed)."""
    dims = check_shape(obs.shape, cap)
    out = np.bincount(obs.flat, weights=obs.values, minlength=dstar(dims))
    return out.reshape(dims)


def split_observations(obs: ObservationSet, k: int, seed) -> list[ObservationSet]:
    """Random partition of the sample list into ``k`` groups of near-equal size."""
    if k < 1:
        raise ValueError("need at least one group")
    if len(obs) < k:
        raise ValueError(f"cannot split {len(obs)} samples into {k} groups")
    if k == 1:
        return [obs]
    perm = np.random.default_rng(seed).permutation(len(obs))
    return [obs.subset(np.sort(part)) for part in np.array_split(perm, k)]


def write_observations(obs: ObservationSet, path) -> None:
    lines = ["# shape " + " ".join(str(d) for d in obs.shape)]
    for row, v in zip(obs.idx.tolist(), obs.values.tolist()):
        lines.append(" ".join(map(str, row)) + " " + repr(v))
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")


def read_observations(path) -> ObservationSet:
    """Parse the text format ``# shape d1 .. dm`` followed by ``x1 .. xm value``."""
    shape = None
    rows, vals = [], []
    with open(path) as fh:
        for lineno, line in enumerate(fh, start=1):
            text = line.strip()
            if not text:
                continue
            if shape is None:
                parts = text.split()
                if parts[:2] != ["#", "shape"] or len(parts) < 4:
                    raise ObservationFormatError(f"{path}:{lineno}: expected '# shape d1 ... dm'")
                try:
                    shape = check_shape([int(p) for p in parts[2:]], cap=None)
                except ValueError as exc:
                    raise ObservationFormatError(f"{path}:{lineno}: {exc}") from None
                continue
            if text.startswith("#"):
                continue
            parts = text.split()
            if len(parts) != len(shape) + 1:
                raise ObservationFormatError(
                    f"{path}:{lineno}: expected {len(shape) + 1} fields, got {len(parts)}"
                )
            try:
                x = [int(p) for p in parts[:-1]]
                v = float(parts[-1])
            except ValueError:
                raise ObservationFormatError(f"{path}:{lineno}: cannot parse {text!r}") from None
            if any(not 0 <= xi < di for xi, di in zip(x, shape)):
                raise ObservationFormatError(f"{path}:{lineno}: index {x} outside shape {shape}")
            rows.append(x)
            vals.append(v)
    if shape is None:
        raise ObservationFormatError(f"{path}: missing shape header")
    return ObservationSet(shape, np.array(rows, dtype=np.int64).reshape(-1, len(shape)), vals)
