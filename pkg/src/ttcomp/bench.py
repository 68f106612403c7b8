"""Experiment harness: phase grids, rank sweeps, convergence traces, runtimes.

Every trial derives its seed from a stable hash of the base seed and the cell
coordinates, so grids can be split, resumed or run in any order and still
produce the same rows.  Results are always written in cell order.
"""

from __future__ import annotations

import csv
import hashlib
import io
import logging
import math
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, fields
from typing import Sequence

import numpy as np
from threadpoolctl import threadpool_limits

from .completion import CompletionConfig, CompletionTrace, rgrad_complete
from .diagnostics import relative_error
from .observations import sample_uniform
from .spectral_init import InitConfig, initialize, naive_init
from .tt import TTTensor, random_tt, tt_norm

logger = logging.getLogger(__name__)

KINDS = ("phase-grid", "rank-sweep", "convergence", "runtime")
CELL_FIELDS = ("d", "ranks", "n", "trial", "seed", "iters", "rel_err", "success", "wall_ms", "init_rel_err")
RUNTIME_FIELDS = ("d", "ranks", "n", "trial", "seed", "iters", "total_ms", "per_iter_ms", "rel_err")


@dataclass
class ExperimentSpec:
    kind: str = "phase-grid"
    d_values: Sequence[int] = (40,)
    order: int = 3
    rank_values: Sequence[Sequence[int]] = ((2, 2),)
    n_values: Sequence[int] = (2000, 5000, 10000, 20000)
    trials: int = 10
    success_tol: float = 0.01
    seed: int = 0
    init: str = "spectral"
    step_constant: float = 0.12
    nu: float | None = None
    mu: float | None = None
    trim: bool | None = None
    max_iters: int = 500
    rel_change_tol: float = 1e-5
    jobs: int = 1
    out: str | None = None

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown experiment kind {self.kind!r}")
        if self.init not in ("spectral", "naive"):
            raise ValueError(f"unknown init mode {self.init!r}")
        self.d_values = tuple(int(d) for d in self.d_values)
        self.rank_values = tuple(tuple(int(r) for r in rs) for rs in self.rank_values)
        self.n_values = tuple(int(n) for n in self.n_values)
        if not (self.d_values and self.rank_values and self.n_values):
            raise ValueError("experiment ranges must be non-empty")
        if self.trials < 1:
            raise ValueError("trials must be >= 1")
        if self.order < 2:
            raise ValueError("order must be >= 2")
        for rs in self.rank_values:
            if len(rs) != self.order - 1:
                raise ValueError(f"ranks {rs} do not match order {self.order}")
        if any(n < 0 for n in self.n_values):
            raise ValueError("sample sizes must be non-negative")

    def completion_config(self, ranks) -> CompletionConfig:
        return CompletionConfig(
            ranks=ranks,
            step_constant=self.step_constant,
            nu=self.nu,
            trim=self.trim,
            max_iters=self.max_iters,
            rel_change_tol=self.rel_change_tol,
            success_tol=self.success_tol,
        )


@dataclass
class CellResult:
    d: int
    ranks: tuple
    n: int
    trial: int
    seed: int
    iters: int
    rel_err: float
    success: bool
    wall_ms: float
    init_rel_err: float

    def row(self) -> list:
        return [
            self.d,
            "x".join(map(str, self.ranks)),
            self.n,
            self.trial,
            self.seed,
            self.iters,
            repr(float(self.rel_err)),
            int(self.success),
            f"{self.wall_ms:.3f}",
            repr(float(self.init_rel_err)),
        ]


def cell_seed(base_seed: int, *coords) -> int:
    """Stable 64-bit seed for a cell/trial, independent of run order and platform."""
    key = repr((int(base_seed),) + tuple(_plain(c) for c in coords)).encode()
    return int.from_bytes(hashlib.blake2b(key, digest_size=8).digest(), "little")


def _plain(c):
    if isinstance(c, (tuple, list)):
        return tuple(int(x) for x in c)
    return int(c)


def _streams(seed: int):
    truth, sample, split = np.random.SeedSequence(seed).spawn(3)
    return truth, sample, int(split.generate_state(1)[0])


def run_trial(spec: ExperimentSpec, d: int, ranks, n: int, trial: int) -> CellResult:
    """One independent instance: truth, samples, init, RGrad.  Never raises."""
    seed = cell_seed(spec.seed, d, ranks, n, trial)
    shape = (d,) * spec.order
    t0 = time.perf_counter()
    iters, rel, init_rel = 0, math.nan, math.nan
    try:
        with threadpool_limits(1):
            truth_ss, sample_ss, split_seed = _streams(seed)
            truth = random_tt(shape, ranks, np.random.default_rng(truth_ss))
            if n == 0:
                rel, init_rel = 1.0, 1.0  # nothing observed: estimate is zero
            else:
                obs = sample_uniform(shape, n, np.random.default_rng(sample_ss), truth)
                T0 = _init(spec, obs, ranks, split_seed)
                init_rel = relative_error(T0, truth)
                T, trace = rgrad_complete(obs, spec.completion_config(ranks), T0)
                iters = trace.iterations
                rel = relative_error(T, truth)
    except Exception as exc:  # recorded as a failed trial, never aborts the grid
        logger.warning("trial d=%d r=%s n=%d #%d failed: %s", d, ranks, n, trial, exc)
    wall = 1000.0 * (time.perf_counter() - t0)
    ok = bool(math.isfinite(rel) and rel <= spec.success_tol)
    return CellResult(d, tuple(ranks), n, trial, seed, iters, rel, ok, wall, init_rel)


def _init(spec: ExperimentSpec, obs, ranks, split_seed) -> TTTensor:
    if spec.init == "naive":
        return naive_init(obs, ranks)
    return initialize(obs, ranks, InitConfig(nu=spec.nu, mu=spec.mu, seed=split_seed))


def _trial_task(args):
    return run_trial(*args)


def _run_tasks(spec: ExperimentSpec, tasks: list) -> list:
    if spec.jobs <= 1 or len(tasks) <= 1:
        return [run_trial(spec, *t) for t in tasks]
    with ProcessPoolExecutor(max_workers=spec.jobs) as pool:
        # map preserves submission order regardless of completion order
        return list(pool.map(_trial_task, [(spec,) + t for t in tasks], chunksize=1))


def run_phase_grid(spec: ExperimentSpec) -> list[CellResult]:
    tasks = [
        (d, spec.rank_values[0], n, t)
        for d in spec.d_values
        for n in spec.n_values
        for t in range(spec.trials)
    ]
    return _finish(spec, _run_tasks(spec, tasks))


def run_rank_sweep(spec: ExperimentSpec) -> list[CellResult]:
    d = spec.d_values[0]
    tasks = [(d, r, n, t) for r in spec.rank_values for n in spec.n_values for t in range(spec.trials)]
    return _finish(spec, _run_tasks(spec, tasks))


def _finish(spec, results):
    if spec.out:
        write_cells(results, spec.out)
    return results


def cells_csv(results: Sequence[CellResult], include_wall: bool = True) -> str:
    cols = [k for k in CELL_FIELDS if include_wall or k != "wall_ms"]
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(cols)
    for r in results:
        row = dict(zip(CELL_FIELDS, r.row()))
        w.writerow([row[k] for k in cols])
    return buf.getvalue()


def write_cells(results: Sequence[CellResult], path) -> None:
    with open(path, "w", newline="") as fh:
        fh.write(cells_csv(results))


def read_cells(path) -> list[CellResult]:
    out = []
    with open(path, newline="") as fh:
        for row in csv.DictReader(fh):
            out.append(CellResult(
                d=int(row["d"]),
                ranks=tuple(int(x) for x in row["ranks"].split("x")),
                n=int(row["n"]),
                trial=int(row["trial"]),
                seed=int(row["seed"]),
                iters=int(row["iters"]),
                rel_err=float(row["rel_err"]),
                success=bool(int(row["success"])),
                wall_ms=float(row["wall_ms"]),
                init_rel_err=float(row["init_rel_err"]),
            ))
    return out


def success_rates(results: Sequence[CellResult]) -> dict:
    """``{(d, ranks, n): fraction of successful trials}`` in first-seen order."""
    acc: dict = {}
    for r in results:
        acc.setdefault((r.d, r.ranks, r.n), []).append(r.success)
    return {k: sum(v) / len(v) for k, v in acc.items()}


def min_n_for_rate(results: Sequence[CellResult], rate: float) -> dict:
    """Smallest swept ``n`` reaching ``rate`` for each ``(d, ranks)``; ``None`` if never."""
    out: dict = {}
    for (d, ranks, n), p in success_rates(results).items():
        out.setdefault((d, ranks), None)
        if p >= rate and (out[(d, ranks)] is None or n < out[(d, ranks)]):
            out[(d, ranks)] = n
    return out


@dataclass
class ConvergenceResult:
    trace: CompletionTrace
    truth_norm: float
    sigma_min: float
    init_rel_err: float
    final_rel_err: float


def run_convergence(spec: ExperimentSpec, trial: int = 0) -> ConvergenceResult:
    """Single instance with the true error recorded at every iteration."""
    from .tt import sigma_min

    d, ranks, n = spec.d_values[0], spec.rank_values[0], spec.n_values[0]
    seed = cell_seed(spec.seed, d, ranks, n, trial)
    shape = (d,) * spec.order
    with threadpool_limits(1):
        truth_ss, sample_ss, split_seed = _streams(seed)
        truth = random_tt(shape, ranks, np.random.default_rng(truth_ss))
        obs = sample_uniform(shape, n, np.random.default_rng(sample_ss), truth)
        T0 = _init(spec, obs, ranks, split_seed)
        T, trace = rgrad_complete(obs, spec.completion_config(ranks), T0, truth=truth)
    if spec.out:
        trace.to_csv(spec.out, with_error=True)
    return ConvergenceResult(
        trace, tt_norm(truth), sigma_min(truth), relative_error(T0, truth), relative_error(T, truth)
    )


def run_runtime(spec: ExperimentSpec) -> list[dict]:
    """Total and per-iteration wall time for every (d, ranks) pair at ``n_values[0]``."""
    n = spec.n_values[0]
    rows = []
    for d in spec.d_values:
        for ranks in spec.rank_values:
            for t in range(spec.trials):
                seed = cell_seed(spec.seed, d, ranks, n, t)
                shape = (d,) * spec.order
                with threadpool_limits(1):
                    truth_ss, sample_ss, split_seed = _streams(seed)
                    truth = random_tt(shape, ranks, np.random.default_rng(truth_ss))
                    obs = sample_uniform(shape, n, np.random.default_rng(sample_ss), truth)
                    t0 = time.perf_counter()
                    T0 = _init(spec, obs, ranks, split_seed)
                    T, trace = rgrad_complete(obs, spec.completion_config(ranks), T0)
                    total = 1000.0 * (time.perf_counter() - t0)
                per_iter = [r.wall_ms for r in trace.records[1:]]
                rows.append({
                    "d": d,
                    "ranks": "x".join(map(str, ranks)),
                    "n": n,
                    "trial": t,
                    "seed": seed,
                    "iters": trace.iterations,
                    "total_ms": total,
                    "per_iter_ms": float(np.median(per_iter)) if per_iter else math.nan,
                    "rel_err": relative_error(T, truth),
                })
    if spec.out:
        with open(spec.out, "w", newline="") as fh:
            w = csv.DictWriter(fh, fieldnames=RUNTIME_FIELDS, lineterminator="\n")
            w.writeheader()
            w.writerows(rows)
    return rows


def spec_from_dict(cfg: dict, **defaults) -> ExperimentSpec:
    """Build a spec from a config mapping, ignoring keys it does not know."""
    names = {f.name for f in fields(ExperimentSpec)}
    merged = {**defaults, **{k: v for k, v in cfg.items() if k in names and v is not None}}
    return ExperimentSpec(**merged)
