import csv

import pytest

from ttcomp import bench
from ttcomp.bench import (
    CELL_FIELDS,
    ExperimentSpec,
    cell_seed,
    cells_csv,
    min_n_for_rate,
    read_cells,
    run_convergence,
    run_phase_grid,
    run_rank_sweep,
    run_runtime,
    run_trial,
    spec_from_dict,
    success_rates,
    write_cells,
)

SMALL = dict(kind="phase-grid", d_values=(8,), rank_values=((2, 2),), n_values=(0, 150, 512),
             trials=3, rel_change_tol=1e-6)


@pytest.fixture(scope="module")
def small_grid():
    return run_phase_grid(ExperimentSpec(**SMALL))


def test_full_sampling_cell_always_succeeds():
    res = run_phase_grid(ExperimentSpec(kind="phase-grid", d_values=(10,), n_values=(1000,),
                                        trials=10, rel_change_tol=1e-6))
    assert success_rates(res) == {(10, (2, 2), 1000): 1.0}


def test_zero_sample_cells_fail(small_grid):
    zero = [r for r in small_grid if r.n == 0]
    assert len(zero) == 3 and not any(r.success for r in zero)
    assert success_rates(small_grid)[(8, (2, 2), 0)] == 0.0


def test_rerun_gives_identical_bytes(small_grid):
    again = run_phase_grid(ExperimentSpec(**SMALL))
    assert cells_csv(again, include_wall=False) == cells_csv(small_grid, include_wall=False)


def test_parallel_run_matches_serial(small_grid):
    par = run_phase_grid(ExperimentSpec(**{**SMALL, "jobs": 2}))
    assert cells_csv(par, include_wall=False) == cells_csv(small_grid, include_wall=False)


def test_trials_do_not_depend_on_grid_layout(small_grid):
    alone = run_trial(ExperimentSpec(**SMALL), 8, (2, 2), 512, 2)
    ref = [r for r in small_grid if r.n == 512 and r.trial == 2][0]
    assert alone.row()[:8] == ref.row()[:8]


def test_cell_seed_is_stable():
    assert cell_seed(0, 40, (2, 2), 2000, 0) == cell_seed(0, 40, [2, 2], 2000, 0)
    assert cell_seed(0, 40, (2, 2), 2000, 0) != cell_seed(0, 40, (2, 2), 2000, 1)
    assert cell_seed(0, 40, (2, 2), 2000, 0) != cell_seed(1, 40, (2, 2), 2000, 0)
    assert 0 <= cell_seed(5, 1, 2) < 2**64


def test_success_flag_consistency(small_grid):
    for r in small_grid:
        assert r.success == (r.rel_err <= 0.01)


def test_csv_roundtrip(small_grid, tmp_path):
    path = tmp_path / "cells.csv"
    write_cells(small_grid, path)
    with open(path) as fh:
        assert next(csv.reader(fh)) == list(CELL_FIELDS)
    back = read_cells(path)
    assert [r.row() for r in back] == [r.row() for r in small_grid]


def test_spec_out_writes_file(tmp_path):
    out = tmp_path / "grid.csv"
    res = run_phase_grid(ExperimentSpec(**{**SMALL, "n_values": (0,), "trials": 1, "out": str(out)}))
    assert read_cells(out)[0].row() == res[0].row()


def test_rank_sweep_and_min_n():
    res = run_rank_sweep(ExperimentSpec(kind="rank-sweep", d_values=(8,), rank_values=((1, 1), (2, 2)),
                                        n_values=(0, 512), trials=2, rel_change_tol=1e-6))
    assert [r.ranks for r in res] == [(1, 1)] * 4 + [(2, 2)] * 4
    assert min_n_for_rate(res, 0.5) == {(8, (1, 1)): 512, (8, (2, 2)): 512}
    assert min_n_for_rate(res, 1.5) == {(8, (1, 1)): None, (8, (2, 2)): None}


def test_convergence_trace(tmp_path):
    out = tmp_path / "trace.csv"
    res = run_convergence(ExperimentSpec(kind="convergence", d_values=(10,), n_values=(800,),
                                         trials=1, rel_change_tol=1e-8, out=str(out)))
    errs = res.trace.errors()
    assert errs[-1] < 1e-4 * res.truth_norm and res.final_rel_err < 1e-4
    with open(out) as fh:
        rows = list(csv.DictReader(fh))
    assert "err" in rows[0] and len(rows) == len(res.trace.records)


def test_runtime_rows(tmp_path):
    out = tmp_path / "rt.csv"
    rows = run_runtime(ExperimentSpec(kind="runtime", d_values=(8, 10), n_values=(400,),
                                      trials=1, max_iters=5, out=str(out)))
    assert [r["d"] for r in rows] == [8, 10]
    assert all(r["total_ms"] > 0 and r["per_iter_ms"] > 0 for r in rows)
    with open(out) as fh:
        assert next(csv.reader(fh)) == list(bench.RUNTIME_FIELDS)


@pytest.mark.slow
def test_per_iteration_time_grows_subcubically():
    # structured path only: no dense trim, rounding retraction
    rows = run_runtime(ExperimentSpec(kind="runtime", d_values=(100, 200, 300), n_values=(60000,),
                                      trials=1, max_iters=5, trim=False))
    t = {r["d"]: r["per_iter_ms"] for r in rows}
    assert t[300] / t[100] < 27.0


@pytest.mark.parametrize("bad", [
    dict(kind="heatmap"), dict(init="given"), dict(trials=0), dict(d_values=()),
    dict(rank_values=((2, 2, 2),)), dict(n_values=(-1,)), dict(order=1),
])
def test_spec_validation(bad):
    with pytest.raises(ValueError):
        ExperimentSpec(**bad)


def test_spec_from_dict_ignores_unknown_keys():
    spec = spec_from_dict({"trials": 4, "colour": "red", "nu": None}, kind="rank-sweep")
    assert spec.trials == 4 and spec.kind == "rank-sweep" and spec.nu is None
