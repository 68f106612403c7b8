import json
import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from ttcomp.diagnostics import (
    detect_tt_rank,
    diagnose,
    incoherence,
    relative_error,
    spikiness,
    spikiness_lower_bound,
)
from ttcomp.tt import TTTensor, condition_number, random_tt, tt_add, tt_full, tt_scale

shapes = st.sampled_from([(4, 5, 6), (6, 6, 6), (3, 4, 5, 4), (8, 9, 7), (5, 4, 3, 3)])


def _ranks_for(shape, rng):
    return tuple(int(rng.integers(1, 4)) for _ in shape[1:])


def _feasible(shape, ranks):
    out = []
    for i, r in enumerate(ranks, start=1):
        left = int(np.prod(shape[:i]))
        right = int(np.prod(shape[i:]))
        out.append(min(r, left, right))
    return tuple(out)


def test_spikiness_trivial_cases():
    assert spikiness(np.ones((3, 4, 5))) == pytest.approx(1.0, rel=1e-15)
    e = np.zeros((3, 4, 5))
    e[1, 2, 3] = -4.0
    assert spikiness(e) == pytest.approx(math.sqrt(60), rel=1e-15)
    with pytest.raises(ValueError):
        spikiness(np.zeros((2, 2)))


def test_spikiness_tt_matches_dense():
    T = random_tt((7, 8, 9), (2, 3), 4)
    A = tt_full(T)
    expected = math.sqrt(A.size) * np.abs(A).max() / np.linalg.norm(A)
    assert spikiness(T) == pytest.approx(expected, rel=1e-12)
    assert spikiness_lower_bound(T, 5000, seed=1) <= spikiness(T) * (1 + 1e-12)


def test_incoherence_trivial_cases():
    assert incoherence(np.ones((2, 2))) == pytest.approx(1.0, rel=1e-12)
    e = np.zeros((4, 5, 6))
    e[0, 0, 0] = 1.0
    # rank-one separations with unit-vector factors: sqrt(p / 1) * 1 at the largest side
    assert incoherence(e) == pytest.approx(math.sqrt(30), rel=1e-12)
    with pytest.raises(ValueError):
        incoherence(np.zeros((3, 3)))


def test_incoherence_tt_matches_dense_svd():
    for seed in range(5):
        T = random_tt((5, 6, 4, 3), (2, 3, 2), seed)
        assert incoherence(T) == pytest.approx(incoherence(tt_full(T), T.ranks), rel=1e-10)


@given(shapes, st.integers(0, 2**31))
def test_incoherence_bounded_by_spikiness_times_condition(shape, seed):
    rng = np.random.default_rng(seed)
    ranks = _feasible(shape, _ranks_for(shape, rng))
    T = random_tt(shape, ranks, rng)
    assert incoherence(T) <= spikiness(T) * condition_number(T) * (1 + 1e-8)


def test_relative_error_examples():
    T = random_tt((5, 6, 7), (2, 2), 3)
    assert relative_error(T, T) <= 1e-12
    assert relative_error(tt_scale(T, 2.0), T) == pytest.approx(1.0, rel=1e-12)
    S = random_tt((5, 6, 7), (3, 1), 4)
    dense = relative_error(tt_full(S), tt_full(T))
    assert relative_error(S, T) == pytest.approx(dense, rel=1e-12)
    with pytest.raises(ValueError):
        relative_error(T, tt_scale(T, 0.0))
    with pytest.raises(ValueError):
        relative_error(np.ones((2, 3)), np.ones((3, 2)))


def test_detect_tt_rank_examples():
    T = random_tt((6, 7, 8), (2, 3), 1)
    assert detect_tt_rank(tt_full(T)) == (2, 3)
    assert detect_tt_rank(np.zeros((3, 4, 5))) == (0, 0)
    a = random_tt((6, 7, 8), (1, 1), 2)
    b = random_tt((6, 7, 8), (1, 1), 3)
    assert detect_tt_rank(tt_full(tt_add(a, b))) == (2, 2)


@given(st.integers(0, 2**31), st.floats(1e-3, 1e3))
def test_scale_invariance(seed, c):
    T = random_tt((5, 6, 4), (2, 2), seed)
    cT = tt_scale(T, c)
    for f in (spikiness, incoherence, condition_number):
        assert f(cT) == pytest.approx(f(T), rel=1e-12)


def test_diagnose_report_roundtrips_json():
    T = random_tt((6, 5, 4), (2, 2), 9)
    rep = diagnose(T, reference=T)
    data = json.loads(rep.to_json())
    assert data["spikiness"] >= 1.0 and data["incoherence"] >= 1.0
    assert data["condition_number"] >= 1.0 and data["spikiness_exact"] is True
    assert data["relative_error"] == pytest.approx(0.0, abs=1e-12)
    assert data["condition_number"] == pytest.approx(condition_number(T), rel=1e-10)
    dense = diagnose(tt_full(T), ranks=(2, 2))
    assert dense.sigma_min == pytest.approx(rep.sigma_min, rel=1e-10)
    assert dense.incoherence == pytest.approx(rep.incoherence, rel=1e-10)


def test_diagnose_above_cap_uses_labelled_lower_bound():
    T = random_tt((30, 30, 30), (2, 2), 1)
    rep = diagnose(T, cap=1000)
    assert rep.spikiness_exact is False and rep.incoherence is None
    assert rep.spikiness <= spikiness(T) * (1 + 1e-12)
