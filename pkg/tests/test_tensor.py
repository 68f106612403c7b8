import itertools

import numpy as np
import pytest
from hypothesis import given, strategies as st

from ttcomp.tensor import (
    DenseCapError,
    check_shape,
    flat_index,
    from_separation,
    left_unfold,
    multi_index,
    right_unfold,
    separation,
    shift_left_backward,
    shift_left_forward,
    shift_right_backward,
    shift_right_forward,
)

shapes = st.lists(st.integers(1, 6), min_size=2, max_size=5).map(tuple)


def test_flat_index_examples():
    assert flat_index((2, 3), (0, 0)) == 0
    assert flat_index((2, 3), (1, 2)) == 5
    assert flat_index((2, 3, 4), (1, 0, 2)) == (1 * 3 + 0) * 4 + 2 == 14


def test_flat_index_out_of_range():
    with pytest.raises(IndexError):
        flat_index((2, 3), (2, 0))
    with pytest.raises(IndexError):
        flat_index((2, 3), (0, -1))


@given(shapes, st.data())
def test_flat_multi_inverse(shape, data):
    x = tuple(data.draw(st.integers(0, d - 1)) for d in shape)
    k = flat_index(shape, x)
    assert multi_index(shape, k) == x
    assert 0 <= k < int(np.prod(shape))


def test_shape_validation():
    with pytest.raises(ValueError):
        check_shape((3,))
    with pytest.raises(ValueError):
        check_shape((3, 0))
    with pytest.raises(DenseCapError):
        check_shape((2**14, 2**14), cap=2**27)
    assert check_shape((2**14, 2**14), cap=None) == (2**14, 2**14)


def test_separation_examples(rng):
    ones = np.ones((2, 2, 2))
    S = separation(ones, 2)
    assert S.shape == (4, 2) and np.all(S == 1)
    T = rng.standard_normal((3, 4, 5))
    S = separation(T, 2)
    for x1, x2, x3 in itertools.product(range(3), range(4), range(5)):
        assert S[x1 * 4 + x2, x3] == T[x1, x2, x3]
    assert np.shares_memory(S, T)
    with pytest.raises(ValueError):
        separation(T, 3)


@given(shapes, st.integers(0, 2**31))
def test_separation_round_trip(shape, seed):
    T = np.random.default_rng(seed).standard_normal(shape)
    for i in range(1, len(shape)):
        assert np.array_equal(from_separation(separation(T, i), shape), T)


def test_unfoldings(rng):
    U = np.full((1, 1, 1), 3.0)
    assert left_unfold(U).shape == (1, 1) and right_unfold(U).shape == (1, 1)
    U = np.zeros((2, 2, 2))
    for j in range(2):
        U[j] = j
    assert np.array_equal(left_unfold(U)[:, 0], [0, 0, 1, 1])
    assert np.array_equal(left_unfold(U)[:, 1], [0, 0, 1, 1])
    V = rng.standard_normal((3, 4, 2))
    L, R = left_unfold(V), right_unfold(V)
    for j, x, k in itertools.product(range(3), range(4), range(2)):
        assert L[j * 4 + x, k] == V[j, x, k]
        assert R[j, x * 2 + k] == V[j, x, k]
    assert np.array_equal(L.reshape(V.shape), V)
    with pytest.raises(ValueError):
        left_unfold(np.zeros((2, 2)))


def _reshape_case(rng, shape, i, dN=3, dM=2):
    T = rng.standard_normal(shape)
    N = rng.standard_normal((dN, int(np.prod(shape[:i]))))
    M = rng.standard_normal((int(np.prod(shape[i + 1:])), dM))
    I = np.eye(shape[i])
    return T, N, M, I


@pytest.mark.parametrize("shape,i", [((2, 3, 2, 2), 1), ((2, 3, 2, 2), 2), ((2, 2, 3), 1)])
def test_reshape_identities_exact(rng, shape, i):
    T, N, M, I = _reshape_case(rng, shape, i)
    lhs = shift_left_forward(N @ separation(T, i), shape, i)
    rhs = np.kron(N, I) @ separation(T, i + 1)
    assert np.allclose(lhs, rhs, rtol=1e-13, atol=1e-13)
    assert np.allclose(shift_left_backward(rhs, shape, i), N @ separation(T, i), rtol=1e-13, atol=1e-13)

    lhs = shift_right_forward(separation(T, i + 1) @ M, shape, i)
    rhs = separation(T, i) @ np.kron(I, M)
    assert np.allclose(lhs, rhs, rtol=1e-13, atol=1e-13)
    assert np.allclose(shift_right_backward(rhs, shape, i), separation(T, i + 1) @ M, rtol=1e-13, atol=1e-13)


def test_reshape_identity_with_identity_is_pure_reshape(rng):
    shape = (2, 3, 2, 2)
    T = rng.standard_normal(shape)
    out = shift_left_forward(separation(T, 1), shape, 1)
    assert np.array_equal(out, separation(T, 2))


@given(st.lists(st.integers(1, 4), min_size=3, max_size=5).map(tuple), st.integers(0, 2**31))
def test_reshape_identities_bitwise_on_integers(shape, seed):
    # integer-valued data: both sides are exact, so the reindexing must match to 0 ulp
    rng = np.random.default_rng(seed)
    T = rng.integers(-5, 5, size=shape).astype(float)
    for i in range(1, len(shape) - 1):
        N = rng.integers(-3, 3, size=(2, int(np.prod(shape[:i])))).astype(float)
        I = np.eye(shape[i])
        assert np.array_equal(
            shift_left_forward(N @ separation(T, i), shape, i), np.kron(N, I) @ separation(T, i + 1)
        )
        M = rng.integers(-3, 3, size=(int(np.prod(shape[i + 1:])), 2)).astype(float)
        assert np.array_equal(
            shift_right_forward(separation(T, i + 1) @ M, shape, i), separation(T, i) @ np.kron(I, M)
        )


def test_reshape_nonconformal():
    with pytest.raises(ValueError):
        shift_left_forward(np.zeros((2, 5)), (2, 3, 2), 1)
    with pytest.raises(ValueError):
        shift_right_backward(np.zeros((2, 5)), (2, 3, 2), 1)
