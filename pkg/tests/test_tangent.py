import numpy as np
import pytest

from ttcomp.observations import ObservationSet, dense_scatter, objective_f, residual_gradient, sample_uniform
from ttcomp.tensor import left_unfold, separation
from ttcomp.tangent import (
    TangentVector,
    build_gauge_pair,
    component_tensor,
    embed,
    gauge_deviation,
    point_as_tangent,
    project_dense,
    riemannian_gradient,
    tangent_inner,
    tangent_norm,
    zero_tangent,
)
from ttcomp.tt import IllConditionedPoint, TTTensor, left_part, random_tt, right_orthogonalize, tt_full, tt_norm

from conftest import rel


def dense(xi):
    return tt_full(embed(xi.base, xi))


def comps_close(a, b, tol):
    num = sum(np.linalg.norm(x - y) ** 2 for x, y in zip(a.components, b.components))
    den = sum(np.linalg.norm(y) ** 2 for y in b.components)
    return np.sqrt(num) <= tol * max(np.sqrt(den), 1e-300)


@pytest.fixture
def point():
    return build_gauge_pair(random_tt((4, 5, 3, 4), (2, 3, 2), 11))


def test_gauge_pair_rank_one():
    T = random_tt((3, 4, 5), (1, 1), 0)
    gp = build_gauge_pair(T)
    for lam in gp.lams:
        assert lam.shape == (1, 1)
        assert abs(lam[0, 0]) == pytest.approx(tt_norm(T), rel=1e-12)


def test_gauge_pair_reconstructs(point):
    A = tt_full(point.point)
    m = point.ndim
    for i in range(1, m):
        V = np.ones((1, 1))
        for k in range(m - 1, i - 1, -1):
            c = point.right_cores[k]
            V = (c.reshape(-1, c.shape[2]) @ V).reshape(c.shape[0], -1)
        assert np.linalg.norm(V @ V.T - np.eye(V.shape[0])) <= 1e-12 * V.shape[0]
        assert rel(left_part(point.point, i) @ point.lams[i - 1] @ V, separation(A, i)) <= 1e-12
        s = np.linalg.svd(separation(A, i), compute_uv=False)
        smin = np.linalg.svd(point.lams[i - 1], compute_uv=False)[-1]
        assert smin == pytest.approx(s[point.ranks[i - 1] - 1], rel=1e-10)


def test_gauge_pair_from_right_orthogonal():
    T = random_tt((3, 4, 5), (2, 2), 3)
    gp = build_gauge_pair(right_orthogonalize(T))
    assert gp.point.gauge == "left"
    assert rel(tt_full(gp.point), tt_full(T)) <= 1e-12


def test_gauge_pair_rejects_boundary_point():
    a = np.zeros((1, 3, 2))
    a[0, :, 0] = 1.0
    T = TTTensor((a, np.ones((2, 3, 2)), np.ones((2, 3, 1))))
    with pytest.raises(IllConditionedPoint):
        build_gauge_pair(T)


def test_projection_of_point(point):
    xi = project_dense(point, tt_full(point.point))
    assert rel(dense(xi), tt_full(point.point)) <= 1e-12
    assert rel(dense(point_as_tangent(point)), tt_full(point.point)) <= 1e-14


def test_projection_kills_normal_directions():
    gp = build_gauge_pair(random_tt((2, 2, 2), (1, 1), 5))
    # dense basis of the tangent space: derivatives w.r.t. every core entry
    basis = []
    for k, c in enumerate(gp.cores):
        for j in range(c.size):
            X = [np.zeros_like(x) for x in gp.cores]
            X[k].flat[j] = 1.0
            basis.append(tt_full(component_tensor(gp, TangentVector(gp, tuple(X)), k)).ravel())
    B = np.array(basis).T
    U, s, _ = np.linalg.svd(B)
    k = int(np.sum(s > 1e-10 * s[0]))
    normal = U[:, k:]
    assert normal.shape[1] > 0
    A = (normal @ np.random.default_rng(0).standard_normal(normal.shape[1])).reshape(2, 2, 2)
    xi = project_dense(gp, A)
    assert tangent_norm(xi) <= 1e-12 * np.linalg.norm(A)
    # and the projection of anything lies in span(B)
    Z = np.random.default_rng(1).standard_normal((2, 2, 2))
    z = dense(project_dense(gp, Z)).ravel()
    assert np.linalg.norm(normal.T @ z) <= 1e-12 * np.linalg.norm(z)


def test_idempotent_and_self_adjoint(point, rng):
    for _ in range(5):
        A = rng.standard_normal(point.shape)
        B = rng.standard_normal(point.shape)
        PA, PB = project_dense(point, A), project_dense(point, B)
        assert comps_close(project_dense(point, dense(PA)), PA, 1e-10)
        lhs, rhs = np.sum(dense(PA) * B), np.sum(A * dense(PB))
        assert lhs == pytest.approx(rhs, rel=1e-10)
        assert gauge_deviation(PA) <= 1e-11 * max(point.ranks)


def test_components_pairwise_orthogonal(point, rng):
    xi = project_dense(point, rng.standard_normal(point.shape))
    parts = [tt_full(component_tensor(point, xi, k)) for k in range(point.ndim)]
    total = tangent_inner(xi, xi)
    for i in range(len(parts)):
        for j in range(i + 1, len(parts)):
            assert abs(np.sum(parts[i] * parts[j])) <= 1e-10 * total


def test_sparse_gradient_single_observation():
    gp = build_gauge_pair(random_tt((2, 2, 2), (1, 1), 1))
    G = ObservationSet((2, 2, 2), [[1, 0, 1]], [0.7])
    a = riemannian_gradient(gp, G)
    b = project_dense(gp, dense_scatter(G))
    for x, y in zip(a.components, b.components):
        assert np.max(np.abs(x - y)) <= 1e-11


def test_sparse_gradient_matches_dense(rng):
    T = random_tt((6, 6, 6), (2, 2), 4)
    gp = build_gauge_pair(T)
    G = ObservationSet(T.shape, np.stack([rng.integers(0, 6, 200) for _ in range(3)], 1), rng.standard_normal(200))
    a = riemannian_gradient(gp, G)
    b = project_dense(gp, dense_scatter(G))
    assert comps_close(a, b, 1e-10)
    c = riemannian_gradient(gp, G, workers=3)
    assert comps_close(c, a, 1e-12)


def test_zero_gradient():
    gp = build_gauge_pair(random_tt((3, 3, 3), (1, 1), 0))
    empty = ObservationSet((3, 3, 3), np.zeros((0, 3), dtype=int), [])
    assert tangent_norm(riemannian_gradient(gp, empty)) == 0.0
    zeros = ObservationSet((3, 3, 3), [[0, 1, 2]], [0.0])
    assert tangent_norm(riemannian_gradient(gp, zeros)) == 0.0


def test_embed_sum_and_pythagoras(point, rng):
    xi = project_dense(point, rng.standard_normal(point.shape))
    E = embed(point, xi)
    assert E.ranks == tuple(2 * r for r in point.ranks)
    parts = [tt_full(component_tensor(point, xi, k)) for k in range(point.ndim)]
    assert rel(tt_full(E), sum(parts)) <= 1e-12
    assert np.linalg.norm(tt_full(E)) ** 2 == pytest.approx(sum(np.sum(p * p) for p in parts), rel=1e-10)


def test_inner_product(point, rng):
    xi = project_dense(point, rng.standard_normal(point.shape))
    zeta = project_dense(point, rng.standard_normal(point.shape))
    assert tangent_inner(xi, zeta) == pytest.approx(np.sum(dense(xi) * dense(zeta)), rel=1e-10)
    assert abs(tangent_inner(xi, zeta) - tangent_inner(zeta, xi)) <= 1e-13 * tangent_norm(xi) * tangent_norm(zeta)
    assert tangent_inner(xi, xi) > 0
    assert tangent_norm(zero_tangent(point)) == 0.0
    other = build_gauge_pair(random_tt(point.shape, point.ranks, 99))
    with pytest.raises(ValueError):
        tangent_inner(xi, zero_tangent(other))


def test_directional_derivative(rng):
    T = random_tt((5, 4, 6), (2, 2), 2)
    truth = random_tt((5, 4, 6), (2, 2), 3)
    obs = sample_uniform(T.shape, 300, 1, truth)
    gp = build_gauge_pair(T)
    grad = riemannian_gradient(gp, residual_gradient(T, obs))
    xi = project_dense(gp, rng.standard_normal(T.shape))
    xi = xi.scaled(1.0 / tangent_norm(xi))
    eps = 1e-5
    A = tt_full(T)
    fd = (objective_f(A + eps * dense(xi), obs) - objective_f(A, obs)) / eps
    assert fd / tangent_inner(grad, xi) == pytest.approx(1.0, abs=1e-3)
