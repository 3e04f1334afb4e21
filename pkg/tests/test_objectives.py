import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from qsaddle.diagnostics import min_hessian_eigenvalue
from qsaddle.objectives import (HessianTooLargeError, LogisticBilinear, MatrixFactorization,
                                QuadraticSaddle, estimate_gradient_bound)


def fd_grad(f, x, h=1e-5):
    g = np.empty_like(x)
    for j in range(len(x)):
        e = np.zeros_like(x)
        e[j] = h
        g[j] = (f(x + e) - f(x - e)) / (2 * h)
    return g


def small_mf():
    return MatrixFactorization.planted(m=6, n=5, rank=2, n_agents=3, seed=1)


OBJECTIVES = {
    "logistic": lambda: LogisticBilinear.synthetic(5, 200, "identical", seed=0),
    "logistic_het": lambda: LogisticBilinear.synthetic(5, 200, "heterogeneous", seed=3),
    "mf": small_mf,
    "quadratic": lambda: QuadraticSaddle.random(5, 4, seed=2),
}


@pytest.fixture(params=sorted(OBJECTIVES))
def obj(request):
    return OBJECTIVES[request.param]()


# -- interface ------------------------------------------------------------------


def test_global_grad_is_mean_of_local(obj):
    rng = np.random.default_rng(0)
    for _ in range(5):
        x = rng.normal(size=obj.dim)
        mean = np.mean([obj.local_grad(i, x) for i in range(obj.n_agents)], axis=0)
        np.testing.assert_allclose(obj.global_grad(x), mean, rtol=0, atol=1e-12)
        val = np.mean([obj.local_value(i, x) for i in range(obj.n_agents)])
        assert obj.global_value(x) == pytest.approx(val, rel=1e-12)


def test_value_and_grad_agree_with_separate_calls(obj):
    x = np.random.default_rng(1).normal(size=obj.dim)
    f, g = obj.value_and_grad(x)
    assert f == pytest.approx(obj.global_value(x), rel=1e-12)
    np.testing.assert_allclose(g, obj.global_grad(x), rtol=1e-12, atol=1e-13)


def test_batched_local_grads_match_loop(obj):
    xs = np.random.default_rng(2).normal(size=(obj.n_agents, obj.dim))
    loop = np.stack([obj.local_grad(i, xs[i]) for i in range(obj.n_agents)])
    np.testing.assert_allclose(obj.local_grads(xs), loop, rtol=1e-12, atol=1e-13)


def test_gradient_matches_finite_differences(obj):
    rng = np.random.default_rng(3)
    worst = 0.0
    for _ in range(20):
        x = rng.uniform(-1, 1, obj.dim)
        g = obj.global_grad(x)
        fd = fd_grad(obj.global_value, x)
        worst = max(worst, np.linalg.norm(g - fd) / max(np.linalg.norm(g), 1e-8))
    assert worst <= 1e-6


def test_local_values_are_deterministic(obj):
    x = np.full(obj.dim, 0.3)
    assert obj.local_value(0, x) == obj.local_value(0, x.copy())
    np.testing.assert_array_equal(obj.local_grad(0, x), obj.local_grad(0, x))


def test_non_finite_input_rejected(obj):
    x = np.zeros(obj.dim)
    x[0] = math.nan
    with pytest.raises(ValueError):
        obj.local_grad(0, x)
    x[0] = math.inf
    with pytest.raises(ValueError):
        obj.global_value(x)


def test_empirical_lipschitz_within_reported_bound(obj):
    rng = np.random.default_rng(4)
    radius = 1.0
    L = obj.lipschitz_bound(radius)
    worst = 0.0
    for _ in range(200):
        x, y = rng.uniform(-radius, radius, (2, obj.dim))
        worst = max(worst, np.linalg.norm(obj.global_grad(x) - obj.global_grad(y))
                    / np.linalg.norm(x - y))
    assert worst <= L


def test_gradient_bound_estimate_is_a_max_over_agents():
    q = QuadraticSaddle.random(3, 3, seed=0)
    G = estimate_gradient_bound(q, -1.0, 1.0, n_points=50)
    assert G > 0
    x = np.random.default_rng(0).uniform(-1, 1, 3)  # first sampled point
    assert G >= max(np.linalg.norm(q.local_grad(i, x)) for i in range(3))


# -- logistic ---------------------------------------------------------------------


@pytest.mark.parametrize("split", ["identical", "heterogeneous"])
def test_logistic_pooled_margin_mean_is_one(split):
    obj = LogisticBilinear.synthetic(5, 200, split, seed=7)
    assert obj.pooled_margin_mean() == pytest.approx(1.0, abs=1e-12)


def test_logistic_origin_is_a_strict_saddle():
    obj = LogisticBilinear.synthetic(5, 200, "heterogeneous", seed=0)
    for i in range(5):
        np.testing.assert_array_equal(obj.local_grad(i, [0.0, 0.0]), [0.0, 0.0])
    assert np.linalg.norm(obj.global_grad([0.0, 0.0])) <= 1e-12
    assert obj.global_value([0.0, 0.0]) == pytest.approx(math.log(2), rel=1e-15)
    H = obj.global_hessian([0.0, 0.0])
    np.testing.assert_allclose(H, [[0.1, -0.5], [-0.5, 0.1]], atol=1e-12)
    assert min_hessian_eigenvalue(obj, [0.0, 0.0]) == pytest.approx(-0.4, abs=1e-10)


def test_logistic_hvp_at_origin():
    obj = LogisticBilinear.synthetic(5, 200, seed=0)
    np.testing.assert_allclose(obj.hessian_vector_product([0.0, 0.0], [1.0, -1.0]),
                               [0.6, -0.6], atol=1e-8)
    with pytest.raises(ValueError):
        obj.hessian_vector_product([0.0, 0.0], [0.0, 0.0])


def test_logistic_analytic_hessian_matches_fd():
    obj = LogisticBilinear.synthetic(5, 200, "heterogeneous", seed=1)
    x = np.array([0.7, -0.4])
    fd = np.column_stack([fd_grad(lambda z: obj.global_grad(z)[j], x) for j in range(2)]).T
    np.testing.assert_allclose(obj.global_hessian(x), fd, atol=1e-8)


def test_logistic_validation(tmp_path):
    with pytest.raises(ValueError):
        LogisticBilinear([[[1.0, 1.0]]], reg=0.0)
    with pytest.raises(ValueError):
        LogisticBilinear([[[1.0, 0.5]]])
    with pytest.raises(ValueError):
        LogisticBilinear([np.zeros((0, 2))])
    with pytest.raises(ValueError):
        LogisticBilinear.synthetic(3, 200, "heterogeneous")
    with pytest.raises(ValueError):
        LogisticBilinear.synthetic(split="random")
    p = tmp_path / "a0.txt"
    p.write_text("1.0 1\n-1.0 -1\n")
    obj = LogisticBilinear.from_files([p, p])
    assert obj.n_agents == 2 and obj.pooled_margin_mean() == 1.0


# -- matrix factorization --------------------------------------------------------------


def test_mf_single_entry_gradient_zero_at_origin():
    target = np.zeros((3, 3))
    target[1, 2] = 2.0
    mk = np.ones((3, 3), dtype=bool)
    obj = MatrixFactorization(target, 1, [mk])
    x0 = np.zeros(obj.dim)
    np.testing.assert_array_equal(obj.global_grad(x0), np.zeros(obj.dim))
    np.testing.assert_allclose(fd_grad(obj.global_value, x0), 0.0, atol=1e-9)


def test_mf_layout_and_planted_optimum():
    obj = MatrixFactorization.planted()
    assert obj.dim == (30 + 20) * 3
    U, V = obj.planted_factors
    x = obj.join(U, V)
    assert obj.global_value(x) == 0.0
    assert obj.relative_error(x) == 0.0
    U2, V2 = obj.split(x)
    np.testing.assert_array_equal(U2, U)
    assert x[:3].tolist() == U[0].tolist()  # row-major U first


def test_mf_fd_hessian_is_symmetric():
    obj = small_mf()
    x = np.random.default_rng(0).normal(size=obj.dim) * 0.5
    H = obj.global_hessian(x)
    assert np.max(np.abs(H - H.T)) <= 1e-5


def test_mf_nonnegative():
    obj = small_mf()
    rng = np.random.default_rng(5)
    assert all(obj.global_value(rng.normal(size=obj.dim)) >= 0 for _ in range(50))


def test_mf_rank_deficient_point_is_invariant_for_exact_gradient():
    obj = small_mf()
    x = obj.rank_deficient_point(seed=3)
    U, V = obj.split(x)
    assert np.all(U[:, -1] == 0) and np.all(V[:, -1] == 0)
    gU, gV = obj.split(obj.global_grad(x))
    assert np.all(gU[:, -1] == 0) and np.all(gV[:, -1] == 0)
    with pytest.raises(ValueError):
        obj.rank_deficient_point(drop=0)


def test_mf_noise_keeps_clean_reference():
    obj = MatrixFactorization.planted(noise=0.01, seed=2)
    U, V = obj.planted_factors
    assert obj.relative_error(obj.join(U, V)) == 0.0
    assert obj.global_value(obj.join(U, V)) > 0


def test_mf_validation(tmp_path):
    t = np.ones((3, 3))
    full = np.ones((3, 3), dtype=bool)
    with pytest.raises(ValueError):
        MatrixFactorization(t, 3, [full])
    with pytest.raises(ValueError):
        MatrixFactorization(t, 1, [full, full])
    partial = np.zeros((3, 3), dtype=bool)
    partial[:2] = True
    with pytest.raises(ValueError):
        MatrixFactorization(t, 1, [partial])
    p = tmp_path / "m.txt"
    p.write_text("\n".join(f"{r} {c} {r + c}" for r in range(4) for c in range(3)))
    obj = MatrixFactorization.from_triplets(p, rank=1, n_agents=2)
    assert (obj.m, obj.n) == (4, 3)
    assert [int(mk.sum()) for mk in obj.masks] == [6, 6]


def test_dense_limit_signals_hvp_path():
    obj = small_mf()
    obj.hessian_dense_limit = 5
    with pytest.raises(HessianTooLargeError):
        obj.global_hessian(np.zeros(obj.dim))
    x = np.random.default_rng(0).normal(size=obj.dim)
    # falls back to power iteration and still agrees with the dense answer
    obj2 = small_mf()
    H = obj2.global_hessian(x)
    dense = np.linalg.eigvalsh(0.5 * (H + H.T))[0]
    assert min_hessian_eigenvalue(obj, x, tol=1e-10, max_iter=20000) == pytest.approx(dense, abs=1e-4)


# -- quadratic --------------------------------------------------------------------------


@settings(max_examples=30, deadline=None)
@given(seed=st.integers(0, 2**32 - 1), n=st.integers(1, 6), d=st.integers(2, 6),
       margin=st.floats(0.01, 1.0))
def test_quadratic_saddle_certificate(seed, n, d, margin):
    q = QuadraticSaddle.random(n, d, margin=margin, seed=seed)
    assert np.all(q.global_grad(np.zeros(d)) == 0)
    assert min_hessian_eigenvalue(q, np.zeros(d)) == pytest.approx(-margin, abs=1e-10)
    assert q.margin == pytest.approx(margin, abs=1e-10)
    for h in q.hessians:
        np.testing.assert_array_equal(h, h.T)


def test_quadratic_grad_and_hessian():
    q = QuadraticSaddle.random(5, 4, seed=0)
    e1 = np.eye(4)[0]
    for i in range(5):
        np.testing.assert_allclose(q.local_grad(i, e1), q.hessians[i][:, 0], atol=0)
    x = np.random.default_rng(0).normal(size=4)
    np.testing.assert_array_equal(q.global_hessian(x), q.mean_hessian)
    v = np.random.default_rng(1).normal(size=4)
    np.testing.assert_allclose(q.hessian_vector_product(x, v), q.mean_hessian @ v, atol=1e-8)


def test_quadratic_validation():
    with pytest.raises(ValueError):
        QuadraticSaddle([])
    with pytest.raises(ValueError):
        QuadraticSaddle([np.array([[1.0, 2.0], [0.0, 1.0]])])
    with pytest.raises(ValueError):
        QuadraticSaddle([np.eye(2), np.eye(3)])
    with pytest.raises(ValueError):
        QuadraticSaddle.random(dim=1)
    with pytest.raises(ValueError):
        QuadraticSaddle.random(margin=0.0)
