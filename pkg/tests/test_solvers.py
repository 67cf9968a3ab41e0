import warnings

import cvxpy as cp
import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from mtvf.features import one_hot_map
from mtvf.solvers import (
    MultiTaskModel, RegressionProblemSet, SingularSystemError, SolverConfig, SolverConvergenceWarning,
    _aso_dense_step, _aso_diag_step, aso_objective, fit, fit_aso, fit_independent, fit_mtfl,
    load_model, model_from_tables, mtfl_objective, predict, save_model, top_directions,
)


def random_problems(n_tasks, n_rows, dim, seed=0, rank=None):
    rng = np.random.default_rng(seed)
    xs = [rng.normal(size=(n_rows, dim)) for _ in range(n_tasks)]
    if rank is None:
        ws = rng.normal(size=(n_tasks, dim))
    else:
        ws = rng.normal(size=(n_tasks, rank)) @ rng.normal(size=(rank, dim))
    ys = [x @ w + 0.1 * rng.normal(size=n_rows) for x, w in zip(xs, ws)]
    return RegressionProblemSet(xs, ys)


def one_hot_problems(n_tasks, n_rows, n_states=12, n_actions=3, seed=0):
    rng = np.random.default_rng(seed)
    f = one_hot_map(n_states, n_actions)
    base = rng.normal(size=(2, n_states * n_actions))
    xs, ys = [], []
    for _ in range(n_tasks):
        s, a = rng.integers(n_states, size=n_rows), rng.integers(n_actions, size=n_rows)
        x = f.rows(s, a)
        xs.append(x)
        ys.append(x @ (rng.normal(size=2) @ base) + 0.05 * rng.normal(size=n_rows))
    return RegressionProblemSet(xs, ys)


def trace_norm_oracle(problems, gamma):
    """Optimal value of sum 0.5||X w - y||^2 + 0.5*gamma*||W||_*^2 via a conic solver."""
    T, d = problems.num_tasks, problems.dimension
    W = cp.Variable((T, d))
    loss = sum(0.5 * cp.sum_squares(x @ W[t] - y) for t, (x, y) in enumerate(zip(problems.designs, problems.targets)))
    prob = cp.Problem(cp.Minimize(loss + 0.5 * gamma * cp.square(cp.normNuc(W))))
    prob.solve(solver=cp.CLARABEL)
    return prob.value


# --- independent -------------------------------------------------------------------------


def test_ridge_zero_targets():
    p = random_problems(2, 10, 4).with_targets([np.zeros(10), np.zeros(10)])
    assert np.all(fit_independent(p, SolverConfig("independent")).coef == 0)


def test_ridge_exact_interpolation():
    p = RegressionProblemSet([np.eye(2)], [np.array([3.0, 5.0])])
    m = fit_independent(p, SolverConfig("independent", ridge_weight=0.0))
    assert np.array_equal(m.coef[0], [3.0, 5.0])


def test_ridge_matches_dense_inverse():
    rng = np.random.default_rng(4)
    x, y = rng.normal(size=(20, 8)), rng.normal(size=20)
    m = fit_independent(RegressionProblemSet([x], [y]), SolverConfig("independent", ridge_weight=0.1))
    direct = np.linalg.inv(x.T @ x + 0.1 * np.eye(8)) @ x.T @ y
    assert np.max(np.abs(m.coef[0] - direct)) <= 1e-10


@settings(max_examples=25, deadline=None)
@given(st.integers(1, 30), st.integers(1, 6), st.floats(1e-3, 10), st.integers(0, 10_000))
def test_ridge_oracle_property(n, d, lam, seed):
    rng = np.random.default_rng(seed)
    x, y = rng.normal(size=(n, d)), rng.normal(size=n)
    m = fit_independent(RegressionProblemSet([x], [y]), SolverConfig("independent", ridge_weight=lam))
    direct = np.linalg.inv(x.T @ x + lam * np.eye(d)) @ x.T @ y
    assert np.allclose(m.coef[0], direct, atol=1e-10, rtol=1e-8)


def test_ridge_singular_names_task():
    p = RegressionProblemSet([np.eye(3), np.eye(3)[:2]], [np.ones(3), np.ones(2)], task_ids=[7, 9])
    with pytest.raises(SingularSystemError, match="task 9"):
        fit_independent(p, SolverConfig("independent", ridge_weight=0.0))
    rng = np.random.default_rng(0)
    x = rng.normal(size=(2, 4))
    with pytest.raises(SingularSystemError, match="task 0"):
        fit_independent(RegressionProblemSet([x], [np.ones(2)]), SolverConfig("independent", ridge_weight=0.0))


# --- MTFL ---------------------------------------------------------------------------------


def test_mtfl_identical_tasks_rank_one():
    rng = np.random.default_rng(2)
    x, w = rng.normal(size=(30, 6)), rng.normal(size=6)
    y = x @ w
    p = RegressionProblemSet([x] * 4, [y] * 4)
    m = fit_mtfl(p, SolverConfig("mtfl", mtl_reg_weight=1e-2, d_shared=6, max_inner_iters=2000))
    s = np.linalg.svd(m.coef, compute_uv=False) ** 2
    assert s[0] / s.sum() >= 0.99


def test_mtfl_single_task_is_ridge():
    # With one task the perturbed penalty 0.5*gamma*(sqrt(|w|^2+eps) + (d-1)sqrt(eps))^2 has
    # gradient lam_eff*w, lam_eff = gamma*(1 + (d-1)sqrt(eps)/sqrt(|w|^2+eps)): a ridge fit.
    rng = np.random.default_rng(3)
    x, y = rng.normal(size=(15, 5)), rng.normal(size=15)
    p = RegressionProblemSet([x], [y])
    gamma, eps = 0.3, 1e-4
    m = fit_mtfl(p, SolverConfig("mtfl", mtl_reg_weight=gamma, d_shared=1, epsilon_perturbation=eps,
                                 max_inner_iters=5000, inner_tolerance=1e-15))
    w = m.state["w_full"][0]
    lam = gamma * (1 + 4 * np.sqrt(eps) / np.sqrt(w @ w + eps))
    r = fit_independent(p, SolverConfig("independent", ridge_weight=lam))
    assert np.max(np.abs(x @ m.coef[0] - x @ r.coef[0])) <= 1e-6


@pytest.mark.parametrize("maker", [lambda: random_problems(3, 12, 6, seed=5),
                                   lambda: one_hot_problems(3, 25, seed=6)])
def test_mtfl_objective_monotone(maker):
    p = maker()
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", SolverConvergenceWarning)
        m = fit_mtfl(p, SolverConfig("mtfl", mtl_reg_weight=0.5, d_shared=2, max_inner_iters=300,
                                     epsilon_start=1e-8))
    assert len(m.objective_trace) > 3
    assert np.all(np.diff(m.objective_trace) <= 1e-9)


@pytest.mark.parametrize("seed,tasks,dim,gamma", [(0, 3, 10, 0.1), (1, 2, 6, 1.0), (2, 3, 8, 0.02), (3, 3, 10, 0.5)])
def test_mtfl_matches_trace_norm_oracle(seed, tasks, dim, gamma):
    p = random_problems(tasks, 15, dim, seed=seed, rank=2)
    m = fit_mtfl(p, SolverConfig("mtfl", mtl_reg_weight=gamma, d_shared=min(tasks, dim),
                                 epsilon_perturbation=1e-12, max_inner_iters=5000, inner_tolerance=1e-13))
    ours = mtfl_objective(p, m.state["w_full"], gamma, 0.0)
    best = trace_norm_oracle(p, gamma)
    assert abs(ours - best) <= 1e-4


def test_mtfl_diagonal_path_matches_oracle():
    p = one_hot_problems(3, 40, n_states=3, n_actions=3, seed=8)
    m = fit_mtfl(p, SolverConfig("mtfl", mtl_reg_weight=0.05, d_shared=3, epsilon_perturbation=1e-12,
                                 max_inner_iters=5000, inner_tolerance=1e-13))
    assert p.diagonal
    assert abs(mtfl_objective(p, m.state["w_full"], 0.05, 0.0) - trace_norm_oracle(p, 0.05)) <= 1e-4


def test_mtfl_nonconvergence_warns():
    p = random_problems(3, 12, 6, seed=5)
    with pytest.warns(SolverConvergenceWarning):
        m = fit_mtfl(p, SolverConfig("mtfl", mtl_reg_weight=0.5, d_shared=2, max_inner_iters=1,
                                     inner_tolerance=1e-15))
    assert not m.converged


def test_mtfl_requires_positive_weight():
    with pytest.raises(ValueError):
        fit_mtfl(random_problems(2, 5, 3), SolverConfig("mtfl", mtl_reg_weight=0.0, d_shared=1))


def test_d_shared_bounded():
    with pytest.raises(ValueError):
        fit(random_problems(2, 5, 3), SolverConfig("aso", d_shared=4))


# --- ASO ----------------------------------------------------------------------------------


@pytest.mark.parametrize("maker", [lambda: random_problems(4, 20, 8, seed=9, rank=2),
                                   lambda: one_hot_problems(5, 30, seed=10)])
def test_aso_monotone_and_orthonormal(maker):
    p = maker()
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", SolverConvergenceWarning)
        m = fit_aso(p, SolverConfig("aso", d_shared=2, sparsity_weight=0.05, ridge_weight=0.01))
    assert np.all(np.diff(m.objective_trace) <= 1e-9)
    assert m.subspace.orthonormality_error() <= 1e-8


def test_aso_huge_sparsity_kills_task_part():
    p = random_problems(4, 20, 8, seed=11, rank=2)
    m = fit_aso(p, SolverConfig("aso", d_shared=2, sparsity_weight=1e9, ridge_weight=0.01))
    assert np.all(m.w_sparse == 0)
    x = np.random.default_rng(0).normal(size=8)
    for i in range(4):
        assert predict(m, i, x) == pytest.approx(m.alphas[i] @ (m.u_matrix @ x), abs=1e-12)


def lasso_oracle(x, y, lam):
    w = cp.Variable(x.shape[1])
    cp.Problem(cp.Minimize(0.5 * cp.sum_squares(x @ w - y) + lam * cp.norm1(w))).solve(solver=cp.CLARABEL)
    return w.value


def test_aso_without_shared_part_is_lasso():
    p = random_problems(2, 20, 6, seed=12)
    m = fit_aso(p, SolverConfig("aso", d_shared=0, sparsity_weight=0.7, prox_tolerance=1e-14,
                                prox_max_steps=100_000))
    for t in range(2):
        ref = lasso_oracle(p.designs[t], p.targets[t], 0.7)
        assert np.max(np.abs(m.coef[t] - ref)) <= 1e-5
    assert m.u_matrix.shape == (0, 6)


def test_aso_one_hot_without_shared_part_soft_thresholds():
    p = one_hot_problems(2, 30, seed=13)
    m = fit_aso(p, SolverConfig("aso", d_shared=0, sparsity_weight=0.2))
    c = p.gram
    ybar = np.divide(p.xty, c, out=np.zeros_like(p.xty), where=c > 0)
    thr = np.divide(0.2, c, out=np.zeros_like(c), where=c > 0)
    expected = np.where(c > 0, np.sign(ybar) * np.maximum(np.abs(ybar) - thr, 0), 0)
    assert np.allclose(m.coef, expected, atol=1e-14)


def test_aso_task_steps_agree():
    """The exact diagonal step and the proximal-gradient step reach the same minimum."""
    p = one_hot_problems(3, 30, seed=14)
    theta = fit_independent(p, SolverConfig("independent", ridge_weight=0.1)).coef
    u = top_directions(theta, 2)
    v0, w0 = np.zeros((3, 2)), np.zeros_like(theta)
    v1, w1 = _aso_diag_step(p, u, v0, 0.01, 0.05)
    v2, w2 = _aso_dense_step(p, u, v0, w0, 0.01, 0.05, 200_000, 1e-15)
    f1 = aso_objective(p, u, v1, w1, 0.01, 0.05)
    f2 = aso_objective(p, u, v2, w2, 0.01, 0.05)
    assert f1 <= f2 + 1e-7
    assert abs(f1 - f2) <= 1e-6


def test_aso_step_matches_convex_oracle():
    p = random_problems(1, 15, 6, seed=15)
    u = top_directions(np.random.default_rng(1).normal(size=(3, 6)), 2)
    v, w = _aso_dense_step(p, u, np.zeros((1, 2)), np.zeros((1, 6)), 0.1, 0.3, 100_000, 1e-15)
    V, W = cp.Variable(2), cp.Variable(6)
    x, y = p.designs[0], p.targets[0]
    obj = 0.5 * cp.sum_squares(x @ (W + u.T @ V) - y) + 0.3 * cp.norm1(W) + 0.05 * cp.sum_squares(V)
    best = cp.Problem(cp.Minimize(obj)).solve(solver=cp.CLARABEL)
    assert aso_objective(p, u, v, w, 0.1, 0.3) - best <= 1e-6


# --- models -------------------------------------------------------------------------------


def test_predict_contracts():
    m = model_from_tables([np.arange(6.0).reshape(3, 2)], task_ids=[4])
    e = np.zeros(6)
    e[3] = 1
    assert predict(m, 4, e) == 3.0
    with pytest.raises(KeyError):
        predict(m, 5, e)
    with pytest.raises(ValueError):
        predict(m, 4, np.ones(5))
    rng = np.random.default_rng(0)
    aso = MultiTaskModel("aso", [0, 1], 6, u_matrix=top_directions(rng.normal(size=(3, 6)), 2),
                         alphas=rng.normal(size=(2, 2)), w_sparse=rng.normal(size=(2, 6)))
    a, b = rng.normal(size=6), rng.normal(size=6)
    assert predict(aso, 1, a + b) == pytest.approx(predict(aso, 1, a) + predict(aso, 1, b), abs=1e-12)


def test_mtfl_prediction_uses_shared_coordinates():
    p = random_problems(3, 20, 5, seed=16, rank=2)
    m = fit_mtfl(p, SolverConfig("mtfl", mtl_reg_weight=0.1, d_shared=2, max_inner_iters=500))
    x = np.random.default_rng(2).normal(size=5)
    assert predict(m, 2, x) == pytest.approx(m.alphas[2] @ (m.u_matrix @ x), abs=1e-12)
    assert np.allclose(m.alphas, m.state["w_full"] @ m.u_matrix.T)


@pytest.mark.parametrize("variant", ["independent", "mtfl", "aso"])
def test_model_file_round_trip(tmp_path, variant):
    p = random_problems(3, 20, 5, seed=17, rank=2)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", SolverConvergenceWarning)
        m = fit(p, SolverConfig(variant, d_shared=2))
    save_model(m, tmp_path / "m.model")
    again = load_model(tmp_path / "m.model")
    assert again.variant == variant and again.task_ids == m.task_ids
    assert np.array_equal(again.coef, m.coef)
    assert again.objective_trace == m.objective_trace
    assert (again.u_matrix is None) == (variant == "independent")


def test_sign_fixed_directions_are_deterministic():
    theta = np.random.default_rng(5).normal(size=(4, 7))
    u1, u2 = top_directions(theta, 3), top_directions(-theta, 3)
    assert np.allclose(u1, u2)
    idx = np.argmax(np.abs(u1), axis=1)
    assert np.all(u1[np.arange(3), idx] > 0)
