"""Joint and independent least-squares fits over a shared feature space.

Three backends share one model type:

* ``independent``: per-task ridge regression.
* ``mtfl``: multi-task feature learning, squared-loss plus a squared trace-norm
  coupling, solved by alternating between per-task generalized ridge solves and
  the closed-form update of the shared covariance ``D``.
* ``aso``: ``theta_t = w_t + U^T v_t`` with orthonormal ``U``, an L1 penalty on
  the task-specific part ``w_t`` and a ridge penalty on ``v_t``.

Problems whose design matrices have one non-zero per row (one-hot features)
have diagonal Gram matrices; both joint solvers take an exact fast path there.
"""

from __future__ import annotations

import logging
import warnings
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

log = logging.getLogger(__name__)

VARIANTS = ("independent", "mtfl", "aso")
MODEL_TAG = "mtvf-model v1"


class SingularSystemError(np.linalg.LinAlgError):
    """Unregularized ridge system without full column rank."""


class SolverConvergenceWarning(RuntimeWarning):
    pass


@dataclass(frozen=True)
class SolverConfig:
    variant: str = "mtfl"
    ridge_weight: float = 1e-3
    mtl_reg_weight: float = 1e-2
    sparsity_weight: float = 1e-3
    d_shared: int = 5
    max_inner_iters: int = 200
    inner_tolerance: float = 1e-8
    epsilon_perturbation: float = 1e-8
    epsilon_start: float | None = None
    epsilon_decay: float = 0.01
    prox_max_steps: int = 10_000
    prox_tolerance: float = 1e-8

    def __post_init__(self):
        if self.variant not in VARIANTS:
            raise ValueError(f"unknown solver variant {self.variant!r}; choose from {VARIANTS}")
        for name in ("ridge_weight", "mtl_reg_weight", "sparsity_weight", "epsilon_perturbation"):
            value = getattr(self, name)
            if not (np.isfinite(value) and value >= 0):
                raise ValueError(f"{name} must be finite and non-negative, got {value}")
        if self.epsilon_start is not None and not self.epsilon_start >= 0:
            raise ValueError("epsilon_start must be non-negative")
        if not 0 < self.epsilon_decay < 1:
            raise ValueError("epsilon_decay must lie in (0, 1)")
        if self.d_shared < 0 or self.max_inner_iters < 1:
            raise ValueError("d_shared must be >= 0 and max_inner_iters >= 1")


class RegressionProblemSet:
    """One least-squares problem per task over a common feature dimension.

    Only sufficient statistics are kept: the Gram matrix ``X^T X`` (or its
    diagonal), ``X^T y`` and ``y^T y``. ``with_targets`` swaps the targets
    while reusing the Gram matrices, which is what fitted iteration needs.
    """

    def __init__(self, designs: Sequence[np.ndarray], targets: Sequence[np.ndarray], task_ids=None):
        designs = [np.asarray(x, dtype=float) for x in designs]
        if not designs:
            raise ValueError("need at least one task")
        dims = {x.shape[1] for x in designs}
        if len(dims) != 1:
            raise ValueError("all tasks must share the same feature dimension")
        self.dimension = dims.pop()
        self.task_ids = list(range(len(designs))) if task_ids is None else list(task_ids)
        self.designs = designs
        self.diagonal = all(np.all(np.count_nonzero(x, axis=1) <= 1) for x in designs)
        if self.diagonal:
            self.gram = np.array([np.einsum("ij,ij->j", x, x) for x in designs])
        else:
            self.gram = np.array([x.T @ x for x in designs])
        self._set_targets(targets)

    def _set_targets(self, targets):
        targets = [np.asarray(y, dtype=float) for y in targets]
        if len(targets) != len(self.designs):
            raise ValueError("one target vector per task is required")
        for x, y in zip(self.designs, targets):
            if y.shape != (x.shape[0],):
                raise ValueError("target length must equal the number of design rows")
        self.targets = targets
        self.xty = np.array([x.T @ y for x, y in zip(self.designs, targets)])
        self.yty = np.array([y @ y for y in targets])

    def with_targets(self, targets) -> "RegressionProblemSet":
        new = object.__new__(RegressionProblemSet)
        new.__dict__.update(self.__dict__)
        new._set_targets(targets)
        return new

    @property
    def num_tasks(self) -> int:
        return len(self.designs)

    @property
    def row_counts(self) -> list[int]:
        return [len(x) for x in self.designs]

    def gram_dot(self, theta: np.ndarray) -> np.ndarray:
        """``G_t theta_t`` for every task; ``theta`` has shape ``(T, d)``."""
        if self.diagonal:
            return self.gram * theta
        return np.einsum("tij,tj->ti", self.gram, theta)

    def losses(self, theta: np.ndarray) -> np.ndarray:
        """Per-task ``0.5 * ||X_t theta_t - y_t||^2``."""
        quad = np.einsum("ti,ti->t", theta, self.gram_dot(theta))
        out = 0.5 * quad - np.einsum("ti,ti->t", self.xty, theta) + 0.5 * self.yty
        return np.maximum(out, 0.0)

    def lipschitz(self) -> np.ndarray:
        if self.diagonal:
            return self.gram.max(axis=1)
        return np.array([np.linalg.eigvalsh(g)[-1] for g in self.gram])


@dataclass(eq=False)
class MultiTaskModel:
    """Fitted linear value functions for a set of tasks.

    ``coef[t]`` is the effective weight vector of task ``t``:
    ``w_t`` (independent), ``U^T alpha_t`` (mtfl) or ``w_t + U^T v_t`` (aso,
    with ``v_t`` stored in ``alphas``).
    """

    variant: str
    task_ids: list
    dimension: int
    u_matrix: np.ndarray | None = None
    alphas: np.ndarray | None = None
    w_sparse: np.ndarray | None = None
    objective_trace: list = field(default_factory=list)
    converged: bool = True
    state: dict = field(default_factory=dict, repr=False)

    def __post_init__(self):
        self._index = {t: i for i, t in enumerate(self.task_ids)}
        self.coef = self._effective()

    def _effective(self) -> np.ndarray:
        n = len(self.task_ids)
        coef = np.zeros((n, self.dimension))
        if self.w_sparse is not None:
            coef += self.w_sparse
        if self.u_matrix is not None and self.alphas is not None and len(self.u_matrix):
            coef += self.alphas @ self.u_matrix
        return coef

    @property
    def num_tasks(self) -> int:
        return len(self.task_ids)

    @property
    def subspace(self):
        from .features import SharedSubspace

        if self.u_matrix is None:
            return None
        return SharedSubspace(self.u_matrix)

    def row(self, task_id) -> int:
        try:
            return self._index[task_id]
        except KeyError:
            raise KeyError(f"model has no task {task_id!r}") from None

    def predict(self, task_id, features: np.ndarray) -> np.ndarray | float:
        coef = self.coef[self.row(task_id)]
        features = np.asarray(features, dtype=float)
        if features.shape[-1] != self.dimension:
            raise ValueError(f"expected {self.dimension} features, got {features.shape[-1]}")
        out = features @ coef
        return float(out) if out.ndim == 0 else out

    def q_tables(self, fmap) -> np.ndarray:
        """All tasks' Q-values as an array of shape ``(T, S, A)``."""
        if fmap.dimension != self.dimension:
            raise ValueError(f"feature map has dimension {fmap.dimension}, model expects {self.dimension}")
        q = self.coef @ fmap.table.T
        return q.reshape(self.num_tasks, fmap.num_states, fmap.num_actions)

    def select(self, task_ids) -> "MultiTaskModel":
        """Sub-model restricted to ``task_ids`` (shares ``U``)."""
        rows = [self.row(t) for t in task_ids]
        pick = lambda a: None if a is None else a[rows]
        return MultiTaskModel(
            self.variant, list(task_ids), self.dimension, self.u_matrix,
            pick(self.alphas), pick(self.w_sparse), list(self.objective_trace), self.converged,
        )


def predict(model: MultiTaskModel, task_id, features) -> float:
    return model.predict(task_id, features)


def model_from_tables(q_tables: Sequence[np.ndarray], task_ids=None) -> MultiTaskModel:
    """Independent model whose one-hot weights are the given Q tables."""
    w = np.array([np.asarray(q, dtype=float).ravel() for q in q_tables])
    ids = list(range(len(w))) if task_ids is None else list(task_ids)
    return MultiTaskModel("independent", ids, w.shape[1], w_sparse=w)


def _sign_fix(vectors: np.ndarray) -> np.ndarray:
    """Flip each row so its largest-magnitude entry is positive."""
    if len(vectors) == 0:
        return vectors
    idx = np.argmax(np.abs(vectors), axis=1)
    signs = np.sign(vectors[np.arange(len(vectors)), idx])
    signs[signs == 0] = 1.0
    return vectors * signs[:, None]


def top_directions(theta: np.ndarray, k: int) -> np.ndarray:
    """Top-``k`` eigenvectors of ``theta^T theta`` as rows, sign-fixed, descending order."""
    d = theta.shape[1]
    if k == 0:
        return np.zeros((0, d))
    if k <= min(theta.shape):
        _, _, vt = np.linalg.svd(theta, full_matrices=False)
        return _sign_fix(vt[:k])
    evals, evecs = np.linalg.eigh(theta.T @ theta)
    return _sign_fix(evecs[:, ::-1][:, :k].T)


def _check_dims(problems: RegressionProblemSet, config: SolverConfig):
    if config.d_shared > problems.dimension:
        raise ValueError(
            f"d_shared={config.d_shared} exceeds the feature dimension {problems.dimension}"
        )


# --- independent ----------------------------------------------------------------------


def _ridge(problems: RegressionProblemSet, lam: float) -> np.ndarray:
    d = problems.dimension
    w = np.zeros((problems.num_tasks, d))
    for t in range(problems.num_tasks):
        g, h = problems.gram[t], problems.xty[t]
        if problems.diagonal:
            if lam == 0 and np.any(g == 0):
                raise SingularSystemError(
                    f"task {problems.task_ids[t]}: {int(np.sum(g == 0))} features never observed; "
                    "set ridge_weight > 0"
                )
            w[t] = h / (g + lam)
        else:
            if lam == 0 and np.linalg.matrix_rank(g) < d:
                raise SingularSystemError(
                    f"task {problems.task_ids[t]}: design lacks full column rank; set ridge_weight > 0"
                )
            w[t] = np.linalg.solve(g + lam * np.eye(d), h)
    return w


def fit_independent(problems: RegressionProblemSet, config: SolverConfig = SolverConfig()) -> MultiTaskModel:
    """Per-task ridge: ``(X^T X + lambda I)^{-1} X^T y``."""
    lam = config.ridge_weight
    w = _ridge(problems, lam)
    obj = float(problems.losses(w).sum() + 0.5 * lam * np.sum(w * w))
    return MultiTaskModel("independent", problems.task_ids, problems.dimension, w_sparse=w,
                          objective_trace=[obj])


# --- MTFL -----------------------------------------------------------------------------


def trace_norm_eps(w: np.ndarray, eps: float) -> float:
    """``trace((W^T W + eps I)^{1/2})`` for ``w`` of shape ``(T, d)``."""
    t, d = w.shape
    s = np.linalg.svd(w, compute_uv=False)
    r = len(s)
    return float(np.sum(np.sqrt(s**2 + eps)) + (d - r) * np.sqrt(eps))


def mtfl_objective(problems: RegressionProblemSet, w: np.ndarray, gamma: float, eps: float) -> float:
    """``sum_t 0.5||X_t w_t - y_t||^2 + 0.5 * gamma * trace((W W^T + eps I)^{1/2})^2``."""
    return float(problems.losses(w).sum() + 0.5 * gamma * trace_norm_eps(w, eps) ** 2)


def _mtfl_w_step(problems: RegressionProblemSet, w: np.ndarray | None, gamma: float, eps: float) -> np.ndarray:
    """Minimize over W for the optimal D of the current W (``D = I/d`` if ``w`` is None)."""
    T, d = problems.num_tasks, problems.dimension
    if w is None:
        # D = I / d: plain ridge with weight gamma * d
        return _ridge(problems, gamma * d)
    _, s, vt = np.linalg.svd(w, full_matrices=False)
    sq = np.sqrt(s**2 + eps)
    root_eps = np.sqrt(eps)
    tau = float(np.sum(sq) + (d - len(s)) * root_eps)
    if problems.diagonal:
        # D = delta I + V K V^T; solve (D_OO + gamma C^-1) z = ybar on observed coords, w = D z
        delta = root_eps / tau
        k = (sq - root_eps) / tau
        y = vt.T * np.sqrt(k)  # (d, r)
        c = problems.gram
        inv_diag = c / (delta * c + gamma)  # (T, d); zero where unobserved
        ybar = np.divide(problems.xty, c, out=np.zeros_like(problems.xty), where=c > 0)
        rhs = inv_diag * ybar
        cap = np.eye(len(s))[None] + y.T[None] @ (inv_diag[:, :, None] * y[None])
        proj = np.linalg.solve(cap, (rhs @ y)[..., None])[..., 0]  # (T, r)
        z = rhs - inv_diag * (proj @ y.T)
        return delta * z + (z @ vt.T) * k @ vt
    # dense path: w = D^{1/2} (D^{1/2} G D^{1/2} + gamma I)^{-1} D^{1/2} h
    evals, evecs = np.linalg.eigh(w.T @ w)
    root = np.sqrt(np.maximum(evals, 0.0) + eps)
    droot = (evecs * np.sqrt(root / root.sum())) @ evecs.T
    out = np.empty((T, d))
    for t in range(T):
        a = droot @ problems.gram[t] @ droot + gamma * np.eye(d)
        out[t] = droot @ np.linalg.solve(a, droot @ problems.xty[t])
    return out


def _mtfl_descend(problems, w, gamma, eps, max_iters, tol):
    """Alternate W and D steps at fixed ``eps``; returns ``(w, trace, converged)``.

    The D step is taken at a momentum-extrapolated ``W`` while that keeps
    lowering the objective; otherwise the plain step is used, so the trace is
    non-increasing either way.
    """
    trace = [mtfl_objective(problems, w, gamma, eps)]
    prev, streak = w, 1
    for _ in range(max_iters):
        beta = (streak - 1) / (streak + 2)
        w_new = _mtfl_w_step(problems, w + beta * (w - prev), gamma, eps)
        obj = mtfl_objective(problems, w_new, gamma, eps)
        if obj > trace[-1] and beta > 0:
            streak = 1
            w_new = _mtfl_w_step(problems, w, gamma, eps)
            obj = mtfl_objective(problems, w_new, gamma, eps)
        else:
            streak += 1
        if obj > trace[-1]:
            # round-off only; the plain step cannot increase the objective
            return w, trace, True
        prev, w = w, w_new
        trace.append(obj)
        if trace[-2] - obj <= tol * max(1.0, abs(obj)):
            return w, trace, True
    return w, trace, False


def fit_mtfl(
    problems: RegressionProblemSet,
    config: SolverConfig = SolverConfig(variant="mtfl"),
    init: MultiTaskModel | None = None,
) -> MultiTaskModel:
    """Alternating minimization for squared-loss MTFL.

    Minimizes ``sum_t 0.5||X_t w_t - y_t||^2 + 0.5*gamma*trace(D^{-1}(W^T W + eps I))``
    over ``W`` and ``D`` (``D`` PSD, unit trace), whose value at the optimal ``D``
    is ``0.5*gamma*trace((W^T W + eps I)^{1/2})^2``. The loop stops once the
    relative objective change drops below ``inner_tolerance``. On exit ``U``
    holds the top ``d_shared`` eigenvectors of ``W^T W`` and ``alpha_t = U w_t``.

    With a tiny ``eps`` the D step all but freezes the row space of ``W``, so
    the perturbation is first continued down from ``epsilon_start`` (default:
    the squared spectral norm of the starting ``W``; one stage above ``eps``
    when warm-started) by factors of ``epsilon_decay``. ``objective_trace``
    covers the final, target-``eps`` stage only. ``init`` warm-starts ``W`` from a previous mtfl model.
    """
    _check_dims(problems, config)
    gamma, eps = config.mtl_reg_weight, config.epsilon_perturbation
    if not gamma > 0:
        raise ValueError("mtfl needs mtl_reg_weight > 0")
    w = None
    if init is not None and "w_full" in init.state and init.state["w_full"].shape == (
        problems.num_tasks, problems.dimension
    ):
        w = init.state["w_full"]
    warm = w is not None
    w = _mtfl_w_step(problems, w, gamma, eps)
    stage = config.epsilon_start
    if stage is None:
        stage = eps / config.epsilon_decay if warm else float(np.linalg.norm(w, 2) ** 2)
    while stage > eps:
        w, _, _ = _mtfl_descend(problems, w, gamma, stage, config.max_inner_iters, config.inner_tolerance)
        stage *= config.epsilon_decay
    w, trace, converged = _mtfl_descend(
        problems, w, gamma, eps, config.max_inner_iters, config.inner_tolerance
    )
    if not converged:
        warnings.warn(
            f"mtfl did not converge in {config.max_inner_iters} iterations", SolverConvergenceWarning
        )
    u = top_directions(w, config.d_shared)
    return MultiTaskModel(
        "mtfl", problems.task_ids, problems.dimension, u_matrix=u, alphas=w @ u.T,
        objective_trace=trace, converged=converged, state={"w_full": w},
    )


# --- ASO ------------------------------------------------------------------------------


def soft_threshold(x, t):
    return np.sign(x) * np.maximum(np.abs(x) - t, 0.0)


def aso_objective(problems, u, v, w, lam_ridge, lam_sparse) -> float:
    theta = w + v @ u if len(u) else w
    return float(
        problems.losses(theta).sum()
        + lam_sparse * np.abs(w).sum()
        + 0.5 * lam_ridge * np.sum(v * v)
    )


def _aso_diag_step(problems, u, v0, lam_ridge, lam_sparse, max_steps=200):
    """Exact task-wise minimization over (v, w) for diagonal Gram matrices.

    Eliminating ``w`` leaves a Huber-type objective in the low-dimensional
    ``v``, minimized by damped Newton.
    """
    c = problems.gram
    obs = c > 0
    ybar = np.divide(problems.xty, c, out=np.zeros_like(problems.xty), where=obs)
    thresh = np.divide(lam_sparse, c, out=np.zeros_like(c), where=obs)
    k = len(u)

    def w_of(v):
        resid = ybar - (v @ u if k else 0.0)
        return np.where(obs, soft_threshold(resid, thresh), 0.0)

    if k == 0:
        return np.zeros((problems.num_tasks, 0)), w_of(None)

    def profile(v):
        r = np.where(obs, ybar - v @ u, 0.0)
        quad = np.abs(r) <= thresh
        val = np.where(quad, 0.5 * c * r * r, lam_sparse * np.abs(r) - 0.5 * lam_sparse * thresh)
        val = np.where(obs, val, 0.0).sum(axis=1) + 0.5 * lam_ridge * np.sum(v * v, axis=1)
        return val, r, quad

    v = v0.copy()
    f, r, quad = profile(v)
    active = np.ones(len(v), dtype=bool)
    eye = np.eye(k)
    for _ in range(max_steps):
        psi = np.where(quad & obs, c * r, lam_sparse * np.sign(r))
        grad = -psi @ u.T + lam_ridge * v
        curv = np.where(quad & obs, c, 0.0)
        hess = np.einsum("kd,td,jd->tkj", u, curv, u) + lam_ridge * eye
        # tiny floor keeps the system solvable when both weights vanish
        hess += 1e-12 * eye
        step = -np.linalg.solve(hess, grad[..., None])[..., 0]
        slope = np.einsum("tk,tk->t", grad, step)
        active &= slope < -1e-15 * np.maximum(1.0, np.abs(f))
        if not active.any():
            break
        alpha = np.ones(len(v))
        pending = active.copy()
        for _ in range(60):
            trial = v + alpha[:, None] * step
            f_try, r_try, q_try = profile(trial)
            ok = pending & (f_try <= f + 1e-4 * alpha * slope)
            v[ok], f[ok], r[ok], quad[ok] = trial[ok], f_try[ok], r_try[ok], q_try[ok]
            pending &= ~ok
            if not pending.any():
                break
            alpha[pending] *= 0.5
        active &= ~pending
    return v, w_of(v)


def _aso_dense_step(problems, u, v0, w0, lam_ridge, lam_sparse, max_steps, tol):
    """Monotone FISTA on (v, w) jointly, task-wise step ``1/L``."""
    k = len(u)
    lip = (2.0 if k else 1.0) * problems.lipschitz() + lam_ridge
    lip = np.maximum(lip, 1e-12)[:, None]

    def smooth(v, w):
        theta = w + (v @ u if k else 0.0)
        return problems.losses(theta) + 0.5 * lam_ridge * np.sum(v * v, axis=1), theta

    def total(v, w):
        return smooth(v, w)[0] + lam_sparse * np.abs(w).sum(axis=1)

    v, w = v0.copy(), w0.copy()
    yv, yw = v.copy(), w.copy()
    f = total(v, w)
    mom = 1.0
    for _ in range(max_steps):
        _, theta = smooth(yv, yw)
        g_theta = problems.gram_dot(theta) - problems.xty
        gv = (g_theta @ u.T if k else np.zeros_like(yv)) + lam_ridge * yv
        zv = yv - gv / lip
        zw = soft_threshold(yw - g_theta / lip, lam_sparse / lip)
        fz = total(zv, zw)
        better = (fz <= f)[:, None]
        # keep the best point so the objective sequence is monotone
        v_new = np.where(better, zv, v)
        w_new = np.where(better, zw, w)
        mom_new = 0.5 * (1 + np.sqrt(1 + 4 * mom * mom))
        a, b = mom / mom_new, (mom - 1) / mom_new
        yv = v_new + a * (zv - v_new) + b * (v_new - v)
        yw = w_new + a * (zw - w_new) + b * (w_new - w)
        f_new = np.minimum(f, fz)
        done = np.all(f - f_new <= tol * np.maximum(1.0, np.abs(f_new))) and bool(better.all())
        v, w, f, mom = v_new, w_new, f_new, mom_new
        if done:
            break
    return v, w


def _aso_task_step(problems, u, v, w, config):
    if problems.diagonal:
        return _aso_diag_step(problems, u, v, config.ridge_weight, config.sparsity_weight)
    return _aso_dense_step(
        problems, u, v, w, config.ridge_weight, config.sparsity_weight,
        config.prox_max_steps, config.prox_tolerance,
    )


def fit_aso(
    problems: RegressionProblemSet,
    config: SolverConfig = SolverConfig(variant="aso"),
    init: MultiTaskModel | None = None,
) -> MultiTaskModel:
    """Alternating structure optimization with a sparse task-specific part.

    Objective: ``sum_t 0.5||X_t(w_t + U^T v_t) - y_t||^2 + sparsity*||w_t||_1
    + 0.5*ridge*||v_t||^2`` with ``U U^T = I``. Step (a) minimizes over
    ``(v_t, w_t)`` per task for fixed ``U``; step (b) resets ``U`` to the top
    left singular vectors of the stacked predictors ``theta_t = w_t + U^T v_t``.
    A structure update that would raise the objective is rejected and ends the
    loop, so ``objective_trace`` never increases.
    """
    _check_dims(problems, config)
    T, d, k = problems.num_tasks, problems.dimension, config.d_shared
    lam_r, lam_s = config.ridge_weight, config.sparsity_weight
    if init is not None and init.variant == "aso" and init.u_matrix is not None \
            and init.u_matrix.shape == (k, d) and init.num_tasks == T:
        u = init.u_matrix
        v, w = init.alphas.copy(), init.w_sparse.copy()
    else:
        theta0 = _ridge(problems, max(lam_r, 1e-12))
        u = top_directions(theta0, k)
        v = theta0 @ u.T
        w = theta0 - v @ u if k else theta0
    v, w = _aso_task_step(problems, u, v, w, config)
    trace = [aso_objective(problems, u, v, w, lam_r, lam_s)]
    converged = k == 0
    for _ in range(0 if k == 0 else config.max_inner_iters):
        theta = w + v @ u
        u_new = top_directions(theta, k)
        v_new = theta @ u_new.T
        w_new = theta - v_new @ u_new
        v_new, w_new = _aso_task_step(problems, u_new, v_new, w_new, config)
        obj = aso_objective(problems, u_new, v_new, w_new, lam_r, lam_s)
        if obj > trace[-1]:
            converged = True
            break
        u, v, w = u_new, v_new, w_new
        trace.append(obj)
        if trace[-2] - obj <= config.inner_tolerance * max(1.0, abs(obj)):
            converged = True
            break
    if not converged:
        warnings.warn(
            f"aso did not converge in {config.max_inner_iters} iterations", SolverConvergenceWarning
        )
    return MultiTaskModel(
        "aso", problems.task_ids, d, u_matrix=u, alphas=v, w_sparse=w,
        objective_trace=trace, converged=converged,
    )


FITTERS = {"independent": fit_independent, "mtfl": fit_mtfl, "aso": fit_aso}


def fit(problems: RegressionProblemSet, config: SolverConfig, init: MultiTaskModel | None = None):
    if config.variant == "independent":
        return fit_independent(problems, config)
    return FITTERS[config.variant](problems, config, init=init)


# --- model files ----------------------------------------------------------------------


def _fmt(row) -> str:
    return ",".join(f"{x:.17g}" for x in row)


def save_model(model: MultiTaskModel, path: str | Path) -> None:
    """Write the labeled-section CSV model file."""
    k = 0 if model.u_matrix is None else len(model.u_matrix)
    lines = [f"{MODEL_TAG},{model.variant},{model.num_tasks},{model.dimension},{k}"]
    lines.append("[task_ids]")
    lines.append(",".join(str(t) for t in model.task_ids))
    if model.u_matrix is not None:
        lines.append("[U]")
        lines += [_fmt(r) for r in model.u_matrix]
    for i, t in enumerate(model.task_ids):
        if model.alphas is not None:
            lines.append(f"[alpha {t}]")
            lines.append(_fmt(model.alphas[i]))
        if model.w_sparse is not None:
            lines.append(f"[w {t}]")
            lines.append(_fmt(model.w_sparse[i]))
    lines.append("[objective]")
    lines.append(_fmt(model.objective_trace))
    Path(path).write_text("\n".join(lines) + "\n")


def load_model(path: str | Path) -> MultiTaskModel:
    lines = Path(path).read_text().splitlines()
    head = lines[0].split(",") if lines else [""]
    if head[0] != MODEL_TAG or len(head) != 5:
        raise ValueError(f"{path}: not a {MODEL_TAG} file")
    variant, n_tasks, dim, k = head[1], int(head[2]), int(head[3]), int(head[4])
    if variant not in VARIANTS:
        raise ValueError(f"{path}: unknown variant {variant!r}")
    sections: dict[str, list[str]] = {}
    current = None
    for line in lines[1:]:
        if line.startswith("["):
            current = line.strip("[]")
            sections[current] = []
        elif current is not None:
            sections[current].append(line)

    def floats(rows):
        return [[float(x) for x in r.split(",")] if r else [] for r in rows]

    ids = [int(x) for x in sections["task_ids"][0].split(",")]
    if len(ids) != n_tasks:
        raise ValueError(f"{path}: header declares {n_tasks} tasks, found {len(ids)}")
    u = np.array(floats(sections["U"]), dtype=float).reshape(k, dim) if "U" in sections else None
    alphas = (
        np.array([floats(sections[f"alpha {t}"])[0] for t in ids]).reshape(n_tasks, k)
        if f"alpha {ids[0]}" in sections else None
    )
    w = (
        np.array([floats(sections[f"w {t}"])[0] for t in ids]).reshape(n_tasks, dim)
        if f"w {ids[0]}" in sections else None
    )
    trace = floats(sections.get("objective", [""]))[0]
    return MultiTaskModel(variant, ids, dim, u, alphas, w, trace)
