"""Fitted value and policy iteration with a pluggable multi-task regression step."""

from __future__ import annotations

import csv
import time
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from .experience import ExperienceSet
from .features import FeatureMap
from .mdp import TabularMDP
from .solvers import MultiTaskModel, RegressionProblemSet, SolverConfig, fit

Monitor = Callable[[MultiTaskModel], dict]


class DivergenceError(RuntimeError):
    """Parameter change exceeded the divergence guard."""

    def __init__(self, iteration: int, dtheta: float):
        self.iteration = iteration
        self.dtheta = dtheta
        super().__init__(f"fitted iteration diverged at iteration {iteration} (dtheta={dtheta:.3g})")


@dataclass(frozen=True)
class PlannerConfig:
    discount: float = 0.95
    outer_tolerance: float = 1e-6
    max_outer_iters: int = 300
    max_policy_iters: int = 50
    solver: SolverConfig = SolverConfig()
    target_clipping: float | None = None
    divergence_guard: float = 1e6

    def __post_init__(self):
        if not self.outer_tolerance >= 0:
            raise ValueError("outer_tolerance must be non-negative (0 runs every iteration)")
        if self.max_outer_iters < 1 or self.max_policy_iters < 1:
            raise ValueError("iteration limits must be positive")
        if not 0 <= self.discount < 1:
            raise ValueError("discount must lie in [0, 1)")


@dataclass
class IterationRecord:
    iteration: int
    dtheta: float
    q_dist: dict | None = None
    wallclock_ms: float = 0.0


@dataclass
class PlannerTrace:
    records: list = field(default_factory=list)
    converged: bool = False
    targets: list | None = None
    inner_iterations: list = field(default_factory=list)

    def __len__(self):
        return len(self.records)

    @property
    def dthetas(self) -> list[float]:
        return [r.dtheta for r in self.records]

    def to_csv(self, path: str | Path, include_timing: bool = False) -> None:
        """``iter,dtheta,task_id,q_dist,wallclock_ms``; timing is left empty unless asked for."""
        with open(path, "w", newline="") as fh:
            out = csv.writer(fh, lineterminator="\n")
            out.writerow(["iter", "dtheta", "task_id", "q_dist", "wallclock_ms"])
            for rec in self.records:
                ms = f"{rec.wallclock_ms:.3f}" if include_timing else ""
                if rec.q_dist:
                    for task_id, dist in rec.q_dist.items():
                        out.writerow([rec.iteration, f"{rec.dtheta:.17g}", task_id, f"{dist:.17g}", ms])
                else:
                    out.writerow([rec.iteration, f"{rec.dtheta:.17g}", "", "", ms])


@dataclass(frozen=True, eq=False)
class GreedyPolicy:
    task_id: int
    actions: np.ndarray

    def __post_init__(self):
        a = np.array(self.actions, dtype=np.int64)
        a.setflags(write=False)
        object.__setattr__(self, "actions", a)

    def __call__(self, state: int) -> int:
        return int(self.actions[state])

    def __eq__(self, other):
        if not isinstance(other, GreedyPolicy):
            return NotImplemented
        return self.task_id == other.task_id and np.array_equal(self.actions, other.actions)

    __hash__ = None


def greedy(q_table: np.ndarray, task_id: int = 0) -> GreedyPolicy:
    """Argmax per state; ``np.argmax`` picks the lowest action index on ties."""
    return GreedyPolicy(task_id, np.argmax(q_table, axis=1))


def extract_policy(model: MultiTaskModel, task_id, mdp: TabularMDP, features: FeatureMap) -> GreedyPolicy:
    coef = model.coef[model.row(task_id)]
    q = (features.table @ coef).reshape(mdp.num_states, mdp.num_actions)
    return greedy(q, task_id)


def greedy_policies(model: MultiTaskModel, features: FeatureMap) -> list[GreedyPolicy]:
    q = model.q_tables(features)
    return [greedy(q[i], t) for i, t in enumerate(model.task_ids)]


class _Batch:
    """Column-stacked experience for all tasks plus the fixed regression designs."""

    def __init__(self, data: Sequence[ExperienceSet], features: FeatureMap):
        if not data:
            raise ValueError("no experience supplied")
        for d in data:
            if len(d) == 0:
                raise ValueError(f"task {d.task_id} has no transitions")
        self.task_ids = [d.task_id for d in data]
        if len(set(self.task_ids)) != len(self.task_ids):
            raise ValueError("task ids must be unique")
        self.data = list(data)
        self.features = features
        self.problems = RegressionProblemSet(
            [features.rows(d.states, d.actions) for d in data],
            [np.zeros(len(d)) for d in data],
            self.task_ids,
        )

    def targets(self, coef: np.ndarray, discount: float, policies=None, clip=None) -> list[np.ndarray]:
        f = self.features
        q = (coef @ f.table.T).reshape(len(self.data), f.num_states, f.num_actions)
        out = []
        for i, d in enumerate(self.data):
            if policies is None:
                nxt = q[i, d.next_states].max(axis=1)
            else:
                nxt = q[i, d.next_states, policies[i].actions[d.next_states]]
            y = d.rewards + discount * np.where(d.terminals, 0.0, nxt)
            if clip is not None:
                y = np.clip(y, 0.0, clip)
            out.append(y)
        return out


def _zero_model(batch: _Batch) -> MultiTaskModel:
    return MultiTaskModel(
        "independent", batch.task_ids, batch.features.dimension,
        w_sparse=np.zeros((len(batch.task_ids), batch.features.dimension)),
    )


def _solver_config(config: PlannerConfig, solver: str | None) -> SolverConfig:
    if solver is None or solver == config.solver.variant:
        return config.solver
    return replace(config.solver, variant=solver)


def _fitted_loop(batch, config, solver_cfg, init, policies, monitor, record_targets, trace):
    model = init
    start = time.perf_counter()
    for k in range(1, config.max_outer_iters + 1):
        y = batch.targets(model.coef, config.discount, policies, config.target_clipping)
        if record_targets:
            trace.targets.append([t.copy() for t in y])
        new = fit(batch.problems.with_targets(y), solver_cfg, init=model)
        dtheta = float(np.linalg.norm(new.coef - model.coef))
        if not np.isfinite(dtheta) or dtheta > config.divergence_guard:
            raise DivergenceError(k, dtheta)
        model = new
        trace.records.append(IterationRecord(
            k, dtheta, monitor(model) if monitor else None, 1e3 * (time.perf_counter() - start)
        ))
        if dtheta < config.outer_tolerance:
            return model, True
    return model, False


def mt_fqi(
    data: Sequence[ExperienceSet],
    features: FeatureMap,
    config: PlannerConfig = PlannerConfig(),
    solver: str | None = None,
    monitor: Monitor | None = None,
    record_targets: bool = False,
) -> tuple[MultiTaskModel, PlannerTrace]:
    """Multi-task fitted Q-iteration.

    Targets are ``r + gamma * max_a' Q_t(s', a')`` with zero continuation at
    terminal next states; every task's targets are then fitted jointly by the
    chosen backend. Parameters start at zero. Stops when the Frobenius norm of
    the change in effective weights falls below ``outer_tolerance``.
    """
    batch = _Batch(data, features)
    trace = PlannerTrace(targets=[] if record_targets else None)
    model, trace.converged = _fitted_loop(
        batch, config, _solver_config(config, solver), _zero_model(batch), None, monitor,
        record_targets, trace,
    )
    return model, trace


def mt_pe(
    data: Sequence[ExperienceSet],
    policies: Sequence[GreedyPolicy],
    features: FeatureMap,
    config: PlannerConfig = PlannerConfig(),
    solver: str | None = None,
    init: MultiTaskModel | None = None,
    monitor: Monitor | None = None,
    record_targets: bool = False,
) -> tuple[MultiTaskModel, PlannerTrace]:
    """Multi-task policy evaluation with targets ``r + gamma * Q_t(s', pi_t(s'))``."""
    batch = _Batch(data, features)
    if len(policies) != len(batch.task_ids):
        raise ValueError("one policy per task is required")
    trace = PlannerTrace(targets=[] if record_targets else None)
    start = _zero_model(batch) if init is None else init
    model, trace.converged = _fitted_loop(
        batch, config, _solver_config(config, solver), start, list(policies), monitor,
        record_targets, trace,
    )
    return model, trace


def mt_pi(
    data: Sequence[ExperienceSet],
    features: FeatureMap,
    config: PlannerConfig = PlannerConfig(),
    solver: str | None = None,
    monitor: Monitor | None = None,
    initial_policies: Sequence[GreedyPolicy] | None = None,
) -> tuple[MultiTaskModel, list[GreedyPolicy], PlannerTrace]:
    """Multi-task policy iteration.

    Alternates joint evaluation (warm-started from the previous evaluation)
    with per-task greedy improvement. Stops when no task's policy changes,
    when the change in weights between evaluations drops below
    ``outer_tolerance``, or after ``max_policy_iters`` rounds.
    """
    batch = _Batch(data, features)
    n_s, n_a = features.num_states, features.num_actions
    if initial_policies is None:
        policies = [greedy(np.zeros((n_s, n_a)), t) for t in batch.task_ids]
    else:
        policies = list(initial_policies)
    model = _zero_model(batch)
    trace = PlannerTrace()
    start = time.perf_counter()
    for k in range(1, config.max_policy_iters + 1):
        new, inner = mt_pe(data, policies, features, config, solver, init=model)
        trace.inner_iterations.append(len(inner))
        dtheta = float(np.linalg.norm(new.coef - model.coef))
        model = new
        improved = greedy_policies(model, features)
        stable = all(p == q for p, q in zip(improved, policies))
        policies = improved
        trace.records.append(IterationRecord(
            k, dtheta, monitor(model) if monitor else None, 1e3 * (time.perf_counter() - start)
        ))
        if stable or dtheta < config.outer_tolerance:
            trace.converged = True
            break
    return model, policies, trace
