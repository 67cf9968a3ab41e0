"""Rollout returns, distance to the oracle Q*, and exact-evaluation regret."""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .features import FeatureMap
from .mdp import OracleSolution, TabularMDP, reward_table, task_view
from .planners import GreedyPolicy, extract_policy, greedy
from .solvers import MultiTaskModel


@dataclass(frozen=True)
class RolloutConfig:
    num_starts: int = 50
    horizon: int = 200
    rng_seed: int = 0
    start_distribution: str = "uniform-non-goal"

    def __post_init__(self):
        if self.num_starts < 1 or self.horizon < 1:
            raise ValueError("num_starts and horizon must be positive")
        if self.start_distribution != "uniform-non-goal":
            raise ValueError(f"unsupported start distribution {self.start_distribution!r}")


def start_states(mdp: TabularMDP, task, config: RolloutConfig) -> np.ndarray:
    """Seeded uniform draw (with replacement) over non-target states."""
    pool = np.array([s for s in range(mdp.num_states) if s not in task.targets], dtype=np.int64)
    rng = np.random.default_rng(config.rng_seed)
    return pool[rng.integers(len(pool), size=config.num_starts)]


def _episode_return(mdp, targets, r_table, actions, s, horizon) -> float:
    total, scale = 0.0, 1.0
    for _ in range(horizon):
        a = actions[s]
        total += scale * r_table[s, a]
        s = mdp.transition[s, a]
        if s in targets:
            break
        scale *= mdp.discount
    return total


def rollout_value(mdp: TabularMDP, task, policy: GreedyPolicy, config: RolloutConfig = RolloutConfig(),
                  starts=None) -> float:
    """Mean discounted return of ``policy`` over the seeded start set.

    Each episode runs until a target is entered or ``horizon`` steps elapse.
    """
    if starts is None:
        starts = start_states(mdp, task, config)
    r_table = reward_table(mdp, task)
    targets = task.targets
    actions = np.asarray(policy.actions)
    returns = [_episode_return(mdp, targets, r_table, actions, int(s), config.horizon) for s in starts]
    return float(np.mean(returns))


def normalized_return(mdp: TabularMDP, task, policy: GreedyPolicy, oracle: OracleSolution,
                      config: RolloutConfig = RolloutConfig()) -> float:
    """``V_emp(policy) / V_emp(greedy(Q*))`` over the same starts."""
    starts = start_states(mdp, task, config)
    best = rollout_value(mdp, task, greedy(oracle.q_star, task.task_id), config, starts)
    if best <= 0:
        raise ValueError(f"task {task.task_id}: optimal return over the start set is {best}")
    return rollout_value(mdp, task, policy, config, starts) / best


def q_distance(model: MultiTaskModel, task_id, oracle: OracleSolution, mdp: TabularMDP,
               features: FeatureMap, exclude=()) -> float:
    """``||Q* - Q_hat||_2`` over all state-action pairs.

    Rows of states in ``exclude`` are left out; pass the task's targets there,
    since values at an absorbing goal never enter a target and are not
    identified by the data.
    """
    q = (features.table @ model.coef[model.row(task_id)]).reshape(mdp.num_states, mdp.num_actions)
    diff = oracle.q_star - q
    keep = np.ones(mdp.num_states, dtype=bool)
    keep[list(exclude)] = False
    return float(np.linalg.norm(diff[keep]))


def q_monitor(tasks, oracles: Sequence[OracleSolution], mdp: TabularMDP, features: FeatureMap,
              relative: bool = False):
    """Planner monitor mapping each task id to its (optionally relative) Q-distance."""
    norms = {t.task_id: float(np.linalg.norm(o.q_star)) for t, o in zip(tasks, oracles)}

    def monitor(model: MultiTaskModel) -> dict:
        out = {}
        for task, oracle in zip(tasks, oracles):
            d = q_distance(model, task.task_id, oracle, mdp, features, exclude=task.targets)
            out[task.task_id] = d / norms[task.task_id] if relative else d
        return out

    return monitor


def policy_values(mdp: TabularMDP, task, policy: GreedyPolicy) -> np.ndarray:
    """Exact ``V^pi`` from the linear system ``(I - gamma P_pi) v = r_pi``."""
    view = task_view(mdp, task)
    n = mdp.num_states
    idx = np.arange(n)
    actions = np.asarray(policy.actions)
    r_pi = reward_table(mdp, task)[idx, actions]
    nxt = view.transition[idx, actions]
    p = np.zeros((n, n))
    live = ~view.terminal_mask
    p[idx[live], nxt[live]] = 1.0
    r_pi[~live] = 0.0
    return np.linalg.solve(np.eye(n) - mdp.discount * p, r_pi)


def task_regret(mdp: TabularMDP, task, policy: GreedyPolicy, oracle: OracleSolution) -> float:
    """``||V* - V^pi|| / ||V*||`` with ``V^pi`` evaluated exactly."""
    v_star = oracle.v_star
    return float(np.linalg.norm(v_star - policy_values(mdp, task, policy)) / np.linalg.norm(v_star))


def regret(policies: Sequence[GreedyPolicy], oracles: Sequence[OracleSolution], mdp: TabularMDP,
           tasks, discount: float | None = None) -> float:
    """Mean normalized value regret across tasks."""
    if not len(policies) == len(oracles) == len(tasks):
        raise ValueError("need one policy and one oracle per task")
    if discount is not None:
        mdp = mdp.with_discount(discount)
    return float(np.mean([task_regret(mdp, t, p, o) for p, o, t in zip(policies, oracles, tasks)]))


@dataclass
class EvalRow:
    task_id: int
    v_emp: float
    v_emp_norm: float
    q_dist: float
    regret: float


@dataclass
class EvalReport:
    rows: list = field(default_factory=list)

    def column(self, name: str) -> np.ndarray:
        return np.array([getattr(r, name) for r in self.rows], dtype=float)

    def mean(self, name: str) -> float:
        return float(self.column(name).mean())

    def to_csv(self, path: str | Path) -> None:
        """Per-task rows, then ``mean`` and ``std`` aggregate rows."""
        cols = ["v_emp", "v_emp_norm", "q_dist", "regret"]
        with open(path, "w", newline="") as fh:
            out = csv.writer(fh, lineterminator="\n")
            out.writerow(["task_id"] + cols)
            for r in self.rows:
                out.writerow([r.task_id] + [f"{getattr(r, c):.17g}" for c in cols])
            for label, fn in (("mean", np.mean), ("std", np.std)):
                out.writerow([label] + [f"{fn(self.column(c)):.17g}" for c in cols])


def evaluate(model: MultiTaskModel, tasks, oracles: Sequence[OracleSolution], mdp: TabularMDP,
             features: FeatureMap, config: RolloutConfig = RolloutConfig(),
             policies: Sequence[GreedyPolicy] | None = None) -> EvalReport:
    """Full report for every task; greedy policies are extracted unless given."""
    report = EvalReport()
    for i, (task, oracle) in enumerate(zip(tasks, oracles)):
        pol = policies[i] if policies is not None else extract_policy(model, task.task_id, mdp, features)
        starts = start_states(mdp, task, config)
        v_emp = rollout_value(mdp, task, pol, config, starts)
        best = rollout_value(mdp, task, greedy(oracle.q_star, task.task_id), config, starts)
        report.rows.append(EvalRow(
            task.task_id, v_emp, v_emp / best,
            q_distance(model, task.task_id, oracle, mdp, features, exclude=task.targets),
            task_regret(mdp, task, pol, oracle),
        ))
    return report
