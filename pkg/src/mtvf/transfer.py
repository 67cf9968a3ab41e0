"""Transfer of a learned subspace to new tasks, and option recovery from it."""

from __future__ import annotations

import csv
import zlib
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Sequence

import numpy as np

from .evaluation import RolloutConfig, normalized_return
from .experience import collect
from .features import FeatureMap, SharedSubspace, augment, one_hot_map, project
from .mdp import GridLayout, TabularMDP, solve_exact
from .planners import DivergenceError, GreedyPolicy, PlannerConfig, extract_policy, mt_fqi

PHI = "phi"
AUGMENTED = "psi+phi"


class TransferError(ValueError):
    """Transfer tasks overlap the tasks the subspace was learned on."""


@dataclass(frozen=True)
class Option:
    """``<I, mu, beta>`` with ``beta = 1`` on the termination set and ``mu`` learned."""

    name: str
    initiation_set: frozenset
    termination_set: frozenset

    def __post_init__(self):
        init, term = frozenset(self.initiation_set), frozenset(self.termination_set)
        if not init or not term:
            raise ValueError(f"option {self.name!r}: initiation and termination sets must be non-empty")
        if init & term:
            raise ValueError(f"option {self.name!r}: initiation and termination sets overlap")
        object.__setattr__(self, "initiation_set", init)
        object.__setattr__(self, "termination_set", term)


@dataclass(frozen=True)
class OptionMDP:
    """The base MDP rewarded by a constant on entering the option's termination set.

    Behaves as a task (``targets``, ``reward_value``, ``task_id``), so data
    collection, the oracle and the planners apply unchanged; termination
    states are absorbing.
    """

    mdp: TabularMDP
    option: Option
    reward_value: float = 1.0
    task_id: int = 0

    @property
    def targets(self) -> frozenset:
        return self.option.termination_set


def build_room_option_mdp(mdp: TabularMDP, layout: GridLayout, room_id: int, reward_value: float = 1.0) -> OptionMDP:
    """Go-to-room option: terminate anywhere inside ``room_id``; start from anywhere outside it."""
    rooms = layout.rooms()
    if room_id not in rooms:
        raise ValueError(f"room_id must be one of {sorted(rooms)}, got {room_id!r}")
    inside = rooms[room_id]
    outside = frozenset(range(mdp.num_states)) - inside
    return OptionMDP(mdp, Option(f"to-room-{room_id}", outside, inside), reward_value, room_id)


def build_exit_option_mdp(mdp: TabularMDP, layout: GridLayout, room_id: int, reward_value: float = 1.0) -> OptionMDP:
    """Leave-room option: start inside ``room_id``; terminate on any cell outside it (hallways included)."""
    rooms = layout.rooms()
    if room_id not in rooms:
        raise ValueError(f"room_id must be one of {sorted(rooms)}, got {room_id!r}")
    inside = rooms[room_id]
    outside = frozenset(range(mdp.num_states)) - inside
    return OptionMDP(mdp, Option(f"exit-room-{room_id}", inside, outside), reward_value, room_id)


def steps_to_termination(option_mdp: OptionMDP, policy: GreedyPolicy, max_steps: int | None = None) -> dict:
    """Steps taken from each initiation state to terminate (``None`` if it never does)."""
    mdp, term = option_mdp.mdp, option_mdp.targets
    max_steps = mdp.num_states if max_steps is None else max_steps
    out = {}
    for s0 in sorted(option_mdp.option.initiation_set):
        s, steps = s0, None
        for k in range(1, max_steps + 1):
            s = int(mdp.transition[s, policy(s)])
            if s in term:
                steps = k
                break
        out[s0] = steps
    return out


@dataclass(frozen=True)
class OptionResult:
    policy: GreedyPolicy
    success: bool
    steps_max: int
    diverged: bool = False


def recover_option_policy(
    option_mdp: OptionMDP,
    subspace: SharedSubspace,
    budget: int,
    config: PlannerConfig = PlannerConfig(),
    rng_seed: int = 0,
    episode_cap: int = 100,
) -> OptionResult:
    """Single-task FQI on ``psi = U phi`` alone, then a reachability check.

    Success means the greedy policy enters the termination set from every
    initiation state within ``num_states`` steps. ``steps_max`` is the worst
    such count, or -1 on failure.
    """
    mdp = option_mdp.mdp
    feats = project(one_hot_map(mdp.num_states, mdp.num_actions), subspace)
    data = collect(mdp, option_mdp, budget, episode_cap, rng_seed,
                   start_states=option_mdp.option.initiation_set)
    try:
        model, _ = mt_fqi([data], feats, config, solver="independent")
    except DivergenceError:
        zero = GreedyPolicy(option_mdp.task_id, np.zeros(mdp.num_states, dtype=np.int64))
        return OptionResult(zero, False, -1, diverged=True)
    policy = extract_policy(model, option_mdp.task_id, mdp, feats)
    steps = steps_to_termination(option_mdp, policy)
    ok = all(v is not None for v in steps.values())
    return OptionResult(policy, ok, max(steps.values()) if ok else -1)


def exit_room_option(option_mdp: OptionMDP, subspace: SharedSubspace, budget: int,
                     config: PlannerConfig = PlannerConfig(), rng_seed: int = 0,
                     episode_cap: int = 100) -> OptionResult:
    """``recover_option_policy`` for an exit option (see ``build_exit_option_mdp``)."""
    return recover_option_policy(option_mdp, subspace, budget, config, rng_seed, episode_cap)


def option_table(mdp, layout, subspace, budgets, config=PlannerConfig(), rng_seed=0, exit_options=False,
                 episode_cap=100) -> list[tuple]:
    """Rows ``(room, budget, success, steps_max)`` for every room and budget."""
    build = build_exit_option_mdp if exit_options else build_room_option_mdp
    rows = []
    for room in sorted(layout.rooms()):
        omdp = build(mdp, layout, room)
        for budget in budgets:
            res = recover_option_policy(omdp, subspace, budget, config, _seed(rng_seed, room, budget), episode_cap)
            rows.append((room, budget, res.success, res.steps_max))
    return rows


def write_option_table(rows, path: str | Path) -> None:
    with open(path, "w", newline="") as fh:
        out = csv.writer(fh, lineterminator="\n")
        out.writerow(["room", "budget", "success", "steps_max"])
        for room, budget, ok, steps in rows:
            out.writerow([room, budget, str(bool(ok)).lower(), steps])


# --- option models ---------------------------------------------------------------------


def option_model(mdp: TabularMDP, termination_set, actions) -> np.ndarray:
    """Discounted termination distribution ``P^o[s, s']`` of a deterministic option policy.

    Absorbing-chain form: with ``N`` the non-termination states and ``B`` the
    termination set, ``P^o_NB = gamma (I - gamma P_NN)^{-1} P_NB``. Rows of
    termination states are the identity (the option ends at once).
    """
    n, g = mdp.num_states, mdp.discount
    term = np.zeros(n, dtype=bool)
    term[list(termination_set)] = True
    p = np.zeros((n, n))
    p[np.arange(n), mdp.transition[np.arange(n), np.asarray(actions)]] = 1.0
    live, done = np.flatnonzero(~term), np.flatnonzero(term)
    out = np.zeros((n, n))
    out[done, done] = 1.0
    fundamental = np.linalg.inv(np.eye(len(live)) - g * p[np.ix_(live, live)])
    out[np.ix_(live, done)] = g * fundamental @ p[np.ix_(live, done)]
    return out


def option_value(p_o: np.ndarray, v: np.ndarray) -> np.ndarray:
    """``Q(s, o) = sum_s' P^o[s, s'] V(s')`` for an option without internal reward."""
    return p_o @ v


# --- transfer to new tasks -------------------------------------------------------------


def _seed(base: int, *parts: int) -> int:
    key = ",".join(str(int(p)) for p in (base, *parts)).encode()
    return zlib.crc32(key)


def check_disjoint(training_goals, new_tasks) -> None:
    train = {int(g) for g in training_goals}
    clash = sorted(train & {int(g) for t in new_tasks for g in t.targets})
    if clash:
        raise TransferError(f"transfer goals overlap the training goals: {clash}")


@dataclass
class TransferRow:
    task_id: int
    budget: int
    representation: str
    normalized_return: float


def transfer_curve(
    mdp: TabularMDP,
    new_tasks: Sequence,
    subspace: SharedSubspace,
    base: FeatureMap,
    budgets: Sequence[int],
    config: PlannerConfig = PlannerConfig(),
    training_goals=(),
    rollout: RolloutConfig = RolloutConfig(),
    rng_seed: int = 0,
    episode_cap: int = 100,
) -> list[TransferRow]:
    """Single-task FQI on ``phi`` and on ``[psi, phi]`` over identical data per (task, budget).

    A run that trips the divergence guard scores its all-zero fallback policy.
    """
    check_disjoint(training_goals, new_tasks)
    augmented = augment(base, project(base, subspace))
    oracles = {t.task_id: solve_exact(mdp, t) for t in new_tasks}
    config = replace(config, discount=mdp.discount)
    rows = []
    for task in new_tasks:
        for budget in budgets:
            data = collect(mdp, task, budget, episode_cap, _seed(rng_seed, task.task_id, budget))
            for name, feats in ((PHI, base), (AUGMENTED, augmented)):
                try:
                    model, _ = mt_fqi([data], feats, config, solver="independent")
                    policy = extract_policy(model, task.task_id, mdp, feats)
                except DivergenceError:
                    policy = GreedyPolicy(task.task_id, np.zeros(mdp.num_states, dtype=np.int64))
                score = normalized_return(mdp, task, policy, oracles[task.task_id], rollout)
                rows.append(TransferRow(task.task_id, budget, name, score))
    return rows


def write_transfer_table(rows: Sequence[TransferRow], path: str | Path) -> None:
    with open(path, "w", newline="") as fh:
        out = csv.writer(fh, lineterminator="\n")
        out.writerow(["task_id", "budget", "representation", "normalized_return"])
        for r in rows:
            out.writerow([r.task_id, r.budget, r.representation, f"{r.normalized_return:.17g}"])


def curve_means(rows: Sequence[TransferRow]) -> dict:
    """``{(representation, budget): mean normalized return}``."""
    acc: dict = {}
    for r in rows:
        acc.setdefault((r.representation, r.budget), []).append(r.normalized_return)
    return {k: float(np.mean(v)) for k, v in sorted(acc.items())}
