"""Off-policy experience collection and the ``mtvf-exp v1`` dataset format."""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path
from typing import Iterator, NamedTuple

import numpy as np

from .mdp import TabularMDP, reward

FORMAT_TAG = "mtvf-exp v1"
COLUMNS = "state,action,reward,next_state,terminal"
UNIFORM = "uniform-random"


class ExperienceFormatError(ValueError):
    """A dataset file could not be parsed."""


class Transition(NamedTuple):
    state: int
    action: int
    reward: float
    next_state: int
    terminal: bool


@dataclass(frozen=True, eq=False)
class ExperienceSet:
    """Transitions gathered for one task, stored column-wise."""

    task_id: int
    states: np.ndarray
    actions: np.ndarray
    rewards: np.ndarray
    next_states: np.ndarray
    terminals: np.ndarray
    behavior: str = UNIFORM
    rng_seed: int = 0

    def __post_init__(self):
        cols = {
            "states": np.asarray(self.states, dtype=np.int64),
            "actions": np.asarray(self.actions, dtype=np.int64),
            "rewards": np.asarray(self.rewards, dtype=float),
            "next_states": np.asarray(self.next_states, dtype=np.int64),
            "terminals": np.asarray(self.terminals, dtype=bool),
        }
        n = len(cols["states"])
        if any(c.shape != (n,) for c in cols.values()):
            raise ValueError("transition columns must be 1-d and of equal length")
        for name, c in cols.items():
            c.setflags(write=False)
            object.__setattr__(self, name, c)

    @classmethod
    def from_transitions(cls, task_id: int, transitions, **kw) -> "ExperienceSet":
        rows = list(transitions)
        cols = list(zip(*rows)) if rows else [[]] * 5
        return cls(task_id, *cols, **kw)

    def __len__(self) -> int:
        return len(self.states)

    @property
    def budget(self) -> int:
        return len(self)

    @property
    def transitions(self) -> list[Transition]:
        return list(self)

    def __iter__(self) -> Iterator[Transition]:
        for row in zip(self.states, self.actions, self.rewards, self.next_states, self.terminals):
            s, a, r, s2, d = row
            yield Transition(int(s), int(a), float(r), int(s2), bool(d))

    def coverage(self, num_states: int, num_actions: int) -> float:
        """Fraction of state-action pairs that appear at least once."""
        seen = np.unique(self.states * num_actions + self.actions)
        return len(seen) / (num_states * num_actions)

    def __eq__(self, other):
        if not isinstance(other, ExperienceSet):
            return NotImplemented
        return (
            self.task_id == other.task_id
            and self.behavior == other.behavior
            and self.rng_seed == other.rng_seed
            and np.array_equal(self.states, other.states)
            and np.array_equal(self.actions, other.actions)
            and np.array_equal(self.rewards, other.rewards)
            and np.array_equal(self.next_states, other.next_states)
            and np.array_equal(self.terminals, other.terminals)
        )

    __hash__ = None


def collect(
    mdp: TabularMDP,
    task,
    budget: int,
    episode_cap: int = 100,
    rng_seed: int = 0,
    start_states=None,
) -> ExperienceSet:
    """Uniform-random episodes until exactly ``budget`` transitions are gathered.

    Episodes start uniformly in ``start_states`` (default: every non-target
    state) and end on entering a target or after ``episode_cap`` steps.
    """
    if budget < 1 or episode_cap < 1:
        raise ValueError("budget and episode_cap must be positive")
    targets = task.targets
    if start_states is None:
        start_states = [s for s in range(mdp.num_states) if s not in targets]
    starts = np.asarray(sorted(start_states), dtype=np.int64)
    if len(starts) == 0:
        raise ValueError("no valid start states")
    rng = np.random.default_rng(rng_seed)
    s_col, a_col, r_col, n_col, d_col = [], [], [], [], []
    while len(s_col) < budget:
        s = int(starts[rng.integers(len(starts))])
        for _ in range(episode_cap):
            a = int(rng.integers(mdp.num_actions))
            s2 = int(mdp.transition[s, a])
            done = s2 in targets
            s_col.append(s)
            a_col.append(a)
            r_col.append(reward(task, s, s2))
            n_col.append(s2)
            d_col.append(done)
            if done or len(s_col) == budget:
                break
            s = s2
    return ExperienceSet(task.task_id, s_col, a_col, r_col, n_col, d_col, UNIFORM, rng_seed)


def save(data: ExperienceSet, path: str | Path) -> None:
    if len(data) == 0:
        raise ValueError("refusing to save an empty experience set")
    lines = [f"{FORMAT_TAG},{data.task_id},{len(data)},{data.rng_seed},{data.behavior}", COLUMNS]
    for t in data:
        lines.append(f"{t.state},{t.action},{t.reward:.17g},{t.next_state},{int(t.terminal)}")
    Path(path).write_text("\n".join(lines) + "\n")


def load(path: str | Path) -> ExperienceSet:
    path = Path(path)
    lines = path.read_text().splitlines()
    if not lines:
        raise ExperienceFormatError(f"{path}: empty file")
    head = lines[0].split(",")
    if head[0] != FORMAT_TAG:
        raise ExperienceFormatError(f"{path}: expected header '{FORMAT_TAG}', found {head[0]!r}")
    if len(head) != 5:
        raise ExperienceFormatError(f"{path}: header must have 5 fields, found {len(head)}")
    try:
        task_id, budget, seed = int(head[1]), int(head[2]), int(head[3])
    except ValueError as exc:
        raise ExperienceFormatError(f"{path}: bad header: {exc}") from None
    if len(lines) < 2 or lines[1] != COLUMNS:
        raise ExperienceFormatError(f"{path}: missing column line '{COLUMNS}'")
    body = lines[2:]
    if len(body) != budget:
        raise ExperienceFormatError(f"{path}: header declares {budget} rows, found {len(body)}")
    rows = []
    for lineno, line in enumerate(body, start=3):
        parts = line.split(",")
        try:
            if len(parts) != 5 or parts[4] not in ("0", "1"):
                raise ValueError("expected 5 fields with terminal 0/1")
            rows.append((int(parts[0]), int(parts[1]), float(parts[2]), int(parts[3]), parts[4] == "1"))
        except ValueError as exc:
            raise ExperienceFormatError(f"{path}:{lineno}: {exc}") from None
    return ExperienceSet.from_transitions(task_id, rows, behavior=head[4], rng_seed=seed)


def audit(data: ExperienceSet, mdp: TabularMDP, task) -> list[str]:
    """Kernel and reward consistency problems, one message per bad row."""
    problems = []
    for i, t in enumerate(data):
        if mdp.transition[t.state, t.action] != t.next_state:
            problems.append(f"row {i}: next_state {t.next_state} disagrees with the kernel")
        if reward(task, t.state, t.next_state) != t.reward:
            problems.append(f"row {i}: reward {t.reward} disagrees with the task")
    return problems
