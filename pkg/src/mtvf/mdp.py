"""Finite deterministic MDPs, the four-rooms grid and goal-conditioned tasks."""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Protocol, Sequence

import numpy as np

# Action order is part of the feature indexing contract: right, left, up, down.
ACTIONS = ("right", "left", "up", "down")
MOVES = ((0, 1), (0, -1), (-1, 0), (1, 0))

FOUR_ROOMS = """\
#############
#.....#.....#
#.....#.....#
#...........#
#.....#.....#
#.....#.....#
##.####.....#
#.....###.###
#.....#.....#
#.....#.....#
#...........#
#.....#.....#
#############
"""

ROOM_NAMES = {1: "NW", 2: "NE", 3: "SW", 4: "SE"}


class LayoutError(ValueError):
    """Raised for grid layouts that cannot be turned into an MDP."""


def _frozen(a: np.ndarray) -> np.ndarray:
    a = np.array(a)
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class TabularMDP:
    """Deterministic finite MDP stored as a next-state table.

    ``transition[s, a]`` is the successor of ``s`` under ``a``. Terminal states
    self-transition under every action.
    """

    num_states: int
    num_actions: int
    transition: np.ndarray
    terminal_mask: np.ndarray
    discount: float

    def __post_init__(self):
        transition = np.asarray(self.transition, dtype=np.int64)
        terminal = np.asarray(self.terminal_mask, dtype=bool)
        if self.num_states < 1 or self.num_actions < 1:
            raise ValueError("num_states and num_actions must be positive")
        if transition.shape != (self.num_states, self.num_actions):
            raise ValueError(
                f"transition table has shape {transition.shape}, "
                f"expected {(self.num_states, self.num_actions)}"
            )
        if transition.min() < 0 or transition.max() >= self.num_states:
            raise ValueError("transition targets must be valid state indices")
        if terminal.shape != (self.num_states,):
            raise ValueError("terminal_mask must have one entry per state")
        idx = np.flatnonzero(terminal)
        if np.any(transition[idx] != idx[:, None]):
            raise ValueError("terminal states must self-transition under all actions")
        if not 0.0 <= self.discount < 1.0:
            raise ValueError(f"discount must lie in [0, 1), got {self.discount}")
        object.__setattr__(self, "transition", _frozen(transition))
        object.__setattr__(self, "terminal_mask", _frozen(terminal))

    @classmethod
    def from_dense(cls, kernel: np.ndarray, discount: float, terminal_mask=None) -> "TabularMDP":
        """Build from a dense ``[s, a, s']`` probability kernel.

        Only deterministic kernels (one unit entry per ``(s, a)``) are accepted.
        """
        kernel = np.asarray(kernel, dtype=float)
        if kernel.ndim != 3 or kernel.shape[0] != kernel.shape[2]:
            raise ValueError("kernel must have shape (S, A, S)")
        if not np.allclose(kernel.sum(axis=2), 1.0):
            raise ValueError("kernel rows must sum to one")
        if not np.all(np.isclose(kernel.max(axis=2), 1.0)):
            raise ValueError("only deterministic kernels are supported")
        n_s, n_a, _ = kernel.shape
        if terminal_mask is None:
            terminal_mask = np.zeros(n_s, dtype=bool)
        return cls(n_s, n_a, kernel.argmax(axis=2), terminal_mask, discount)

    def dense_kernel(self) -> np.ndarray:
        kernel = np.zeros((self.num_states, self.num_actions, self.num_states))
        s, a = np.indices(self.transition.shape)
        kernel[s, a, self.transition] = 1.0
        return kernel

    def with_terminals(self, states: Iterable[int]) -> "TabularMDP":
        """Copy of this MDP in which ``states`` are absorbing."""
        terminal = self.terminal_mask.copy()
        transition = self.transition.copy()
        for s in states:
            terminal[s] = True
            transition[s, :] = s
        return TabularMDP(self.num_states, self.num_actions, transition, terminal, self.discount)

    def with_discount(self, discount: float) -> "TabularMDP":
        return TabularMDP(
            self.num_states, self.num_actions, self.transition, self.terminal_mask, discount
        )

    def distances_to(self, targets: Iterable[int]) -> np.ndarray:
        """Fewest steps from every state into ``targets`` (``-1`` if unreachable)."""
        targets = list(targets)
        preds: list[list[int]] = [[] for _ in range(self.num_states)]
        for s in range(self.num_states):
            for s2 in set(self.transition[s].tolist()):
                if s2 != s:
                    preds[s2].append(s)
        dist = np.full(self.num_states, -1, dtype=np.int64)
        queue = deque(targets)
        dist[targets] = 0
        while queue:
            s2 = queue.popleft()
            for s in preds[s2]:
                if dist[s] < 0:
                    dist[s] = dist[s2] + 1
                    queue.append(s)
        return dist

    def __eq__(self, other):
        if not isinstance(other, TabularMDP):
            return NotImplemented
        return (
            self.num_states == other.num_states
            and self.num_actions == other.num_actions
            and self.discount == other.discount
            and np.array_equal(self.transition, other.transition)
            and np.array_equal(self.terminal_mask, other.terminal_mask)
        )

    __hash__ = None


@dataclass(frozen=True, eq=False)
class GridLayout:
    """Rectangular grid with walls; free cells are numbered row-major."""

    width: int
    height: int
    wall_mask: np.ndarray
    cells: np.ndarray = field(repr=False)

    def __post_init__(self):
        object.__setattr__(self, "wall_mask", _frozen(np.asarray(self.wall_mask, dtype=bool)))
        object.__setattr__(self, "cells", _frozen(np.asarray(self.cells, dtype=np.int64)))

    @property
    def num_states(self) -> int:
        return len(self.cells)

    @property
    def cell_to_state(self) -> dict[tuple[int, int], int]:
        return {(int(r), int(c)): i for i, (r, c) in enumerate(self.cells)}

    def state_of(self, row: int, col: int) -> int:
        try:
            return self.cell_to_state[(row, col)]
        except KeyError:
            raise ValueError(f"cell ({row}, {col}) is a wall or off-grid") from None

    def is_free(self, row: int, col: int) -> bool:
        return 0 <= row < self.height and 0 <= col < self.width and not self.wall_mask[row, col]

    def hallways(self) -> list[int]:
        """Doorway cells: free cells walled on both sides along one axis and open along the other."""
        found = []
        for i, (r, c) in enumerate(self.cells):
            blocked_lr = not self.is_free(r, c - 1) and not self.is_free(r, c + 1)
            blocked_ud = not self.is_free(r - 1, c) and not self.is_free(r + 1, c)
            open_lr = self.is_free(r, c - 1) and self.is_free(r, c + 1)
            open_ud = self.is_free(r - 1, c) and self.is_free(r + 1, c)
            if (blocked_lr and open_ud) or (blocked_ud and open_lr):
                found.append(i)
        return found

    def rooms(self) -> dict[int, frozenset[int]]:
        """Partition free cells minus hallways into rooms.

        Rooms are numbered from 1 by (upper/lower half, mean column), so the
        four-rooms grid yields 1=NW, 2=NE, 3=SW, 4=SE. Hallways belong to no room.
        """
        hall = set(self.hallways())
        lookup = self.cell_to_state
        seen: set[int] = set()
        comps = []
        for start in range(self.num_states):
            if start in hall or start in seen:
                continue
            comp = {start}
            queue = deque([start])
            seen.add(start)
            while queue:
                r, c = self.cells[queue.popleft()]
                for dr, dc in MOVES:
                    nxt = lookup.get((int(r + dr), int(c + dc)))
                    if nxt is not None and nxt not in hall and nxt not in seen:
                        seen.add(nxt)
                        comp.add(nxt)
                        queue.append(nxt)
            comps.append(frozenset(comp))
        # top half before bottom half, then left to right
        def key(comp):
            rows, cols = self.cells[sorted(comp)].T
            return (rows.mean() > self.height / 2, cols.mean())

        return {i + 1: cs for i, cs in enumerate(sorted(comps, key=key))}

    def render(self, values: Sequence[str] | None = None) -> str:
        """ASCII picture; ``values`` gives one character per state."""
        rows = []
        for r in range(self.height):
            line = []
            for c in range(self.width):
                if self.wall_mask[r, c]:
                    line.append("#")
                else:
                    s = self.cell_to_state[(r, c)]
                    line.append(values[s] if values is not None else ".")
            rows.append("".join(line))
        return "\n".join(rows)


def parse_layout(text: str) -> GridLayout:
    """Parse a ``#``/``.`` grid. States are assigned row-major over free cells."""
    lines = [ln.rstrip("\r") for ln in text.splitlines() if ln.strip()]
    if not lines:
        raise LayoutError("layout is empty")
    width = len(lines[0])
    if any(len(ln) != width for ln in lines):
        raise LayoutError("layout rows must all have the same length")
    bad = set("".join(lines)) - {"#", "."}
    if bad:
        raise LayoutError(f"layout contains unknown characters: {''.join(sorted(bad))!r}")
    walls = np.array([[ch == "#" for ch in ln] for ln in lines])
    cells = np.argwhere(~walls)
    if len(cells) == 0:
        raise LayoutError("layout has no free cells")
    return GridLayout(width=width, height=len(lines), wall_mask=walls, cells=cells)


def load_layout(path: str | Path) -> GridLayout:
    return parse_layout(Path(path).read_text())


def grid_mdp(layout: GridLayout, discount: float = 0.95) -> TabularMDP:
    """Four-action deterministic grid dynamics; walls and edges are elastic."""
    lookup = layout.cell_to_state
    transition = np.empty((layout.num_states, len(MOVES)), dtype=np.int64)
    for s, (r, c) in enumerate(layout.cells):
        for a, (dr, dc) in enumerate(MOVES):
            transition[s, a] = lookup.get((int(r + dr), int(c + dc)), s)
    mdp = TabularMDP(
        layout.num_states, len(MOVES), transition, np.zeros(layout.num_states, bool), discount
    )
    if np.any(mdp.distances_to([0]) < 0):
        raise LayoutError("free space of the layout is not connected")
    return mdp


def build_four_rooms(layout: str | GridLayout | None = None, discount: float = 0.95):
    """Return ``(mdp, layout)`` for a layout text, parsed layout, or the canonical grid."""
    if layout is None:
        layout = FOUR_ROOMS
    if isinstance(layout, str):
        layout = parse_layout(layout)
    return grid_mdp(layout, discount), layout


class Task(Protocol):
    """Anything with a target set and an entry reward (goal tasks, option MDPs)."""

    task_id: int
    reward_value: float

    @property
    def targets(self) -> frozenset[int]: ...


@dataclass(frozen=True)
class TaskReward:
    """Reach ``goal_state``: ``reward_value`` on entering it, absorbing afterwards."""

    task_id: int
    goal_state: int
    reward_value: float = 1.0

    def __post_init__(self):
        if not self.reward_value > 0:
            raise ValueError("reward_value must be positive")

    @property
    def targets(self) -> frozenset[int]:
        return frozenset({self.goal_state})


def reward(task, state: int, next_state: int) -> float:
    targets = task.targets
    if state not in targets and next_state in targets:
        return float(task.reward_value)
    return 0.0


def task_view(mdp: TabularMDP, task) -> TabularMDP:
    """The MDP as seen by ``task``: its targets become absorbing."""
    return mdp.with_terminals(sorted(task.targets))


def reward_table(mdp: TabularMDP, task) -> np.ndarray:
    """``R[s, a]`` for the task on the base dynamics."""
    targets = np.zeros(mdp.num_states, dtype=bool)
    targets[list(task.targets)] = True
    r = np.where(targets[mdp.transition] & ~targets[:, None], float(task.reward_value), 0.0)
    return r


def make_task(mdp: TabularMDP, goal: int, reward_value: float = 1.0, task_id: int = 0) -> TaskReward:
    if not 0 <= goal < mdp.num_states:
        raise ValueError(f"goal {goal} is not a valid state index (0..{mdp.num_states - 1})")
    return TaskReward(task_id=task_id, goal_state=int(goal), reward_value=reward_value)


def sample_tasks(
    mdp: TabularMDP,
    count: int,
    rng_seed: int,
    reward_value: float = 1.0,
    exclude: Iterable[int] = (),
    first_id: int = 0,
) -> list[TaskReward]:
    """Distinct goals drawn uniformly without replacement, skipping ``exclude``."""
    pool = np.setdiff1d(np.arange(mdp.num_states), np.fromiter(exclude, dtype=np.int64))
    if count < 1 or count > len(pool):
        raise ValueError(f"cannot sample {count} distinct goals from {len(pool)} valid states")
    rng = np.random.default_rng(rng_seed)
    goals = rng.choice(pool, size=count, replace=False)
    return [make_task(mdp, int(g), reward_value, first_id + i) for i, g in enumerate(goals)]


@dataclass(frozen=True, eq=False)
class OracleSolution:
    """Exact optimal values for one task."""

    task_id: int
    q_star: np.ndarray
    v_star: np.ndarray
    residual: float

    def __post_init__(self):
        object.__setattr__(self, "q_star", _frozen(self.q_star))
        object.__setattr__(self, "v_star", _frozen(self.v_star))

    @property
    def policy(self) -> np.ndarray:
        return np.argmax(self.q_star, axis=1)


def bellman_backup(mdp: TabularMDP, task, v: np.ndarray) -> np.ndarray:
    """One optimality backup ``r + gamma * v(s')`` with absorbing targets."""
    view = task_view(mdp, task)
    r = reward_table(mdp, task)
    cont = np.where(view.terminal_mask[mdp.transition], 0.0, v[mdp.transition])
    q = r + mdp.discount * cont
    q[view.terminal_mask] = 0.0
    return q


def solve_exact(mdp: TabularMDP, task, tolerance: float = 1e-10, max_iters: int = 100_000) -> OracleSolution:
    """Value iteration on the known model until the sup-norm residual is below ``tolerance``."""
    if not tolerance > 0:
        raise ValueError("tolerance must be positive")
    v = np.zeros(mdp.num_states)
    for _ in range(max_iters):
        q = bellman_backup(mdp, task, v)
        v_new = q.max(axis=1)
        if np.max(np.abs(v_new - v)) <= tolerance * (1 - mdp.discount):
            v = v_new
            break
        v = v_new
    q = bellman_backup(mdp, task, v)
    v = q.max(axis=1)
    residual = float(np.max(np.abs(bellman_backup(mdp, task, v) - q)))
    return OracleSolution(task_id=getattr(task, "task_id", 0), q_star=q, v_star=v, residual=residual)
