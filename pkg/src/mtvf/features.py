"""State-action feature maps over a finite domain."""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

SUBSPACE_TAG = "mtvf-subspace v1"


@dataclass(frozen=True, eq=False)
class FeatureMap:
    """Feature map stored as its full ``(S*A, dimension)`` table.

    Row ``s * num_actions + a`` holds ``phi(s, a)``.
    """

    table: np.ndarray
    num_actions: int
    kind: str = "one-hot"

    def __post_init__(self):
        table = np.array(self.table, dtype=float)
        if table.ndim != 2 or table.shape[0] % self.num_actions:
            raise ValueError("table must be 2-d with S*A rows")
        table.setflags(write=False)
        object.__setattr__(self, "table", table)

    @property
    def dimension(self) -> int:
        return self.table.shape[1]

    @property
    def num_states(self) -> int:
        return self.table.shape[0] // self.num_actions

    def __call__(self, state: int, action: int) -> np.ndarray:
        return self.table[state * self.num_actions + action]

    def rows(self, states, actions) -> np.ndarray:
        """Feature matrix for paired arrays of states and actions."""
        return self.table[np.asarray(states) * self.num_actions + np.asarray(actions)]


@dataclass(frozen=True, eq=False)
class SharedSubspace:
    """Shared projection ``U`` of shape ``(d_shared, dimension)``."""

    u_matrix: np.ndarray

    def __post_init__(self):
        u = np.array(self.u_matrix, dtype=float)
        if u.ndim != 2:
            raise ValueError("u_matrix must be 2-d")
        u.setflags(write=False)
        object.__setattr__(self, "u_matrix", u)

    @property
    def d_shared(self) -> int:
        return self.u_matrix.shape[0]

    @property
    def dimension(self) -> int:
        return self.u_matrix.shape[1]

    def orthonormality_error(self) -> float:
        u = self.u_matrix
        return float(np.max(np.abs(u @ u.T - np.eye(len(u))), initial=0.0))


def one_hot_map(num_states: int, num_actions: int) -> FeatureMap:
    if num_states < 1 or num_actions < 1:
        raise ValueError("num_states and num_actions must be positive")
    return FeatureMap(np.eye(num_states * num_actions), num_actions, "one-hot")


def project(fmap: FeatureMap, subspace: SharedSubspace) -> FeatureMap:
    """``psi(s, a) = U phi(s, a)``."""
    if subspace.dimension != fmap.dimension:
        raise ValueError(
            f"subspace has {subspace.dimension} columns but the map has dimension {fmap.dimension}"
        )
    return FeatureMap(fmap.table @ subspace.u_matrix.T, fmap.num_actions, "projected")


def augment(base: FeatureMap, learned: FeatureMap) -> FeatureMap:
    """Concatenate ``[learned, base]``; the learned block comes first."""
    if base.table.shape[0] != learned.table.shape[0] or base.num_actions != learned.num_actions:
        raise ValueError("maps must share the same state-action domain")
    if learned.dimension == 0:
        return base
    return FeatureMap(np.hstack([learned.table, base.table]), base.num_actions, "augmented")


def save_subspace(subspace: SharedSubspace, path: str | Path) -> None:
    lines = [f"{SUBSPACE_TAG},{subspace.d_shared},{subspace.dimension}"]
    lines += [",".join(f"{x:.17g}" for x in row) for row in subspace.u_matrix]
    Path(path).write_text("\n".join(lines) + "\n")


def load_subspace(path: str | Path) -> SharedSubspace:
    lines = Path(path).read_text().splitlines()
    head = lines[0].split(",") if lines else [""]
    if head[0] != SUBSPACE_TAG or len(head) != 3:
        raise ValueError(f"{path}: not a {SUBSPACE_TAG} file")
    d_shared, dim = int(head[1]), int(head[2])
    rows = [[float(x) for x in ln.split(",")] for ln in lines[1:] if ln]
    u = np.array(rows, dtype=float).reshape(d_shared, dim)
    return SharedSubspace(u)
