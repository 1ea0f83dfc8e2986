"""Empirical data-quality metrics over epsilon-clusters of dataset states.

A cluster C(s, D) is every transition whose state lies within ``epsilon`` of
``s``. Action variance is the squared deviation of each action from the mean
action of its state's cluster, averaged over transitions and action dimensions.
State similarity is the mean cluster size as a fraction of the dataset,
sum_i |C(s_i)| / |D|^2.
"""
from __future__ import annotations

import itertools
from dataclasses import dataclass
from typing import Literal

import numpy as np

from .dataset import Dataset, Transition

Norm = Literal["l2", "linf", "l1"]

# element budget for one block of the pairwise difference tensor
_BLOCK_ELEMS = 4_000_000


@dataclass(frozen=True)
class ClusterParams:
    epsilon: float
    norm: Norm = "l2"

    def __post_init__(self):
        if not self.epsilon >= 0:
            raise ValueError(f"epsilon must be nonnegative, got {self.epsilon}")
        if self.norm not in ("l2", "linf", "l1"):
            raise ValueError(f"unknown norm {self.norm!r}")


@dataclass(frozen=True)
class MetricsReport:
    action_variance: float
    state_similarity: float
    mean_horizon: float
    n_states: int
    epsilon_used: float

    def as_dict(self) -> dict:
        return {
            "action_variance": self.action_variance,
            "state_similarity": self.state_similarity,
            "mean_horizon": self.mean_horizon,
            "n_states": self.n_states,
            "epsilon_used": self.epsilon_used,
        }


def default_epsilon(dataset: Dataset, scale: float = 0.05) -> float:
    """``scale`` times the mean per-dimension std of all dataset states."""
    states, _, _ = dataset.flat()
    return float(scale * np.mean(np.std(states, axis=0)))


def _norm(diff: np.ndarray, norm: Norm) -> np.ndarray:
    if norm == "l2":
        return np.sqrt(np.sum(diff * diff, axis=-1))
    if norm == "linf":
        return np.max(np.abs(diff), axis=-1)
    return np.sum(np.abs(diff), axis=-1)


def _neighbors_pairwise(states: np.ndarray, params: ClusterParams) -> list[np.ndarray]:
    out = []
    rows = max(1, _BLOCK_ELEMS // (len(states) * states.shape[1]))
    for lo in range(0, len(states), rows):
        block = states[lo:lo + rows]
        dist = _norm(block[:, None, :] - states[None, :, :], params.norm)
        within = dist <= params.epsilon
        out.extend(np.flatnonzero(row) for row in within)
    return out


def _neighbors_grid(states: np.ndarray, params: ClusterParams) -> list[np.ndarray]:
    # Every supported norm dominates the per-coordinate gap, so neighbors lie
    # in adjacent cells of a grid slightly coarser than epsilon (the margin
    # absorbs rounding in the division).
    eps = params.epsilon
    if eps == 0:
        return _neighbors_pairwise(states, params)
    keys = np.floor(states / (eps * (1 + 1e-9))).astype(np.int64)
    cells: dict[tuple, list[int]] = {}
    for i, k in enumerate(map(tuple, keys)):
        cells.setdefault(k, []).append(i)
    cells_arr = {k: np.array(v) for k, v in cells.items()}
    offsets = list(itertools.product((-1, 0, 1), repeat=states.shape[1]))
    out = []
    for i, k in enumerate(map(tuple, keys)):
        cand = [cells_arr[c] for off in offsets
                if (c := tuple(a + b for a, b in zip(k, off))) in cells_arr]
        cand = np.sort(np.concatenate(cand))
        dist = _norm(states[i][None, :] - states[cand], params.norm)
        out.append(cand[dist <= eps])
    return out


def neighbor_indices(states: np.ndarray, params: ClusterParams, accel: str = "none") -> list[np.ndarray]:
    """Sorted indices of the epsilon-cluster of every row of ``states``."""
    if accel == "grid":
        return _neighbors_grid(states, params)
    if accel != "none":
        raise ValueError(f"unknown accel {accel!r}")
    return _neighbors_pairwise(states, params)


def cluster(query_state, dataset: Dataset, params: ClusterParams) -> list[Transition]:
    states, actions, next_states = dataset.flat()
    query = np.asarray(query_state, dtype=np.float64)
    if query.shape != (dataset.state_dim,):
        raise ValueError(f"query dimension {query.shape} does not match state_dim {dataset.state_dim}")
    dist = _norm(states - query[None, :], params.norm)
    return [Transition(states[i], actions[i], next_states[i])
            for i in np.flatnonzero(dist <= params.epsilon)]


def _canonical_sum(values: np.ndarray) -> float:
    # sorting first makes the reduction independent of input order
    return float(np.sum(np.sort(values)))


def _action_variance(actions: np.ndarray, neighbors: list[np.ndarray]) -> float:
    sq = np.empty_like(actions)
    for i, idx in enumerate(neighbors):
        members = actions[idx]
        mean = np.array([_canonical_sum(members[:, j]) for j in range(actions.shape[1])]) / len(idx)
        sq[i] = (actions[i] - mean) ** 2
    return _canonical_sum(sq.ravel()) / sq.size


def _state_similarity(neighbors: list[np.ndarray]) -> float:
    n = len(neighbors)
    return sum(len(idx) for idx in neighbors) / (n * n)


def action_variance(dataset: Dataset, params: ClusterParams, accel: str = "none") -> float:
    dataset.validate()
    states, actions, _ = dataset.flat()
    return _action_variance(actions, neighbor_indices(states, params, accel))


def state_similarity(dataset: Dataset, params: ClusterParams, accel: str = "none") -> float:
    dataset.validate()
    states, _, _ = dataset.flat()
    return _state_similarity(neighbor_indices(states, params, accel))


def metrics_report(dataset: Dataset, params: ClusterParams | None = None, accel: str = "none") -> MetricsReport:
    """All metrics from one clustering pass. ``params=None`` uses :func:`default_epsilon`."""
    dataset.validate()
    if params is None:
        params = ClusterParams(default_epsilon(dataset))
    states, actions, _ = dataset.flat()
    neighbors = neighbor_indices(states, params, accel)
    return MetricsReport(
        action_variance=_action_variance(actions, neighbors),
        state_similarity=_state_similarity(neighbors),
        mean_horizon=len(states) / len(dataset),
        n_states=len(states),
        epsilon_used=params.epsilon,
    )


def format_report(report: MetricsReport) -> str:
    rows = [
        ("action_variance", f"{report.action_variance:.6g}"),
        ("state_similarity", f"{report.state_similarity:.6g}"),
        ("mean_horizon", f"{report.mean_horizon:.6g}"),
        ("n_states", str(report.n_states)),
        ("epsilon_used", f"{report.epsilon_used:.6g}"),
    ]
    width = max(len(k) for k, _ in rows)
    return "\n".join(f"{k:<{width}}  {v:>12}" for k, v in rows)
