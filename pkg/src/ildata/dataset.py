"""Trajectory datasets: data model, validation, newline-delimited JSON I/O."""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterator

import numpy as np

FORMAT_VERSION = 1


class ValidationError(ValueError):
    """A dataset, trajectory or transition violates an invariant."""


class DatasetParseError(ValueError):
    def __init__(self, path, lineno: int, msg: str):
        super().__init__(f"{path}:{lineno}: {msg}")
        self.path = path
        self.lineno = lineno


@dataclass(frozen=True)
class Transition:
    state: np.ndarray
    action: np.ndarray
    next_state: np.ndarray


@dataclass
class Trajectory:
    """One demonstration.

    ``states`` has shape (T + 1, d_s) and ``actions`` shape (T, d_a); transition
    t is (states[t], actions[t], states[t + 1]), so the chaining invariant holds
    by construction for trajectories built this way.
    """

    states: np.ndarray
    actions: np.ndarray
    success: bool = False
    seed: int = 0
    metadata: dict = field(default_factory=dict)

    def __post_init__(self):
        self.states = np.asarray(self.states, dtype=np.float64)
        self.actions = np.asarray(self.actions, dtype=np.float64)
        self.success = bool(self.success)
        self.seed = int(self.seed)

    @classmethod
    def from_transitions(cls, transitions, **kwargs) -> Trajectory:
        """Build from explicit transitions, enforcing exact state chaining."""
        transitions = list(transitions)
        if not transitions:
            raise ValidationError("trajectory must contain at least one transition")
        for i in range(1, len(transitions)):
            prev, cur = transitions[i - 1], transitions[i]
            if not np.array_equal(np.asarray(prev.next_state), np.asarray(cur.state)):
                raise ValidationError(
                    f"chaining violation at step {i}: next_state of step {i - 1} != state of step {i}"
                )
        states = [t.state for t in transitions] + [transitions[-1].next_state]
        actions = [t.action for t in transitions]
        return cls(np.array(states, dtype=np.float64), np.array(actions, dtype=np.float64), **kwargs)

    def __len__(self) -> int:
        return len(self.actions)

    @property
    def transitions(self) -> list[Transition]:
        return [
            Transition(self.states[t], self.actions[t], self.states[t + 1])
            for t in range(len(self))
        ]

    def validate(self, state_dim: int | None = None, action_dim: int | None = None) -> None:
        s, a = self.states, self.actions
        if s.ndim != 2 or a.ndim != 2:
            raise ValidationError("states and actions must be 2-D arrays")
        if len(a) == 0:
            raise ValidationError("trajectory must contain at least one transition")
        if len(s) != len(a) + 1:
            raise ValidationError(f"expected {len(a) + 1} states for {len(a)} actions, got {len(s)}")
        if state_dim is not None and s.shape[1] != state_dim:
            raise ValidationError(f"state dimension {s.shape[1]} != dataset state_dim {state_dim}")
        if action_dim is not None and a.shape[1] != action_dim:
            raise ValidationError(f"action dimension {a.shape[1]} != dataset action_dim {action_dim}")
        if not (np.all(np.isfinite(s)) and np.all(np.isfinite(a))):
            raise ValidationError("non-finite value in states or actions")
        for key in ("sigma_s", "sigma_p"):
            if key in self.metadata and not float(self.metadata[key]) >= 0:
                raise ValidationError(f"metadata {key} must be nonnegative")

    def __eq__(self, other):
        if not isinstance(other, Trajectory):
            return NotImplemented
        return (
            np.array_equal(self.states, other.states)
            and np.array_equal(self.actions, other.actions)
            and self.success == other.success
            and self.seed == other.seed
            and self.metadata == other.metadata
        )


@dataclass
class Dataset:
    trajectories: list[Trajectory]
    env_id: str
    state_dim: int
    action_dim: int

    def validate(self) -> None:
        if not self.trajectories:
            raise ValidationError("dataset must contain at least one trajectory")
        if self.state_dim < 1 or self.action_dim < 1:
            raise ValidationError("state_dim and action_dim must be positive")
        for i, traj in enumerate(self.trajectories):
            try:
                traj.validate(self.state_dim, self.action_dim)
            except ValidationError as exc:
                raise ValidationError(f"trajectory {i}: {exc}") from None

    def __len__(self) -> int:
        return len(self.trajectories)

    def __iter__(self) -> Iterator[Trajectory]:
        return iter(self.trajectories)

    @property
    def n_transitions(self) -> int:
        return sum(len(t) for t in self.trajectories)

    def flat(self) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """All transitions stacked as (states, actions, next_states)."""
        states = np.concatenate([t.states[:-1] for t in self.trajectories])
        actions = np.concatenate([t.actions for t in self.trajectories])
        next_states = np.concatenate([t.states[1:] for t in self.trajectories])
        return states, actions, next_states

    def with_trajectories(self, trajectories: list[Trajectory]) -> Dataset:
        return Dataset(list(trajectories), self.env_id, self.state_dim, self.action_dim)


def _json_default(obj):
    if isinstance(obj, np.generic):
        return obj.item()
    raise TypeError(f"not JSON serializable: {type(obj).__name__}")


def save_dataset(dataset: Dataset, path) -> None:
    """Write ``dataset`` as newline-delimited JSON (header line + one line per trajectory).

    Python's float repr is the shortest string that parses back to the same
    double, so the round trip is bit-exact.
    """
    dataset.validate()
    path = Path(path)
    header = {
        "format_version": FORMAT_VERSION,
        "env_id": dataset.env_id,
        "state_dim": dataset.state_dim,
        "action_dim": dataset.action_dim,
        "n_trajectories": len(dataset),
    }
    lines = [json.dumps(header, allow_nan=False)]
    for traj in dataset.trajectories:
        record = {
            "seed": traj.seed,
            "success": traj.success,
            "metadata": traj.metadata,
            "states": traj.states.tolist(),
            "actions": traj.actions.tolist(),
        }
        lines.append(json.dumps(record, allow_nan=False, default=_json_default))
    try:
        with open(path, "w", encoding="utf-8", newline="\n") as fh:
            fh.write("\n".join(lines) + "\n")
    except OSError as exc:
        raise OSError(f"failed to write dataset to {path}: {exc}") from exc


def _require(cond: bool, path, lineno: int, msg: str) -> None:
    if not cond:
        raise DatasetParseError(path, lineno, msg)


def load_dataset(path) -> Dataset:
    path = Path(path)
    with open(path, encoding="utf-8") as fh:
        text = fh.read()
    lines = text.split("\n")
    if lines and lines[-1] == "":
        lines.pop()
    else:
        # last line not newline-terminated: the writer always terminates, so it is truncated
        _require(False, path, len(lines), "truncated record (missing line terminator)")

    records = []
    for lineno, line in enumerate(lines, start=1):
        try:
            records.append(json.loads(line))
        except json.JSONDecodeError as exc:
            raise DatasetParseError(path, lineno, f"malformed record: {exc.msg}") from None
        _require(isinstance(records[-1], dict), path, lineno, "record is not an object")

    _require(bool(records), path, 1, "missing header")
    header = records[0]
    for key in ("format_version", "env_id", "state_dim", "action_dim", "n_trajectories"):
        _require(key in header, path, 1, f"header missing {key!r}")
    _require(header["format_version"] == FORMAT_VERSION, path, 1,
             f"unsupported format_version {header['format_version']!r}")
    _require(len(records) - 1 == header["n_trajectories"], path, len(records),
             f"header declares {header['n_trajectories']} trajectories, found {len(records) - 1}")

    trajectories = []
    for i, rec in enumerate(records[1:]):
        lineno = i + 2
        for key in ("seed", "success", "metadata", "states", "actions"):
            _require(key in rec, path, lineno, f"trajectory record missing {key!r}")
        try:
            states = np.array(rec["states"], dtype=np.float64)
            actions = np.array(rec["actions"], dtype=np.float64)
        except (TypeError, ValueError) as exc:
            raise DatasetParseError(path, lineno, f"ragged or non-numeric array: {exc}") from None
        if "next_states" in rec:
            # optional explicit successor list from external writers; must chain exactly
            nxt = np.array(rec["next_states"], dtype=np.float64)
            _require(nxt.shape == (len(states) - 1,) + states.shape[1:], path, lineno,
                     "next_states shape does not match states")
            for t in range(len(nxt) - 1):
                if not np.array_equal(nxt[t], states[t + 1]):
                    raise ValidationError(
                        f"trajectory {i}: chaining violation at step {t + 1}: "
                        f"next_state of step {t} != state of step {t + 1}"
                    )
            _require(np.array_equal(nxt[-1], states[-1]), path, lineno,
                     "final next_state does not match final state")
        trajectories.append(Trajectory(states, actions, rec["success"], rec["seed"], dict(rec["metadata"])))

    dataset = Dataset(trajectories, header["env_id"], int(header["state_dim"]), int(header["action_dim"]))
    dataset.validate()
    return dataset


def subsample(dataset: Dataset, n: int, seed: int) -> Dataset:
    """Draw ``n`` trajectories without replacement, deterministically in ``seed``."""
    if n < 1 or n > len(dataset):
        raise ValueError(f"cannot draw {n} trajectories from a dataset of {len(dataset)}")
    idx = np.random.default_rng(seed).choice(len(dataset), size=n, replace=False)
    return dataset.with_trajectories([dataset.trajectories[i] for i in idx])


@dataclass(frozen=True)
class DatasetStats:
    n_trajectories: int
    n_transitions: int
    mean_horizon: float
    min_horizon: int
    max_horizon: int
    success_fraction: float


def dataset_stats(dataset: Dataset) -> DatasetStats:
    dataset.validate()
    lengths = [len(t) for t in dataset.trajectories]
    return DatasetStats(
        n_trajectories=len(lengths),
        n_transitions=sum(lengths),
        mean_horizon=sum(lengths) / len(lengths),
        min_horizon=min(lengths),
        max_horizon=max(lengths),
        success_fraction=sum(t.success for t in dataset.trajectories) / len(lengths),
    )
