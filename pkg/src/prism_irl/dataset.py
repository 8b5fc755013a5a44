"""Trajectory datasets and their line-delimited JSON file format.

File layout: the first line is a header record
``{"num_states": S, "num_actions": A, "generator": ..., "seed": ...}``; every
following line is one trajectory
``{"states": [...], "actions": [...], "labels": [...], "counters": [...]}``
where ``labels`` and ``counters`` are optional.
"""

import json
from dataclasses import dataclass, field

import numpy as np

from .errors import BoundsError, ParseError, ValidationError


@dataclass(eq=False)
class Trajectory:
    states: np.ndarray
    actions: np.ndarray
    labels: np.ndarray = None
    counters: np.ndarray = None

    def __post_init__(self):
        self.states = np.asarray(self.states, dtype=np.int64)
        self.actions = np.asarray(self.actions, dtype=np.int64)
        if self.states.ndim != 1 or self.states.shape != self.actions.shape:
            raise ValidationError("states and actions must be 1-D sequences of equal length")
        if len(self.states) < 1:
            raise ValidationError("empty trajectory")
        for name in ("labels", "counters"):
            value = getattr(self, name)
            if value is not None:
                value = np.asarray(value, dtype=np.int64)
                if value.shape != self.states.shape:
                    raise ValidationError(f"{name} length does not match trajectory")
                setattr(self, name, value)

    def __len__(self):
        return len(self.states)

    def __eq__(self, other):
        if not isinstance(other, Trajectory):
            return NotImplemented
        return all(
            _arrays_equal(getattr(self, f), getattr(other, f))
            for f in ("states", "actions", "labels", "counters")
        )


def _arrays_equal(a, b):
    if a is None or b is None:
        return a is None and b is None
    return np.array_equal(a, b)


@dataclass(eq=False)
class TrajectoryDataset:
    """Demonstrations over a tabular MDP with ``num_states`` and ``num_actions``.

    Iterating yields ``(states, actions)`` pairs; ground-truth ``labels`` and
    ``counters`` ride along for diagnostics and are never used for training.
    """

    num_states: int
    num_actions: int
    trajectories: list
    metadata: dict = field(default_factory=dict)

    def __post_init__(self):
        self.trajectories = [
            t if isinstance(t, Trajectory) else Trajectory(*t) for t in self.trajectories
        ]
        for i, t in enumerate(self.trajectories):
            _check_bounds(t, self.num_states, self.num_actions, where=f"trajectory {i}")

    def __len__(self):
        return len(self.trajectories)

    def __iter__(self):
        for t in self.trajectories:
            yield t.states, t.actions

    def __getitem__(self, idx):
        return self.trajectories[idx]

    def __eq__(self, other):
        if not isinstance(other, TrajectoryDataset):
            return NotImplemented
        return (
            self.num_states == other.num_states
            and self.num_actions == other.num_actions
            and self.metadata == other.metadata
            and self.trajectories == other.trajectories
        )

    @property
    def total_steps(self):
        return sum(len(t) for t in self.trajectories)

    @property
    def has_labels(self):
        return all(t.labels is not None for t in self.trajectories)

    def subset(self, indices):
        return TrajectoryDataset(
            self.num_states,
            self.num_actions,
            [self.trajectories[i] for i in indices],
            dict(self.metadata),
        )


def _check_bounds(traj, num_states, num_actions, where):
    if traj.states.min() < 0 or traj.states.max() >= num_states:
        raise BoundsError(f"{where}: state index outside [0, {num_states})")
    if traj.actions.min() < 0 or traj.actions.max() >= num_actions:
        raise BoundsError(f"{where}: action index outside [0, {num_actions})")


def save_dataset(dataset, path):
    header = {"num_states": dataset.num_states, "num_actions": dataset.num_actions}
    header.update(dataset.metadata)
    with open(path, "w") as fh:
        fh.write(json.dumps(header) + "\n")
        for t in dataset.trajectories:
            rec = {"states": t.states.tolist(), "actions": t.actions.tolist()}
            if t.labels is not None:
                rec["labels"] = t.labels.tolist()
            if t.counters is not None:
                rec["counters"] = t.counters.tolist()
            fh.write(json.dumps(rec, separators=(",", ":")) + "\n")


def load_dataset(path):
    with open(path) as fh:
        lines = fh.read().splitlines()
    if not lines:
        raise ParseError("empty dataset file", 1)
    header = _parse_line(lines[0], 1)
    try:
        S, A = int(header.pop("num_states")), int(header.pop("num_actions"))
    except (KeyError, TypeError, ValueError) as exc:
        raise ParseError(f"header needs num_states and num_actions ({exc})", 1) from exc
    trajectories = []
    for lineno, line in enumerate(lines[1:], start=2):
        if not line.strip():
            continue
        rec = _parse_line(line, lineno)
        try:
            traj = Trajectory(
                rec["states"], rec["actions"], rec.get("labels"), rec.get("counters")
            )
        except (KeyError, TypeError, ValueError) as exc:
            raise ParseError(f"bad trajectory record ({exc})", lineno) from exc
        _check_bounds(traj, S, A, where=f"line {lineno}")
        trajectories.append(traj)
    return TrajectoryDataset(S, A, trajectories, header)


def _parse_line(line, lineno):
    try:
        rec = json.loads(line)
    except json.JSONDecodeError as exc:
        raise ParseError(exc.msg, lineno) from exc
    if not isinstance(rec, dict):
        raise ParseError("expected a JSON object", lineno)
    return rec
