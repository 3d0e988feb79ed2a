"""Shared value types, reference trajectories, error metrics and rollout logs.

Positions are millimetres relative to the unactuated rest pose, which sits at
the origin. Actuations are signed pair commands in [-1, 1]; the sign picks the
chamber of the pair and the magnitude scales the pressure cap.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import NamedTuple, Sequence

import numpy as np

WORKSPACE_LENGTH = 60.94  # mm, side of the measured square workspace
DEFAULT_CONTROL_PERIOD = 0.3  # s, ~3.3 Hz

LOG_COLUMNS = ("step", "target_x", "target_y", "achieved_x", "achieved_y", "u1", "u2", "error")


class Position2(NamedTuple):
    x: float
    y: float

    def as_array(self) -> np.ndarray:
        return np.array([self.x, self.y], dtype=float)


class Actuation2(NamedTuple):
    u1: float
    u2: float

    @classmethod
    def clamped(cls, u1: float, u2: float) -> "Actuation2":
        return cls(min(1.0, max(-1.0, float(u1))), min(1.0, max(-1.0, float(u2))))

    def as_array(self) -> np.ndarray:
        return np.array([self.u1, self.u2], dtype=float)


def check_position(p: Position2, workspace_length: float = WORKSPACE_LENGTH) -> None:
    bound = 0.75 * workspace_length
    if not (math.isfinite(p.x) and math.isfinite(p.y)):
        raise ValueError(f"non-finite position {p}")
    if abs(p.x) > bound or abs(p.y) > bound:
        raise ValueError(f"position {p} outside sanity bound {bound:.3f} mm")


@dataclass(frozen=True)
class TrajectorySpec:
    """Ordered target waypoints, one per control step."""

    name: str
    waypoints: np.ndarray  # (step_count, 2) mm
    control_period: float = DEFAULT_CONTROL_PERIOD
    workspace_length: float = WORKSPACE_LENGTH

    def __post_init__(self) -> None:
        wp = np.array(self.waypoints, dtype=float)
        if wp.ndim != 2 or wp.shape[0] < 1:
            raise ValueError("waypoints must be a non-empty (n, d) array")
        if self.control_period <= 0:
            raise ValueError("control_period must be positive")
        if wp.shape[0] > 1:
            gaps = np.linalg.norm(np.diff(wp, axis=0), axis=1)
            if gaps.max() > 0.05 * self.workspace_length + 1e-12:
                raise ValueError(
                    f"waypoint spacing {gaps.max():.3f} exceeds 5% of workspace length"
                )
        wp.setflags(write=False)
        object.__setattr__(self, "waypoints", wp)

    @property
    def step_count(self) -> int:
        return int(self.waypoints.shape[0])

    def target(self, k: int) -> Position2:
        return Position2(*self.waypoints[k])


def _resample_closed(vertices: np.ndarray, step_count: int) -> np.ndarray:
    """Equal-arc-length resampling of a dense polyline; first and last samples
    are the polyline's end points."""
    seg = np.linalg.norm(np.diff(vertices, axis=0), axis=1)
    s = np.concatenate([[0.0], np.cumsum(seg)])
    targets = np.linspace(0.0, s[-1], step_count)
    x = np.interp(targets, s, vertices[:, 0])
    y = np.interp(targets, s, vertices[:, 1])
    return np.column_stack([x, y])


_DENSE = 4000  # samples per curved piece before resampling


def trajectory_a_geometry(workspace_length: float) -> np.ndarray:
    """Dense polyline: a circle, then the square circumscribing it.

    Both shapes are centred on the rest pose with diameter/side 0.45 L and share
    the start point on the +x axis, so the path closes on itself.
    """
    r = 0.225 * workspace_length
    th = np.linspace(0.0, 2.0 * np.pi, _DENSE)
    circle = np.column_stack([r * np.cos(th), r * np.sin(th)])
    square = np.array([[r, 0.0], [r, r], [-r, r], [-r, -r], [r, -r], [r, 0.0]])
    return np.vstack([circle, square[1:]])


def trajectory_b_geometry(workspace_length: float) -> np.ndarray:
    """Dense polyline: an equilateral triangle whose closing side is replaced by a
    half-sine arc bulging outwards.

    Vertex angles along the path: 60 deg at the lower-right corner, about 97 deg
    where the straight sides meet the arc.
    """
    L = workspace_length
    side = 0.5 * L
    v0 = np.array([-0.25 * L, -0.22 * L])
    v1 = v0 + np.array([side, 0.0])
    v2 = v0 + side * np.array([0.5, math.sqrt(3.0) / 2.0])
    # half-sine from v2 back to v0, bulging away from the triangle's interior
    chord = v0 - v2
    normal = np.array([chord[1], -chord[0]]) / np.linalg.norm(chord)
    centroid = (v0 + v1 + v2) / 3.0
    if np.dot(normal, (v2 + v0) / 2.0 - centroid) < 0:
        normal = -normal
    s = np.linspace(0.0, 1.0, _DENSE)
    arc = v2 + np.outer(s, chord) + np.outer(0.12 * L * np.sin(np.pi * s), normal)
    return np.vstack([v0, v1, arc])


def _make(name: str, dense: np.ndarray, step_count: int, workspace_length: float,
          control_period: float) -> TrajectorySpec:
    if step_count < 100:
        raise ValueError(f"step_count must be >= 100, got {step_count}")
    if workspace_length <= 0:
        raise ValueError("workspace_length must be positive")
    return TrajectorySpec(name, _resample_closed(dense, step_count), control_period, workspace_length)


def make_trajectory_a(step_count: int = 400, workspace_length: float = WORKSPACE_LENGTH,
                      control_period: float = DEFAULT_CONTROL_PERIOD) -> TrajectorySpec:
    return _make("A", trajectory_a_geometry(workspace_length), step_count, workspace_length,
                 control_period)


def make_trajectory_b(step_count: int = 400, workspace_length: float = WORKSPACE_LENGTH,
                      control_period: float = DEFAULT_CONTROL_PERIOD) -> TrajectorySpec:
    return _make("B", trajectory_b_geometry(workspace_length), step_count, workspace_length,
                 control_period)


def make_trajectory(name: str, step_count: int = 400, workspace_length: float = WORKSPACE_LENGTH,
                    control_period: float = DEFAULT_CONTROL_PERIOD) -> TrajectorySpec:
    makers = {"A": make_trajectory_a, "B": make_trajectory_b}
    if name not in makers:
        raise ValueError(f"unknown trajectory {name!r}; expected A or B")
    return makers[name](step_count, workspace_length, control_period)


def path_length(waypoints: np.ndarray) -> float:
    return float(np.linalg.norm(np.diff(waypoints, axis=0), axis=1).sum())


@dataclass(frozen=True)
class StepRecord:
    step_index: int
    commanded: tuple[float, ...]
    achieved: tuple[float, ...]
    target: tuple[float, ...]
    per_step_error: float
    extras: dict = field(default_factory=dict, compare=False)


def step_error(achieved: Sequence[float], target: Sequence[float], workspace_length: float) -> float:
    return float(np.linalg.norm(np.subtract(achieved, target))) / workspace_length


@dataclass
class RolloutLog:
    trajectory: TrajectorySpec
    records: list[StepRecord]
    plant_id: str
    controller_id: str
    seed: int

    def __post_init__(self) -> None:
        if len(self.records) != self.trajectory.step_count:
            raise ValueError(
                f"log has {len(self.records)} records for a {self.trajectory.step_count}-step trajectory"
            )

    @property
    def errors(self) -> np.ndarray:
        return np.array([r.per_step_error for r in self.records])

    @property
    def achieved(self) -> np.ndarray:
        return np.array([r.achieved for r in self.records])

    def to_csv(self, path: str | Path, extra_columns: Sequence[str] = ()) -> None:
        """Write the log; ``extra_columns`` are read from each record's ``extras``."""
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(list(LOG_COLUMNS) + list(extra_columns))
            for r in self.records:
                u = list(r.commanded) + [0.0] * (2 - len(r.commanded))
                ach = list(r.achieved) + [0.0] * (2 - len(r.achieved))
                tgt = list(r.target) + [0.0] * (2 - len(r.target))
                row = [r.step_index, tgt[0], tgt[1], ach[0], ach[1], u[0], u[1], r.per_step_error]
                row += [r.extras[c] for c in extra_columns]
                w.writerow([repr(float(v)) if not isinstance(v, int) else v for v in row])


@dataclass(frozen=True)
class Metric:
    mean_error: float
    std_error: float
    max_error: float

    def __str__(self) -> str:
        return f"{100 * self.mean_error:.2f}±{100 * self.std_error:.2f}% (max {100 * self.max_error:.2f}%)"


def metric_from_errors(errors: Sequence[float] | np.ndarray) -> Metric:
    e = np.asarray(errors, dtype=float)
    if e.size == 0:
        raise ValueError("cannot score an empty error sequence")
    return Metric(float(e.mean()), float(e.std()), float(e.max()))


def score(log: RolloutLog | Sequence[RolloutLog]) -> Metric:
    """Mean/std/max of per-step errors; a list of logs is pooled step-wise."""
    logs = [log] if isinstance(log, RolloutLog) else list(log)
    if not logs or not any(lg.records for lg in logs):
        raise ValueError("cannot score an empty log")
    return metric_from_errors(np.concatenate([lg.errors for lg in logs]))
