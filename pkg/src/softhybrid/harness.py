"""Experiment orchestration: rollouts, condition matrices, sweeps and reports.

Every run is described by an :class:`ExperimentConfig`. A rollout drives one
simulated unit along a closed trajectory; the error of step ``t`` is the
distance between the position sensed after the step and waypoint ``t``.
"""

from __future__ import annotations

import csv
import hashlib
import json
import logging
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from . import baseline, plant
from .core import (DEFAULT_CONTROL_PERIOD, WORKSPACE_LENGTH, Metric, RolloutLog, StepRecord,
                   TrajectorySpec, make_trajectory, metric_from_errors, score, step_error)
from .hybrid import HybridConfig, HybridController, KinematicsOnlyController, LstmController
from .lstm import LstmWeights, load_weights

log = logging.getLogger(__name__)

CONTROLLERS = ("lstm", "kinematics", "hybrid")
NOMINAL_RATE_STEPS = 400
ADAPTATION_VARIANTS = (("4Hz", 0.25, 400), ("2.5Hz", 0.4, 400), ("300", DEFAULT_CONTROL_PERIOD, 300),
                       ("500", DEFAULT_CONTROL_PERIOD, 500))
ABLATION_STEPS = (100, 200, 300, 350)
ALPHA_TURNS = (1, 2, 3)
BETA_SEEDS = (1, 2, 3)
BETA_SEVERITY = 0.15


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class ExperimentConfig:
    plant: str = "nominal"  # nominal | rotated:<k> | perturbed:<severity>:<seed>
    controller: str = "hybrid"
    weight: float = 0.1
    schedule: tuple[tuple[int, float], ...] = ()
    trajectory: str = "A"
    step_count: int = NOMINAL_RATE_STEPS
    control_period: float = DEFAULT_CONTROL_PERIOD
    trials: int = 3
    seed: int = 0
    output_dir: str = "runs"
    weights_path: str = "weights.bin"

    def __post_init__(self) -> None:
        if self.trials < 1:
            raise ConfigError("trials must be >= 1")
        if self.control_period <= 0:
            raise ConfigError("control_period must be > 0")
        if self.controller not in CONTROLLERS:
            raise ConfigError(f"controller must be one of {CONTROLLERS}, got {self.controller!r}")
        if self.trajectory not in ("A", "B"):
            raise ConfigError(f"trajectory must be A or B, got {self.trajectory!r}")
        if self.step_count < 100:
            raise ConfigError("step_count must be >= 100")
        object.__setattr__(self, "schedule", tuple((int(s), float(w)) for s, w in self.schedule))
        try:
            HybridConfig(self.weight, self.schedule)
            plant_from_spec(self.plant)
        except ValueError as exc:
            raise ConfigError(str(exc)) from None

    @classmethod
    def from_dict(cls, doc: dict) -> "ExperimentConfig":
        known = {f.name for f in fields(cls)}
        unknown = sorted(set(doc) - known)
        if unknown:
            raise ConfigError(f"unknown config keys: {', '.join(unknown)}")
        doc = dict(doc)
        if "schedule" in doc:
            doc["schedule"] = tuple(tuple(pair) for pair in doc["schedule"])
        return cls(**doc)

    @classmethod
    def load(cls, path: str | Path) -> "ExperimentConfig":
        try:
            doc = json.loads(Path(path).read_text())
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path}: {exc}") from None
        if not isinstance(doc, dict):
            raise ConfigError(f"{path}: top level must be an object")
        return cls.from_dict(doc)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["schedule"] = [list(p) for p in self.schedule]
        return d

    def digest(self) -> str:
        """Short stable hash of every field except the output directory, used to name output files."""
        d = self.to_dict()
        d.pop("output_dir")
        text = json.dumps(d, sort_keys=True)
        return hashlib.sha256(text.encode()).hexdigest()[:12]

    def trajectory_spec(self) -> TrajectorySpec:
        return make_trajectory(self.trajectory, self.step_count, WORKSPACE_LENGTH, self.control_period)


def plant_from_spec(spec: str) -> plant.PlantParams:
    """``nominal``, ``rotated:<k>`` (k = 1..3) or ``perturbed:<severity>:<seed>``."""
    parts = spec.split(":")
    nom = plant.nominal_plant()
    try:
        if parts == ["nominal"]:
            return nom
        if parts[0] == "rotated" and len(parts) == 2:
            return plant.rotate_configuration(nom, int(parts[1]), reregister=True)
        if parts[0] == "perturbed" and len(parts) == 3:
            return plant.perturb_unit(nom, float(parts[1]), int(parts[2]))
    except ValueError as exc:
        raise ValueError(f"bad plant spec {spec!r}: {exc}") from None
    raise ValueError(f"bad plant spec {spec!r}; expected nominal, rotated:<k> or perturbed:<severity>:<seed>")


def trial_seed(seed: int, trial: int) -> int:
    return int(np.random.SeedSequence([seed, trial]).generate_state(1)[0])


def make_controller(cfg: ExperimentConfig, weights: LstmWeights | None):
    if cfg.controller == "kinematics":
        return KinematicsOnlyController()
    if weights is None:
        raise ConfigError(f"controller {cfg.controller!r} needs trained weights")
    if cfg.controller == "lstm":
        return LstmController(weights)
    return HybridController(weights, HybridConfig(cfg.weight, cfg.schedule))


def resolve_weights(cfg: ExperimentConfig, weights: LstmWeights | None) -> LstmWeights | None:
    if weights is not None or cfg.controller == "kinematics":
        return weights
    path = Path(cfg.weights_path)
    if not path.exists():
        raise FileNotFoundError(f"weights file {path} not found; run the train command first")
    return load_weights(path)


def rollout(params: plant.PlantParams, controller, traj: TrajectorySpec, seed: int,
            plant_id: str = "", controller_id: str = "", warmup_history: int = 0) -> RolloutLog:
    """Drive one unit along ``traj`` and log every step.

    The zero command is held for ``max(warmup_history, controller.history_len)``
    steps plus the plant's whole-period delay (plus one) to fill the history
    before the first logged step. Passing the same ``warmup_history`` to
    different controllers gives them identical starting conditions.
    """
    robot = plant.SimulatedRobot(params, traj.control_period, rng_seed=seed)
    controller.reset()
    zero = np.zeros(2)
    history = []
    for _ in range(max(warmup_history, controller.history_len) + robot.state.delay + 1):
        history.append((np.array(robot.step(zero)), zero.copy()))
    keep = max(controller.history_len, 1)
    records = []
    for t in range(traj.step_count):
        target = traj.target(t)
        a, extras = controller.command(t, target, history[-keep:])
        a = np.asarray(a, dtype=float)
        if not np.all(np.isfinite(a)):
            raise FloatingPointError(f"controller produced a non-finite command at step {t}")
        p = np.array(robot.step(a))
        history.append((p, a))
        del history[:-keep]
        records.append(StepRecord(t, tuple(float(v) for v in a), tuple(float(v) for v in p),
                                  tuple(float(v) for v in target),
                                  step_error(p, target, traj.workspace_length), extras))
    return RolloutLog(traj, records, plant_id, controller_id, seed)


def run_rollout(cfg: ExperimentConfig, weights: LstmWeights | None = None) -> tuple[list[RolloutLog], Metric]:
    """All trials of one condition; trial ``i`` uses its own derived noise seed.

    When weights are at hand the warm-up spans their history window whichever
    controller runs, so controllers compared on one condition start alike.
    """
    weights = resolve_weights(cfg, weights)
    params = plant_from_spec(cfg.plant)
    traj = cfg.trajectory_spec()
    warmup = weights.spec.history_len if weights is not None else 0
    logs = []
    for i in range(cfg.trials):
        ctrl = make_controller(cfg, weights)
        logs.append(rollout(params, ctrl, traj, trial_seed(cfg.seed, i), cfg.plant, cfg.controller, warmup))
    return logs, score(logs)


@dataclass
class Report:
    """A table of condition rows, written as CSV."""

    title: str
    columns: tuple[str, ...]
    rows: list[dict] = field(default_factory=list)
    logs: dict[str, list[RolloutLog]] = field(default_factory=dict, repr=False)

    def add(self, **row) -> None:
        self.rows.append(row)

    def column(self, name: str) -> list:
        return [r[name] for r in self.rows]

    def to_csv(self, path: str | Path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(self.columns)
            for r in self.rows:
                w.writerow([repr(r[c]) if isinstance(r[c], float) else r[c] for c in self.columns])


def _family_plants(family: str) -> list[str]:
    if family == "alpha":
        return [f"rotated:{k}" for k in ALPHA_TURNS]
    if family == "beta":
        return [f"perturbed:{BETA_SEVERITY}:{s}" for s in BETA_SEEDS]
    if family == "nominal":
        return ["nominal"]
    raise ValueError(f"unknown robot family {family!r}")


def run_family(base: ExperimentConfig, family: str, weights: LstmWeights | None = None,
               **overrides) -> tuple[list[RolloutLog], Metric]:
    """Pool every trial over every unit of a robot family."""
    logs = []
    for spec in _family_plants(family):
        got, _ = run_rollout(replace(base, plant=spec, **overrides), weights)
        logs.extend(got)
    return logs, score(logs)


def run_interchangeability_matrix(base: ExperimentConfig, weights: LstmWeights | None = None,
                                  trajectories: Sequence[str] = ("A", "B")) -> Report:
    """LSTM-only against hybrid on the rotated and perturbed families."""
    weights = resolve_weights(replace(base, controller="lstm"), weights)
    rep = Report("interchangeability", ("family", "trajectory", "lstm_mean", "lstm_std",
                                        "hybrid_mean", "hybrid_std", "improvement"))
    for family in ("alpha", "beta"):
        for tr in trajectories:
            lstm_logs, m_l = run_family(base, family, weights, controller="lstm", trajectory=tr)
            hyb_logs, m_h = run_family(base, family, weights, controller="hybrid", trajectory=tr)
            rep.add(family=family, trajectory=tr, lstm_mean=m_l.mean_error, lstm_std=m_l.std_error,
                    hybrid_mean=m_h.mean_error, hybrid_std=m_h.std_error,
                    improvement=1.0 - m_h.mean_error / m_l.mean_error)
            rep.logs[f"{family}-{tr}-lstm"] = lstm_logs
            rep.logs[f"{family}-{tr}-hybrid"] = hyb_logs
    return rep


def run_adaptation_sweep(base: ExperimentConfig, weights: LstmWeights | None = None) -> Report:
    """Hybrid on both families at 4 Hz / 2.5 Hz and at 300 / 500 steps per lap."""
    base = replace(base, controller="hybrid")
    weights = resolve_weights(base, weights)
    rep = Report("adaptation", ("family", "variant", "control_period", "step_count", "mean", "std",
                                "reference_mean", "ratio"))
    for family in ("alpha", "beta"):
        _, ref = run_family(base, family, weights, control_period=DEFAULT_CONTROL_PERIOD,
                            step_count=NOMINAL_RATE_STEPS)
        for name, dt, n in ADAPTATION_VARIANTS:
            logs, m = run_family(base, family, weights, control_period=dt, step_count=n)
            rep.add(family=family, variant=name, control_period=dt, step_count=n, mean=m.mean_error,
                    std=m.std_error, reference_mean=ref.mean_error, ratio=m.mean_error / ref.mean_error)
            rep.logs[f"{family}-{name}"] = logs
    return rep


def final_window_error(logs: Iterable[RolloutLog], window: int = 50) -> float:
    return float(np.mean([lg.errors[-window:].mean() for lg in logs]))


def run_ablation(base: ExperimentConfig, switch_steps: Sequence[int] = ABLATION_STEPS,
                 weights: LstmWeights | None = None, family: str = "beta") -> Report:
    """Hybrid until each switch step, kinematics-only afterwards; plus the unswitched reference."""
    base = replace(base, controller="hybrid")
    weights = resolve_weights(base, weights)
    rep = Report("ablation", ("switch_step", "mean", "std", "final50_mean"))
    for s in list(switch_steps) + [None]:
        sched = () if s is None else ((int(s), 1.0),)
        logs, m = run_family(base, family, weights, schedule=sched)
        rep.add(switch_step="never" if s is None else int(s), mean=m.mean_error, std=m.std_error,
                final50_mean=final_window_error(logs))
        rep.logs[f"switch-{s if s is not None else 'never'}"] = logs
    return rep


def run_baseline_comparison(seed: int = 0, lstm_spec: str = "2-10-32-0.1", n_samples: int = 1000,
                            max_epochs: int = 150, patience: int = 15,
                            weight: float = 0.1) -> tuple[Report, baseline.GridReport]:
    """Train the 1-DOF hybrid and tune the integral gain on the middle arm, then sweep the grid."""
    from .lstm import LstmSpec, TrainConfig, train

    q_bar = baseline.angle_trajectory()
    center = baseline.center_arm()
    gain_i = baseline.tune_gain_i(q_bar, seed=seed)
    ds = baseline.excite_arm(center, n_samples, seed=seed)
    spec = LstmSpec.parse(lstm_spec, dim=1)
    weights, _ = train(ds, spec, TrainConfig(max_epochs=max_epochs, patience=patience, seed=seed))
    grid = baseline.grid_sweep(lambda: HybridController(weights, HybridConfig(weight)), gain_i, q_bar,
                               seed=seed)
    rep = Report("baseline", baseline.GRID_COLUMNS)
    for r in grid.rows:
        rep.add(**dict(zip(baseline.GRID_COLUMNS, r.as_row())))
    return rep, grid


def write_logs(logs: dict[str, list[RolloutLog]], out: str | Path) -> list[Path]:
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    paths = []
    for name, group in sorted(logs.items()):
        for i, lg in enumerate(group):
            extras = sorted(lg.records[0].extras) if lg.records else []
            p = out / f"{name}-trial{i}.csv"
            lg.to_csv(p, extras)
            paths.append(p)
    return paths


# -- figures -----------------------------------------------------------------

_SVG_SIZE = 480
_MARGIN = 30


def _svg_xy(points: np.ndarray, half: float) -> list[str]:
    scale = (_SVG_SIZE - 2 * _MARGIN) / (2 * half)
    c = _SVG_SIZE / 2
    return [f"{c + x * scale:.2f},{c - y * scale:.2f}" for x, y in points]


def error_band(logs: Sequence[RolloutLog]) -> tuple[np.ndarray, np.ndarray]:
    """Smallest and largest per-step error across trials, in mm."""
    errs = np.stack([lg.errors for lg in logs]) * logs[0].trajectory.workspace_length
    return errs.min(axis=0), errs.max(axis=0)


def condition_svg(logs: Sequence[RolloutLog], cloud: np.ndarray | None = None, title: str = "") -> str:
    """Workspace view: sample cloud, desired path, mean achieved path and per-step error band.

    The band is drawn as a polygon offset from the mean path along its normal
    by the smallest and largest per-step trial error (in mm).
    """
    if not logs:
        raise ValueError("need at least one log to plot")
    traj = logs[0].trajectory
    half = 0.5 * traj.workspace_length * 1.1
    mean_path = np.stack([lg.achieved for lg in logs]).mean(axis=0)
    lo, hi = error_band(logs)
    tangent = np.gradient(mean_path, axis=0)
    norm = np.linalg.norm(tangent, axis=1, keepdims=True)
    normal = np.column_stack([-tangent[:, 1], tangent[:, 0]]) / np.where(norm > 0, norm, 1.0)
    outer = mean_path + normal * hi[:, None]
    inner = mean_path + normal * lo[:, None]
    band = np.vstack([outer, inner[::-1]])
    parts = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{_SVG_SIZE}" height="{_SVG_SIZE}" '
             f'viewBox="0 0 {_SVG_SIZE} {_SVG_SIZE}">',
             '<rect width="100%" height="100%" fill="white"/>',
             f'<text x="{_MARGIN}" y="18" font-size="12" font-family="sans-serif">{title}</text>']
    if cloud is not None and len(cloud):
        for xy in _svg_xy(np.asarray(cloud)[:: max(1, len(cloud) // 2000)], half):
            x, y = xy.split(",")
            parts.append(f'<circle cx="{x}" cy="{y}" r="0.8" fill="#bbbbbb"/>')
    parts.append(f'<polygon points="{" ".join(_svg_xy(band, half))}" fill="#f4a582" fill-opacity="0.4" '
                 'stroke="none"/>')
    parts.append(f'<polyline points="{" ".join(_svg_xy(traj.waypoints, half))}" fill="none" '
                 'stroke="black" stroke-dasharray="4 3" stroke-width="1.2"/>')
    parts.append(f'<polyline points="{" ".join(_svg_xy(mean_path, half))}" fill="none" '
                 'stroke="#b2182b" stroke-width="1.5"/>')
    parts.append("</svg>")
    return "\n".join(parts) + "\n"


def emit_plots(logs: dict[str, list[RolloutLog]], out: str | Path, cloud: np.ndarray | None = None) -> list[Path]:
    """One SVG plus the raw CSVs per condition."""
    if not logs:
        raise ValueError("no logs to plot")
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    paths = write_logs(logs, out)
    for name, group in sorted(logs.items()):
        p = out / f"{name}.svg"
        p.write_text(condition_svg(group, cloud, name))
        paths.append(p)
    return paths


def summarize(logs: Sequence[RolloutLog]) -> dict:
    m = score(logs)
    per_trial = [metric_from_errors(lg.errors).mean_error for lg in logs]
    return {"mean": m.mean_error, "std": m.std_error, "max": m.max_error, "per_trial_mean": per_trial}
