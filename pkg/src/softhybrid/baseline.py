"""Single-joint soft arm and a model-based constant-curvature controller.

The arm is a pseudo-rigid-body bending joint without gravity,
``B q'' + C q' + K q = tau``, whose angle is limited to [0, 2.4] rad. A grid of
25 material variants (Young's modulus x Poisson ratio) is used to compare the
model-based controller, tuned on the middle robot, with the hybrid controller
re-targeted to one degree of freedom.

Controllers exchange angles measured from the middle of the workspace and
normalised torque commands in [-1, 1]; ``torque_from_command`` and
``centred_angle`` convert between the two views.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from .core import Metric, metric_from_errors
from .dataset import Dataset, random_walk

Q_MAX = 2.4  # rad
Q_MID = Q_MAX / 2
YOUNGS_GRID = (5.0, 7.5, 10.0, 12.5, 15.0)  # kPa
POISSON_GRID = (0.25, 0.375, 0.5, 0.625, 0.75)
CENTER = (10.0, 0.5)

# Mapping constants: the middle robot has K = 1 N m/rad, C = 0.1 N m s/rad and
# B = 0.005 kg m^2, i.e. about 14 rad/s natural frequency at 0.7 damping ratio.
REF_STIFFNESS = 1.0
REF_DAMPING = 0.1
INERTIA = 0.005
# torque = TORQUE_MID + command * TORQUE_HALF_RANGE; at command 0 the middle
# robot rests mid-workspace and the range covers the stiffest robot's reach
TORQUE_MID = REF_STIFFNESS * Q_MID
TORQUE_HALF_RANGE = 2.0 * REF_STIFFNESS * Q_MID

ARM_CONTROL_PERIOD = 0.1  # s
ARM_SUBSTEPS = 100
ARM_NOISE_STD = 0.005  # rad
# The simulated arm is richer than the model the controller is built on: the
# rod's own weight loads the joint, and a slowly wandering torque stands in for
# pressure-supply and material drift.
LOAD_TORQUE = 0.3  # N m, weight torque at horizontal
DISTURBANCE_STD = 0.1  # N m
DISTURBANCE_TIME = 5.0  # s
GAIN_I_CANDIDATES = (0.0, 0.5, 1.0, 2.0, 5.0, 10.0, 20.0, 50.0)
GRID_COLUMNS = ("youngs_modulus", "poisson_ratio", "cc_mean", "cc_std", "hybrid_mean", "hybrid_std")


@dataclass(frozen=True)
class ArmParams:
    B: float
    C: float
    K_stiff: float
    youngs_modulus: float = CENTER[0]
    poisson_ratio: float = CENTER[1]
    mapping: str = "linear-modulus"

    def __post_init__(self) -> None:
        if min(self.B, self.C, self.K_stiff) <= 0:
            raise ValueError("B, C and K_stiff must be positive")
        if not 5.0 <= self.youngs_modulus <= 15.0:
            raise ValueError(f"youngs_modulus must be in [5, 15] kPa, got {self.youngs_modulus}")
        if not 0.25 <= self.poisson_ratio <= 0.75:
            raise ValueError(f"poisson_ratio must be in [0.25, 0.75], got {self.poisson_ratio}")

    @classmethod
    def from_material(cls, youngs_modulus: float, poisson_ratio: float) -> "ArmParams":
        """Stiffness scales with E, damping with the shear-like E / (1 + nu), inertia is fixed."""
        e0, nu0 = CENTER
        return cls(
            B=INERTIA,
            C=REF_DAMPING * (youngs_modulus / (1.0 + poisson_ratio)) / (e0 / (1.0 + nu0)),
            K_stiff=REF_STIFFNESS * youngs_modulus / e0,
            youngs_modulus=youngs_modulus,
            poisson_ratio=poisson_ratio,
        )


def center_arm() -> ArmParams:
    return ArmParams.from_material(*CENTER)


def grid_arms() -> list[ArmParams]:
    return [ArmParams.from_material(e, nu) for e in YOUNGS_GRID for nu in POISSON_GRID]


@dataclass
class ArmState:
    q: float = 0.0
    q_dot: float = 0.0
    integral_error: float = 0.0

    def energy(self, params: ArmParams) -> float:
        return 0.5 * params.B * self.q_dot ** 2 + 0.5 * params.K_stiff * self.q ** 2


def arm_step(state: ArmState, params: ArmParams, torque: float, dt: float) -> ArmState:
    """One linearly implicit Euler step of the arm dynamics.

    The velocity update sees the damping and spring forces at the new state,
    which has a closed form for this linear system; unlike explicit or
    symplectic Euler the step never adds mechanical energy. Hitting either end
    of the workspace stops the joint.
    """
    if dt <= 0:
        raise ValueError("dt must be positive")
    B, C, K = params.B, params.C, params.K_stiff
    v = (B * state.q_dot + dt * (torque - K * state.q)) / (B + dt * C + dt * dt * K)
    q = state.q + dt * v
    if q < 0.0 or q > Q_MAX:
        q = min(max(q, 0.0), Q_MAX)
        v = 0.0
    return ArmState(q, v, state.integral_error)


def cc_control(state: ArmState, params: ArmParams, q_bar: float, q_bar_dot: float,
               q_bar_ddot: float, gain_i: float, dt: float) -> float:
    """Inverse-dynamics feedforward on the desired motion plus integral action.

    Accumulates ``(q_bar - state.q) * dt`` into ``state.integral_error`` before
    forming the torque.
    """
    if gain_i < 0:
        raise ValueError("gain_i must be >= 0")
    state.integral_error += (q_bar - state.q) * dt
    ff = params.B * q_bar_ddot + params.C * q_bar_dot + params.K_stiff * q_bar
    return ff + gain_i * state.integral_error


def torque_from_command(command: float) -> float:
    return TORQUE_MID + float(np.clip(command, -1.0, 1.0)) * TORQUE_HALF_RANGE


def command_from_torque(torque: float) -> float:
    return float(np.clip((torque - TORQUE_MID) / TORQUE_HALF_RANGE, -1.0, 1.0))


def centred_angle(q: float) -> float:
    return q - Q_MID


class ArmRobot:
    """Arm driven at the control period with zero-order-hold torque and noisy angle sensing.

    On top of the commanded torque the joint feels the weight load
    ``-load_torque * sin(q)`` and a disturbance torque that follows an
    Ornstein-Uhlenbeck process updated once per control period.
    """

    def __init__(self, params: ArmParams, dt: float = ARM_CONTROL_PERIOD,
                 substeps: int = ARM_SUBSTEPS, noise_std: float = ARM_NOISE_STD, rng_seed: int = 0,
                 load_torque: float = LOAD_TORQUE, disturbance_std: float = DISTURBANCE_STD,
                 disturbance_time: float = DISTURBANCE_TIME):
        self.params, self.dt, self.substeps, self.noise_std = params, dt, substeps, noise_std
        self.load_torque, self.disturbance_std = load_torque, disturbance_std
        self.disturbance_time = disturbance_time
        self.rng_seed = rng_seed
        self.reset()

    def reset(self) -> None:
        self.state = ArmState()
        self.disturbance = 0.0
        self.rng = np.random.default_rng(self.rng_seed)

    def apply_torque(self, torque: float) -> float:
        if self.disturbance_std > 0:
            rho = math.exp(-self.dt / self.disturbance_time)
            self.disturbance = rho * self.disturbance + self.disturbance_std * math.sqrt(1 - rho * rho) \
                * self.rng.normal()
        h = self.dt / self.substeps
        for _ in range(self.substeps):
            load = self.load_torque * math.sin(self.state.q)
            self.state = arm_step(self.state, self.params, torque + self.disturbance - load, h)
        return self.state.q + (self.rng.normal(0.0, self.noise_std) if self.noise_std > 0 else 0.0)

    def step(self, command) -> float:
        """Apply a normalised command; return the sensed centred angle."""
        c = float(np.asarray(command, dtype=float).reshape(-1)[0])
        return centred_angle(self.apply_torque(torque_from_command(c)))


def angle_trajectory(n: int = 400, period_steps: int = 200) -> np.ndarray:
    """Desired joint angles (rad): a slow sweep with a faster ripple around mid-workspace."""
    k = np.arange(n)
    return Q_MID + 0.6 * np.sin(2 * np.pi * k / period_steps) + 0.2 * np.sin(6 * np.pi * k / period_steps)


def trajectory_derivatives(q_bar: np.ndarray, dt: float) -> tuple[np.ndarray, np.ndarray]:
    """Velocity and acceleration by central differences (one-sided at the ends)."""
    vel = np.gradient(q_bar, dt)
    acc = np.gradient(vel, dt)
    return vel, acc


def excite_arm(params: ArmParams, n: int = 1000, max_delta: float = 0.1, seed: int = 0,
               dt: float = ARM_CONTROL_PERIOD) -> Dataset:
    if n < 100:
        raise ValueError(f"n must be >= 100, got {n}")
    rng = np.random.default_rng(seed)
    commands = random_walk(n, 1, max_delta, rng)
    robot = ArmRobot(params, dt, rng_seed=int(rng.integers(2**31)))
    angles = np.array([[robot.step(c)] for c in commands])
    return Dataset(commands, angles, dt, plant_id=f"arm-E{params.youngs_modulus:g}-nu{params.poisson_ratio:g}")


def run_cc(params: ArmParams, model: ArmParams, q_bar: np.ndarray, gain_i: float,
           dt: float = ARM_CONTROL_PERIOD, seed: int = 0) -> np.ndarray:
    """Track ``q_bar`` with the model-based controller; returns normalised per-step errors.

    The robot starts at rest at the first desired angle. At step k the
    controller sees the sensed angle and commands the torque for reaching
    ``q_bar[k + 1]``; the error is taken at the end of the step.
    """
    vel, acc = trajectory_derivatives(q_bar, dt)
    robot = ArmRobot(params, dt, rng_seed=seed)
    robot.state = ArmState(q=float(q_bar[0]))
    ctrl = ArmState()
    q_meas = float(q_bar[0])
    errs = np.empty(len(q_bar) - 1)
    for k in range(len(q_bar) - 1):
        ctrl.q = q_meas
        tau = cc_control(ctrl, model, q_bar[k + 1], vel[k + 1], acc[k + 1], gain_i, dt)
        tau = float(np.clip(tau, TORQUE_MID - TORQUE_HALF_RANGE, TORQUE_MID + TORQUE_HALF_RANGE))
        q_meas = robot.apply_torque(tau)
        errs[k] = abs(robot.state.q - q_bar[k + 1]) / Q_MAX
    return errs


def run_learned(params: ArmParams, controller, q_bar: np.ndarray, dt: float = ARM_CONTROL_PERIOD,
                seed: int = 0) -> np.ndarray:
    """Track ``q_bar`` with a history-based controller (centred angles, normalised commands).

    Before the run the command is held at the one that rests the middle robot
    on ``q_bar[0]`` to fill the history.
    """
    robot = ArmRobot(params, dt, rng_seed=seed)
    robot.state = ArmState(q=float(q_bar[0]))
    controller.reset()
    hold = np.array([command_from_torque(REF_STIFFNESS * q_bar[0])])
    history = []
    for _ in range(controller.history_len):
        history.append((np.array([robot.step(hold)]), hold.copy()))
    errs = np.empty(len(q_bar) - 1)
    for k in range(len(q_bar) - 1):
        a, _ = controller.command(k, np.array([centred_angle(q_bar[k + 1])]), history)
        a = np.clip(np.asarray(a, dtype=float).reshape(1), -1.0, 1.0)
        if not np.all(np.isfinite(a)):
            raise FloatingPointError(f"controller produced a non-finite command at step {k}")
        history.append((np.array([robot.step(a)]), a))
        del history[:-max(controller.history_len, 1)]
        errs[k] = abs(robot.state.q - q_bar[k + 1]) / Q_MAX
    return errs


def tune_gain_i(q_bar: np.ndarray, candidates: Sequence[float] = GAIN_I_CANDIDATES, seed: int = 0) -> float:
    """Integral gain with the lowest error on the middle robot (ties go to the smaller gain)."""
    arm = center_arm()
    scores = [(float(run_cc(arm, arm, q_bar, g, seed=seed).mean()), g) for g in candidates]
    return min(scores)[1]


@dataclass
class GridRow:
    youngs_modulus: float
    poisson_ratio: float
    cc: Metric
    hybrid: Metric

    def as_row(self) -> list:
        return [self.youngs_modulus, self.poisson_ratio, self.cc.mean_error, self.cc.std_error,
                self.hybrid.mean_error, self.hybrid.std_error]


@dataclass
class GridReport:
    rows: list[GridRow]
    gain_i: float
    cc_aggregate: float = field(init=False)
    hybrid_aggregate: float = field(init=False)

    def __post_init__(self) -> None:
        self.cc_aggregate = float(np.mean([r.cc.mean_error for r in self.rows]))
        self.hybrid_aggregate = float(np.mean([r.hybrid.mean_error for r in self.rows]))

    def off_center_wins(self) -> tuple[int, int]:
        off = [r for r in self.rows if (r.youngs_modulus, r.poisson_ratio) != CENTER]
        return sum(r.hybrid.mean_error < r.cc.mean_error for r in off), len(off)

    def to_csv(self, path: str | Path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(GRID_COLUMNS)
            for r in self.rows:
                w.writerow([repr(float(v)) for v in r.as_row()])
            table = np.array([r.as_row() for r in self.rows])[:, 2:]
            # two aggregate rows: the average over robots and the spread across robots
            w.writerow(["mean", "mean"] + [repr(float(v)) for v in table.mean(axis=0)])
            w.writerow(["spread", "spread"] + [repr(float(v)) for v in table.std(axis=0)])


def grid_sweep(hybrid_factory: Callable[[], object], gain_i: float, q_bar: np.ndarray | None = None,
               seed: int = 0, arms: Sequence[ArmParams] | None = None) -> GridReport:
    """Run both controllers on every grid robot.

    The model-based controller always uses the middle robot's model and the
    given integral gain; ``hybrid_factory`` builds a fresh hybrid controller
    per robot.
    """
    q_bar = angle_trajectory() if q_bar is None else q_bar
    model = center_arm()
    rows = []
    for arm in (grid_arms() if arms is None else arms):
        cc = metric_from_errors(run_cc(arm, model, q_bar, gain_i, seed=seed))
        hy = metric_from_errors(run_learned(arm, hybrid_factory(), q_bar, seed=seed))
        rows.append(GridRow(arm.youngs_modulus, arm.poisson_ratio, cc, hy))
    return GridReport(rows, gain_i)

