"""Simulated planar soft-robot family.

Each unit maps its pair commands, after a transport delay, through
direction-dependent gains and a tanh compression to an equilibrium tip
position, relaxes towards it with a first-order lag, and reports the position
with additive tracker noise. Parameters can be perturbed to mimic unit-to-unit
manufacturing spread, or rotated to mimic hooking the chambers up to the
valves in another order.
"""

from __future__ import annotations

import json
import math
from collections import deque
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

import numpy as np

from .core import DEFAULT_CONTROL_PERIOD, WORKSPACE_LENGTH, Actuation2, Position2

PARAMS_FORMAT_VERSION = 1

# asymmetry index -> world direction: right (+x), left (-x), front (+y), back (-y)
RIGHT, LEFT, FRONT, BACK = range(4)
# cyclic order of the four chambers around the robot (counter-clockwise)
_RING = (RIGHT, FRONT, LEFT, BACK)
_QUARTER_TURN = ((0, -1), (1, 0))
TWIST_SCALE = 1.2  # rad of bending-plane twist per unit severity


@dataclass(frozen=True)
class PlantParams:
    gain_x: float  # mm per unit command
    gain_y: float
    asymmetry: tuple[float, float, float, float]  # right, left, front, back
    time_constant: float = 0.4  # s, pneumatic fill lag
    delay_steps: int = 0  # whole periods of dead time at the nominal control period
    saturation_softness: float = 1.2
    noise_std: float = 0.25  # mm
    pressure_cap: float = 0.5  # bar
    seed: int = 0
    coupling: float = 0.05  # reach lost on one axis when the other pair is fully pressurised
    twist: float = 0.0  # rad, misalignment of the bending plane
    channel_map: tuple[tuple[int, int], tuple[int, int]] = ((1, 0), (0, 1))
    dead_time: float = 0.15  # s, tubing transport delay on top of delay_steps

    def __post_init__(self) -> None:
        if self.gain_x <= 0 or self.gain_y <= 0:
            raise ValueError("gains must be positive")
        if len(self.asymmetry) != 4 or not all(0.5 <= a <= 1.5 for a in self.asymmetry):
            raise ValueError(f"asymmetry components must lie in [0.5, 1.5], got {self.asymmetry}")
        if not 0 <= self.delay_steps <= 3:
            raise ValueError("delay_steps must be in 0..3")
        if self.noise_std < 0:
            raise ValueError("noise_std must be >= 0")
        if self.time_constant <= 0 or self.saturation_softness <= 0 or self.pressure_cap <= 0:
            raise ValueError("time_constant, saturation_softness and pressure_cap must be positive")
        if self.dead_time < 0:
            raise ValueError("dead_time must be >= 0")
        if not 0 <= self.coupling < 1:
            raise ValueError("coupling must be in [0, 1)")
        m = np.array(self.channel_map)
        if m.shape != (2, 2) or not np.array_equal(np.abs(m) @ np.ones(2), np.ones(2)) \
                or not np.array_equal(np.abs(m).sum(axis=0), np.ones(2)):
            raise ValueError("channel_map must be a signed permutation matrix")
        object.__setattr__(self, "asymmetry", tuple(float(a) for a in self.asymmetry))
        object.__setattr__(self, "channel_map", tuple(tuple(int(v) for v in row) for row in m))

    def bound(self) -> np.ndarray:
        """Per-axis bound on the noise-free position."""
        a = max(self.asymmetry)
        if self.twist == 0.0:
            return np.array([self.gain_x * a, self.gain_y * a])
        r = math.hypot(self.gain_x, self.gain_y) * a
        return np.array([r, r])

    def vector(self) -> np.ndarray:
        return np.array([self.gain_x, self.gain_y, *self.asymmetry, self.time_constant,
                         self.delay_steps, self.saturation_softness, self.noise_std,
                         self.coupling, self.twist, self.dead_time])

    def to_json(self) -> str:
        doc = {"format_version": PARAMS_FORMAT_VERSION, **asdict(self)}
        return json.dumps(doc, indent=2, sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> "PlantParams":
        doc = json.loads(text)
        version = doc.pop("format_version", None)
        if version != PARAMS_FORMAT_VERSION:
            raise ValueError(f"unsupported plant params version {version!r}")
        doc["asymmetry"] = tuple(doc["asymmetry"])
        doc["channel_map"] = tuple(tuple(r) for r in doc["channel_map"])
        return cls(**doc)

    def save(self, path: str | Path) -> None:
        Path(path).write_text(self.to_json() + "\n")

    @classmethod
    def load(cls, path: str | Path) -> "PlantParams":
        return cls.from_json(Path(path).read_text())


def nominal_plant(seed: int = 0) -> PlantParams:
    """Reference unit: the left and front (top) chambers are the weak ones, and
    the gains are set so the reachable square is WORKSPACE_LENGTH wide."""
    asym = (1.0, 0.92, 0.93, 1.0)
    return PlantParams(
        gain_x=WORKSPACE_LENGTH / (asym[RIGHT] + asym[LEFT]),
        gain_y=WORKSPACE_LENGTH / (asym[FRONT] + asym[BACK]),
        asymmetry=asym,
        seed=seed,
    )


def _rotate_asymmetry(asym: tuple[float, ...], quarter_turns: int) -> tuple[float, ...]:
    out = [0.0] * 4
    for k, d in enumerate(_RING):
        out[_RING[(k + quarter_turns) % 4]] = asym[d]
    return tuple(out)


def rotate_configuration(params: PlantParams, quarter_turns: int,
                         reregister: bool = False) -> PlantParams:
    """Rotate the robot by ``quarter_turns`` x 90 deg against its valves.

    Each chamber keeps its valve, so its strength moves to the rotated direction
    and the channel-to-direction map rotates with it. With ``reregister`` the
    tracker frame is re-aligned to the rotated robot's axes: the channel map is
    then unchanged in the sensed frame and only the chamber strengths move,
    which is how the alternative actuation configurations are compared.
    """
    if quarter_turns not in (1, 2, 3):
        raise ValueError(f"quarter_turns must be 1, 2 or 3, got {quarter_turns}")
    asym = _rotate_asymmetry(params.asymmetry, quarter_turns)
    cmap = np.array(params.channel_map)
    if not reregister:
        rot = np.linalg.matrix_power(np.array(_QUARTER_TURN), quarter_turns)
        cmap = rot @ cmap
    gx, gy = params.gain_x, params.gain_y
    if quarter_turns % 2 == 1 and not reregister:
        gx, gy = gy, gx
    return replace(params, gain_x=gx, gain_y=gy, asymmetry=asym,
                   channel_map=tuple(tuple(int(v) for v in r) for r in cmap))


def perturb_unit(params: PlantParams, severity: float, seed: int) -> PlantParams:
    """A sibling unit from the same mould.

    Gains, each chamber strength and the lag time constant are scaled by
    independent factors in [1 - severity, 1 + severity]; the bending plane is
    twisted by up to ``TWIST_SCALE * severity`` rad.
    """
    if not 0.0 <= severity <= 0.5:
        raise ValueError(f"severity must be in [0, 0.5], got {severity}")
    if severity == 0.0:
        return params
    rng = np.random.default_rng([seed, 0x5EED])
    # magnitudes in the upper half of the band, random direction
    f = 1.0 + severity * rng.uniform(0.5, 1.0, size=7) * rng.choice([-1.0, 1.0], size=7)
    asym = tuple(float(np.clip(a * m, 0.5, 1.5)) for a, m in zip(params.asymmetry, f[2:6]))
    return replace(
        params,
        gain_x=params.gain_x * f[0],
        gain_y=params.gain_y * f[1],
        asymmetry=asym,
        time_constant=params.time_constant * f[6],
        twist=params.twist + TWIST_SCALE * severity * float(rng.uniform(0.5, 1.0) * rng.choice([-1.0, 1.0])),
    )


def physical_delay(params: PlantParams) -> float:
    """Dead time in seconds; independent of the control period."""
    return params.delay_steps * DEFAULT_CONTROL_PERIOD + params.dead_time


def effective_delay(params: PlantParams, dt: float) -> tuple[int, float]:
    """Dead time at period ``dt`` as (whole periods, leftover seconds)."""
    d = physical_delay(params)
    m = int(math.floor(d / dt + 1e-9))
    r = max(0.0, d - m * dt)
    if r < 1e-12:
        r = 0.0
    return m, r


def equilibrium(params: PlantParams, command: np.ndarray) -> np.ndarray:
    """Steady-state tip position for a held command (noise free)."""
    u = np.clip(np.asarray(command, dtype=float), -1.0, 1.0) * (params.pressure_cap / 0.5)
    u = np.clip(u, -1.0, 1.0)
    v = np.array(params.channel_map, dtype=float) @ u
    s = params.saturation_softness
    shaped = np.tanh(s * v) / math.tanh(s)
    a = params.asymmetry
    mx = a[RIGHT] if v[0] >= 0 else a[LEFT]
    my = a[FRONT] if v[1] >= 0 else a[BACK]
    c = params.coupling
    ex = params.gain_x * mx * shaped[0] * (1.0 - c * shaped[1] ** 2)
    ey = params.gain_y * my * shaped[1] * (1.0 - c * shaped[0] ** 2)
    if params.twist:
        ct, st = math.cos(params.twist), math.sin(params.twist)
        ex, ey = ct * ex - st * ey, st * ex + ct * ey
    return np.array([ex, ey])


@dataclass
class PlantState:
    position: np.ndarray  # noise-free lag state, mm
    queue: deque  # issued commands still waiting out the whole-period dead time
    active: np.ndarray  # command acting at the start of the current period
    rng: np.random.Generator
    dt: float
    leftover: float = 0.0  # s of the period still driven by ``active``

    @property
    def delay(self) -> int:
        return self.queue.maxlen or 0


def init_state(params: PlantParams, dt: float = DEFAULT_CONTROL_PERIOD,
               rng_seed: int | None = None) -> PlantState:
    if dt <= 0:
        raise ValueError("dt must be positive")
    m, r = effective_delay(params, dt)
    seed = params.seed if rng_seed is None else rng_seed
    return PlantState(
        position=np.zeros(2),
        queue=deque([np.zeros(2)] * m, maxlen=m),
        active=np.zeros(2),
        rng=np.random.default_rng(seed),
        dt=dt,
        leftover=r,
    )


def _relax(x: np.ndarray, target: np.ndarray, duration: float, tau: float) -> np.ndarray:
    return target + (x - target) * math.exp(-duration / tau)


def step(state: PlantState, params: PlantParams, command, dt: float | None = None) -> Position2:
    """Advance one control period and return the sensed position at its end.

    The command issued now reaches the robot after the plant's dead time: it
    waits ``state.delay`` whole periods in the queue and then takes over
    ``state.leftover`` seconds into a period. The first position it moves is
    therefore the one returned ``state.delay`` calls from now.
    """
    dt = state.dt if dt is None else dt
    if dt <= 0:
        raise ValueError("dt must be positive")
    u = np.clip(np.asarray(command, dtype=float), -1.0, 1.0)
    if state.queue.maxlen:
        incoming = state.queue.popleft()
        state.queue.append(u)
    else:
        incoming = u
    x = state.position
    split = min(state.leftover, dt)
    if split > 0.0:
        x = _relax(x, equilibrium(params, state.active), split, params.time_constant)
    if dt - split > 0.0:
        x = _relax(x, equilibrium(params, incoming), dt - split, params.time_constant)
    state.position = x
    state.active = incoming
    noise = state.rng.normal(0.0, params.noise_std, size=2) if params.noise_std > 0 else np.zeros(2)
    p = state.position + noise
    return Position2(float(p[0]), float(p[1]))


@dataclass
class SimulatedRobot:
    """Convenience wrapper owning a plant state."""

    params: PlantParams
    dt: float = DEFAULT_CONTROL_PERIOD
    rng_seed: int | None = None
    state: PlantState = field(init=False)

    def __post_init__(self) -> None:
        self.reset()

    def reset(self) -> None:
        self.state = init_state(self.params, self.dt, self.rng_seed)

    def step(self, command) -> Position2:
        return step(self.state, self.params, command, self.dt)


def open_loop(params: PlantParams, commands: np.ndarray, dt: float = DEFAULT_CONTROL_PERIOD,
              rng_seed: int | None = None) -> np.ndarray:
    robot = SimulatedRobot(params, dt, rng_seed)
    return np.array([robot.step(c) for c in np.asarray(commands)])


def reference_sequence(n: int = 2000, max_delta: float = 0.1, seed: int = 2023) -> np.ndarray:
    """Smooth random actuation sequence used to compare units open loop."""
    rng = np.random.default_rng(seed)
    a = np.zeros(2)
    out = np.empty((n, 2))
    for k in range(n):
        a = np.clip(a + rng.uniform(-max_delta, max_delta, size=2), -1.0, 1.0)
        out[k] = a
    return out


def open_loop_divergence(a: PlantParams, b: PlantParams, commands: np.ndarray | None = None,
                         dt: float = DEFAULT_CONTROL_PERIOD) -> float:
    """Mean distance (mm) between two units' noise-free responses to one sequence."""
    cmds = reference_sequence() if commands is None else commands
    pa = open_loop(replace(a, noise_std=0.0), cmds, dt)
    pb = open_loop(replace(b, noise_std=0.0), cmds, dt)
    return float(np.linalg.norm(pa - pb, axis=1).mean())


def as_actuation(command) -> Actuation2:
    c = np.asarray(command, dtype=float)
    return Actuation2.clamped(c[0], c[1])
