"""Blending of the offline LSTM estimate with the online kinematics estimate.

All controllers here share one calling convention: ``command(step, target_next,
history)`` where ``history`` lists ``(p_k, a_{k-1})`` pairs oldest first and its
last entry is the position just sensed together with the command that led to it.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from . import kincontrol
from .kincontrol import KinematicsState
from .lstm import LstmWeights, predict_actuation

DEFAULT_WEIGHT = 0.1


@dataclass(frozen=True)
class HybridConfig:
    weight: float = DEFAULT_WEIGHT
    schedule: tuple[tuple[int, float], ...] = ()

    def __post_init__(self) -> None:
        sched = tuple((int(s), float(w)) for s, w in self.schedule)
        if not 0.0 <= self.weight <= 1.0 or any(not 0.0 <= w <= 1.0 for _, w in sched):
            raise ValueError("weights must lie in [0, 1]")
        if any(b[0] <= a[0] for a, b in zip(sched, sched[1:])):
            raise ValueError("schedule step indices must be strictly increasing")
        object.__setattr__(self, "schedule", sched)


def blend(a_k, a_lstm, w: float) -> np.ndarray:
    """w * a_k + (1 - w) * a_lstm, clamped to [-1, 1]."""
    if not 0.0 <= w <= 1.0:
        raise ValueError(f"blend weight must be in [0, 1], got {w}")
    a_k = np.asarray(a_k, dtype=float)
    a_lstm = np.asarray(a_lstm, dtype=float)
    if w == 0.0:
        return np.clip(a_lstm, -1.0, 1.0)
    if w == 1.0:
        return np.clip(a_k, -1.0, 1.0)
    return np.clip(w * a_k + (1.0 - w) * a_lstm, -1.0, 1.0)


def effective_weight(cfg: HybridConfig, step: int) -> float:
    w = cfg.weight
    for start, new in cfg.schedule:
        if step >= start:
            w = new
        else:
            break
    return w


@dataclass
class Diagnostics:
    a_k: np.ndarray
    a_lstm: np.ndarray
    K: np.ndarray
    weight: float

    def columns(self) -> dict:
        out = {}
        for i, v in enumerate(self.a_k):
            out[f"a_k{i + 1}"] = float(v)
        for i, v in enumerate(self.a_lstm):
            out[f"a_lstm{i + 1}"] = float(v)
        out["w"] = float(self.weight)
        for i in range(self.K.shape[0]):
            for j in range(self.K.shape[1]):
                out[f"k{i + 1}{j + 1}"] = float(self.K[i, j])
        return out


def hybrid_step(weights: LstmWeights, kin_state: KinematicsState, cfg: HybridConfig, step: int,
                target_next, history: Sequence[tuple]) -> tuple[np.ndarray, KinematicsState, Diagnostics]:
    if len(history) < weights.spec.history_len:
        raise ValueError(f"need {weights.spec.history_len} history entries, got {len(history)}")
    p_now, a_prev = history[-1]
    kincontrol.push_observation(kin_state, p_now, a_prev)
    kincontrol.update_k(kin_state)
    a_k = kincontrol.solve_actuation(kin_state, target_next)
    a_lstm = predict_actuation(weights, target_next, history[-weights.spec.history_len:])
    w = effective_weight(cfg, step)
    return blend(a_k, a_lstm, w), kin_state, Diagnostics(a_k, a_lstm, kin_state.K.copy(), w)


class LstmController:
    name = "lstm"

    def __init__(self, weights: LstmWeights):
        self.weights = weights
        self.history_len = weights.spec.history_len

    def reset(self) -> None:
        pass

    def command(self, step: int, target_next, history):
        return predict_actuation(self.weights, target_next, history[-self.history_len:]), {}


class KinematicsOnlyController:
    name = "kinematics"

    def __init__(self, dim: int = 2, window: int = kincontrol.DEFAULT_WINDOW,
                 ridge: float = kincontrol.DEFAULT_RIDGE):
        self.inner = kincontrol.KinematicsController(dim, window, ridge)
        self.history_len = 1

    def reset(self) -> None:
        self.inner.reset()

    def command(self, step: int, target_next, history):
        self.inner.observe(*history[-1])
        return self.inner.act(target_next), {}


@dataclass
class HybridController:
    weights: LstmWeights
    cfg: HybridConfig = field(default_factory=HybridConfig)
    window: int = kincontrol.DEFAULT_WINDOW
    ridge: float = kincontrol.DEFAULT_RIDGE
    name: str = "hybrid"

    def __post_init__(self) -> None:
        self.history_len = self.weights.spec.history_len
        self.reset()

    def reset(self) -> None:
        self.kin = kincontrol.init_state(self.weights.spec.dim, self.window, self.ridge)

    def command(self, step: int, target_next, history):
        a, self.kin, diag = hybrid_step(self.weights, self.kin, self.cfg, step, target_next, history)
        return a, diag.columns()
