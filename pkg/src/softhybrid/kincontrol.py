"""Online kinematics controller.

A linear map ``p ~= K a`` is re-fitted every step from a short sliding window of
recent (position, preceding command) pairs, warm-started from the previous
estimate, and then inverted under the actuation box to pick the next command.
"""

from __future__ import annotations

import itertools
from collections import deque
from dataclasses import dataclass, field

import numpy as np

DEFAULT_WINDOW = 5
DEFAULT_RIDGE = 1e-6


class InsufficientData(ValueError):
    pass


@dataclass
class KinematicsState:
    K: np.ndarray
    window: int = DEFAULT_WINDOW
    ridge: float = DEFAULT_RIDGE
    positions: deque = field(default_factory=deque)  # newest first
    actuations: deque = field(default_factory=deque)
    insufficient: bool = False

    @property
    def P(self) -> np.ndarray:
        """Positions as columns, newest first: [p_t ... p_{t-4}]."""
        return np.array(self.positions, dtype=float).T.reshape(self.K.shape[0], -1)

    @property
    def A(self) -> np.ndarray:
        """Matching commands as columns, newest first: [a_{t-1} ... a_{t-5}]."""
        return np.array(self.actuations, dtype=float).T.reshape(self.K.shape[1], -1)

    def residual(self, K: np.ndarray | None = None) -> float:
        K = self.K if K is None else K
        return float(np.sum((self.P - K @ self.A) ** 2))

    def __eq__(self, other) -> bool:
        if not isinstance(other, KinematicsState):
            return NotImplemented
        return (np.array_equal(self.K, other.K) and self.window == other.window
                and self.ridge == other.ridge and np.array_equal(self.P, other.P)
                and np.array_equal(self.A, other.A))


def init_state(dim: int = 2, window: int = DEFAULT_WINDOW, ridge: float = DEFAULT_RIDGE) -> KinematicsState:
    if window < 2:
        raise ValueError("window must hold at least 2 columns")
    if ridge < 0:
        raise ValueError("ridge must be >= 0")
    return KinematicsState(K=np.eye(dim), window=window, ridge=ridge)


def push_observation(state: KinematicsState, position, prior_actuation) -> KinematicsState:
    """Insert (p_t, a_{t-1}) as the newest column, dropping the oldest when full."""
    state.positions.appendleft(np.asarray(position, dtype=float).copy())
    state.actuations.appendleft(np.asarray(prior_actuation, dtype=float).copy())
    while len(state.positions) > state.window:
        state.positions.pop()
        state.actuations.pop()
    return state


def update_k(state: KinematicsState) -> KinematicsState:
    """Minimise ||P - K A||_F^2 + ridge ||K - K_prev||_F^2 from the warm start K_prev.

    The objective is quadratic in K, so one Gauss-Newton step from K_prev lands
    on the minimiser; lstsq returns the minimum-norm step when A is rank
    deficient and ridge is zero, which keeps K finite and never raises the
    residual above the warm start's.
    """
    if len(state.positions) < 2:
        state.insufficient = True
        return state
    state.insufficient = False
    P, A, K0 = state.P, state.A, state.K
    n = A.shape[0]
    R = P - K0 @ A  # residual at the warm start
    lhs = A.T
    rhs = R.T
    if state.ridge > 0:
        lhs = np.vstack([lhs, np.sqrt(state.ridge) * np.eye(n)])
        rhs = np.vstack([rhs, np.zeros((n, K0.shape[0]))])
    step, *_ = np.linalg.lstsq(lhs, rhs, rcond=None)
    K = K0 + step.T
    if np.all(np.isfinite(K)) and state.residual(K) + state.ridge * np.sum((K - K0) ** 2) \
            <= state.residual(K0) * (1 + 1e-12) + 1e-300:
        state.K = K
    return state


def _min_norm_solve(M: np.ndarray, r: np.ndarray, cutoff: float) -> np.ndarray:
    """Minimum-norm least-squares solution, treating singular values below ``cutoff`` as zero."""
    u, sv, vt = np.linalg.svd(M, full_matrices=False)
    keep = sv > cutoff
    return vt[keep].T @ ((u[:, keep].T @ r) / sv[keep])


def solve_actuation(state_or_K, target_next, bound: float = 1.0) -> np.ndarray:
    """Box-constrained least squares ``min ||p - K a||`` with |a_i| <= bound.

    Enumerates every face of the box (each coordinate free, at -bound or at
    +bound), solves the reduced least-squares problem on the free coordinates
    with the minimum-norm solution (singular values negligible at the problem's
    scale count as zero), and keeps the feasible candidate with the
    smallest residual; near-ties go to the smaller command.
    """
    K = state_or_K.K if isinstance(state_or_K, KinematicsState) else np.asarray(state_or_K, dtype=float)
    p = np.asarray(target_next, dtype=float)
    if not np.all(np.isfinite(K)):
        raise ValueError("kinematics matrix is not finite")
    n = K.shape[1]
    scale = max(1.0, float(np.abs(p).max(initial=0.0)), float(np.abs(K).max(initial=0.0)))
    tol = 1e-12 * scale * scale
    cutoff = 1e-12 * scale
    best, best_res, best_norm = None, np.inf, np.inf
    for pattern in itertools.product((None, -bound, bound), repeat=n):
        a = np.zeros(n)
        free = [i for i, v in enumerate(pattern) if v is None]
        fixed = [i for i, v in enumerate(pattern) if v is not None]
        for i in fixed:
            a[i] = pattern[i]
        if free:
            r = p - K[:, fixed] @ a[fixed]
            a[free] = _min_norm_solve(K[:, free], r, cutoff)
            if np.any(np.abs(a[free]) > bound * (1 + 1e-12)):
                continue
            a[free] = np.clip(a[free], -bound, bound)
        res = float(np.sum((p - K @ a) ** 2))
        nrm = float(a @ a)
        if res < best_res - tol or (res <= best_res + tol and nrm < best_norm):
            best, best_res, best_norm = a, min(res, best_res), nrm
    return best


@dataclass
class KinematicsController:
    """Stand-alone kinematics-only controller with its own window."""

    dim: int = 2
    window: int = DEFAULT_WINDOW
    ridge: float = DEFAULT_RIDGE
    state: KinematicsState = field(init=False)

    def __post_init__(self) -> None:
        self.reset()

    def reset(self) -> None:
        self.state = init_state(self.dim, self.window, self.ridge)

    def observe(self, position, prior_actuation) -> None:
        push_observation(self.state, position, prior_actuation)
        update_k(self.state)

    def act(self, target_next) -> np.ndarray:
        return solve_actuation(self.state, target_next)
