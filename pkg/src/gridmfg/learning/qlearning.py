"""Tabular Q-learning with epsilon-greedy exploration over masked actions.

The inner loop is compiled with numba. All randomness is drawn up front from
the caller's stream (three uniforms per step plus one for the first demand),
so results are reproducible and independent of the compiled code path.
"""
from __future__ import annotations

from dataclasses import dataclass

import numba
import numpy as np

from ..aggregator import MASK_TOL, ActionSpace
from ..core import RngStream
from .env import TrainEnv
from .policy import Policy, tie_order


@dataclass
class QParams:
    eps_start: float = 0.1
    eps_end: float = 0.01
    initial_value: float = 0.0
    alpha_power: float = 1.0


@numba.njit(cache=True, inline="always")
def _tri(u, a, b, c):
    w = b - a
    if w == 0.0:
        return a
    if u < (c - a) / w:
        return a + np.sqrt(u * w * (c - a))
    return b - np.sqrt((1.0 - u) * w * (b - c))


@numba.njit(cache=True, inline="always")
def _phi(a, eta):
    if a < 0.0:
        return eta * a
    return a / eta


@numba.njit(cache=True, inline="always")
def _dbin(d, lo, hi, nb):
    if nb <= 1 or hi <= lo:
        return 0
    k = int((d - lo) / (hi - lo) * nb)
    if k < 0:
        return 0
    if k > nb - 1:
        return nb - 1
    return k


@numba.njit(cache=True, inline="always")
def _sbin(x, nb):
    k = int(x * nb)
    if k > nb - 1:
        return nb - 1
    return k


@numba.njit(cache=True, nogil=True)
def q_learning_kernel(Q, visits, values, order, eta, cap_mwh, belief, mean, sa, sb, sc,
                      gamma, x0, h0, eps_start, eps_end, d_lo, d_hi, u0, U, tol, omega):
    """Run ``U.shape[0]`` Q-learning steps in place; returns the final (storage, hour)."""
    nA = values.shape[0]
    H = belief.shape[0]
    SB = Q.shape[0]
    DB = Q.shape[2]
    steps = U.shape[0]
    x = x0
    h = h0
    d = mean[h] * _tri(u0, sa, sb, sc)
    valid = np.empty(nA, dtype=np.bool_)
    for t in range(steps):
        if steps > 1:
            eps = eps_start + (eps_end - eps_start) * t / (steps - 1)
        else:
            eps = eps_start
        b = _sbin(x, SB)
        db = _dbin(d, d_lo, d_hi, DB)
        n_valid = 0
        for i in range(nA):
            nx = x + _phi(values[i], eta)
            ok = nx >= -tol and nx <= 1.0 + tol
            valid[i] = ok
            if ok:
                n_valid += 1
        if U[t, 0] < eps:
            k = int(U[t, 1] * n_valid)
            if k >= n_valid:
                k = n_valid - 1
            ai = -1
            for i in range(nA):
                if valid[i]:
                    if k == 0:
                        ai = i
                        break
                    k -= 1
        else:
            ai = -1
            best = 0.0
            for j in range(nA):
                i = order[j]
                if valid[i] and (ai < 0 or Q[b, h, db, i] > best):
                    ai = i
                    best = Q[b, h, db, i]
        a = values[ai]
        ph = _phi(a, eta)
        r = -belief[h] * cap_mwh * (ph + d)
        x2 = x + ph
        if x2 < 0.0:
            x2 = 0.0
        elif x2 > 1.0:
            x2 = 1.0
        h2 = (h + 1) % H
        d2 = mean[h2] * _tri(U[t, 2], sa, sb, sc)
        b2 = _sbin(x2, SB)
        db2 = _dbin(d2, d_lo, d_hi, DB)
        nxt = 0.0
        first = True
        for i in range(nA):
            nx = x2 + _phi(values[i], eta)
            if nx >= -tol and nx <= 1.0 + tol:
                if first or Q[b2, h2, db2, i] > nxt:
                    nxt = Q[b2, h2, db2, i]
                    first = False
        target = r + gamma * nxt
        n = visits[b, h, db, ai]
        alpha = 1.0 / (1.0 + n) ** omega
        Q[b, h, db, ai] += alpha * (target - Q[b, h, db, ai])
        visits[b, h, db, ai] = n + 1
        x = x2
        h = h2
        d = d2
    return x, h


class QLearner:
    """Tabular learner; the table persists across calls to :meth:`train`."""

    def __init__(self, space: ActionSpace, H: int, storage_bins: int = 11, demand_bins: int = 1,
                 params: QParams | None = None):
        self.space = space
        self.params = params or QParams()
        shape = (storage_bins, H, demand_bins, space.n)
        self.Q = np.full(shape, self.params.initial_value, dtype=float)
        self.visits = np.zeros(shape, dtype=np.int64)
        self._order = tie_order(space).astype(np.int64)
        self.eta = None

    def draws(self, steps: int, rng: RngStream) -> tuple[float, np.ndarray]:
        u0 = float(rng.random())
        return u0, rng.random((steps, 3))

    def train(self, env: TrainEnv, steps: int, rng: RngStream) -> Policy:
        if steps < 1:
            raise ValueError("training needs at least one step")
        if self.Q.shape[:3] != (env.storage_bins, env.H, env.demand_bins):
            raise ValueError("environment state space does not match the Q table")
        u0, U = self.draws(steps, rng)
        self.run(env, u0, U)
        self.eta = env.eta
        return self.policy(env.eta)

    def run(self, env: TrainEnv, u0: float, U: np.ndarray) -> tuple[float, int]:
        prof = env.profile
        return q_learning_kernel(
            self.Q, self.visits, self.space.values, self._order, float(env.eta), env.capacity_mwh,
            np.asarray(env.belief, dtype=float), prof.hourly_mean, prof.scale.lower, prof.scale.upper,
            prof.scale.mode, float(env.gamma), float(env.initial_storage), int(env.start_hour),
            self.params.eps_start, self.params.eps_end, env._demand_lo, env._demand_hi, u0, U, MASK_TOL,
            self.params.alpha_power,
        )

    def policy(self, eta: float) -> Policy:
        return Policy.greedy(self.Q, self.space, eta)


def train_q(env: TrainEnv, steps: int, rng: RngStream, params: QParams | None = None,
            learner: QLearner | None = None) -> Policy:
    """Train (or continue training) a tabular learner on ``env`` for ``steps`` steps."""
    if steps < 1:
        raise ValueError("training needs at least one step")
    if learner is None:
        learner = QLearner(env.space, env.H, env.storage_bins, env.demand_bins, params)
    return learner.train(env, steps, rng)
