"""Per-bus aggregator: storage dynamics, action masking, LMP beliefs and reward.

Storage levels and actions are fractions of the aggregator's storage
capacity. Capacity is held in kWh and converted to MWh in exactly one place,
:func:`kwh_to_mwh`, which both the reward and the bid path call.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

# Slack for float round-off when testing 0 <= x + phi <= 1.
MASK_TOL = 1e-9


def kwh_to_mwh(kwh: float) -> float:
    return kwh / 1000.0


@dataclass(frozen=True)
class ActionSpace:
    """Evenly spaced charge/discharge fractions from -1 to 1."""

    step: float = 0.1
    values: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        n = round(1.0 / self.step)
        if n < 1 or abs(n * self.step - 1.0) > 1e-9:
            raise ValueError(f"step must divide 1 evenly, got {self.step}")
        vals = np.arange(-n, n + 1) / n
        object.__setattr__(self, "values", vals)

    @property
    def n(self) -> int:
        return self.values.size

    @property
    def zero_index(self) -> int:
        return self.values.size // 2

    def index(self, a: float) -> int:
        i = int(np.argmin(np.abs(self.values - a)))
        if abs(self.values[i] - a) > 1e-9:
            raise ValueError(f"{a} is not in the action space")
        return i


@dataclass(frozen=True)
class BeliefUpdateParams:
    delta: float = 0.5

    def __post_init__(self):
        if not 0.5 <= self.delta <= 1.0:
            raise ValueError(f"delta must lie in [0.5, 1], got {self.delta}")


def phi(a, eta: float):
    """Realised change in storage level for action ``a``.

    Discharge is scaled by ``eta`` and charge by ``1 / eta``, as in the
    storage transition the market model uses. For ``eta < 1`` this means a
    round trip gains energy; callers that want the usual lossy convention
    must pass ``eta = 1`` or adapt the profiles.
    """
    if not 0.0 < eta <= 1.0:
        raise ValueError(f"eta must lie in (0, 1], got {eta}")
    a_arr = np.asarray(a, dtype=float)
    out = np.where(a_arr < 0, eta * a_arr, a_arr / eta)
    return out if out.ndim else float(out)


def mask_actions(x: float, space: ActionSpace, eta: float) -> np.ndarray:
    """Boolean mask over ``space.values`` of actions keeping storage in [0, 1]."""
    nxt = x + phi(space.values, eta)
    return (nxt >= -MASK_TOL) & (nxt <= 1.0 + MASK_TOL)


def valid_actions(x: float, space: ActionSpace, eta: float) -> np.ndarray:
    return space.values[mask_actions(x, space, eta)]


def step_storage(x: float, a: float, eta: float) -> float:
    nxt = x + phi(a, eta)
    if nxt < -MASK_TOL or nxt > 1.0 + MASK_TOL:
        raise ValueError(f"action {a} from storage level {x} leaves [0, 1]; mask before stepping")
    return min(max(nxt, 0.0), 1.0)


def reward(belief_h: float, capacity_kwh: float, a, eta: float, d):
    """Single-period payoff ``-belief * capacity * (phi(a) + d)`` in dollars."""
    return -belief_h * kwh_to_mwh(capacity_kwh) * (phi(a, eta) + d)


def update_belief(belief: np.ndarray, h: int, k: int, observed: float, delta: float) -> np.ndarray:
    """Move entry ``h`` of the belief toward the observed LMP with step ``delta / sqrt(k + 1)``."""
    if not 0.5 <= delta <= 1.0:
        raise ValueError(f"delta must lie in [0.5, 1], got {delta}")
    if k < 0:
        raise ValueError("day index must be nonnegative")
    out = np.array(belief, dtype=float, copy=True)
    out[h] = out[h] - delta * (out[h] - observed) / math.sqrt(k + 1)
    return out


@dataclass
class AggregatorState:
    bus: int
    storage: float
    capacity_kwh: float
    eta: float
    belief: np.ndarray
    policy: object = None

    def __post_init__(self):
        if not 0.0 <= self.storage <= 1.0:
            raise ValueError("storage level must lie in [0, 1]")
        if not 0.0 < self.eta <= 1.0:
            raise ValueError("eta must lie in (0, 1]")
        self.belief = np.asarray(self.belief, dtype=float).copy()
        if not np.all(np.isfinite(self.belief)):
            raise ValueError("belief entries must be finite")

    @property
    def capacity_mwh(self) -> float:
        return kwh_to_mwh(self.capacity_kwh)
