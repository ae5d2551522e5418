"""Training-phase environment: frozen LMP belief, sampled prosumer demand, storage dynamics."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..aggregator import ActionSpace, kwh_to_mwh, mask_actions, reward, step_storage
from ..core import DemandProfile, RngStream, sample_demand

DEFAULT_STORAGE_BINS = 11


@dataclass(frozen=True)
class StateKey:
    storage_bin: int
    hour: int
    demand_bin: int = 0


@dataclass(frozen=True)
class EnvState:
    """Storage level, hour of day and the demand drawn for the current step."""

    storage: float
    hour: int
    demand: float


def storage_bin(x: float, bins: int) -> int:
    return min(int(x * bins), bins - 1)


def bin_midpoint(b: int, bins: int) -> float:
    """Representative storage level of bin ``b``.

    This is ``b / (bins - 1)``, the one level of the evenly spaced grid
    ``0, 1/(bins-1), ..., 1`` that falls inside the bin. With the default
    11 bins and 0.1 action step, storage driven by grid actions therefore
    sits exactly on representatives and masks are exact.
    """
    if bins == 1:
        return 0.5
    return b / (bins - 1)


@dataclass
class TrainEnv:
    """One aggregator's environment for a training phase.

    The belief is copied and made read-only at construction; it stays fixed
    for the whole phase. ``demand_bins > 1`` adds a demand bucket to the
    state key.
    """

    belief: np.ndarray
    initial_storage: float
    profile: DemandProfile
    eta: float
    capacity_kwh: float
    space: ActionSpace = field(default_factory=ActionSpace)
    gamma: float = 0.95
    horizon: int = 3600
    start_hour: int = 0
    storage_bins: int = DEFAULT_STORAGE_BINS
    demand_bins: int = 1

    def __post_init__(self):
        b = np.array(self.belief, dtype=float, copy=True)
        b.setflags(write=False)
        self.belief = b
        if b.size != self.profile.H:
            raise ValueError("belief and demand profile must have the same number of hours")
        if not 0.0 < self.gamma < 1.0:
            raise ValueError("gamma must lie in (0, 1)")
        if not 0.0 <= self.initial_storage <= 1.0:
            raise ValueError("initial storage must lie in [0, 1]")
        if self.horizon < 1:
            raise ValueError("horizon must be at least 1")
        lo, hi = self.profile.bounds()
        self._demand_lo = lo
        self._demand_hi = hi

    @property
    def H(self) -> int:
        return self.belief.size

    @property
    def capacity_mwh(self) -> float:
        return kwh_to_mwh(self.capacity_kwh)

    def demand_bin(self, d: float) -> int:
        if self.demand_bins <= 1 or self._demand_hi <= self._demand_lo:
            return 0
        frac = (d - self._demand_lo) / (self._demand_hi - self._demand_lo)
        return min(max(int(frac * self.demand_bins), 0), self.demand_bins - 1)

    def key(self, state: EnvState) -> StateKey:
        return StateKey(storage_bin(state.storage, self.storage_bins), state.hour, self.demand_bin(state.demand))

    def mask(self, state: EnvState) -> np.ndarray:
        return mask_actions(state.storage, self.space, self.eta)

    def reset(self, rng: RngStream) -> EnvState:
        h = self.start_hour
        return EnvState(self.initial_storage, h, float(sample_demand(self.profile, h, rng)))


def env_step(env: TrainEnv, state: EnvState, a: float, rng: RngStream) -> tuple[EnvState, float]:
    """Apply action ``a``: pay for the step at the believed price, move storage, advance the hour."""
    r = reward(env.belief[state.hour], env.capacity_kwh, a, env.eta, state.demand)
    x = step_storage(state.storage, a, env.eta)
    h = (state.hour + 1) % env.H
    d = float(sample_demand(env.profile, h, rng))
    return EnvState(x, h, d), float(r)


__all__ = ["StateKey", "EnvState", "TrainEnv", "env_step", "storage_bin", "bin_midpoint"]
