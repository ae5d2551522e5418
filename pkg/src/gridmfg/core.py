"""Static market description, stochastic profiles, clock arithmetic and seeded random streams.

Bus indices are 0-based throughout the package. Energy quantities from the
demand side are expressed as fractions of one prosumer's storage capacity;
generator quantities are MW and prices $/MWh.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

RENEWABLE_KINDS = ("solar", "wind")
THERMAL_KINDS = ("oil", "biomass")
GENERATOR_KINDS = THERMAL_KINDS + RENEWABLE_KINDS

# Stream families for RngStream.spawn; the index inside a family is the bus,
# seed or learner number.
STREAM_LEARNER = 1
STREAM_PROSUMERS = 2
STREAM_CONSUMERS = 3
STREAM_ACTIONS = 4
STREAM_RENEWABLES = 5
STREAM_CASEGEN = 6


@dataclass(frozen=True)
class TriangularDist:
    """Triangular distribution with lower limit, upper limit and mode."""

    lower: float
    upper: float
    mode: float

    def __post_init__(self):
        if not (self.lower <= self.mode <= self.upper):
            raise ValueError(
                f"triangular distribution needs lower <= mode <= upper, got "
                f"({self.lower}, {self.upper}, {self.mode})"
            )

    @property
    def mean(self) -> float:
        return (self.lower + self.upper + self.mode) / 3.0

    def ppf(self, u):
        """Inverse CDF, vectorised over ``u`` in [0, 1]."""
        a, b, c = self.lower, self.upper, self.mode
        u = np.asarray(u, dtype=float)
        width = b - a
        if width == 0.0:
            return np.full_like(u, a) if u.ndim else float(a)
        split = (c - a) / width
        left = a + np.sqrt(u * width * (c - a))
        right = b - np.sqrt((1.0 - u) * width * (b - c))
        out = np.where(u < split, left, right)
        return out if out.ndim else float(out)

    def to_list(self) -> list[float]:
        return [self.lower, self.upper, self.mode]


DEFAULT_DEMAND_SCALE = TriangularDist(0.9, 1.1, 1.0)
DEFAULT_SOLAR_SCALE = TriangularDist(0.8, 1.2, 1.0)
DEFAULT_WIND_SCALE = TriangularDist(0.5, 1.5, 1.0)


class RngStream:
    """A numpy Generator tied to a (seed, stream id) pair.

    Streams are derived with ``SeedSequence`` spawn keys, so the draws of one
    stream never depend on how many other streams exist.
    """

    def __init__(self, seed: int, stream: tuple[int, ...] = ()):
        self.seed = int(seed)
        self.stream = tuple(int(s) for s in stream)
        ss = np.random.SeedSequence(entropy=self.seed, spawn_key=self.stream)
        self.generator = np.random.Generator(np.random.PCG64(ss))

    def spawn(self, *key: int) -> "RngStream":
        return RngStream(self.seed, self.stream + tuple(key))

    def random(self, size=None):
        return self.generator.random(size)

    def __repr__(self):
        return f"RngStream(seed={self.seed}, stream={self.stream})"


def sample_triangular(dist: TriangularDist, rng: RngStream, size=None):
    """Draw from ``dist`` by inverse-CDF sampling, one uniform per sample."""
    return dist.ppf(rng.random(size))


def clock_indices(t: int, H: int) -> tuple[int, int]:
    """Return (hour-of-day, day) for global step ``t`` with ``H`` steps per day."""
    if t < 0 or H < 1:
        raise ValueError(f"need t >= 0 and H >= 1, got t={t}, H={H}")
    return t % H, t // H


@dataclass
class Clock:
    steps_per_day: int = 12
    t: int = 0

    def __post_init__(self):
        if self.steps_per_day < 1:
            raise ValueError("steps_per_day must be positive")

    @property
    def hour(self) -> int:
        return self.t % self.steps_per_day

    @property
    def day(self) -> int:
        return self.t // self.steps_per_day

    def tick(self) -> None:
        self.t += 1


def fit_profile(values: Sequence[float], H: int) -> np.ndarray:
    """Coerce an hourly profile to ``H`` entries.

    A profile with ``2 * H`` entries (e.g. 24 hourly values for 2-hour steps)
    is downsampled by averaging consecutive pairs.
    """
    arr = np.asarray(values, dtype=float)
    if arr.shape == (H,):
        return arr.copy()
    if arr.shape == (2 * H,):
        return arr.reshape(H, 2).mean(axis=1)
    raise ValueError(f"profile has {arr.size} entries, expected {H} or {2 * H}")


@dataclass(frozen=True)
class DemandProfile:
    """Mean net demand per hour of day as a fraction of one storage unit."""

    hourly_mean: np.ndarray
    scale: TriangularDist = DEFAULT_DEMAND_SCALE

    def __post_init__(self):
        arr = np.asarray(self.hourly_mean, dtype=float)
        if arr.ndim != 1 or arr.size == 0 or not np.all(np.isfinite(arr)):
            raise ValueError("hourly_mean must be a non-empty finite vector")
        object.__setattr__(self, "hourly_mean", arr)

    @property
    def H(self) -> int:
        return self.hourly_mean.size

    def bounds(self) -> tuple[float, float]:
        """Smallest and largest value any draw can take."""
        lo = np.minimum(self.hourly_mean * self.scale.lower, self.hourly_mean * self.scale.upper)
        hi = np.maximum(self.hourly_mean * self.scale.lower, self.hourly_mean * self.scale.upper)
        return float(lo.min()), float(hi.max())


def sample_demand(profile: DemandProfile, h: int, rng: RngStream, size=None):
    return profile.hourly_mean[h] * sample_triangular(profile.scale, rng, size)


@dataclass(frozen=True)
class Line:
    id: str
    flow_limit: float

    def __post_init__(self):
        if not self.flow_limit >= 0:
            raise ValueError(f"line {self.id}: flow limit must be nonnegative")


@dataclass(frozen=True)
class Generator:
    """A generator with cost ``cost_a * p**2 + cost_b * p``.

    Renewables carry an hourly capacity-factor profile and a triangular
    scaling distribution; thermal units always run at capacity factor 1.
    """

    id: str
    bus: int
    kind: str
    cost_a: float
    cost_b: float
    p_max: float
    capacity_factor_profile: np.ndarray | None = None
    capacity_scale: TriangularDist | None = None

    def __post_init__(self):
        if self.kind not in GENERATOR_KINDS:
            raise ValueError(f"generator {self.id}: unknown kind {self.kind!r}")
        if self.cost_a < 0 or self.cost_b < 0 or self.p_max < 0:
            raise ValueError(f"generator {self.id}: costs and p_max must be nonnegative")
        if self.renewable:
            if self.cost_a != 0 or self.cost_b != 0:
                raise ValueError(f"generator {self.id}: renewable units have zero cost")
            if self.capacity_factor_profile is None:
                raise ValueError(f"generator {self.id}: renewable needs a capacity-factor profile")
            prof = np.asarray(self.capacity_factor_profile, dtype=float)
            if np.any(prof < 0) or np.any(prof > 1):
                raise ValueError(f"generator {self.id}: capacity factors must lie in [0, 1]")
            object.__setattr__(self, "capacity_factor_profile", prof)
            if self.capacity_scale is None:
                default = DEFAULT_SOLAR_SCALE if self.kind == "solar" else DEFAULT_WIND_SCALE
                object.__setattr__(self, "capacity_scale", default)

    @property
    def renewable(self) -> bool:
        return self.kind in RENEWABLE_KINDS

    def marginal_cost(self, p):
        return 2.0 * self.cost_a * np.asarray(p, dtype=float) + self.cost_b

    def cost(self, p):
        p = np.asarray(p, dtype=float)
        return self.cost_a * p * p + self.cost_b * p


def effective_capacity(gen: Generator, h: int, rng: RngStream | None = None,
                       scale_draw: float | None = None) -> float:
    """Available MW of ``gen`` at hour ``h``.

    ``scale_draw`` bypasses the random scaling factor (used when one draw is
    shared across a day).
    """
    if not gen.renewable:
        return float(gen.p_max)
    if scale_draw is None:
        scale_draw = sample_triangular(gen.capacity_scale, rng)
    cap = gen.p_max * gen.capacity_factor_profile[h] * scale_draw
    return float(min(max(cap, 0.0), gen.p_max))


def mean_capacity(gen: Generator, h: int) -> float:
    if not gen.renewable:
        return float(gen.p_max)
    cap = gen.p_max * gen.capacity_factor_profile[h] * gen.capacity_scale.mean
    return float(min(max(cap, 0.0), gen.p_max))


@dataclass(frozen=True)
class Network:
    """Buses, PTDF-modelled lines and generators.

    ``ptdf`` has one row per line and one column per bus; entries are the
    flow on the line per MW injected at the bus and withdrawn at the hub.
    """

    bus_count: int
    ptdf: np.ndarray
    lines: tuple[Line, ...]
    generators: tuple[Generator, ...]
    bus_generators: tuple[tuple[int, ...], ...] = field(init=False)

    def __post_init__(self):
        if self.bus_count < 1:
            raise ValueError("network needs at least one bus")
        ptdf = np.asarray(self.ptdf, dtype=float).reshape(len(self.lines), self.bus_count)
        if not np.all(np.isfinite(ptdf)):
            raise ValueError("PTDF entries must be finite")
        object.__setattr__(self, "ptdf", ptdf)
        object.__setattr__(self, "lines", tuple(self.lines))
        object.__setattr__(self, "generators", tuple(self.generators))
        groups: list[list[int]] = [[] for _ in range(self.bus_count)]
        for g, gen in enumerate(self.generators):
            if not 0 <= gen.bus < self.bus_count:
                raise ValueError(f"generator {gen.id} sits at bus {gen.bus}, outside [0, {self.bus_count})")
            groups[gen.bus].append(g)
        object.__setattr__(self, "bus_generators", tuple(tuple(x) for x in groups))

    @property
    def M(self) -> int:
        return self.bus_count

    @property
    def L(self) -> int:
        return len(self.lines)

    @property
    def G(self) -> int:
        return len(self.generators)

    @property
    def flow_limits(self) -> np.ndarray:
        return np.array([ln.flow_limit for ln in self.lines], dtype=float)

    @property
    def gen_bus(self) -> np.ndarray:
        return np.array([g.bus for g in self.generators], dtype=int)

    @property
    def p_max(self) -> np.ndarray:
        return np.array([g.p_max for g in self.generators], dtype=float)

    def capacities(self, h: int, rng: RngStream | None = None,
                   scale_draws: np.ndarray | None = None) -> np.ndarray:
        """Effective capacity of every generator at hour ``h``."""
        out = np.empty(self.G)
        for g, gen in enumerate(self.generators):
            draw = None if scale_draws is None else scale_draws[g]
            out[g] = effective_capacity(gen, h, rng, draw)
        return out

    def mean_capacities(self, h: int) -> np.ndarray:
        return np.array([mean_capacity(gen, h) for gen in self.generators])

    def flows(self, p: np.ndarray, demand: np.ndarray) -> np.ndarray:
        injection = np.bincount(self.gen_bus, weights=p, minlength=self.M) - demand
        return self.ptdf @ injection


def is_partition(groups: Sequence[Sequence[int]], n: int) -> bool:
    seen = [x for grp in groups for x in grp]
    return len(seen) == n and set(seen) == set(range(n))


def triangular_cdf(dist: TriangularDist, x):
    """Analytic CDF; kept separate from the sampler for cross-checking."""
    a, b, c = dist.lower, dist.upper, dist.mode
    x = np.asarray(x, dtype=float)
    if b == a:
        return (x >= a).astype(float)
    out = np.zeros_like(x)
    left = (x > a) & (x <= c)
    right = (x > c) & (x < b)
    if c > a:
        out[left] = (x[left] - a) ** 2 / ((b - a) * (c - a))
    if b > c:
        out[right] = 1.0 - (b - x[right]) ** 2 / ((b - a) * (b - c))
    out[x >= b] = 1.0
    return out


def hours_per_step(H: int) -> float:
    return 24.0 / H


__all__ = [
    "TriangularDist", "RngStream", "Clock", "DemandProfile", "Line", "Generator", "Network",
    "sample_triangular", "clock_indices", "sample_demand", "effective_capacity", "mean_capacity",
    "fit_profile", "is_partition", "triangular_cdf", "hours_per_step",
]
