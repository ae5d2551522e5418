"""Case bundles on disk and a synthetic case generator.

A bundle is one directory holding ``network.json``, ``generators.csv``,
``profiles.csv`` and ``scenario.json``. Bus indices are 0-based. Profiles are
given per step of the day: demand rows as fractions of one 10 kWh storage
unit, renewable rows as capacity factors. A ``*`` in the bus column applies a
row to every bus without its own row.
"""
from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .core import (
    DEFAULT_DEMAND_SCALE, DEFAULT_SOLAR_SCALE, DEFAULT_WIND_SCALE, GENERATOR_KINDS, RENEWABLE_KINDS,
    STREAM_CASEGEN, DemandProfile, Generator, Line, Network, RngStream, TriangularDist,
)

DEMAND_KINDS = ("prosumer", "consumer")
PROFILE_KINDS = DEMAND_KINDS + RENEWABLE_KINDS

DEFAULT_GEN_MIX = {"oil": 4, "biomass": 2, "solar": 17, "wind": 3}

# Cost coefficient ranges for thermal units: (a range, b range).
COST_RANGES = {
    "oil": ((0.0059, 0.0342), (19.98, 19.98)),
    "biomass": ((0.001, 0.002), (28.45, 52.65)),
}
# Nameplate ranges in MW for the synthetic generator; not taken from any real fleet.
P_MAX_RANGES = {"oil": (60.0, 180.0), "biomass": (20.0, 60.0), "solar": (2.0, 12.0), "wind": (10.0, 40.0)}

DEFAULT_SCENARIO = {
    "H": 12,
    "days": 50,
    "seeds": [0, 1, 2, 3, 4],
    "t_train": 3600,
    "storage_kwh": 10.0,
    "eta": 1.0,
    "delta": 0.5,
    "initial_storage": 0.5,
    "action_step": 0.1,
    "renewable_draws": "step",
    "demand_scale": DEFAULT_DEMAND_SCALE.to_list(),
    "solar_scale": DEFAULT_SOLAR_SCALE.to_list(),
    "wind_scale": DEFAULT_WIND_SCALE.to_list(),
    "learner": {"kind": "q", "gamma": 0.95, "eps_start": 0.1, "eps_end": 0.01, "storage_bins": 11,
                "demand_bins": 1},
}


class CaseError(ValueError):
    """A case bundle is missing a file or holds inconsistent data."""


@dataclass
class Case:
    network: Network
    prosumer_profiles: list[DemandProfile]
    consumer_profiles: list[DemandProfile]
    prosumers: np.ndarray
    consumers: np.ndarray
    scenario: dict = field(default_factory=dict)

    @property
    def H(self) -> int:
        return int(self.scenario["H"])

    @property
    def M(self) -> int:
        return self.network.M


def _dist(values) -> TriangularDist:
    lo, hi, mode = (float(v) for v in values)
    return TriangularDist(lo, hi, mode)


def _per_bus(value, M: int, name: str) -> np.ndarray:
    arr = np.asarray(value, dtype=float)
    if arr.ndim == 0:
        return np.full(M, float(arr))
    if arr.shape != (M,):
        raise CaseError(f"{name} needs one entry per bus ({M}), got {arr.size}")
    return arr


def _read_profiles(path: Path, M: int, H: int) -> dict[str, dict]:
    """Rows keyed by kind then bus (int or '*')."""
    out: dict[str, dict] = {k: {} for k in PROFILE_KINDS}
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        expected = ["kind", "bus"] + [f"h{h}" for h in range(H)]
        if header != expected:
            raise CaseError(f"profiles.csv header must be {','.join(expected)}")
        for row in reader:
            if not row:
                continue
            kind, bus = row[0], row[1]
            if kind not in PROFILE_KINDS:
                raise CaseError(f"profiles.csv: unknown kind {kind!r}")
            key = "*" if bus == "*" else int(bus)
            if key != "*" and not 0 <= key < M:
                raise CaseError(f"profiles.csv: bus {key} out of range")
            out[kind][key] = np.array([float(v) for v in row[2:]])
    return out


def _lookup(rows: dict, kind: str, bus: int) -> np.ndarray:
    if bus in rows[kind]:
        return rows[kind][bus]
    if "*" in rows[kind]:
        return rows[kind]["*"]
    raise CaseError(f"profiles.csv has no {kind} row for bus {bus}")


def load_case(path) -> Case:
    root = Path(path)
    for name in ("network.json", "generators.csv", "profiles.csv", "scenario.json"):
        if not (root / name).is_file():
            raise CaseError(f"case bundle {root} is missing {name}")
    scenario = dict(DEFAULT_SCENARIO)
    scenario.update(json.loads((root / "scenario.json").read_text()))
    scenario["learner"] = {**DEFAULT_SCENARIO["learner"], **scenario.get("learner", {})}
    H = int(scenario["H"])
    net = json.loads((root / "network.json").read_text())
    M, L = int(net["M"]), int(net["L"])
    ptdf = np.asarray(net["ptdf"], dtype=float)
    if ptdf.size != L * M:
        raise CaseError(f"network.json: PTDF has {ptdf.size} entries, expected L*M = {L * M}")
    limits = net["flow_limits"]
    if len(limits) != L:
        raise CaseError("network.json: one flow limit per line required")
    ids = net.get("line_ids") or [f"L{l}" for l in range(L)]
    lines = [Line(str(i), float(f)) for i, f in zip(ids, limits)]

    rows = _read_profiles(root / "profiles.csv", M, H)
    scales = {"solar": _dist(scenario["solar_scale"]), "wind": _dist(scenario["wind_scale"])}
    gens = []
    with open(root / "generators.csv", newline="") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames != ["id", "bus", "kind", "cost_a", "cost_b", "p_max"]:
            raise CaseError("generators.csv header must be id,bus,kind,cost_a,cost_b,p_max")
        for r in reader:
            kind = r["kind"]
            if kind not in GENERATOR_KINDS:
                raise CaseError(f"generators.csv: unknown kind {kind!r}")
            bus = int(r["bus"])
            extra = {}
            if kind in RENEWABLE_KINDS:
                extra = {"capacity_factor_profile": _lookup(rows, kind, bus), "capacity_scale": scales[kind]}
            try:
                gens.append(Generator(r["id"], bus, kind, float(r["cost_a"]), float(r["cost_b"]),
                                      float(r["p_max"]), **extra))
            except ValueError as exc:
                raise CaseError(str(exc)) from exc
    try:
        network = Network(M, ptdf.reshape(L, M), lines, gens)
    except ValueError as exc:
        raise CaseError(str(exc)) from exc

    dscale = _dist(scenario["demand_scale"])
    pros = [DemandProfile(_lookup(rows, "prosumer", m), dscale) for m in range(M)]
    cons = [DemandProfile(_lookup(rows, "consumer", m), dscale) for m in range(M)]
    for p in pros + cons:
        if p.H != H:
            raise CaseError(f"demand profiles must have H = {H} entries")
    n_p = _per_bus(scenario.get("prosumers", 0), M, "prosumers").astype(int)
    n_c = _per_bus(scenario.get("consumers", 0), M, "consumers").astype(int)
    if np.any(n_p < 0) or np.any(n_c < 0):
        raise CaseError("prosumer and consumer counts must be nonnegative")
    return Case(network, pros, cons, n_p, n_c, scenario)


def _num(x: float) -> str:
    return repr(float(x))


def write_case(case: Case, path) -> Path:
    root = Path(path)
    try:
        root.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise CaseError(f"cannot create {root}: {exc}") from exc
    net = case.network
    network = {
        "M": net.M,
        "L": net.L,
        "ptdf": [float(v) for v in net.ptdf.reshape(-1)],
        "flow_limits": [float(v) for v in net.flow_limits],
        "line_ids": [ln.id for ln in net.lines],
    }
    (root / "network.json").write_text(json.dumps(network, indent=1) + "\n")
    with open(root / "generators.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["id", "bus", "kind", "cost_a", "cost_b", "p_max"])
        for g in net.generators:
            w.writerow([g.id, g.bus, g.kind, _num(g.cost_a), _num(g.cost_b), _num(g.p_max)])
    H = case.H
    with open(root / "profiles.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["kind", "bus"] + [f"h{h}" for h in range(H)])
        for kind, profs in (("prosumer", case.prosumer_profiles), ("consumer", case.consumer_profiles)):
            for m, p in enumerate(profs):
                w.writerow([kind, m] + [_num(v) for v in p.hourly_mean])
        for kind in RENEWABLE_KINDS:
            by_bus: dict[int, tuple] = {}
            for g in net.generators:
                if g.kind != kind:
                    continue
                prof = tuple(float(v) for v in g.capacity_factor_profile)
                if by_bus.setdefault(g.bus, prof) != prof:
                    raise CaseError(f"{kind} units at bus {g.bus} have different profiles; "
                                    "the bundle format holds one per bus")
            if len(set(by_bus.values())) == 1:
                w.writerow([kind, "*"] + [_num(v) for v in next(iter(by_bus.values()))])
            else:
                for bus in sorted(by_bus):
                    w.writerow([kind, bus] + [_num(v) for v in by_bus[bus]])
    scenario = dict(case.scenario)
    scenario["prosumers"] = [int(v) for v in case.prosumers]
    scenario["consumers"] = [int(v) for v in case.consumers]
    (root / "scenario.json").write_text(json.dumps(scenario, indent=1) + "\n")
    return root


# -- synthetic generator ------------------------------------------------------

# Hourly household load in kWh (hours 0..23) and rooftop PV output of a
# prosumer system in kWh. Synthetic shapes with an evening peak and a midday
# solar trough; not measured data.
_GROSS_LOAD = np.array([0.55, 0.50, 0.48, 0.47, 0.48, 0.55, 0.70, 0.80, 0.75, 0.70, 0.70, 0.72,
                        0.75, 0.78, 0.80, 0.85, 0.95, 1.15, 1.35, 1.40, 1.30, 1.10, 0.85, 0.65])
_HOURS = np.arange(24) + 0.5
_PV = 2.8 * np.clip(np.sin(np.pi * (_HOURS - 6.0) / 13.0), 0.0, None)
_SOLAR_CF = 0.8 * np.clip(np.sin(np.pi * (_HOURS - 6.0) / 13.0), 0.0, None)
_WIND_CF = 0.35 + 0.1 * np.cos(2 * np.pi * (_HOURS - 2.0) / 24.0)


def per_step(hourly: np.ndarray, H: int, reduce: str = "sum") -> np.ndarray:
    """Collapse a 24-hour curve to ``H`` steps (sum for energy, mean for factors)."""
    fine = np.repeat(hourly, 60)  # minute resolution
    chunks = np.array_split(fine, H)
    if reduce == "sum":
        return np.array([c.sum() / 60.0 for c in chunks])
    return np.array([c.mean() for c in chunks])


def synthetic_profiles(H: int, storage_kwh: float = 10.0):
    """(prosumer net demand, consumer demand, solar CF, wind CF) per step."""
    consumer = per_step(_GROSS_LOAD, H) / storage_kwh
    prosumer = per_step(1.1 * _GROSS_LOAD - _PV, H) / storage_kwh
    return prosumer, consumer, per_step(_SOLAR_CF, H, "mean"), per_step(_WIND_CF, H, "mean")


def parse_gen_spec(spec: str) -> dict[str, int]:
    """Parse ``oil:4,biomass:2`` into a count per kind."""
    counts: dict[str, int] = {}
    for part in filter(None, (s.strip() for s in spec.split(","))):
        kind, _, n = part.partition(":")
        if kind not in GENERATOR_KINDS or not n.isdigit():
            raise ValueError(f"bad generator spec entry {part!r}; expected kind:count with kind in {GENERATOR_KINDS}")
        counts[kind] = counts.get(kind, 0) + int(n)
    if not any(counts.get(k, 0) for k in ("oil", "biomass")):
        raise ValueError("generator spec needs at least one oil or biomass unit")
    return counts


def generate_case(buses: int, gens: dict[str, int] | None = None, seed: int = 0, H: int = 12,
                  load_factor: float = 0.8) -> Case:
    """Build a random hub-spoke case that dispatch can always serve.

    Bus 0 is the hub and every other bus hangs off it by its own line, so the
    PTDF is the identity on spokes. Line limits cover the spoke's worst-case
    import plus a random share (50-100%) of its generation for export. Household
    counts are sized so the worst-case aggregate bid stays nonnegative and peak
    demand stays below ``load_factor`` of deliverable thermal capacity.
    """
    if buses < 1:
        raise ValueError("need at least one bus")
    gens = dict(DEFAULT_GEN_MIX if gens is None else gens)
    rng = RngStream(seed, (STREAM_CASEGEN,)).generator
    scen = json.loads(json.dumps(DEFAULT_SCENARIO))
    scen["H"] = H
    eta = scen["eta"]
    pros_mean, cons_mean, solar_cf, wind_cf = synthetic_profiles(H, scen["storage_kwh"])

    generators = []
    for kind in GENERATOR_KINDS:
        for k in range(gens.get(kind, 0)):
            bus = int(rng.integers(buses))
            p_max = float(np.round(rng.uniform(*P_MAX_RANGES[kind]), 3))
            if kind in COST_RANGES:
                (a_lo, a_hi), (b_lo, b_hi) = COST_RANGES[kind]
                a = float(np.round(rng.uniform(a_lo, a_hi), 6))
                b = float(np.round(rng.uniform(b_lo, b_hi), 4)) if b_hi > b_lo else b_lo
                generators.append(Generator(f"{kind}{k}", bus, kind, a, b, p_max))
            else:
                cf = solar_cf if kind == "solar" else wind_cf
                scale = DEFAULT_SOLAR_SCALE if kind == "solar" else DEFAULT_WIND_SCALE
                generators.append(Generator(f"{kind}{k}", bus, kind, 0.0, 0.0, p_max, cf, scale))

    thermal = np.zeros(buses)
    total_cap = np.zeros(buses)
    for g in generators:
        total_cap[g.bus] += g.p_max
        if not g.renewable:
            thermal[g.bus] += g.p_max
    export_share = rng.uniform(0.5, 1.0, buses)
    deliverable = thermal[0] + float(np.sum(np.minimum(thermal[1:], export_share[1:] * total_cap[1:])))

    # Households per bus: random weights, prosumer count capped so that even a
    # full simultaneous discharge keeps the system bid nonnegative.
    weights = rng.dirichlet(np.full(buses, 2.0))
    d = DEFAULT_DEMAND_SCALE
    cons_min = cons_mean.min() * d.lower
    pros_min = min(pros_mean.min() * d.upper, pros_mean.min() * d.lower)
    ratio = 0.9 * cons_min / (eta - pros_min)  # prosumers per consumer
    step_hours = 24.0 / H
    kwh = scen["storage_kwh"]
    peak_per_consumer = (cons_mean.max() * d.upper + ratio * (pros_mean.max() * d.upper + 1.0 / eta)) * kwh
    peak_mw_per_consumer = peak_per_consumer / 1000.0 / step_hours
    total_consumers = load_factor * deliverable / peak_mw_per_consumer
    consumers = np.floor(weights * total_consumers).astype(int)
    prosumers = np.floor(consumers * ratio).astype(int)

    # Spoke limits: import of the bus's own peak demand is always possible.
    peak_bus = consumers * peak_mw_per_consumer
    lines = []
    ptdf = np.zeros((buses - 1, buses))
    for m in range(1, buses):
        ptdf[m - 1, m] = 1.0
        limit = peak_bus[m] + export_share[m] * total_cap[m]
        lines.append(Line(f"L{m - 1}", float(np.round(limit, 3) + 1.0)))
    network = Network(buses, ptdf, lines, generators)
    scen["prosumers"] = prosumers.tolist()
    scen["consumers"] = consumers.tolist()
    pros = [DemandProfile(pros_mean, DEFAULT_DEMAND_SCALE) for _ in range(buses)]
    cons = [DemandProfile(cons_mean, DEFAULT_DEMAND_SCALE) for _ in range(buses)]
    return Case(network, pros, cons, prosumers, consumers, scen)
