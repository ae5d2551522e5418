"""Two-phase market loop: per-bus training, actual play, dispatch and belief updates."""
from __future__ import annotations

import csv
import json
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, fields, replace
from pathlib import Path

import numpy as np

from .aggregator import ActionSpace, kwh_to_mwh, mask_actions, phi, update_belief
from .case import Case, load_case
from .core import (
    STREAM_ACTIONS, STREAM_CONSUMERS, STREAM_LEARNER, STREAM_PROSUMERS, STREAM_RENEWABLES,
    RngStream, clock_indices, hours_per_step,
)
from .dispatch import DEFAULT_SEGMENTS, AggregateSupplyError, linearize_costs, solve_dispatch
from .learning.env import TrainEnv, storage_bin
from .learning.pg import PgLearner, PgParams
from .learning.policy import Policy, restricted, total_variation
from .learning.qlearning import QLearner, QParams

RUNLOG_COLUMNS = ("t", "day", "hour", "bus", "bid_mwh", "lmp", "hub_price", "storage_mean",
                  "action_mean", "reward", "status")


class InfeasibleDispatchError(RuntimeError):
    def __init__(self, t: int, bids_mwh: np.ndarray, status: str):
        self.t = t
        self.bids = np.asarray(bids_mwh, dtype=float)
        super().__init__(f"dispatch {status} at t={t}; bids (MWh) = {self.bids.tolist()}")


@dataclass
class ScenarioConfig:
    case: Case
    days: int = 50
    seeds: tuple[int, ...] = (0, 1, 2, 3, 4)
    t_train: int = 3600
    delta: np.ndarray | float = 0.5
    learner: str = "q"
    learner_params: dict = field(default_factory=dict)
    action_step: float = 0.1
    prosumers: np.ndarray | None = None
    consumers: np.ndarray | None = None
    storage: bool = True
    storage_kwh: float = 10.0
    eta: float = 1.0
    initial_storage: float = 0.5
    renewable_draws: str = "step"
    segments: int = DEFAULT_SEGMENTS
    threads: int | None = None

    def __post_init__(self):
        M = self.case.M
        self.delta = np.broadcast_to(np.asarray(self.delta, dtype=float), (M,)).copy()
        if self.prosumers is None:
            self.prosumers = self.case.prosumers
        if self.consumers is None:
            self.consumers = self.case.consumers
        self.prosumers = np.broadcast_to(np.asarray(self.prosumers, dtype=int), (M,)).copy()
        self.consumers = np.broadcast_to(np.asarray(self.consumers, dtype=int), (M,)).copy()
        self.seeds = tuple(int(s) for s in self.seeds)
        if self.days < 1:
            raise ValueError("days must be at least 1")
        if self.t_train < 1:
            raise ValueError("t_train must be at least 1")
        if np.any(self.prosumers < 0) or np.any(self.consumers < 0):
            raise ValueError("prosumer and consumer counts must be nonnegative")
        if self.prosumers.sum() + self.consumers.sum() <= 0:
            raise ValueError("the market needs at least one household")
        if np.any((self.delta < 0.5) | (self.delta > 1.0)):
            raise ValueError("delta must lie in [0.5, 1] for every bus")
        if self.learner not in ("q", "pg"):
            raise ValueError(f"unknown learner {self.learner!r}; expected 'q' or 'pg'")
        if self.renewable_draws not in ("step", "day"):
            raise ValueError("renewable_draws must be 'step' or 'day'")
        if not 0.0 <= self.initial_storage <= 1.0:
            raise ValueError("initial storage must lie in [0, 1]")

    @property
    def H(self) -> int:
        return self.case.H

    @property
    def M(self) -> int:
        return self.case.M

    @classmethod
    def from_case(cls, case: Case | str | os.PathLike, **overrides) -> "ScenarioConfig":
        """Config from a bundle's ``scenario.json``; keyword arguments win."""
        if not isinstance(case, Case):
            case = load_case(case)
        s = case.scenario
        learner = dict(s.get("learner", {}))
        kind = learner.pop("kind", "q")
        kw = dict(days=int(s.get("days", 50)), seeds=tuple(s.get("seeds", (0,))),
                  t_train=int(s.get("t_train", 3600)), delta=s.get("delta", 0.5), learner=kind,
                  learner_params=learner, action_step=float(s.get("action_step", 0.1)),
                  storage_kwh=float(s.get("storage_kwh", 10.0)), eta=float(s.get("eta", 1.0)),
                  initial_storage=float(s.get("initial_storage", 0.5)),
                  renewable_draws=s.get("renewable_draws", "step"))
        kw.update(overrides)
        return cls(case=case, **kw)


@dataclass
class RunLog:
    """Per-step records for one seed; rows are appended in step order."""

    H: int
    M: int
    actions: np.ndarray  # action grid
    bid_mwh: list = field(default_factory=list)
    lmp: list = field(default_factory=list)
    hub: list = field(default_factory=list)
    storage_mean: list = field(default_factory=list)
    action_mean: list = field(default_factory=list)
    reward: list = field(default_factory=list)
    status: list = field(default_factory=list)
    played: list = field(default_factory=list)  # (M, A) action distribution used at each step
    beliefs: list = field(default_factory=list)  # (M, H) after each completed day; entry 0 is initial

    def append(self, bid, lmp, hub, storage, action, reward, status, played) -> None:
        self.bid_mwh.append(np.asarray(bid, dtype=float))
        self.lmp.append(np.asarray(lmp, dtype=float))
        self.hub.append(float(hub))
        self.storage_mean.append(np.asarray(storage, dtype=float))
        self.action_mean.append(np.asarray(action, dtype=float))
        self.reward.append(np.asarray(reward, dtype=float))
        self.status.append(str(status))
        self.played.append(np.asarray(played, dtype=float))

    @property
    def T(self) -> int:
        return len(self.hub)

    @property
    def days(self) -> int:
        return self.T // self.H

    def array(self, name: str) -> np.ndarray:
        return np.array(getattr(self, name))

    def hub_by_day(self) -> np.ndarray:
        """Hub prices of complete days, shape (days, H)."""
        d = self.days
        return np.array(self.hub[: d * self.H]).reshape(d, self.H)

    def rows(self, start: int = 0, stop: int | None = None):
        stop = self.T if stop is None else stop
        for t in range(start, stop):
            hour, day = clock_indices(t, self.H)
            for m in range(self.M):
                yield (t, day, hour, m, repr(float(self.bid_mwh[t][m])), repr(float(self.lmp[t][m])),
                       repr(self.hub[t]), repr(float(self.storage_mean[t][m])),
                       repr(float(self.action_mean[t][m])), repr(float(self.reward[t][m])), self.status[t])

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(RUNLOG_COLUMNS)
            w.writerows(self.rows())

    def beliefs_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["day", "bus"] + [f"h{h}" for h in range(self.H)])
            for d, b in enumerate(self.beliefs):
                for m in range(self.M):
                    w.writerow([d, m] + [repr(float(v)) for v in b[m]])


def read_runlog(path) -> dict[str, np.ndarray]:
    """Load ``runlog.csv`` into column arrays (``status`` stays text)."""
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None:
            raise ValueError(f"{path} is empty")
        missing = [c for c in RUNLOG_COLUMNS if c not in reader.fieldnames]
        if missing:
            raise ValueError(f"{path} lacks columns {missing}; has {reader.fieldnames}")
        rows = list(reader)
    if not rows:
        raise ValueError(f"{path} has no records")
    out = {}
    for c in RUNLOG_COLUMNS:
        vals = [r[c] for r in rows]
        if c == "status":
            out[c] = np.array(vals)
        elif c in ("t", "day", "hour", "bus"):
            out[c] = np.array(vals, dtype=int)
        else:
            out[c] = np.array(vals, dtype=float)
    return out


def runlog_from_columns(cols: dict[str, np.ndarray]) -> RunLog:
    """Rebuild a RunLog (without beliefs or played distributions) from CSV columns."""
    M = int(cols["bus"].max()) + 1
    T = int(cols["t"].max()) + 1
    H = int(cols["hour"].max()) + 1
    log = RunLog(H, M, np.zeros(0))
    order = np.lexsort((cols["bus"], cols["t"]))
    grid = {c: cols[c][order].reshape(T, M) for c in ("bid_mwh", "lmp", "storage_mean", "action_mean", "reward")}
    hub = cols["hub_price"][order].reshape(T, M)[:, 0]
    status = cols["status"][order].reshape(T, M)[:, 0]
    for t in range(T):
        log.append(grid["bid_mwh"][t], grid["lmp"][t], hub[t], grid["storage_mean"][t],
                   grid["action_mean"][t], grid["reward"][t], status[t], np.zeros((M, 0)))
    return log


def _make_learner(cfg: ScenarioConfig, space: ActionSpace, bus: int, seed: int):
    lp = dict(cfg.learner_params)
    bins = int(lp.pop("storage_bins", 11))
    dbins = int(lp.pop("demand_bins", 1))
    lp.pop("gamma", None)
    if cfg.learner == "q":
        names = {f.name for f in fields(QParams)}
        return QLearner(space, cfg.H, bins, dbins, QParams(**{k: v for k, v in lp.items() if k in names}))
    names = {f.name for f in fields(PgParams)}
    return PgLearner(space, cfg.H, bins, dbins, PgParams(**{k: v for k, v in lp.items() if k in names}),
                     RngStream(seed, (STREAM_LEARNER, bus)))


def initial_beliefs(cfg: ScenarioConfig) -> np.ndarray:
    """Per-bus LMPs of a storage-free dispatch at mean demand and mean renewable output."""
    case = cfg.case
    net = case.network
    step = hours_per_step(cfg.H)
    x_mwh = kwh_to_mwh(cfg.storage_kwh)
    out = np.empty((cfg.M, cfg.H))
    for h in range(cfg.H):
        D = np.array([cfg.prosumers[m] * case.prosumer_profiles[m].hourly_mean[h] * case.prosumer_profiles[m].scale.mean
                      + cfg.consumers[m] * case.consumer_profiles[m].hourly_mean[h] * case.consumer_profiles[m].scale.mean
                      for m in range(cfg.M)])
        costs = linearize_costs(net, net.mean_capacities(h), cfg.segments)
        res = solve_dispatch(net, np.maximum(D * x_mwh, 0.0) / step, costs)
        if not res.optimal:
            raise InfeasibleDispatchError(h, D * x_mwh, res.status)
        out[:, h] = res.lmp
    return out


def _worker_count(cfg: ScenarioConfig) -> int:
    cap = cfg.threads
    env = os.environ.get("GRIDMFG_THREADS")
    if cap is None and env:
        cap = int(env)
    cap = cap or (os.cpu_count() or 1)
    return max(1, min(cap, cfg.M))


def actual_play(t: int, cfg: ScenarioConfig, storage: np.ndarray, policies: list, rng: RngStream):
    """Sample demands and actions for every household and form the bus bids.

    Returns (bid in storage units per bus, mean action, mean phi, mean prosumer
    demand, played action distribution per bus).
    """
    case = cfg.case
    space = ActionSpace(cfg.action_step)
    h, _ = clock_indices(t, cfg.H)
    M = cfg.M
    D = np.zeros(M)
    a_mean = np.zeros(M)
    phi_mean = np.zeros(M)
    d_mean = np.zeros(M)
    played = np.zeros((M, space.n))
    played[:, space.zero_index] = 1.0
    for m in range(M):
        n_p, n_c = int(cfg.prosumers[m]), int(cfg.consumers[m])
        if n_p:
            prof = case.prosumer_profiles[m]
            d = prof.hourly_mean[h] * prof.scale.ppf(rng.spawn(STREAM_PROSUMERS, m).random(n_p))
            if cfg.storage:
                pol = policies[m]
                mask = mask_actions(storage[m], space, cfg.eta)
                b = storage_bin(storage[m], pol.storage_bins)
                if pol.demand_bins > 1:
                    lo, hi = prof.bounds()
                    span = hi - lo
                    db = np.zeros(n_p, dtype=int) if span <= 0 else np.clip(
                        ((d - lo) / span * pol.demand_bins).astype(int), 0, pol.demand_bins - 1)
                else:
                    db = np.zeros(n_p, dtype=int)
                rows = np.stack([restricted(pol.probs[b, h, k], mask, space) for k in range(pol.demand_bins)])
                probs = rows[db]
                played[m] = probs.mean(axis=0)
                cdf = np.cumsum(probs, axis=1)
                cdf[:, -1] = 1.0
                u = rng.spawn(STREAM_ACTIONS, m).random(n_p)
                idx = (u[:, None] >= cdf).sum(axis=1)
                # searchsorted semantics per row; guard round-off onto zero-mass slots
                bad = probs[np.arange(n_p), idx] == 0
                if np.any(bad):
                    idx[bad] = np.argmax(probs[bad] > 0, axis=1)
                a = space.values[idx]
            else:
                a = np.zeros(n_p)
            ph = phi(a, cfg.eta)
            a_mean[m] = a.mean()
            phi_mean[m] = ph.mean()
            d_mean[m] = d.mean()
            D[m] += d.sum() + ph.sum()
        if n_c:
            prof = case.consumer_profiles[m]
            D[m] += (prof.hourly_mean[h] * prof.scale.ppf(rng.spawn(STREAM_CONSUMERS, m).random(n_c))).sum()
    return D, a_mean, phi_mean, d_mean, played


def run_scenario(cfg: ScenarioConfig, seed: int, out_dir=None, initial_belief: np.ndarray | None = None) -> RunLog:
    """Run Algorithm-1 style market days for one seed; optionally stream CSVs into ``out_dir``."""
    case = cfg.case
    net = case.network
    H, M = cfg.H, cfg.M
    space = ActionSpace(cfg.action_step)
    lp = cfg.learner_params
    gamma = float(lp.get("gamma", 0.95))
    bins = int(lp.get("storage_bins", 11))
    dbins = int(lp.get("demand_bins", 1))
    x_mwh = kwh_to_mwh(cfg.storage_kwh)
    step_hours = hours_per_step(H)
    root = RngStream(seed)

    belief = np.array(initial_beliefs(cfg) if initial_belief is None else initial_belief, dtype=float)
    if belief.shape != (M, H):
        raise ValueError(f"initial belief must have shape ({M}, {H})")
    storage = np.full(M, cfg.initial_storage, dtype=float)
    active = [cfg.storage and cfg.prosumers[m] > 0 for m in range(M)]
    learners = [_make_learner(cfg, space, m, seed) if active[m] else None for m in range(M)]
    policies: list[Policy | None] = [None] * M
    log = RunLog(H, M, space.values.copy())
    log.beliefs.append(belief.copy())

    writer = _DayWriter(out_dir, log) if out_dir is not None else None
    pool = ThreadPoolExecutor(_worker_count(cfg)) if any(active) else None
    day_draws = None
    try:
        for t in range(cfg.days * H):
            h, k = clock_indices(t, H)

            def train(m):
                env = TrainEnv(belief[m], float(storage[m]), case.prosumer_profiles[m], cfg.eta, cfg.storage_kwh,
                               space, gamma, cfg.t_train, h, bins, dbins)
                return learners[m].train(env, cfg.t_train, root.spawn(STREAM_LEARNER, m, t))

            if pool is not None:
                todo = [m for m in range(M) if active[m]]
                for m, pol in zip(todo, pool.map(train, todo)):
                    policies[m] = pol

            D, a_mean, phi_mean, d_mean, played = actual_play(t, cfg, storage, policies, root.spawn(0, t))
            bids = D * x_mwh
            if bids.sum() < -1e-9:
                raise AggregateSupplyError(
                    f"t={t}: aggregate bid {bids.sum():.6g} MWh is negative; bids = {bids.tolist()}")

            if cfg.renewable_draws == "step":
                u = root.spawn(STREAM_RENEWABLES, t).random(net.G)
            else:
                if h == 0 or day_draws is None:
                    day_draws = root.spawn(STREAM_RENEWABLES, k).random(net.G)
                u = day_draws
            scale = np.array([g.capacity_scale.ppf(u[i]) if g.renewable else 1.0
                              for i, g in enumerate(net.generators)])
            caps = net.capacities(h, scale_draws=scale)
            res = solve_dispatch(net, bids / step_hours, linearize_costs(net, caps, cfg.segments))
            if not res.optimal:
                raise InfeasibleDispatchError(t, bids, res.status)

            reward = -res.lmp * x_mwh * (phi_mean + d_mean)
            log.append(bids, res.lmp, res.hub_price, storage, a_mean, reward, res.status, played)
            storage = np.clip(storage + phi_mean, 0.0, 1.0)
            for m in range(M):
                belief[m] = update_belief(belief[m], h, k, float(res.lmp[m]), float(cfg.delta[m]))
            if h == H - 1:
                log.beliefs.append(belief.copy())
                if writer is not None:
                    writer.flush_day(k)
    finally:
        if pool is not None:
            pool.shutdown()
        if writer is not None:
            writer.close()
    if out_dir is not None:
        pdir = Path(out_dir) / "policies"
        pdir.mkdir(exist_ok=True)
        for m, pol in enumerate(policies):
            if pol is not None:
                pol.to_csv(pdir / f"bus{m}.csv")
    return log


class _DayWriter:
    """Streams runlog.csv and beliefs.csv, one flush per completed day."""

    def __init__(self, out_dir, log: RunLog):
        root = Path(out_dir)
        root.mkdir(parents=True, exist_ok=True)
        self.log = log
        self.run_fh = open(root / "runlog.csv", "w", newline="")
        self.bel_fh = open(root / "beliefs.csv", "w", newline="")
        self.run = csv.writer(self.run_fh, lineterminator="\n")
        self.bel = csv.writer(self.bel_fh, lineterminator="\n")
        self.run.writerow(RUNLOG_COLUMNS)
        self.bel.writerow(["day", "bus"] + [f"h{h}" for h in range(log.H)])
        self._write_beliefs(0)
        self.run_fh.flush()
        self.bel_fh.flush()

    def _write_beliefs(self, idx: int) -> None:
        for m in range(self.log.M):
            self.bel.writerow([idx, m] + [repr(float(v)) for v in self.log.beliefs[idx][m]])

    def flush_day(self, day: int) -> None:
        H = self.log.H
        self.run.writerows(self.log.rows(day * H, (day + 1) * H))
        self._write_beliefs(day + 1)
        self.run_fh.flush()
        self.bel_fh.flush()

    def close(self) -> None:
        self.run_fh.close()
        self.bel_fh.close()


@dataclass(frozen=True)
class ConvergenceMonitor:
    """Stationarity test over two trailing windows of ``window`` days."""

    window: int = 5
    price_tol: float = 0.05  # relative to the mean hub price of the last window
    policy_tol: float = 0.15  # total-variation distance, averaged over hours

    def __post_init__(self):
        if self.window < 2:
            raise ValueError("window must be at least 2 days")


def check_mfe(log: RunLog, monitor: ConvergenceMonitor = ConvergenceMonitor()) -> dict:
    """Compare the last window of days against the one before it.

    The price test uses per-hour means of the hub price in each window. The
    policy test takes, for each bus and hour, the window mean of the action
    distribution the bus actually played, then the total-variation distance
    between windows averaged over hours; the worst bus is reported.
    """
    W, H = monitor.window, log.H
    if log.days < 2 * W:
        raise ValueError(f"need at least {2 * W} complete days, log has {log.days}")
    hub = log.hub_by_day()
    last, prev = hub[-W:], hub[-2 * W:-W]
    scale = float(np.abs(last).mean())
    price_change = float(np.max(np.abs(last.mean(axis=0) - prev.mean(axis=0))))
    rel = price_change / scale if scale > 0 else (0.0 if price_change == 0 else np.inf)
    day_over_day = float(np.max(np.abs(np.diff(hub[-W:], axis=0)))) if W > 1 else 0.0

    if log.played and np.asarray(log.played[0]).size:
        played = np.array(log.played[: log.days * H]).reshape(log.days, H, log.M, -1)
        pl, pp = played[-W:].mean(axis=0), played[-2 * W:-W].mean(axis=0)
        policy_change = float(total_variation(pl, pp).mean(axis=0).max())
    else:
        policy_change = 0.0
    return {
        "window": W,
        "price_change": price_change,
        "price_change_rel": rel,
        "day_over_day_max": day_over_day,
        "day_over_day_rel": day_over_day / scale if scale > 0 else 0.0,
        "mean_price": scale,
        "policy_change": policy_change,
        "converged": bool(rel < monitor.price_tol and policy_change < monitor.policy_tol),
    }


def replay_storage(log: RunLog, initial: float, eta: float) -> np.ndarray:
    """Storage trajectory implied by the logged mean actions, shape (T + 1, M)."""
    from .aggregator import step_storage

    x = np.full(log.M, float(initial))
    out = [x.copy()]
    for a in log.action_mean:
        x = np.array([step_storage(x[m], float(a[m]), eta) for m in range(log.M)])
        out.append(x.copy())
    return np.array(out)


def with_storage(cfg: ScenarioConfig, on: bool) -> ScenarioConfig:
    return replace(cfg, storage=on)


def write_played(log: RunLog, path) -> None:
    """Action distribution each bus played at each step (used by the policy stationarity test)."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["t", "bus"] + [f"p[{v:g}]" for v in log.actions])
        for t, row in enumerate(log.played):
            for m in range(log.M):
                w.writerow([t, m] + [repr(float(p)) for p in row[m]])


def read_played(path, T: int, M: int) -> list[np.ndarray]:
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        A = len(header) - 2
        out = np.zeros((T, M, A))
        for r in reader:
            out[int(r[0]), int(r[1])] = [float(v) for v in r[2:]]
    return list(out)


def load_run(run_dir) -> RunLog:
    """Rebuild a RunLog from a seed directory written by :func:`simulate`."""
    root = Path(run_dir)
    log = runlog_from_columns(read_runlog(root / "runlog.csv"))
    if (root / "played.csv").is_file():
        log.played = read_played(root / "played.csv", log.T, log.M)
    return log


def simulate(cfg: ScenarioConfig, out_dir=None, monitor: ConvergenceMonitor = ConvergenceMonitor(),
             window_days: int = 5) -> tuple[list[RunLog], dict]:
    """Run every seed of ``cfg``; write per-seed logs and the report when ``out_dir`` is set."""
    from .metrics import build_report, write_report

    logs, conv = [], []
    for seed in cfg.seeds:
        sub = None if out_dir is None else Path(out_dir) / f"seed{seed}"
        log = run_scenario(cfg, seed, sub)
        if sub is not None:
            write_played(log, sub / "played.csv")
        logs.append(log)
        conv.append(check_mfe(log, monitor)["converged"] if log.days >= 2 * monitor.window else None)
    window = min(window_days, cfg.days)
    report = build_report(logs, cfg.seeds, window, None if None in conv else conv, cfg.storage)
    if out_dir is not None:
        meta = {"storage": cfg.storage, "learner": cfg.learner, "days": cfg.days, "seeds": list(cfg.seeds)}
        (Path(out_dir) / "run.json").write_text(json.dumps(meta, indent=1) + "\n")
        write_report(report, out_dir)
    return logs, report


def report_from_dir(out_dir, monitor: ConvergenceMonitor = ConvergenceMonitor(), window_days: int = 5) -> dict:
    """Recompute ``report.json`` from the seed directories under ``out_dir``."""
    from .metrics import build_report

    root = Path(out_dir)
    dirs = sorted((p for p in root.glob("seed*") if (p / "runlog.csv").is_file()),
                  key=lambda p: int(p.name[4:]))
    if not dirs:
        raise ValueError(f"no seed*/runlog.csv under {root}")
    logs = [load_run(d) for d in dirs]
    seeds = [int(d.name[4:]) for d in dirs]
    conv = [check_mfe(log, monitor)["converged"] if log.days >= 2 * monitor.window else None for log in logs]
    meta = root / "run.json"
    storage = json.loads(meta.read_text())["storage"] if meta.is_file() else True
    window = min(window_days, min(log.days for log in logs))
    return build_report(logs, seeds, window, None if None in conv else conv, storage)
