"""Post-hoc evaluation of run logs: price volatility, ex-post cost, cross-seed summaries."""
from __future__ import annotations

import csv
import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

DEFAULT_WINDOW_DAYS = 5


class TooShortError(ValueError):
    """A price series needs at least two points."""


@dataclass(frozen=True)
class PriceSeries:
    values: np.ndarray
    index: np.ndarray  # global step of each value

    def __post_init__(self):
        v = np.asarray(self.values, dtype=float)
        i = np.asarray(self.index, dtype=int)
        if v.shape != i.shape or v.ndim != 1:
            raise ValueError("values and index must be 1-D and the same length")
        if not np.all(np.isfinite(v)):
            raise ValueError("prices must be finite")
        if np.any(np.diff(i) <= 0):
            raise ValueError("time index must be strictly increasing")
        object.__setattr__(self, "values", v)
        object.__setattr__(self, "index", i)

    @classmethod
    def of(cls, values) -> "PriceSeries":
        v = np.asarray(values, dtype=float)
        return cls(v, np.arange(v.size))


def imv(series) -> float:
    """Mean absolute step-to-step price change."""
    v = series.values if isinstance(series, PriceSeries) else PriceSeries.of(series).values
    if v.size < 2:
        raise TooShortError("IMV needs at least two prices")
    return float(np.mean(np.abs(np.diff(v))))


def window_slice(T: int, H: int, days: int | None) -> slice:
    """Steps covering the last ``days`` days of a ``T``-step log (all of it if None)."""
    if days is None:
        return slice(0, T)
    if days < 1 or days * H > T:
        raise ValueError(f"window of {days} days does not fit a log of {T // H} days")
    return slice(T - days * H, T)


def ex_post_cost(bid_mwh: np.ndarray, lmp: np.ndarray) -> tuple[np.ndarray, float]:
    """Per-bus sum of bid times LMP over the given (T, M) records, and the bus average."""
    bid = np.atleast_2d(np.asarray(bid_mwh, dtype=float))
    price = np.atleast_2d(np.asarray(lmp, dtype=float))
    if bid.shape != price.shape:
        raise ValueError("bids and LMPs must have the same shape")
    per_bus = (bid * price).sum(axis=0)
    return per_bus, float(per_bus.mean()) if per_bus.size else 0.0


def log_metrics(log, window_days: int | None = DEFAULT_WINDOW_DAYS, per_bus: bool = False) -> dict:
    """IMV of the hub price (or of each bus LMP) and ex-post cost over the trailing window."""
    sl = window_slice(log.T, log.H, window_days)
    out = {}
    if per_bus:
        lmp = np.array(log.lmp)[sl]
        out["imv_per_bus"] = [imv(lmp[:, m]) for m in range(log.M)]
    out["imv"] = imv(np.array(log.hub)[sl])
    buses, avg = ex_post_cost(np.array(log.bid_mwh)[sl], np.array(log.lmp)[sl])
    out["ex_post_cost"] = avg
    out["ex_post_cost_per_bus"] = buses.tolist()
    return out


def summarize(values) -> dict:
    v = np.asarray(values, dtype=float)
    return {"mean": float(v.mean()), "std": float(v.std(ddof=1)), "min": float(v.min()), "max": float(v.max()),
            "per_seed": v.tolist()}


def seed_summary(logs, window_days: int | None = DEFAULT_WINDOW_DAYS) -> dict:
    """Mean, sample std, min and max of IMV and ex-post cost across seeds."""
    logs = list(logs)
    if len(logs) < 2:
        raise ValueError("a seed summary needs at least two run logs")
    per = [log_metrics(log, window_days) for log in logs]
    return {"imv": summarize([p["imv"] for p in per]),
            "ex_post_cost": summarize([p["ex_post_cost"] for p in per])}


def build_report(logs, seeds, window_days: int = DEFAULT_WINDOW_DAYS, converged=None, storage: bool = True) -> dict:
    """The ``report.json`` document; one-seed runs report std as 0."""
    logs = list(logs)
    per = [log_metrics(log, window_days) for log in logs]
    if len(logs) >= 2:
        summary = seed_summary(logs, window_days)
    else:
        summary = {k: {**summarize([per[0][k]] * 2), "per_seed": [per[0][k]]} for k in ("imv", "ex_post_cost")}
    summary["ex_post_cost"]["per_bus"] = [p["ex_post_cost_per_bus"] for p in per]
    return {
        "seeds": [int(s) for s in seeds],
        "window_days": window_days,
        "storage": storage,
        "imv": summary["imv"],
        "ex_post_cost": summary["ex_post_cost"],
        "converged": None if converged is None else bool(all(converged)),
        "converged_per_seed": None if converged is None else [bool(c) for c in converged],
    }


def write_report(report: dict, out_dir) -> None:
    root = Path(out_dir)
    root.mkdir(parents=True, exist_ok=True)
    (root / "report.json").write_text(json.dumps(report, indent=1) + "\n")
    with open(root / "summary.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["seed", "imv", "ex_post_cost", "converged"])
        conv = report.get("converged_per_seed") or [""] * len(report["seeds"])
        for s, i, c, ok in zip(report["seeds"], report["imv"]["per_seed"], report["ex_post_cost"]["per_seed"], conv):
            w.writerow([s, repr(float(i)), repr(float(c)), ok])
