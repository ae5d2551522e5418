"""Static SVG figures from run logs.

Every plotted series carries an SVG ``id`` (matplotlib gid) so figures can be
checked structurally: ``hub-first:<label>``, ``hub-last:<label>``,
``storage:<label>``, ``action:<label>`` and ``bar:<kind>:<label>:<seed>``.
"""
from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

from .metrics import ex_post_cost, imv, window_slice  # noqa: E402

KINDS = ("hub", "storage", "imv", "cost")


def _columns(cols: dict, name: str) -> np.ndarray:
    if name not in cols:
        raise ValueError(f"run log has no {name!r} series; available columns: {sorted(cols)}")
    return cols[name]


def _grid(cols: dict, name: str) -> np.ndarray:
    """Column reshaped to (T, M) in (t, bus) order."""
    values = _columns(cols, name)
    t, bus = cols["t"], cols["bus"]
    T, M = int(t.max()) + 1, int(bus.max()) + 1
    out = np.empty((T, M))
    out[t, bus] = values
    return out


def _hours(cols: dict) -> int:
    return int(cols["hour"].max()) + 1


def _save(fig, out) -> Path:
    path = Path(out)
    path.parent.mkdir(parents=True, exist_ok=True)
    with plt.rc_context({"svg.hashsalt": "gridmfg", "svg.fonttype": "none"}):
        fig.savefig(path, format="svg", metadata={"Date": None})
    plt.close(fig)
    return path


def plot_hub(runs: list[tuple[str, dict]], out, days: int = 5):
    """Hub price over the first and last ``days`` days, one line per run."""
    fig, (ax0, ax1) = plt.subplots(1, 2, figsize=(10, 3.5), sharey=True)
    for label, cols in runs:
        hub = _grid(cols, "hub_price")[:, 0]
        H = _hours(cols)
        n = min(days * H, hub.size)
        (l0,) = ax0.plot(np.arange(n), hub[:n], label=label)
        (l1,) = ax1.plot(np.arange(n), hub[-n:], label=label)
        l0.set_gid(f"hub-first:{label}")
        l1.set_gid(f"hub-last:{label}")
    ax0.set_title(f"first {days} days")
    ax1.set_title(f"last {days} days")
    ax0.set_ylabel("hub price ($/MWh)")
    for ax in (ax0, ax1):
        ax.set_xlabel("timestep")
    ax1.legend(fontsize="small")
    return _save(fig, out)


def plot_storage(runs: list[tuple[str, dict]], out, days: int = 5):
    """Bus-averaged storage level and mean action over the last ``days`` days."""
    fig, (ax0, ax1) = plt.subplots(2, 1, figsize=(8, 5), sharex=True)
    for label, cols in runs:
        H = _hours(cols)
        x = _grid(cols, "storage_mean").mean(axis=1)
        a = _grid(cols, "action_mean").mean(axis=1)
        n = min(days * H, x.size)
        (l0,) = ax0.plot(np.arange(n), x[-n:], label=label)
        (l1,) = ax1.step(np.arange(n), a[-n:], where="post", label=label)
        l0.set_gid(f"storage:{label}")
        l1.set_gid(f"action:{label}")
    ax0.set_ylabel("storage level")
    ax1.set_ylabel("mean action")
    ax1.set_xlabel("timestep")
    ax0.legend(fontsize="small")
    return _save(fig, out)


def _metric(cols: dict, kind: str, days: int | None) -> float:
    H = _hours(cols)
    hub = _grid(cols, "hub_price")[:, 0]
    sl = window_slice(hub.size, H, min(days, hub.size // H) if days else None)
    if kind == "imv":
        return imv(hub[sl])
    _, avg = ex_post_cost(_grid(cols, "bid_mwh")[sl], _grid(cols, "lmp")[sl])
    return avg


def plot_bars(runs: list[tuple[str, int, dict]], kind: str, out, days: int = 5):
    """Grouped bars: one group per seed, one bar per scenario label."""
    labels = list(dict.fromkeys(label for label, _, _ in runs))
    seeds = sorted({seed for _, seed, _ in runs})
    values = {(label, seed): _metric(cols, kind, days) for label, seed, cols in runs}
    fig, ax = plt.subplots(figsize=(7, 3.5))
    width = 0.8 / max(len(labels), 1)
    for j, label in enumerate(labels):
        for i, seed in enumerate(seeds):
            if (label, seed) not in values:
                continue
            bar = ax.bar(i + (j - (len(labels) - 1) / 2) * width, values[(label, seed)], width,
                         color=f"C{j}", label=label if i == 0 else None)
            bar.patches[0].set_gid(f"bar:{kind}:{label}:{seed}")
    ax.set_xticks(range(len(seeds)))
    ax.set_xticklabels([f"seed {s}" for s in seeds])
    ax.set_ylabel("IMV of hub price ($/MWh)" if kind == "imv" else "ex-post cost ($)")
    ax.legend(fontsize="small")
    return _save(fig, out)
