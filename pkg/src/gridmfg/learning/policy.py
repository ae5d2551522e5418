"""Tabulated policies over (storage bin, hour, demand bin) and masked sampling."""
from __future__ import annotations

import csv
import io
from pathlib import Path

import numpy as np

from ..aggregator import ActionSpace, mask_actions
from ..core import RngStream
from .env import StateKey, bin_midpoint

FORMAT_TAG = "gridmfg-policy"
FORMAT_VERSION = 1


def tie_order(space: ActionSpace) -> np.ndarray:
    """Action indices ordered by preference on ties: 0 first, then smaller |a|, negative first."""
    vals = space.values
    return np.lexsort((vals, np.abs(vals)))


def midpoint_masks(space: ActionSpace, eta: float, storage_bins: int) -> np.ndarray:
    """Mask at each storage bin's midpoint, shape (bins, n_actions)."""
    return np.stack([mask_actions(bin_midpoint(b, storage_bins), space, eta) for b in range(storage_bins)])


class Policy:
    """Action probabilities per state key, shape (storage_bins, H, demand_bins, n_actions).

    Masked actions carry exactly zero probability; the mask of a storage bin
    is evaluated at the bin midpoint.
    """

    def __init__(self, probs: np.ndarray, space: ActionSpace, eta: float):
        probs = np.asarray(probs, dtype=float)
        if probs.ndim != 4 or probs.shape[-1] != space.n:
            raise ValueError("probs must have shape (bins, H, demand_bins, n_actions)")
        self.probs = probs
        self.space = space
        self.eta = float(eta)

    @property
    def storage_bins(self) -> int:
        return self.probs.shape[0]

    @property
    def H(self) -> int:
        return self.probs.shape[1]

    @property
    def demand_bins(self) -> int:
        return self.probs.shape[2]

    def __getitem__(self, key: StateKey) -> np.ndarray:
        return self.probs[key.storage_bin, key.hour, key.demand_bin]

    def validate(self, tol: float = 1e-9) -> None:
        masks = midpoint_masks(self.space, self.eta, self.storage_bins)[:, None, None, :]
        if np.any(self.probs[~np.broadcast_to(masks, self.probs.shape)] != 0.0):
            raise ValueError("policy puts mass on masked actions")
        if np.any(np.abs(self.probs.sum(axis=-1) - 1.0) > tol):
            raise ValueError("policy rows must sum to 1")

    @classmethod
    def uniform(cls, space: ActionSpace, eta: float, H: int, storage_bins: int = 11,
                demand_bins: int = 1) -> "Policy":
        masks = midpoint_masks(space, eta, storage_bins).astype(float)
        probs = masks / masks.sum(axis=1, keepdims=True)
        probs = np.broadcast_to(probs[:, None, None, :], (storage_bins, H, demand_bins, space.n)).copy()
        return cls(probs, space, eta)

    @classmethod
    def constant(cls, space: ActionSpace, eta: float, H: int, a: float = 0.0,
                 storage_bins: int = 11, demand_bins: int = 1) -> "Policy":
        probs = np.zeros((storage_bins, H, demand_bins, space.n))
        probs[..., space.index(a)] = 1.0
        return cls(probs, space, eta)

    @classmethod
    def greedy(cls, q: np.ndarray, space: ActionSpace, eta: float) -> "Policy":
        """Deterministic policy picking the best masked action of ``q`` per state key."""
        bins = q.shape[0]
        masks = midpoint_masks(space, eta, bins)
        order = tie_order(space)
        probs = np.zeros_like(q, dtype=float)
        for b in range(bins):
            valid = order[masks[b, order]]
            sub = q[b][..., valid]  # (H, Db, n_valid), in preference order
            best = valid[np.argmax(sub, axis=-1)]  # argmax keeps the first maximiser
            np.put_along_axis(probs[b], best[..., None], 1.0, axis=-1)
        return cls(probs, space, eta)

    def expected_action(self, key: StateKey) -> float:
        return float(self[key] @ self.space.values)

    def to_csv(self, path=None) -> str:
        buf = io.StringIO()
        buf.write(f"#format={FORMAT_TAG},version={FORMAT_VERSION},eta={self.eta!r},step={self.space.step!r}\n")
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["storage_bin", "hour", "demand_bin"] + [f"p[{v:g}]" for v in self.space.values])
        for b in range(self.storage_bins):
            for h in range(self.H):
                for db in range(self.demand_bins):
                    w.writerow([b, h, db] + [repr(float(p)) for p in self.probs[b, h, db]])
        text = buf.getvalue()
        if path is not None:
            Path(path).write_text(text)
        return text

    @classmethod
    def from_csv(cls, path_or_text) -> "Policy":
        p = Path(str(path_or_text)) if "\n" not in str(path_or_text) else None
        text = p.read_text() if p is not None else str(path_or_text)
        lines = text.splitlines()
        meta = dict(kv.split("=", 1) for kv in lines[0].lstrip("#").split(","))
        if meta.get("format") != FORMAT_TAG or int(meta.get("version", -1)) != FORMAT_VERSION:
            raise ValueError("not a version-1 policy file")
        space = ActionSpace(float(meta["step"]))
        rows = list(csv.reader(lines[2:]))
        idx = np.array([[int(r[0]), int(r[1]), int(r[2])] for r in rows])
        shape = tuple(idx.max(axis=0) + 1) + (space.n,)
        probs = np.zeros(shape)
        for r, (b, h, db) in zip(rows, idx):
            probs[b, h, db] = [float(v) for v in r[3:]]
        return cls(probs, space, float(meta["eta"]))


def restricted(probs: np.ndarray, mask: np.ndarray, space: ActionSpace) -> np.ndarray:
    """Restrict ``probs`` to ``mask`` and renormalise.

    When the policy has no mass on any valid action (possible when the true
    level sits away from the bin midpoint), all mass goes to the valid action
    closest to the policy's mean action.
    """
    p = np.where(mask, probs, 0.0)
    total = p.sum()
    if total > 0:
        return p / total
    target = float(probs @ space.values)
    valid = np.flatnonzero(mask)
    dist = np.abs(space.values[valid] - target)
    out = np.zeros_like(p)
    out[valid[np.argmin(dist)]] = 1.0
    return out


def act(policy: Policy, state: StateKey, mask: np.ndarray, rng: RngStream) -> float:
    """Sample one action from the policy restricted to ``mask``."""
    return float(sample_actions(policy, state, mask, rng, 1)[0])


def sample_actions(policy: Policy, state: StateKey, mask: np.ndarray, rng: RngStream, n: int) -> np.ndarray:
    """``n`` i.i.d. actions from the masked policy, one uniform draw each."""
    if not np.any(mask):
        raise ValueError("mask is empty")
    p = restricted(policy[state], mask, policy.space)
    cdf = np.cumsum(p)
    cdf[-1] = 1.0
    u = rng.random(n)
    idx = np.searchsorted(cdf, u, side="right")
    # never land on a zero-probability slot through round-off
    idx = np.minimum(idx, p.size - 1)
    bad = p[idx] == 0
    if np.any(bad):
        support = np.flatnonzero(p > 0)
        idx[bad] = support[np.searchsorted(support, idx[bad]).clip(max=support.size - 1)]
    return policy.space.values[idx]


def total_variation(p: np.ndarray, q: np.ndarray) -> np.ndarray:
    return 0.5 * np.abs(np.asarray(p) - np.asarray(q)).sum(axis=-1)
