"""DC economic dispatch with LMPs read from the simplex basis.

Quadratic generator costs are replaced by ``K`` equal-width linear segments,
which keeps the market clearing an LP. The LP in equality form is::

    min  sum_gj  mc[g, j] * y[g, j]
    s.t. sum_gj y[g, j]                                   = sum_m D[m]
         sum_g  PTDF[l, bus(g)] * p[g]  -  s[l]           = PTDF[l] @ D
         0 <= y[g, j] <= width[g, j],    -F[l] <= s[l] <= F[l]

with ``p[g] = sum_j y[g, j]``. The dual of the balance row is the hub price;
a flow row dual ``y_l`` splits into ``mu_upper = max(-y_l, 0)`` and
``mu_lower = max(y_l, 0)``.
"""
from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .core import Network
from .simplex import INFEASIBLE, OPTIMAL, UnboundedError, solve_lp

DEFAULT_SEGMENTS = 16


class AggregateSupplyError(ValueError):
    """Bids sum to a net supply, which the market model rules out."""


class DegenerateError(RuntimeError):
    """One-sided objective derivatives disagree: the dual price is not unique."""


class BidVector(np.ndarray):
    """Per-bus net demand in MW. Construction checks that the total is nonnegative."""

    def __new__(cls, values, tol: float = 1e-9):
        arr = np.asarray(values, dtype=float).reshape(-1).view(cls)
        if not np.all(np.isfinite(arr)):
            raise ValueError("bids must be finite")
        total = float(np.sum(arr))
        if total < -tol * max(1.0, float(np.abs(arr).sum())):
            raise AggregateSupplyError(
                f"system-wide net demand is {total:.6g} MW < 0; bids={np.asarray(arr).tolist()}"
            )
        return arr


@dataclass(frozen=True)
class PiecewiseCost:
    """Per-generator linear segments: ``widths[g, j]`` MW at ``marginals[g, j]`` $/MWh."""

    widths: np.ndarray
    marginals: np.ndarray

    def __post_init__(self):
        if self.widths.shape != self.marginals.shape:
            raise ValueError("widths and marginals must have the same shape")
        if np.any(self.widths < 0):
            raise ValueError("segment widths must be nonnegative")
        if np.any(np.diff(self.marginals, axis=1) < -1e-12):
            raise ValueError("segment marginal costs must be nondecreasing")

    @property
    def capacities(self) -> np.ndarray:
        return self.widths.sum(axis=1)

    @property
    def segments(self) -> int:
        return self.widths.shape[1]


def linearize_costs(network: Network, capacities, segments: int = DEFAULT_SEGMENTS) -> PiecewiseCost:
    """Split each generator's range ``[0, capacity]`` into equal segments.

    Each segment is priced at the marginal cost ``2 a x + b`` at its
    midpoint, which is nondecreasing because the quadratic cost is convex.
    """
    if segments < 1:
        raise ValueError("need at least one segment")
    caps = np.asarray(capacities, dtype=float)
    if caps.shape != (network.G,):
        raise ValueError(f"expected {network.G} capacities, got shape {caps.shape}")
    if np.any(caps < 0) or np.any(caps > network.p_max + 1e-9):
        raise ValueError("capacities must lie in [0, p_max]")
    a = np.array([g.cost_a for g in network.generators])
    b = np.array([g.cost_b for g in network.generators])
    width = caps / segments
    mid = (np.arange(segments) + 0.5)[None, :] * width[:, None]
    marginals = 2.0 * a[:, None] * mid + b[:, None]
    widths = np.repeat(width[:, None], segments, axis=1)
    return PiecewiseCost(widths, marginals)


@dataclass
class DispatchResult:
    status: str
    p: np.ndarray
    objective: float
    hub_price: float
    mu_lower: np.ndarray
    mu_upper: np.ndarray
    nu_lower: np.ndarray
    nu_upper: np.ndarray
    lmp: np.ndarray
    segments: np.ndarray = field(repr=False)
    seg_nu_lower: np.ndarray = field(repr=False)
    seg_nu_upper: np.ndarray = field(repr=False)
    capacities: np.ndarray = field(repr=False)
    iterations: int = 0

    @property
    def optimal(self) -> bool:
        return self.status == OPTIMAL

    def flows(self, network: Network, bids) -> np.ndarray:
        return network.flows(self.p, np.asarray(bids, dtype=float))

    def to_dict(self) -> dict:
        def lst(a):
            return [float(v) for v in np.asarray(a).ravel()]
        return {
            "status": self.status,
            "objective": float(self.objective),
            "hub_price": float(self.hub_price),
            "p": lst(self.p),
            "lmp": lst(self.lmp),
            "mu_lower": lst(self.mu_lower),
            "mu_upper": lst(self.mu_upper),
            "nu_lower": lst(self.nu_lower),
            "nu_upper": lst(self.nu_upper),
        }


def _infeasible(network: Network, costs: PiecewiseCost, iterations: int) -> DispatchResult:
    nan = np.nan
    return DispatchResult(
        INFEASIBLE, np.full(network.G, nan), nan, nan,
        np.full(network.L, nan), np.full(network.L, nan),
        np.full(network.G, nan), np.full(network.G, nan), np.full(network.M, nan),
        np.full(costs.widths.shape, nan), np.full(costs.widths.shape, nan),
        np.full(costs.widths.shape, nan), costs.capacities, iterations,
    )


def solve_dispatch(network: Network, bids, costs: PiecewiseCost, tol: float = 1e-9) -> DispatchResult:
    """Clear the market for one interval.

    Returns a result with ``status == "infeasible"`` when demand cannot be met
    within capacity and flow limits.
    """
    D = BidVector(bids)
    if D.size != network.M:
        raise ValueError(f"expected {network.M} bids, got {D.size}")
    G, K = costs.widths.shape
    if G != network.G:
        raise ValueError("cost table does not match the network's generators")
    L = network.L
    widths = costs.widths.ravel()
    marg = costs.marginals.ravel()
    seg_gen = np.repeat(np.arange(G), K)
    active = np.flatnonzero(widths > 0)
    n_seg = active.size

    ptdf_seg = network.ptdf[:, network.gen_bus[seg_gen]]  # L x (G*K)
    A = np.zeros((1 + L, n_seg + L))
    A[0, :n_seg] = 1.0
    A[1:, :n_seg] = ptdf_seg[:, active]
    A[1:, n_seg:] = -np.eye(L)
    Dv = np.asarray(D, dtype=float)
    rhs = np.concatenate([[Dv.sum()], network.ptdf @ Dv])
    cost = np.concatenate([marg[active], np.zeros(L)])
    F = network.flow_limits
    lower = np.concatenate([np.zeros(n_seg), -F])
    upper = np.concatenate([widths[active], F])

    sol = solve_lp(cost, A, rhs, lower, upper, tol=tol)
    if sol.status == INFEASIBLE:
        return _infeasible(network, costs, sol.iterations)
    if not np.all(np.isfinite(sol.x)):
        raise UnboundedError("dispatch LP returned a non-finite solution")

    y_all = np.zeros(G * K)
    y_all[active] = sol.x[:n_seg]
    seg = y_all.reshape(G, K)
    p = seg.sum(axis=1)
    lam = float(sol.y[0])
    y_flow = sol.y[1:]
    mu_upper = np.maximum(-y_flow, 0.0)
    mu_lower = np.maximum(y_flow, 0.0)
    lmp = lam - network.ptdf.T @ (mu_upper - mu_lower)

    # reduced costs for every segment, including zero-width ones left out of the LP
    red = marg - lam - ptdf_seg.T @ y_flow
    seg_nu_lower = np.maximum(red, 0.0).reshape(G, K)
    seg_nu_upper = np.maximum(-red, 0.0).reshape(G, K)

    caps = costs.capacities
    bus_price = lmp[network.gen_bus]
    ptol = 1e-9 * max(1.0, float(caps.max()) if caps.size else 1.0)
    at_zero = p <= ptol
    at_cap = p >= caps - ptol
    nu_lower = np.where(at_zero, np.maximum(costs.marginals[:, 0] - bus_price, 0.0), 0.0) if K else np.zeros(G)
    nu_upper = np.where(at_cap, np.maximum(bus_price - costs.marginals[:, -1], 0.0), 0.0) if K else np.zeros(G)

    return DispatchResult(
        OPTIMAL, p, float(marg @ y_all), lam, mu_lower, mu_upper, nu_lower, nu_upper, lmp,
        seg, seg_nu_lower, seg_nu_upper, caps, sol.iterations,
    )


@dataclass
class KKTReport:
    """Largest violation found in each optimality category."""

    balance: float
    flow_limits: float
    bounds: float
    dual_feasibility: float
    stationarity: float
    complementarity: float

    @property
    def primal(self) -> float:
        return max(self.balance, self.flow_limits, self.bounds)

    @property
    def max_violation(self) -> float:
        return max(self.primal, self.dual_feasibility, self.stationarity, self.complementarity)

    def ok(self, tol: float = 1e-6) -> bool:
        return self.max_violation < tol


def verify_kkt(result: DispatchResult, network: Network, bids, costs: PiecewiseCost) -> KKTReport:
    """Check the dispatch against the Lagrangian optimality conditions.

    Stationarity is tested per segment variable::

        mc[g, j] - hub + sum_l PTDF[l, bus(g)] (mu_upper - mu_lower) + nu_upper - nu_lower = 0
    """
    if not result.optimal:
        raise ValueError("KKT check needs an optimal dispatch")
    D = np.asarray(bids, dtype=float)
    p = np.asarray(result.p, dtype=float)
    seg = result.segments
    F = network.flow_limits
    f = network.flows(p, D)
    caps = costs.capacities

    balance = abs(p.sum() - D.sum())
    flow_viol = float(np.max(np.maximum(f - F, -F - f), initial=0.0))
    flow_viol = max(flow_viol, 0.0)
    bounds = max(
        float(np.max(-p, initial=0.0)),
        float(np.max(p - caps, initial=0.0)),
        float(np.max(-seg, initial=0.0)),
        float(np.max(seg - costs.widths, initial=0.0)),
    )

    multipliers = [result.mu_lower, result.mu_upper, result.nu_lower, result.nu_upper,
                   result.seg_nu_lower, result.seg_nu_upper]
    dual_feas = max(float(np.max(-np.asarray(v), initial=0.0)) for v in multipliers)

    cong = network.ptdf.T @ (result.mu_upper - result.mu_lower)  # per bus
    station = (costs.marginals - result.hub_price + cong[network.gen_bus][:, None]
               + result.seg_nu_upper - result.seg_nu_lower)
    stationarity = float(np.max(np.abs(station), initial=0.0))

    comp = [
        np.abs(result.mu_upper * (F - f)),
        np.abs(result.mu_lower * (f + F)),
        np.abs(result.seg_nu_lower * seg),
        np.abs(result.seg_nu_upper * (costs.widths - seg)),
        np.abs(result.nu_lower * p),
        np.abs(result.nu_upper * (caps - p)),
    ]
    complementarity = max(float(np.max(v, initial=0.0)) for v in comp)
    return KKTReport(balance, flow_viol, bounds, dual_feas, stationarity, complementarity)


def lmp_sensitivity_check(network: Network, bids, costs: PiecewiseCost, bus: int, eps: float,
                          tol: float = 1e-6) -> tuple[float, float]:
    """Compare the dual LMP at ``bus`` with a forward difference of the objective.

    Raises ``DegenerateError`` when forward and backward differences disagree
    (the point sits on a breakpoint of the optimal-value function).
    """
    if not eps > 0:
        raise ValueError("eps must be positive")
    D = np.asarray(bids, dtype=float)
    base = solve_dispatch(network, D, costs)
    if not base.optimal:
        raise ValueError("base dispatch is infeasible")
    e = np.zeros(network.M)
    e[bus] = eps
    up = solve_dispatch(network, D + e, costs)
    if D.sum() - eps < 0:
        raise DegenerateError("backward difference would violate aggregate demand >= 0")
    try:
        down = solve_dispatch(network, D - e, costs)
    except ValueError as exc:
        raise DegenerateError(str(exc)) from exc
    if not (up.optimal and down.optimal):
        raise DegenerateError("perturbed dispatch is infeasible")
    fwd = (up.objective - base.objective) / eps
    bwd = (base.objective - down.objective) / eps
    if abs(fwd - bwd) > tol * max(1.0, abs(fwd)):
        raise DegenerateError(f"one-sided derivatives differ at bus {bus}: {bwd:.9g} vs {fwd:.9g}")
    return float(base.lmp[bus]), float(fwd)


def read_bids(path, M: int) -> np.ndarray:
    """Read ``bids.csv`` with header ``bus,D_mt``; buses not listed bid zero."""
    D = np.zeros(M)
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None or not {"bus", "D_mt"} <= set(reader.fieldnames):
            raise ValueError(f"{path}: expected header 'bus,D_mt'")
        for row in reader:
            m = int(row["bus"])
            if not 0 <= m < M:
                raise ValueError(f"{path}: bus {m} outside [0, {M})")
            D[m] += float(row["D_mt"])
    return D


def write_result(result: DispatchResult, path) -> None:
    Path(path).write_text(json.dumps(result.to_dict(), indent=2) + "\n")
