"""Bounded-variable primal simplex for small dense LPs.

Solves::

    min  c @ x
    s.t. A @ x == b
         lower <= x <= upper        (all bounds finite)

and returns the basis duals ``y`` (one per row) together with reduced costs
``d = c - A.T @ y``. A nonbasic variable at its lower bound has ``d >= 0`` at
optimality, one at its upper bound ``d <= 0``.

Phase 1 starts from an all-artificial basis with every structural variable at
its lower bound. Pricing is Dantzig's rule with lowest-index tie breaking;
after ``2 * rows`` consecutive degenerate pivots the solver switches to
Bland's rule until the objective moves again.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

OPTIMAL = "optimal"
INFEASIBLE = "infeasible"


class UnboundedError(RuntimeError):
    """The LP is unbounded. Cannot happen with finite bounds; signals a bug."""


class IterationLimitError(RuntimeError):
    pass


@dataclass
class LPSolution:
    status: str
    x: np.ndarray
    y: np.ndarray
    reduced_costs: np.ndarray
    objective: float
    basis: np.ndarray
    iterations: int


def _pick_entering(d, at_upper, movable, tol, bland):
    improving = movable & (((~at_upper) & (d < -tol)) | (at_upper & (d > tol)))
    idx = np.flatnonzero(improving)
    if idx.size == 0:
        return -1
    if bland:
        return int(idx[0])
    # argmax returns the first (lowest-index) maximiser
    return int(idx[np.argmax(np.abs(d[idx]))])


class _Simplex:
    def __init__(self, c, A, b, lower, upper, tol):
        self.A = A
        self.b = b
        self.c = c
        self.lower = lower
        self.upper = upper
        self.tol = tol
        self.m, self.n = A.shape
        self.iterations = 0

    def run(self, cost, basis, x, at_upper, movable, max_iter):
        A, m = self.A, self.m
        degenerate_run = 0
        bland = False
        scale = max(1.0, float(np.max(np.abs(cost)))) if cost.size else 1.0
        dtol = self.tol * scale
        while True:
            if self.iterations >= max_iter:
                raise IterationLimitError(f"simplex exceeded {max_iter} iterations")
            B = A[:, basis]
            y = np.linalg.solve(B.T, cost[basis])
            d = cost - A.T @ y
            d[basis] = 0.0
            nonbasic_movable = movable.copy()
            nonbasic_movable[basis] = False
            j = _pick_entering(d, at_upper, nonbasic_movable, dtol, bland)
            if j < 0:
                return y, d
            self.iterations += 1
            sigma = -1.0 if at_upper[j] else 1.0
            alpha = np.linalg.solve(B, A[:, j])
            step = sigma * alpha
            xb = x[basis]
            lb = self.lower[basis]
            ub = self.upper[basis]
            ratios = np.full(m, np.inf)
            dec = step > self.tol
            inc = step < -self.tol
            ratios[dec] = (xb[dec] - lb[dec]) / step[dec]
            ratios[inc] = (ub[inc] - xb[inc]) / (-step[inc])
            ratios = np.maximum(ratios, 0.0)
            own = self.upper[j] - self.lower[j]
            theta_rows = ratios.min() if m else np.inf
            if not np.isfinite(own) and not np.isfinite(theta_rows):
                raise UnboundedError(f"variable {j} can move without bound")
            if own <= theta_rows:
                # bound flip, basis unchanged
                theta = own
                x[basis] = xb - theta * step
                x[j] = self.upper[j] if not at_upper[j] else self.lower[j]
                at_upper[j] = not at_upper[j]
                leave_pos = -1
            else:
                theta = theta_rows
                ties = np.flatnonzero(ratios <= theta + self.tol * max(1.0, theta))
                if bland:
                    leave_pos = int(ties[np.argmin(basis[ties])])
                else:
                    mags = np.abs(step[ties])
                    best = np.flatnonzero(mags >= mags.max() * (1 - 1e-12))
                    cand = ties[best]
                    leave_pos = int(cand[np.argmin(basis[cand])])
                x[basis] = xb - theta * step
                x[j] = x[j] + sigma * theta
                leaving = basis[leave_pos]
                if step[leave_pos] > 0:
                    x[leaving] = self.lower[leaving]
                    at_upper[leaving] = False
                else:
                    x[leaving] = self.upper[leaving]
                    at_upper[leaving] = True
                basis[leave_pos] = j
                at_upper[j] = False
                # resync basic values to limit drift
                nb = np.ones(self.n, dtype=bool)
                nb[basis] = False
                rhs = self.b - A[:, nb] @ x[nb]
                x[basis] = np.linalg.solve(A[:, basis], rhs)
            if theta <= self.tol:
                degenerate_run += 1
                if degenerate_run >= 2 * max(m, 1):
                    bland = True
            else:
                degenerate_run = 0
                bland = False


def solve_lp(c, A, b, lower, upper, tol: float = 1e-9, max_iter: int | None = None) -> LPSolution:
    c = np.asarray(c, dtype=float)
    A = np.atleast_2d(np.asarray(A, dtype=float))
    b = np.asarray(b, dtype=float)
    lower = np.asarray(lower, dtype=float)
    upper = np.asarray(upper, dtype=float)
    m, n = A.shape
    if np.any(upper < lower - tol):
        return LPSolution(INFEASIBLE, np.full(n, np.nan), np.full(m, np.nan),
                          np.full(n, np.nan), np.nan, np.array([], int), 0)
    if max_iter is None:
        max_iter = 50 * (m + n) + 100

    x0 = lower.copy()
    resid = b - A @ x0
    signs = np.where(resid >= 0, 1.0, -1.0)
    A1 = np.hstack([A, np.diag(signs)])
    c1 = np.concatenate([np.zeros(n), np.ones(m)])
    lo1 = np.concatenate([lower, np.zeros(m)])
    up1 = np.concatenate([upper, np.full(m, np.inf)])
    x = np.concatenate([x0, np.abs(resid)])
    at_upper = np.zeros(n + m, dtype=bool)
    basis = np.arange(n, n + m)
    movable = up1 > lo1

    scale_b = max(1.0, float(np.max(np.abs(b)))) if m else 1.0
    solver = _Simplex(c1, A1, b, lo1, up1, tol)
    solver.run(c1, basis, x, at_upper, movable, max_iter)
    infeas = float(x[n:].sum())
    if infeas > 1e-7 * scale_b:
        return LPSolution(INFEASIBLE, np.full(n, np.nan), np.full(m, np.nan),
                          np.full(n, np.nan), np.nan, basis[basis < n], solver.iterations)

    # artificials are pinned at zero for phase 2
    up1[n:] = 0.0
    x[n:] = 0.0
    movable[n:] = False
    _drive_out_artificials(A1, c, basis, n, movable)
    nb = np.ones(n + m, dtype=bool)
    nb[basis] = False
    x[basis] = np.linalg.solve(A1[:, basis], b - A1[:, nb] @ x[nb])

    c2 = np.concatenate([c, np.zeros(m)])
    y, d = solver.run(c2, basis, x, at_upper, movable, max_iter)
    xs = np.clip(x[:n], lower, upper)
    return LPSolution(OPTIMAL, xs, y, (c - A.T @ y), float(c @ xs), basis.copy(), solver.iterations)


def _drive_out_artificials(A1, c, basis, n, movable):
    """Pivot zero-valued artificials out of the basis where possible.

    The replacement column is the cheapest eligible structural variable
    (lowest index on ties), so a degenerate row prices at its cheapest
    available source.
    """
    for pos in range(basis.size):
        if basis[pos] < n:
            continue
        B = A1[:, basis]
        row = np.linalg.solve(B.T, np.eye(basis.size)[pos])
        rho = row @ A1[:, :n]
        inbasis = np.zeros(n, dtype=bool)
        inbasis[basis[basis < n]] = True
        cand = np.flatnonzero((np.abs(rho) > 1e-9) & ~inbasis & movable[:n])
        if cand.size == 0:
            continue
        order = np.lexsort((cand, c[cand]))
        basis[pos] = cand[order[0]]
