"""Independent reference computations used only by the tests."""
import numpy as np


def value_iteration(belief, cap_mwh, gamma, levels=11, step=0.1, eta=1.0, tol=1e-12):
    """Q* of the storage MDP on the grid x in {0, 1/(levels-1), ..., 1}.

    Demand enters the reward additively and independently of the action, so
    it is left out: it shifts Q by a per-hour constant and never changes the
    argmax. Returns (Q of shape (levels, H, n_actions), action values).
    """
    belief = np.asarray(belief, dtype=float)
    H = belief.size
    acts = np.round(np.arange(-1.0, 1.0 + 1e-9, step), 10)
    xs = np.arange(levels) / (levels - 1)
    V = np.zeros((levels, H))
    while True:
        Q = np.full((levels, H, acts.size), -np.inf)
        for i, x in enumerate(xs):
            for h in range(H):
                for j, a in enumerate(acts):
                    delta = eta * a if a < 0 else a / eta
                    nx = x + delta
                    if nx < -1e-9 or nx > 1 + 1e-9:
                        continue
                    k = int(round(nx * (levels - 1)))
                    Q[i, h, j] = -belief[h] * cap_mwh * delta + gamma * V[k, (h + 1) % H]
        Vn = Q.max(axis=-1)
        if np.max(np.abs(Vn - V)) < tol:
            return Q, acts
        V = Vn


def decisive_states(Q, gap=1e-6):
    """Boolean (levels, H) mask of states whose best action beats the runner-up by more than ``gap``."""
    s = np.sort(np.where(np.isfinite(Q), Q, -np.inf), axis=-1)
    return (s[..., -1] - s[..., -2]) > gap


def rollout_value(action_fn, belief, cap_mwh, gamma, x0, h0, episodes, steps, rng, demand=None):
    """Monte-Carlo discounted return; ``action_fn(x, h)`` gives one action per episode (vectorised)."""
    belief = np.asarray(belief, dtype=float)
    H = belief.size
    x = np.full(episodes, float(x0))
    h = h0
    total = np.zeros(episodes)
    disc = 1.0
    for _ in range(steps):
        a = action_fn(x, h)
        d = np.zeros(episodes) if demand is None else demand(h, rng, episodes)
        total += disc * (-belief[h] * cap_mwh * (a + d))
        x = np.clip(x + a, 0.0, 1.0)
        h = (h + 1) % H
        disc *= gamma
    return total.mean(), total.std(ddof=1) / np.sqrt(episodes)


def brute_force_dispatch(costs_a, costs_b, caps, demand):
    """Single-bus quadratic dispatch solved by bisection on the common marginal cost."""
    a, b, caps = (np.asarray(v, dtype=float) for v in (costs_a, costs_b, caps))

    def output(lam):
        with np.errstate(divide="ignore", invalid="ignore"):
            p = np.where(a > 0, (lam - b) / (2 * a), np.where(lam >= b, caps, 0.0))
        return np.clip(p, 0.0, caps)

    lo, hi = 0.0, float(np.max(2 * a * caps + b)) + 1.0
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        if output(mid).sum() < demand:
            lo = mid
        else:
            hi = mid
    return output(hi), hi


def random_dispatch_case(seed: int, max_buses: int = 5, max_gens: int = 6, max_lines: int = 4):
    """A small feasible dispatch instance: (network, bids, costs)."""
    from gridmfg.core import Generator, Line, Network
    from gridmfg.dispatch import linearize_costs

    rng = np.random.default_rng(seed)
    M = int(rng.integers(1, max_buses + 1))
    G = int(rng.integers(1, max_gens + 1))
    L = int(rng.integers(0, max_lines + 1)) if M > 1 else 0
    gens = [Generator(f"g{g}", int(rng.integers(M)), "oil", float(rng.uniform(0, 0.05)),
                      float(rng.uniform(5, 60)), float(rng.uniform(20, 100))) for g in range(G)]
    ptdf = rng.uniform(-1, 1, size=(L, M))
    ptdf[:, M - 1] = 0.0  # last bus is the hub
    caps = np.array([g.p_max for g in gens])
    # dispatch a random feasible point and set limits so it stays feasible
    p0 = caps * rng.uniform(0.1, 0.7, G)
    D = rng.dirichlet(np.ones(M)) * p0.sum()
    inj = np.zeros(M)
    np.add.at(inj, [g.bus for g in gens], p0)
    f0 = ptdf @ (inj - D)
    limits = np.abs(f0) + rng.uniform(0.5, 20, L)
    lines = [Line(f"l{i}", float(limits[i])) for i in range(L)]
    net = Network(M, ptdf, lines, gens)
    return net, D, linearize_costs(net, caps)


def two_hour_env(belief=(10.0, 50.0), capacity_kwh=10.0, gamma=0.95, x0=0.0, eta=1.0):
    """The cheap/expensive two-hour storage MDP with zero demand."""
    from gridmfg.core import DemandProfile, TriangularDist
    from gridmfg.learning import TrainEnv

    prof = DemandProfile(np.zeros(len(belief)), TriangularDist(1.0, 1.0, 1.0))
    return TrainEnv(np.array(belief, dtype=float), x0, prof, eta, capacity_kwh, gamma=gamma)


def matches_value_iteration(policy, Q, acts, gap=1e-6):
    """(matched, decisive) counts of states where the policy's modal action is the VI argmax."""
    decisive = decisive_states(Q, gap)
    best = acts[np.argmax(Q, axis=-1)]
    chosen = policy.space.values[np.argmax(policy.probs[:, :, 0, :], axis=-1)]
    ok = np.isclose(chosen, best) & decisive
    return int(ok.sum()), int(decisive.sum())


def tiny_case(H=2, prosumers=3, consumers=2, gens=None, pros=None, cons=None, scale=(0.9, 1.1, 1.0)):
    """A one-bus case built in memory: one quadratic oil unit and flat household profiles."""
    import json as _json

    from gridmfg.case import DEFAULT_SCENARIO, Case
    from gridmfg.core import DemandProfile, Generator, Network, TriangularDist

    gens = gens or [Generator("oil0", 0, "oil", 0.01, 20.0, 100.0)]
    net = Network(1, np.zeros((0, 1)), [], gens)
    dist = TriangularDist(scale[0], scale[1], scale[2])
    pros = np.linspace(0.3, -0.2, H) if pros is None else np.asarray(pros, dtype=float)
    cons = np.linspace(0.5, 0.8, H) if cons is None else np.asarray(cons, dtype=float)
    scen = _json.loads(_json.dumps(DEFAULT_SCENARIO))
    scen["H"] = H
    scen["demand_scale"] = list(scale[:2]) + [scale[2]]
    return Case(net, [DemandProfile(pros, dist)], [DemandProfile(cons, dist)],
                np.array([prosumers]), np.array([consumers]), scen)
