"""Clipped-surrogate policy gradient with a one-hidden-layer masked softmax policy.

Inputs are one-hot encodings of (storage bin, hour, demand bin). Invalid
actions get a logit of ``-inf`` before normalisation, so they have zero
probability and contribute nothing to the gradient. Advantages come from
GAE over a tabular critic. Gradients are written out by hand and checked
against finite differences in the test suite.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..aggregator import mask_actions, phi
from ..core import RngStream
from .env import TrainEnv, bin_midpoint, storage_bin
from .policy import Policy

PARAM_NAMES = ("W1", "b1", "W2", "b2")


class LearnerDivergence(RuntimeError):
    """Average batch return kept deteriorating; training was aborted."""


@dataclass
class PgParams:
    hidden: int = 32
    lr: float = 0.006
    clip: float = 0.2
    entropy: float = 0.05
    batch_steps: int = 1440
    epochs: int = 8
    gae_lambda: float = 0.5
    critic_lr: float = 0.5
    init_scale: float = 0.01
    divergence_window: int = 10
    divergence_drop: float = 0.5
    restart_every: int = 24  # exploring starts from a random grid level and hour; 0 disables


@dataclass
class Batch:
    """Frozen rollout data for one surrogate evaluation."""

    feats: np.ndarray  # (N, 3) int: storage bin, hour, demand bin
    masks: np.ndarray  # (N, A) bool
    actions: np.ndarray  # (N,) int
    old_logp: np.ndarray  # (N,)
    advantages: np.ndarray  # (N,)


def one_hot(feats: np.ndarray, dims: tuple[int, int, int]) -> np.ndarray:
    B, H, D = dims
    X = np.zeros((feats.shape[0], B + H + D))
    rows = np.arange(feats.shape[0])
    X[rows, feats[:, 0]] = 1.0
    X[rows, B + feats[:, 1]] = 1.0
    X[rows, B + H + feats[:, 2]] = 1.0
    return X


def init_params(n_in: int, n_hidden: int, n_out: int, rng: RngStream, scale: float = 0.01) -> dict:
    g = rng.generator
    return {
        "W1": g.normal(0.0, 1.0 / np.sqrt(n_in), (n_in, n_hidden)),
        "b1": np.zeros(n_hidden),
        "W2": g.normal(0.0, scale, (n_hidden, n_out)),
        "b2": np.zeros(n_out),
    }


def forward(params: dict, X: np.ndarray, masks: np.ndarray):
    """Masked log-probabilities; returns (logp, probs, hidden activations)."""
    hid = np.tanh(X @ params["W1"] + params["b1"])
    logits = hid @ params["W2"] + params["b2"]
    logits = np.where(masks, logits, -np.inf)
    top = logits.max(axis=1, keepdims=True)
    shifted = logits - top
    e = np.exp(shifted)
    z = e.sum(axis=1, keepdims=True)
    probs = e / z
    logp = np.where(masks, shifted - np.log(z), -np.inf)
    return logp, probs, hid


def surrogate(params: dict, batch: Batch, dims, clip: float, ent_coef: float):
    """Clipped surrogate plus entropy bonus (to be maximised) and its gradient."""
    X = one_hot(batch.feats, dims)
    logp, probs, hid = forward(params, X, batch.masks)
    n = batch.actions.size
    rows = np.arange(n)
    lp_a = logp[rows, batch.actions]
    ratio = np.exp(lp_a - batch.old_logp)
    adv = batch.advantages
    unclipped = ratio * adv
    clipped = np.clip(ratio, 1.0 - clip, 1.0 + clip) * adv
    plogp = np.where(batch.masks, probs * np.where(batch.masks, logp, 0.0), 0.0)
    entropy = -plogp.sum(axis=1)
    value = np.minimum(unclipped, clipped).mean() + ent_coef * entropy.mean()

    # d value / d logp(a): ratio * adv where the unclipped branch is active
    active = unclipped <= clipped
    coef = np.where(active, ratio * adv, 0.0) / n
    onehot = np.zeros_like(probs)
    onehot[rows, batch.actions] = 1.0
    dlogits = coef[:, None] * (onehot - probs)
    safe_logp = np.where(batch.masks, logp, 0.0)
    dent = -probs * (safe_logp + entropy[:, None])
    dlogits += ent_coef * dent / n
    dlogits = np.where(batch.masks, dlogits, 0.0)

    grads = {
        "W2": hid.T @ dlogits,
        "b2": dlogits.sum(axis=0),
    }
    dz = (dlogits @ params["W2"].T) * (1.0 - hid * hid)
    grads["W1"] = X.T @ dz
    grads["b1"] = dz.sum(axis=0)
    return float(value), grads


class Adam:
    def __init__(self, params: dict, lr: float, b1: float = 0.9, b2: float = 0.999, eps: float = 1e-8):
        self.lr, self.b1, self.b2, self.eps = lr, b1, b2, eps
        self.m = {k: np.zeros_like(v) for k, v in params.items()}
        self.v = {k: np.zeros_like(v) for k, v in params.items()}
        self.t = 0

    def ascend(self, params: dict, grads: dict) -> None:
        self.t += 1
        for k in params:
            self.m[k] = self.b1 * self.m[k] + (1 - self.b1) * grads[k]
            self.v[k] = self.b2 * self.v[k] + (1 - self.b2) * grads[k] ** 2
            mh = self.m[k] / (1 - self.b1 ** self.t)
            vh = self.v[k] / (1 - self.b2 ** self.t)
            params[k] += self.lr * mh / (np.sqrt(vh) + self.eps)


class PgLearner:
    """Policy-gradient learner whose network and critic persist across phases."""

    def __init__(self, space, H: int, storage_bins: int = 11, demand_bins: int = 1,
                 params: PgParams | None = None, rng: RngStream | None = None):
        self.space = space
        self.hp = params or PgParams()
        self.dims = (storage_bins, H, demand_bins)
        rng = rng or RngStream(0)
        self.params = init_params(sum(self.dims), self.hp.hidden, space.n, rng, self.hp.init_scale)
        self.opt = Adam(self.params, self.hp.lr)
        self.critic = np.zeros(self.dims)
        self.batch_means: list[float] = []

    def _all_keys(self) -> np.ndarray:
        B, H, D = self.dims
        return np.array([(b, h, d) for b in range(B) for h in range(H) for d in range(D)])

    def _logits_table(self) -> np.ndarray:
        keys = self._all_keys()
        X = one_hot(keys, self.dims)
        hid = np.tanh(X @ self.params["W1"] + self.params["b1"])
        return (hid @ self.params["W2"] + self.params["b2"]).reshape(self.dims + (self.space.n,))

    def _rollout(self, env: TrainEnv, x: float, h: int, d: float, U: np.ndarray):
        """Roll the current policy for ``U.shape[0]`` steps using pre-drawn uniforms.

        Columns of ``U``: action draw, next demand, restart level, restart hour.
        """
        logits = self._logits_table()
        n = U.shape[0]
        A = self.space.n
        B = env.storage_bins
        every = self.hp.restart_every
        feats = np.empty((n, 3), dtype=int)
        nxt = np.empty((n, 3), dtype=int)
        cut = np.zeros(n, dtype=bool)
        masks = np.empty((n, A), dtype=bool)
        actions = np.empty(n, dtype=int)
        logps = np.empty(n)
        rewards = np.empty(n)
        prof = env.profile
        belief = env.belief
        cap = env.capacity_mwh
        vals = self.space.values
        for t in range(n):
            b = storage_bin(x, B)
            feats[t] = (b, h, env.demand_bin(d))
            m = mask_actions(x, self.space, env.eta)
            masks[t] = m
            z = np.where(m, logits[b, h, feats[t, 2]], -np.inf)
            p = np.exp(z - z.max())
            cdf = np.cumsum(p)
            ai = min(int(np.searchsorted(cdf, U[t, 0] * cdf[-1], side="right")), A - 1)
            while not m[ai]:
                ai -= 1
            actions[t] = ai
            logps[t] = np.log(p[ai] / cdf[-1])
            ph = phi(vals[ai], env.eta)
            rewards[t] = -belief[h] * cap * (ph + d)
            x = min(max(x + ph, 0.0), 1.0)
            h = (h + 1) % env.H
            d = prof.hourly_mean[h] * prof.scale.ppf(U[t, 1])
            nxt[t] = (storage_bin(x, B), h, env.demand_bin(d))
            if every and (t + 1) % every == 0:
                cut[t] = True
                x = bin_midpoint(min(int(U[t, 2] * B), B - 1), B)
                h = min(int(U[t, 3] * env.H), env.H - 1)
                d = prof.hourly_mean[h] * prof.scale.ppf(U[t, 1])
        cut[-1] = True
        return feats, nxt, cut, masks, actions, logps, rewards, (x, h, d)

    def _advantages(self, feats, nxt, cut, rewards, gamma):
        V = self.critic[feats[:, 0], feats[:, 1], feats[:, 2]]
        Vn = self.critic[nxt[:, 0], nxt[:, 1], nxt[:, 2]]
        delta = rewards + gamma * Vn - V
        adv = np.empty(rewards.size)
        last = 0.0
        lam = self.hp.gae_lambda
        for t in range(rewards.size - 1, -1, -1):
            if cut[t]:
                last = 0.0
            last = delta[t] + gamma * lam * last
            adv[t] = last
        return adv, adv + V

    def _check_divergence(self) -> None:
        w = self.hp.divergence_window
        hist = self.batch_means
        if len(hist) < w + 1:
            return
        ref = hist[-w - 1]
        recent = hist[-w:]
        limit = ref - self.hp.divergence_drop * abs(ref)
        if abs(ref) > 0 and all(r < limit for r in recent):
            raise LearnerDivergence(
                f"mean batch reward fell from {ref:.6g} to {recent[-1]:.6g} "
                f"and stayed >{self.hp.divergence_drop:.0%} worse for {w} batches"
            )

    def train(self, env: TrainEnv, steps: int, rng: RngStream) -> Policy:
        if steps < 1:
            raise ValueError("training needs at least one step")
        x, h = env.initial_storage, env.start_hour
        d = env.profile.hourly_mean[h] * env.profile.scale.ppf(float(rng.random()))
        done = 0
        while done < steps:
            n = min(self.hp.batch_steps, steps - done)
            U = rng.random((n, 4))
            feats, nxt, cut, masks, actions, logps, rewards, (x, h, d) = self._rollout(env, x, h, d, U)
            adv, returns = self._advantages(feats, nxt, cut, rewards, env.gamma)
            self._fit_critic(feats, returns)
            std = adv.std()
            norm_adv = (adv - adv.mean()) / (std if std > 1e-12 else 1.0)
            batch = Batch(feats, masks, actions, logps, norm_adv)
            for _ in range(self.hp.epochs):
                _, grads = surrogate(self.params, batch, self.dims, self.hp.clip, self.hp.entropy)
                self.opt.ascend(self.params, grads)
            self.batch_means.append(float(rewards.mean()))
            self._check_divergence()
            done += n
        return self.policy(env.eta)

    def _fit_critic(self, feats, returns) -> None:
        idx = np.ravel_multi_index(feats.T, self.dims)
        sums = np.bincount(idx, weights=returns, minlength=self.critic.size)
        counts = np.bincount(idx, minlength=self.critic.size)
        flat = self.critic.reshape(-1)
        seen = counts > 0
        flat[seen] += self.hp.critic_lr * (sums[seen] / counts[seen] - flat[seen])

    def policy(self, eta: float) -> Policy:
        """Tabulate the masked softmax at each bin's representative level."""
        logits = self._logits_table()
        B = self.dims[0]
        probs = np.zeros_like(logits)
        for b in range(B):
            m = mask_actions(bin_midpoint(b, B), self.space, eta)
            z = np.where(m, logits[b], -np.inf)
            z = z - z.max(axis=-1, keepdims=True)
            e = np.exp(z)
            probs[b] = e / e.sum(axis=-1, keepdims=True)
        return Policy(probs, self.space, eta)


def train_pg(env: TrainEnv, steps: int, rng: RngStream, params: PgParams | None = None,
             learner: PgLearner | None = None) -> Policy:
    if steps < 1:
        raise ValueError("training needs at least one step")
    if learner is None:
        learner = PgLearner(env.space, env.H, env.storage_bins, env.demand_bins, params, rng.spawn(0))
    return learner.train(env, steps, rng)
