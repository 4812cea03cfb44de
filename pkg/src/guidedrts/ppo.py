"""Advantage estimation, clipped off-policy losses, and running normalizers.

Everything here is a pure function over numpy arrays / autodiff tensors; the
training loop composes them. `product_is_gradient` implements the unclipped
full-product importance-sampling gradient and exists as a test oracle for the
clipped path, not as a training estimator.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import numcore as nc


@dataclass
class GaeConfig:
    gamma: float = 0.99
    lam: float = 0.95


@dataclass
class LossConfig:
    clip_eps: float = 0.1
    value_coef: float = 0.5  # c1
    entropy_coef: float = 0.01  # c2
    epochs: int = 4
    minibatches: int = 4


def compute_gae(rewards, values, dones, bootstrap_value, cfg: GaeConfig):
    """Standard lambda-weighted advantage recursion.

    delta_t = r_t + gamma*V(s_{t+1})*(1-done_t) - V(s_t)
    A_t     = delta_t + gamma*lam*(1-done_t)*A_{t+1}

    Accepts (T,) vectors or (T, N) column-per-environment arrays.
    Returns (advantages, returns) with returns = advantages + values.
    """
    rewards = np.asarray(rewards, dtype=np.float64)
    values = np.asarray(values, dtype=np.float64)
    cont = 1.0 - np.asarray(dones, dtype=np.float64)
    t_len = rewards.shape[0]
    advantages = np.zeros_like(rewards)
    next_value = np.asarray(bootstrap_value, dtype=np.float64)
    next_adv = np.zeros_like(next_value)
    for t in range(t_len - 1, -1, -1):
        delta = rewards[t] + cfg.gamma * next_value * cont[t] - values[t]
        next_adv = delta + cfg.gamma * cfg.lam * cont[t] * next_adv
        advantages[t] = next_adv
        next_value = values[t]
    return advantages, advantages + values


def clip_ratio(rho, eps: float):
    """Piecewise clamp of the importance ratio to [1-eps, 1+eps]."""
    return np.clip(rho, 1.0 - eps, 1.0 + eps)


def clipped_surrogate(logp_target: nc.Tensor, logp_behavior, advantages, eps: float) -> nc.Tensor:
    """Mean over samples of min(rho*A, clip(rho)*A); maximized by the optimizer."""
    logp_behavior = np.asarray(logp_behavior, dtype=logp_target.data.dtype)
    advantages = np.asarray(advantages, dtype=logp_target.data.dtype)
    rho = (logp_target - logp_behavior).exp()
    adv = nc.Tensor(advantages)
    return nc.minimum(rho * adv, rho.clamp(1.0 - eps, 1.0 + eps) * adv).mean()


def value_loss_clipped(v_new: nc.Tensor, v_old, v_target, eps: float) -> nc.Tensor:
    """max of the plain and the clipped squared error, averaged over samples."""
    v_old = np.asarray(v_old, dtype=v_new.data.dtype)
    v_target = np.asarray(v_target, dtype=v_new.data.dtype)
    plain = (v_new - v_target) ** 2
    clipped = ((v_new - v_old).clamp(-eps, eps) + v_old - v_target) ** 2
    return nc.maximum(plain, clipped).mean()


def joint_objective(surrogate, value_loss, entropy_bonus, c1: float, c2: float):
    """surrogate - c1*value_loss + c2*entropy, the maximized total of the update."""
    return surrogate - value_loss * c1 + entropy_bonus * c2


def normalize_advantages(advantages: np.ndarray) -> np.ndarray:
    """Zero-mean, unit-population-std advantages (per minibatch); 1e-8 guard."""
    advantages = np.asarray(advantages, dtype=np.float64)
    if advantages.size < 2:
        return np.zeros_like(advantages)
    return (advantages - advantages.mean()) / (advantages.std() + 1e-8)


@dataclass
class RunningNormalizer:
    """Streaming mean/variance with the usual clip-to-[-10, 10] output range.

    Observation mode subtracts the mean; reward mode tracks the variance of
    the per-environment discounted return and only rescales.
    """

    shape: tuple = ()
    clip: float = 10.0
    mean: np.ndarray = None
    var: np.ndarray = None
    count: float = 1e-4

    def __post_init__(self):
        if self.mean is None:
            self.mean = np.zeros(self.shape, dtype=np.float64)
        if self.var is None:
            self.var = np.ones(self.shape, dtype=np.float64)

    def update(self, batch: np.ndarray):
        batch = np.asarray(batch, dtype=np.float64).reshape((-1,) + tuple(self.shape))
        b_count = batch.shape[0]
        if b_count == 0:
            return
        b_mean = batch.mean(axis=0)
        b_var = batch.var(axis=0)
        delta = b_mean - self.mean
        tot = self.count + b_count
        self.mean = self.mean + delta * b_count / tot
        m_a = self.var * self.count
        m_b = b_var * b_count
        m2 = m_a + m_b + delta**2 * self.count * b_count / tot
        self.var = m2 / tot
        self.count = tot

    def apply_obs(self, x: np.ndarray) -> np.ndarray:
        out = (np.asarray(x) - self.mean) / np.sqrt(self.var + 1e-8)
        return np.clip(out, -self.clip, self.clip)

    def apply_reward(self, r: np.ndarray) -> np.ndarray:
        out = np.asarray(r) / np.sqrt(self.var + 1e-8)
        return np.clip(out, -self.clip, self.clip)

    def state_dict(self) -> dict:
        return {"mean": np.asarray(self.mean).tolist(), "var": np.asarray(self.var).tolist(),
                "count": self.count, "clip": self.clip}

    def load_state_dict(self, d: dict):
        self.mean = np.asarray(d["mean"], dtype=np.float64)
        self.var = np.asarray(d["var"], dtype=np.float64)
        self.count = float(d["count"])
        self.clip = float(d["clip"])


@dataclass
class RewardScaler:
    """Per-reward-function scaling by the running std of discounted returns."""

    num_envs: int
    gamma: float = 0.99
    norm: RunningNormalizer = None
    returns: np.ndarray = None

    def __post_init__(self):
        if self.norm is None:
            self.norm = RunningNormalizer(shape=())
        if self.returns is None:
            self.returns = np.zeros(self.num_envs, dtype=np.float64)

    def update_and_scale(self, rewards: np.ndarray, dones: np.ndarray) -> np.ndarray:
        """Walk a (T, N) reward block in time order, updating stats, then scale."""
        rewards = np.asarray(rewards, dtype=np.float64)
        dones = np.asarray(dones)
        for t in range(rewards.shape[0]):
            self.returns = self.returns * self.gamma * (1.0 - dones[t]) + rewards[t]
            self.norm.update(self.returns)
        return self.norm.apply_reward(rewards)

    def state_dict(self) -> dict:
        return {"norm": self.norm.state_dict(), "returns": self.returns.tolist(),
                "gamma": self.gamma}

    def load_state_dict(self, d: dict):
        self.norm.load_state_dict(d["norm"])
        self.returns = np.asarray(d["returns"], dtype=np.float64)
        self.gamma = float(d["gamma"])


def product_is_gradient(logp_target: nc.Tensor, logp_behavior, advantages,
                        params) -> list[np.ndarray]:
    """Full-episode product-importance-sampling policy gradient (test oracle).

    grad = (prod_t pi/pi_b) * sum_t grad log pi(a_t|s_t) * A_t, evaluated for
    one trajectory whose per-step target log-probs are `logp_target`.
    """
    logp_behavior = np.asarray(logp_behavior, dtype=np.float64)
    advantages = np.asarray(advantages, dtype=np.float64)
    ratio_product = float(np.exp(logp_target.data.sum() - logp_behavior.sum()))
    nc.zero_grads(params)
    weighted = (logp_target * advantages).sum()
    weighted.backward()
    grads = [ratio_product * (p.grad if p.grad is not None else np.zeros_like(p.data))
             for p in params]
    nc.zero_grads(params)
    return grads


def explained_variance(returns: np.ndarray, values: np.ndarray) -> float:
    returns, values = np.asarray(returns), np.asarray(values)
    var = returns.var()
    if var == 0:
        return 0.0
    return float(1.0 - (returns - values).var() / var)
