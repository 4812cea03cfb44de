"""Behavior-policy scheduling and shared-rollout off-policy training.

A PolicySet holds the main policy (bound to the sparse reward stream) plus
auxiliary policies bound to shaped streams. Rollouts are collected once with
an epsilon-greedy choice of behavior policy per environment per timestep; all
policies then update from the same batch, each against its own reward stream,
with ratios taken against the recorded behavior log-probabilities. PLO can
skip a policy's update when its stream carries no signal in the batch.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import agent, gridrts, numcore as nc, ppo


@dataclass
class GuidanceSchedule:
    shift: int
    adaptation: int
    eps_start: float = 0.95
    eps_end: float = 0.0


def epsilon_schedule(t: int, sched: GuidanceSchedule) -> float:
    """Constant eps_start through the shift, then linear to eps_end."""
    if t < sched.shift:
        return sched.eps_start
    if sched.adaptation <= 0 or t >= sched.shift + sched.adaptation:
        return sched.eps_end
    frac = (t - sched.shift) / sched.adaptation
    return sched.eps_start + (sched.eps_end - sched.eps_start) * frac


@dataclass
class PloConfig:
    enabled: bool = False
    positive_only: bool = False  # stricter optional criterion: >0 instead of !=0


@dataclass
class PolicyHandle:
    """One trainable policy bound to one reward stream."""

    name: str
    policy: agent.Policy
    reward_key: str  # "sparse" or "shaped"
    adam: nc.AdamState
    reward_scaler: ppo.RewardScaler


class PolicySet:
    """Main policy first, then auxiliaries; index is the behavior-policy id."""

    def __init__(self, handles: list[PolicyHandle]):
        if not handles:
            raise ValueError("PolicySet needs at least one policy")
        self.handles = handles

    def __len__(self):
        return len(self.handles)

    @property
    def main(self) -> PolicyHandle:
        return self.handles[0]


def make_policy_set(reward_keys: list[str], seed: int, num_envs: int,
                    gamma: float = 0.99, lr: float = 2.5e-4,
                    dtype=np.float32, adam_eps: float = 1e-5) -> PolicySet:
    """Build main + auxiliaries; reward_keys[0] is the main policy's stream."""
    handles = []
    for i, key in enumerate(reward_keys):
        pol = agent.Policy(seed=seed + 1000 * i, dtype=dtype)
        handles.append(PolicyHandle(
            name="main" if i == 0 else f"aux{i}",
            policy=pol,
            reward_key=key,
            adam=nc.AdamState.for_params(pol.parameters(), lr=lr, eps=adam_eps),
            reward_scaler=ppo.RewardScaler(num_envs=num_envs, gamma=gamma),
        ))
    return PolicySet(handles)


def select_behavior(t: int, rng: np.random.Generator, pset: PolicySet,
                    sched: GuidanceSchedule | None) -> int:
    """Main with prob 1-eps(t), else a uniform auxiliary; fresh draw per call."""
    n_aux = len(pset) - 1
    if n_aux == 0 or sched is None:
        return 0
    eps = epsilon_schedule(t, sched)
    if rng.random() < eps:
        return 1 if n_aux == 1 else 1 + int(rng.integers(n_aux))
    return 0


# ----- vectorized environments ------------------------------------------------


class VecEnvRunner:
    """N simulator instances with auto-reset and episode accounting."""

    def __init__(self, task: gridrts.TaskId, base_seed: int, num_envs: int = 8,
                 max_ticks: int = gridrts.DEFAULT_MAX_TICKS):
        self.task = task
        self.base_seed = base_seed
        self.num_envs = num_envs
        self.max_ticks = max_ticks
        self.states = [None] * num_envs
        self.episode_idx = [0] * num_envs
        self.ep_sparse = np.zeros(num_envs)
        self.ep_shaped = np.zeros(num_envs)
        self.ep_len = np.zeros(num_envs, dtype=np.int64)
        self.raw_obs = None
        self.masks = None
        self.reset_all()

    def _seed_for(self, env_idx: int, episode: int) -> int:
        return int(np.random.SeedSequence([self.base_seed, env_idx, episode]).generate_state(1)[0])

    def _reset_env(self, i: int):
        seed = self._seed_for(i, self.episode_idx[i])
        state, obs, mask = gridrts.reset(self.task, seed, max_ticks=self.max_ticks)
        self.states[i] = state
        self.raw_obs[i] = obs
        self.masks[i] = mask
        self.ep_sparse[i] = self.ep_shaped[i] = 0.0
        self.ep_len[i] = 0

    def reset_all(self):
        probe_state, probe_obs, probe_mask = gridrts.reset(self.task, 0, max_ticks=self.max_ticks)
        self.raw_obs = np.zeros((self.num_envs,) + probe_obs.shape, dtype=np.float32)
        self.masks = np.zeros((self.num_envs,) + probe_mask.shape, dtype=bool)
        for i in range(self.num_envs):
            self._reset_env(i)

    def step(self, actions: np.ndarray):
        """Step every env; returns (sparse, shaped, dones, completed_episodes)."""
        sparse = np.zeros(self.num_envs)
        shaped = np.zeros(self.num_envs)
        dones = np.zeros(self.num_envs, dtype=bool)
        completed = []
        for i in range(self.num_envs):
            state, obs, mask, rew, done, _ = gridrts.step(self.states[i], actions[i])
            self.states[i] = state
            self.raw_obs[i] = obs
            self.masks[i] = mask
            sparse[i], shaped[i], dones[i] = rew.sparse, rew.shaped, done
            self.ep_sparse[i] += rew.sparse
            self.ep_shaped[i] += rew.shaped
            self.ep_len[i] += 1
            if done:
                completed.append({
                    "sparse": float(self.ep_sparse[i]),
                    "shaped": float(self.ep_shaped[i]),
                    "length": int(self.ep_len[i]),
                    "env": i,
                })
                self.episode_idx[i] += 1
                self._reset_env(i)
        return sparse, shaped, dones, completed

    def state_dict(self) -> dict:
        return {
            "episode_idx": list(self.episode_idx),
            "ep_sparse": self.ep_sparse.tolist(),
            "ep_shaped": self.ep_shaped.tolist(),
            "ep_len": self.ep_len.tolist(),
            "states": [gridrts.state_to_json(s) for s in self.states],
        }

    def load_state_dict(self, d: dict):
        self.episode_idx = list(d["episode_idx"])
        self.ep_sparse = np.asarray(d["ep_sparse"], dtype=np.float64)
        self.ep_shaped = np.asarray(d["ep_shaped"], dtype=np.float64)
        self.ep_len = np.asarray(d["ep_len"], dtype=np.int64)
        self.states = [gridrts.state_from_json(s) for s in d["states"]]
        for i, s in enumerate(self.states):
            self.raw_obs[i] = gridrts.encode_observation(s)
            self.masks[i] = gridrts.valid_action_mask(s)


# ----- rollout collection --------------------------------------------------------


@dataclass
class RolloutBatch:
    """Shared trajectory storage: one collection feeds every policy's update."""

    obs: np.ndarray  # (T, N, h, w, planes), normalized when obs_norm is active
    masks: np.ndarray  # (T, N, n_mask)
    actions: np.ndarray  # (T, N, 8)
    behavior_ids: np.ndarray  # (T, N)
    behavior_logps: np.ndarray  # (T, N)
    rewards: dict  # key -> (T, N) raw reward stream
    dones: np.ndarray  # (T, N)
    next_obs: np.ndarray  # (N, h, w, planes)
    episode_stats: list
    t0: int
    epsilon: float


def collect_rollout(envs: VecEnvRunner, pset: PolicySet, sched: GuidanceSchedule | None,
                    t0: int, rng: np.random.Generator, steps: int = 128,
                    obs_norm: ppo.RunningNormalizer | None = None) -> RolloutBatch:
    """Run `steps` vector steps, sampling actions from scheduled behavior policies."""
    n = envs.num_envs
    obs_shape = envs.raw_obs.shape[1:]
    obs = np.zeros((steps, n) + obs_shape, dtype=np.float32)
    masks = np.zeros((steps, n, envs.masks.shape[1]), dtype=bool)
    actions = np.zeros((steps, n, 8), dtype=np.int64)
    behavior_ids = np.zeros((steps, n), dtype=np.int64)
    behavior_logps = np.zeros((steps, n), dtype=np.float64)
    rewards = {"sparse": np.zeros((steps, n)), "shaped": np.zeros((steps, n))}
    dones = np.zeros((steps, n), dtype=bool)
    episode_stats = []
    eps0 = epsilon_schedule(t0, sched) if (sched is not None and len(pset) > 1) else 0.0

    for s in range(steps):
        t = t0 + s * n
        if obs_norm is not None:
            obs_norm.update(envs.raw_obs)
            step_obs = obs_norm.apply_obs(envs.raw_obs).astype(np.float32)
        else:
            step_obs = envs.raw_obs.copy()
        step_mask = envs.masks.copy()
        ids = np.array([select_behavior(t, rng, pset, sched) for i in range(n)])
        step_actions = np.zeros((n, 8), dtype=np.int64)
        step_logps = np.zeros(n)
        for pid in sorted(set(ids.tolist())):
            rows = np.nonzero(ids == pid)[0]
            pol = pset.handles[pid].policy
            with nc.no_grad():
                logits, _ = pol.forward(step_obs[rows])
            dist = agent.masked_distribution(logits, step_mask[rows], slices=pol.slices)
            acts, logps = agent.sample_and_logprob(dist, rng)
            step_actions[rows] = acts
            step_logps[rows] = logps
        sparse, shaped, step_dones, completed = envs.step(step_actions)
        for ep in completed:
            ep["end_step"] = t + n
            episode_stats.append(ep)
        obs[s] = step_obs
        masks[s] = step_mask
        actions[s] = step_actions
        behavior_ids[s] = ids
        behavior_logps[s] = step_logps
        rewards["sparse"][s] = sparse
        rewards["shaped"][s] = shaped
        dones[s] = step_dones

    next_obs = obs_norm.apply_obs(envs.raw_obs).astype(np.float32) if obs_norm is not None \
        else envs.raw_obs.copy()
    return RolloutBatch(obs, masks, actions, behavior_ids, behavior_logps, rewards,
                        dones, next_obs, episode_stats, t0, eps0)


# ----- PLO and updates -------------------------------------------------------------


def plo_gate(batch: RolloutBatch, handle: PolicyHandle, cfg: PloConfig) -> bool:
    """False iff PLO is on and the policy's bound stream has no signal in the batch."""
    if not cfg.enabled:
        return True
    stream = batch.rewards[handle.reward_key]
    if cfg.positive_only:
        return bool((stream > 0).any())
    return bool((stream != 0).any())


def _batch_values(policy: agent.Policy, obs_flat: np.ndarray) -> np.ndarray:
    with nc.no_grad():
        _, values = policy.forward(obs_flat)
    return values.data.astype(np.float64)


def update_policies(pset: PolicySet, batch: RolloutBatch, loss_cfg: ppo.LossConfig,
                    plo_cfg: PloConfig, gae_cfg: ppo.GaeConfig,
                    rng: np.random.Generator, lr: float,
                    max_grad_norm: float = 0.5) -> dict:
    """One PPO-style update per policy from the shared batch.

    Per policy: recompute values, GAE on its own (scaled) stream, then K epochs
    over minibatches maximizing the joint clipped objective; global grad clip
    and Adam with the supplied annealed rate. Skipped policies are untouched.
    """
    t_len, n = batch.dones.shape
    flat_obs = batch.obs.reshape((t_len * n,) + batch.obs.shape[2:])
    flat_masks = batch.masks.reshape(t_len * n, -1)
    flat_actions = batch.actions.reshape(t_len * n, 8)
    flat_behavior_logps = batch.behavior_logps.reshape(t_len * n)
    stats = {}

    for handle in pset.handles:
        if not plo_gate(batch, handle, plo_cfg):
            stats[handle.name] = {"plo_skipped": True, "pg_loss": 0.0, "value_loss": 0.0,
                                  "entropy": 0.0, "explained_variance": 0.0}
            continue
        pol = handle.policy
        values = _batch_values(pol, flat_obs).reshape(t_len, n)
        bootstrap = _batch_values(pol, batch.next_obs)
        scaled = handle.reward_scaler.update_and_scale(batch.rewards[handle.reward_key],
                                                       batch.dones)
        adv, ret = ppo.compute_gae(scaled, values, batch.dones, bootstrap, gae_cfg)
        flat_adv = adv.reshape(t_len * n)
        flat_ret = ret.reshape(t_len * n)
        flat_val = values.reshape(t_len * n)

        params = pol.parameters()
        batch_size = t_len * n
        mb_size = batch_size // loss_cfg.minibatches
        last = {"pg_loss": 0.0, "value_loss": 0.0, "entropy": 0.0}
        for _ in range(loss_cfg.epochs):
            perm = rng.permutation(batch_size)
            for m in range(loss_cfg.minibatches):
                idx = perm[m * mb_size : (m + 1) * mb_size]
                logits, v_new = pol.forward(flat_obs[idx])
                dist = agent.masked_distribution(logits, flat_masks[idx], slices=pol.slices)
                logp_new = agent.logprob_of(dist, flat_actions[idx])
                mb_adv = ppo.normalize_advantages(flat_adv[idx])
                surrogate = ppo.clipped_surrogate(logp_new, flat_behavior_logps[idx],
                                                  mb_adv, loss_cfg.clip_eps)
                v_loss = ppo.value_loss_clipped(v_new, flat_val[idx], flat_ret[idx],
                                                loss_cfg.clip_eps)
                ent = agent.entropy(dist).mean()
                objective = ppo.joint_objective(surrogate, v_loss, ent,
                                                loss_cfg.value_coef, loss_cfg.entropy_coef)
                nc.zero_grads(params)
                (-objective).backward()
                grads = nc.global_grad_clip([p.grad for p in params], max_grad_norm)
                nc.adam_step(params, grads, handle.adam, lr=lr)
                last = {"pg_loss": -float(surrogate.data), "value_loss": float(v_loss.data),
                        "entropy": float(ent.data)}
        nc.zero_grads(params)
        stats[handle.name] = {
            "plo_skipped": False,
            "explained_variance": ppo.explained_variance(flat_ret, flat_val),
            **last,
        }
    return stats
