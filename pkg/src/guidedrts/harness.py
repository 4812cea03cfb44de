"""Experiment runner: strategies, config resolution, metrics, checkpoints.

Six training strategies: plain PPO on the sparse or the shaped stream, and
action guidance with long/short/mixed schedules, each togglable with PLO.
Every run writes `run.json` (resolved config), `metrics.csv` (one row per
rollout/update), and paired checkpoint files (binary params + JSON sidecar);
training is resumable from any checkpoint.
"""

from __future__ import annotations

import csv
import json
import os
import time
from collections import deque
from dataclasses import dataclass, asdict, fields

import numpy as np

from . import gridrts, guidance, numcore as nc, ppo, agent

STRATEGIES = ("sparse", "shaped", "ag_long", "ag_short", "ag_mixed")

STRATEGY_DEFAULTS = {
    "sparse": dict(shift=0, adaptation=0, epsilon_end=0.0),
    "shaped": dict(shift=0, adaptation=0, epsilon_end=0.0),
    "ag_long": dict(shift=2_000_000, adaptation=7_000_000, epsilon_end=0.0),
    "ag_short": dict(shift=800_000, adaptation=1_000_000, epsilon_end=0.0),
    "ag_mixed": dict(shift=2_000_000, adaptation=2_000_000, epsilon_end=0.5),
}


@dataclass
class ExperimentConfig:
    task: str = "LearnToAttack"
    strategy: str = "sparse"
    plo: bool = False
    plo_positive_only: bool = False
    seed: int = 1
    total_timesteps: int = 0  # 0 -> shift + adaptation + 1,000,000
    shift: int = -1  # -1 -> strategy default
    adaptation: int = -1
    epsilon_end: float = -1.0
    epsilon_start: float = 0.95
    gamma: float = 0.99
    gae_lambda: float = 0.95
    clip_eps: float = 0.1
    entropy_coef: float = 0.01
    value_coef: float = 0.5
    max_grad_norm: float = 0.5
    epochs: int = 4
    minibatches: int = 4
    num_envs: int = 8
    num_steps: int = 128
    learning_rate: float = 2.5e-4
    anneal_lr: bool = True
    normalize_obs: bool = True
    adam_eps: float = 1e-5
    max_ticks: int = 2000
    checkpoint_interval: int = 0  # env steps between checkpoints; 0 = final only
    out_dir: str = ""
    resume: str = ""

    def resolve(self) -> "ExperimentConfig":
        """Apply strategy defaults and validate; returns self."""
        if self.strategy not in STRATEGIES:
            raise ValueError(f"strategy: unknown value {self.strategy!r}, expected one of {STRATEGIES}")
        gridrts.task_from_name(self.task)  # raises with the field content on bad tasks
        if self.strategy == "shaped" and self.plo:
            raise ValueError("strategy/plo: PLO is not defined for the shaped-reward baseline")
        defaults = STRATEGY_DEFAULTS[self.strategy]
        if self.shift < 0:
            self.shift = defaults["shift"]
        if self.adaptation < 0:
            self.adaptation = defaults["adaptation"]
        if self.epsilon_end < 0:
            self.epsilon_end = defaults["epsilon_end"]
        if self.total_timesteps <= 0:
            self.total_timesteps = self.shift + self.adaptation + 1_000_000
        if not self.out_dir:
            tag = f"{self.task}_{self.strategy}{'_plo' if self.plo else ''}_s{self.seed}"
            self.out_dir = os.path.join("runs", tag)
        return self


_BOOL_FIELDS = {f.name for f in fields(ExperimentConfig) if f.type == "bool"}
_INT_FIELDS = {f.name for f in fields(ExperimentConfig) if f.type == "int"}
_FLOAT_FIELDS = {f.name for f in fields(ExperimentConfig) if f.type == "float"}


def _coerce(key: str, value: str):
    if key in _BOOL_FIELDS:
        if value.lower() in ("1", "true", "yes", "on"):
            return True
        if value.lower() in ("0", "false", "no", "off"):
            return False
        raise ValueError(f"{key}: not a boolean: {value!r}")
    if key in _INT_FIELDS:
        return int(value)
    if key in _FLOAT_FIELDS:
        return float(value)
    return value


def parse_config(path: str | None, overrides: dict | None = None) -> ExperimentConfig:
    """Flat key=value file, then CLI overrides, then strategy defaults for gaps."""
    known = {f.name for f in fields(ExperimentConfig)}
    values: dict = {}
    if path:
        with open(path) as f:
            for lineno, raw in enumerate(f, start=1):
                line = raw.strip()
                if not line or line.startswith("#"):
                    continue
                if "=" not in line:
                    raise ValueError(f"{path}:{lineno}: malformed line (expected key=value): {raw.rstrip()!r}")
                key, _, value = line.partition("=")
                key, value = key.strip(), value.strip()
                if key not in known:
                    raise ValueError(f"{path}:{lineno}: unknown key {key!r}")
                values[key] = _coerce(key, value)
    for key, value in (overrides or {}).items():
        if value is None:
            continue
        if key not in known:
            raise ValueError(f"unknown config key {key!r}")
        values[key] = value
    return ExperimentConfig(**values).resolve()


def _reward_keys(strategy: str) -> list[str]:
    if strategy == "sparse":
        return ["sparse"]
    if strategy == "shaped":
        return ["shaped"]
    return ["sparse", "shaped"]  # main + one auxiliary


def _schedule(cfg: ExperimentConfig) -> guidance.GuidanceSchedule | None:
    if cfg.strategy in ("sparse", "shaped"):
        return None
    return guidance.GuidanceSchedule(cfg.shift, cfg.adaptation,
                                     cfg.epsilon_start, cfg.epsilon_end)


METRIC_BASE_COLUMNS = [
    "global_step", "episodes", "episode_reward_sparse", "episode_reward_shaped",
    "episode_length", "trailing100_sparse", "epsilon", "lr",
]
METRIC_POLICY_COLUMNS = ["pg_loss", "value_loss", "entropy", "explained_variance", "plo_skips"]


class Trainer:
    """Owns all mutable training state; checkpoint/restore covers every piece."""

    def __init__(self, cfg: ExperimentConfig):
        self.cfg = cfg
        self.task = gridrts.task_from_name(cfg.task)
        self.keys = _reward_keys(cfg.strategy)
        self.sched = _schedule(cfg)
        self.envs = guidance.VecEnvRunner(self.task, cfg.seed, cfg.num_envs, cfg.max_ticks)
        self.pset = guidance.make_policy_set(self.keys, cfg.seed, cfg.num_envs,
                                             gamma=cfg.gamma, lr=cfg.learning_rate,
                                             adam_eps=cfg.adam_eps)
        self.obs_norm = ppo.RunningNormalizer(shape=(10, 10, 27)) if cfg.normalize_obs else None
        self.rng = np.random.default_rng(cfg.seed)
        self.loss_cfg = ppo.LossConfig(cfg.clip_eps, cfg.value_coef, cfg.entropy_coef,
                                       cfg.epochs, cfg.minibatches)
        self.gae_cfg = ppo.GaeConfig(cfg.gamma, cfg.gae_lambda)
        self.plo_cfg = guidance.PloConfig(cfg.plo, cfg.plo_positive_only)
        self.global_step = 0
        self.episodes = 0
        self.plo_skips = {h.name: 0 for h in self.pset.handles}
        self.trailing_sparse = deque(maxlen=100)
        self.last_row_stats = {"sparse": 0.0, "shaped": 0.0, "length": 0.0}
        self.wall_seconds = 0.0

    # -- checkpointing ---------------------------------------------------------

    def save_checkpoint(self, path_base: str):
        tensors = {}
        for h in self.pset.handles:
            for name, p in h.policy.params.items():
                tensors[f"{h.name}/{name}"] = p.data
            for name, m, v in zip(h.policy.param_names(), h.adam.m, h.adam.v):
                tensors[f"{h.name}/adam_m/{name}"] = m
                tensors[f"{h.name}/adam_v/{name}"] = v
        nc.save_checkpoint(path_base + ".bin", tensors)
        sidecar = {
            "config": asdict(self.cfg),
            "map": {"height": 10, "width": 10, "planes": 27},
            "head_slices": [s for s in gridrts.mask_component_sizes(10, 10)],
            "policies": [{"name": h.name, "reward_key": h.reward_key,
                          "adam_step": h.adam.step,
                          "reward_scaler": h.reward_scaler.state_dict()}
                         for h in self.pset.handles],
            "obs_norm": self.obs_norm.state_dict() if self.obs_norm else None,
            "envs": self.envs.state_dict(),
            "rng_state": self.rng.bit_generator.state,
            "global_step": self.global_step,
            "episodes": self.episodes,
            "plo_skips": self.plo_skips,
            "trailing_sparse": list(self.trailing_sparse),
            "last_row_stats": self.last_row_stats,
            "wall_seconds": self.wall_seconds,
        }
        with open(path_base + ".json", "w") as f:
            json.dump(sidecar, f)

    def load_checkpoint(self, path_base: str):
        if path_base.endswith(".bin") or path_base.endswith(".json"):
            path_base = path_base.rsplit(".", 1)[0]
        tensors = nc.load_checkpoint(path_base + ".bin")
        with open(path_base + ".json") as f:
            sidecar = json.load(f)
        for h, meta in zip(self.pset.handles, sidecar["policies"]):
            for name, p in h.policy.params.items():
                p.data = tensors[f"{h.name}/{name}"].astype(p.data.dtype).reshape(p.shape)
            h.adam.step = meta["adam_step"]
            h.adam.m = [tensors[f"{h.name}/adam_m/{n}"].astype(np.float32).reshape(p.shape)
                        for n, p in h.policy.params.items()]
            h.adam.v = [tensors[f"{h.name}/adam_v/{n}"].astype(np.float32).reshape(p.shape)
                        for n, p in h.policy.params.items()]
            h.reward_scaler.load_state_dict(meta["reward_scaler"])
        if self.obs_norm is not None and sidecar["obs_norm"] is not None:
            self.obs_norm.load_state_dict(sidecar["obs_norm"])
        self.envs.load_state_dict(sidecar["envs"])
        self.rng = np.random.default_rng(0)
        self.rng.bit_generator.state = sidecar["rng_state"]
        self.global_step = sidecar["global_step"]
        self.episodes = sidecar["episodes"]
        self.plo_skips = dict(sidecar["plo_skips"])
        self.trailing_sparse = deque(sidecar["trailing_sparse"], maxlen=100)
        self.last_row_stats = dict(sidecar["last_row_stats"])
        self.wall_seconds = float(sidecar["wall_seconds"])

    # -- training --------------------------------------------------------------

    def lr_now(self) -> float:
        if not self.cfg.anneal_lr:
            return self.cfg.learning_rate
        frac = 1.0 - self.global_step / self.cfg.total_timesteps
        return self.cfg.learning_rate * max(frac, 0.0)

    def run_one_rollout(self) -> dict:
        lr = self.lr_now()
        batch = guidance.collect_rollout(self.envs, self.pset, self.sched, self.global_step,
                                         self.rng, steps=self.cfg.num_steps,
                                         obs_norm=self.obs_norm)
        self.global_step += self.cfg.num_envs * self.cfg.num_steps
        stats = guidance.update_policies(self.pset, batch, self.loss_cfg, self.plo_cfg,
                                         self.gae_cfg, self.rng, lr,
                                         self.cfg.max_grad_norm)
        for ep in batch.episode_stats:
            self.episodes += 1
            self.trailing_sparse.append(ep["sparse"])
        if batch.episode_stats:
            self.last_row_stats = {
                "sparse": float(np.mean([e["sparse"] for e in batch.episode_stats])),
                "shaped": float(np.mean([e["shaped"] for e in batch.episode_stats])),
                "length": float(np.mean([e["length"] for e in batch.episode_stats])),
            }
        for name, st in stats.items():
            if st.get("plo_skipped"):
                self.plo_skips[name] += 1
        return {"batch": batch, "stats": stats, "lr": lr}

    def metrics_row(self, result: dict, wall: float) -> dict:
        row = {
            "global_step": self.global_step,
            "episodes": self.episodes,
            "episode_reward_sparse": self.last_row_stats["sparse"],
            "episode_reward_shaped": self.last_row_stats["shaped"],
            "episode_length": self.last_row_stats["length"],
            "trailing100_sparse": float(np.mean(self.trailing_sparse)) if self.trailing_sparse else 0.0,
            "epsilon": result["batch"].epsilon,
            "lr": result["lr"],
        }
        for h in self.pset.handles:
            st = result["stats"][h.name]
            row[f"{h.name}_pg_loss"] = st["pg_loss"]
            row[f"{h.name}_value_loss"] = st["value_loss"]
            row[f"{h.name}_entropy"] = st["entropy"]
            row[f"{h.name}_explained_variance"] = st["explained_variance"]
            row[f"{h.name}_plo_skips"] = self.plo_skips[h.name]
        row["wall_clock_seconds"] = wall
        return row

    def columns(self) -> list[str]:
        cols = list(METRIC_BASE_COLUMNS)
        for h in self.pset.handles:
            cols += [f"{h.name}_{c}" for c in METRIC_POLICY_COLUMNS]
        cols.append("wall_clock_seconds")
        return cols


def run_experiment(cfg: ExperimentConfig, log=print) -> tuple[str, str]:
    """Train per config; returns (metrics.csv path, final checkpoint base path)."""
    cfg = cfg.resolve()
    os.makedirs(cfg.out_dir, exist_ok=True)
    trainer = Trainer(cfg)
    if cfg.resume:
        trainer.load_checkpoint(cfg.resume)
    with open(os.path.join(cfg.out_dir, "run.json"), "w") as f:
        json.dump(asdict(cfg), f, indent=2)
    csv_path = os.path.join(cfg.out_dir, "metrics.csv")
    fresh = not (cfg.resume and os.path.exists(csv_path))
    csv_file = open(csv_path, "a" if not fresh else "w", newline="")
    writer = csv.DictWriter(csv_file, fieldnames=trainer.columns())
    if fresh:
        writer.writeheader()
    start = time.time()
    next_checkpoint = cfg.checkpoint_interval
    try:
        while trainer.global_step < cfg.total_timesteps:
            result = trainer.run_one_rollout()
            wall = trainer.wall_seconds + (time.time() - start)
            writer.writerow(trainer.metrics_row(result, wall))
            csv_file.flush()
            if cfg.checkpoint_interval and trainer.global_step >= next_checkpoint:
                trainer.wall_seconds = wall
                trainer.save_checkpoint(os.path.join(cfg.out_dir, f"ckpt_{trainer.global_step}"))
                next_checkpoint += cfg.checkpoint_interval
            if log and trainer.global_step % (cfg.num_envs * cfg.num_steps * 50) == 0:
                log(f"step {trainer.global_step}/{cfg.total_timesteps} "
                    f"trailing100 {np.mean(trainer.trailing_sparse) if trainer.trailing_sparse else 0:.3f}")
    finally:
        csv_file.close()
    trainer.wall_seconds += time.time() - start
    final_base = os.path.join(cfg.out_dir, "ckpt_final")
    trainer.save_checkpoint(final_base)
    return csv_path, final_base


def evaluate(checkpoint: str, task: str, episodes: int, seed: int,
             max_ticks: int = 2000) -> dict:
    """Roll out the main policy (stochastic, no guidance) and aggregate sparse returns."""
    if checkpoint.endswith(".bin") or checkpoint.endswith(".json"):
        checkpoint = checkpoint.rsplit(".", 1)[0]
    tensors = nc.load_checkpoint(checkpoint + ".bin")
    with open(checkpoint + ".json") as f:
        sidecar = json.load(f)
    task_id = gridrts.task_from_name(task)
    if sidecar["map"]["height"] * sidecar["map"]["width"] * sidecar["map"]["planes"] != 10 * 10 * 27:
        raise ValueError("checkpoint map dimensions do not match the task's 10x10x27 contract")
    main_name = sidecar["policies"][0]["name"]
    pol = agent.Policy(seed=0, dtype=np.float32)
    pol.load_state_dict({k.split("/", 1)[1]: v for k, v in tensors.items()
                         if k.startswith(main_name + "/") and "/adam_" not in k})
    obs_norm = None
    if sidecar.get("obs_norm"):
        obs_norm = ppo.RunningNormalizer(shape=(10, 10, 27))
        obs_norm.load_state_dict(sidecar["obs_norm"])
    rng = np.random.default_rng(seed)
    returns = []
    for ep in range(episodes):
        ep_seed = int(np.random.SeedSequence([seed, ep]).generate_state(1)[0])
        state, obs, mask = gridrts.reset(task_id, ep_seed, max_ticks=max_ticks)
        total = 0.0
        while True:
            x = obs_norm.apply_obs(obs) if obs_norm else obs
            with nc.no_grad():
                logits, _ = pol.forward(x[None].astype(np.float32))
            dist = agent.masked_distribution(logits, mask[None], slices=pol.slices)
            action, _ = agent.sample_and_logprob(dist, rng)
            state, obs, mask, rew, done, _ = gridrts.step(state, action[0])
            total += rew.sparse
            if done:
                break
        returns.append(total)
    arr = np.asarray(returns)
    return {"mean": float(arr.mean()), "std": float(arr.std()),
            "episodes": episodes, "returns": returns}
