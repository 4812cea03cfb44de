"""End-to-end action guidance on a shrunken schedule (about a minute of CPU).

The main policy is bound to the sparse stream and never sees shaped rewards;
the auxiliary policy is bound to the shaped stream. Early on, the epsilon
schedule hands almost all action selection to the auxiliary; both policies
update off-policy from the same rollouts.

Run with: python3 demos/04_guided_training.py
"""

import numpy as np

from guidedrts import guidance, ppo
from guidedrts.gridrts import TaskId
from guidedrts.guidance import GuidanceSchedule, PloConfig

envs = guidance.VecEnvRunner(TaskId.LEARN_TO_ATTACK, base_seed=7, num_envs=4, max_ticks=600)
pset = guidance.make_policy_set(["sparse", "shaped"], seed=7, num_envs=4)
sched = GuidanceSchedule(shift=4_000, adaptation=6_000, eps_end=0.0)
obs_norm = ppo.RunningNormalizer(shape=(10, 10, 27))
rng = np.random.default_rng(7)
loss_cfg, gae_cfg, plo_cfg = ppo.LossConfig(), ppo.GaeConfig(), PloConfig(enabled=True)

total_steps = 16_000
t = 0
print(f"{'step':>6} {'eps':>5} {'aux share':>9} {'episodes reward':>16} {'plo-skip':>8}")
while t < total_steps:
    batch = guidance.collect_rollout(envs, pset, sched, t, rng, steps=64, obs_norm=obs_norm)
    t += 64 * envs.num_envs
    lr = 2.5e-4 * (1 - t / total_steps)
    stats = guidance.update_policies(pset, batch, loss_cfg, plo_cfg, gae_cfg, rng, lr)
    aux_share = float((batch.behavior_ids == 1).mean())
    ep = np.mean([e["sparse"] for e in batch.episode_stats]) if batch.episode_stats else float("nan")
    skipped = ",".join(n for n, s in stats.items() if s["plo_skipped"]) or "-"
    print(f"{t:>6} {batch.epsilon:>5.2f} {aux_share:>9.2f} {ep:>16.2f} {skipped:>8}")

print("\nthe auxiliary's share of executed actions tracks eps(t); once the")
print("adaptation period ends the main policy acts alone and keeps updating")
print("only from the sparse stream it always trained on.")
