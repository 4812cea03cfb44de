"""Advantage estimation and the clipped off-policy objective, by hand.

Run with: python3 demos/03_losses_and_gae.py
"""

import numpy as np

from guidedrts import numcore as nc, ppo

# GAE: delta_t = r_t + gamma*V_{t+1}*(1-done_t) - V_t, folded backwards with
# gamma*lam. returns = advantages + values feed the clipped value loss.
rewards = np.array([0.0, 0.0, 1.0, 0.0, 2.0])
values = np.array([0.3, 0.4, 0.5, 0.2, 0.6])
dones = np.array([False, False, False, False, True])
adv, ret = ppo.compute_gae(rewards, values, dones, bootstrap_value=0.0,
                           cfg=ppo.GaeConfig(gamma=0.99, lam=0.95))
print("advantages:", np.round(adv, 4))
print("returns:   ", np.round(ret, 4))

# The surrogate clips the importance ratio rho = pi_new/pi_behavior into
# [1-eps, 1+eps] and takes the pessimistic branch.
for rho, a in [(1.0, 2.0), (1.3, 1.0), (0.5, -1.0)]:
    logp_new = nc.Tensor([np.log(rho)], requires_grad=True)
    obj = ppo.clipped_surrogate(logp_new, [0.0], [a], eps=0.1)
    print(f"rho={rho:4.2f} A={a:+.1f} -> per-sample objective {float(obj.data):+.2f}")

# Value loss clipping mirrors the ratio clip: the new value may move at most
# eps away from the collection-time value before the pessimistic max kicks in.
v_new = nc.Tensor([1.3], requires_grad=True)
print("clipped value loss:", float(ppo.value_loss_clipped(v_new, [1.0], [2.0], 0.1).data))

# The joint objective (maximized): surrogate - c1 * value loss + c2 * entropy.
print("joint objective:", ppo.joint_objective(1.0, 0.5, 2.0, c1=0.5, c2=0.01))

# Per-minibatch advantage normalization and the running normalizers used for
# observations (subtract mean, divide std, clip to [-10, 10]) and rewards
# (divide by the std of the discounted returns).
print("\nnormalized advantages:", np.round(ppo.normalize_advantages([1.0, 2.0, 3.0]), 4))
norm = ppo.RunningNormalizer(shape=())
for _ in range(50):
    norm.update(np.random.default_rng(0).normal(4.0, 2.0, size=32))
print("obs normalizer: mean~4, var~4 ->", round(float(norm.mean), 2), round(float(norm.var), 2))

scaler = ppo.RewardScaler(num_envs=2, gamma=0.99)
block = np.random.default_rng(1).normal(0, 1.5, size=(64, 2))
scaled = scaler.update_and_scale(block, np.zeros((64, 2), dtype=bool))
print("reward scaling: raw std", round(float(block.std()), 3),
      "-> scaled std", round(float(scaled.std()), 3))
