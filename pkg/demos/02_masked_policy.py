"""The policy network and masked multi-discrete sampling.

Run with: python3 demos/02_masked_policy.py
"""

import numpy as np

from guidedrts import agent, gridrts, numcore as nc
from guidedrts.gridrts import TaskId

# The network: conv 16x3x3 stride 2 -> conv 32x2x2 -> 128 rectifier units ->
# one linear head emitting all 229 component logits, plus a scalar value head.
# Weights are orthogonally initialized with gain 1.
policy = agent.Policy(seed=0)
print("logit head width:", policy.n_logits)
for name, p in policy.params.items():
    print(f"  {name:10s} {p.shape}")

state, obs, mask = gridrts.reset(TaskId.LEARN_TO_ATTACK, seed=3)
logits, value = policy.forward(obs[None])
print("\nvalue estimate:", float(value.data[0]))

# Masking replaces invalid logits with -1e8 before the softmax, which
# underflows to probability exactly zero; each of the 8 components becomes an
# independent categorical over its valid entries.
dist = agent.masked_distribution(logits, mask[None], slices=policy.slices)
for name, p in zip(["source", "type", "move", "harvest", "return", "pdir", "ptype", "attack"],
                   dist.probs):
    live = np.nonzero(p[0])[0]
    print(f"  {name:7s} {live.size:3d} reachable entries, mass check: {p[0].sum():.9f}")

# Sampling returns the action vector and its joint log-probability: the sum of
# the 8 per-component log-probs. The same value comes back from logprob_of.
rng = np.random.default_rng(1)
action, logp = agent.sample_and_logprob(dist, rng)
print("\nsampled action:", action[0].tolist())
print("joint log-prob:", float(logp[0]), "==", float(agent.logprob_of(dist, action).data[0]))

# Entropy sums the per-component Shannon entropies over valid entries only.
print("entropy:", float(agent.entropy(dist).data[0]))

# The whole thing is differentiable: gradients of a sampled action's log-prob
# flow back to every parameter through the masked softmax.
agent.logprob_of(dist, action).sum().backward()
grad_norm = float(np.sqrt(sum((p.grad ** 2).sum() for p in policy.parameters()
                              if p.grad is not None)))
print("grad norm of log-prob wrt all parameters:", round(grad_norm, 4))
