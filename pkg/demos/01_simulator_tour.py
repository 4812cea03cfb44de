"""A tour of the gridworld RTS simulator: states, actions, masks, rewards.

Run with: python3 demos/01_simulator_tour.py
"""

import numpy as np

from guidedrts import gridrts
from guidedrts.gridrts import ActionType, TaskId

# Every task starts from the same mirrored 10x10 layout: one base, one worker
# and a 2-cell resource cluster per player. Seeds make everything repeatable.
state, obs, mask = gridrts.reset(TaskId.LEARN_TO_ATTACK, seed=0)
print("tick:", state.tick)
print("player resources:", state.player_resources)
for u in sorted(state.units.values(), key=lambda u: u.id):
    print(f"  unit {u.id}: {u.kind.name:8s} owner={u.owner.name:7s} at ({u.row},{u.col})")

# The observation is a (10, 10, 27) binary tensor; each cell concatenates five
# one-hot groups: hit points, carried/stored resources, owner, unit type, and
# the action currently in progress.
print("\nobservation shape:", obs.shape)
worker_cell = obs[1, 1]
print("worker cell vector:", worker_cell.astype(int).tolist())

# Actions are 8 discrete components: source cell, action type, four direction
# parameters, produce type, attack target cell. The mask flags which entries
# are currently valid; 2*h*w + 29 = 229 bits in total.
print("\nmask length:", mask.shape[0])
for name, comp in zip(
    ["source", "type", "move", "harvest", "return", "produce-dir", "produce-type", "attack"],
    gridrts.split_mask(mask, 10, 10),
):
    print(f"  {name:13s} valid entries: {np.nonzero(comp)[0].tolist()[:12]}")

# Issue "move east" to the worker at (1,1) = cell 11. One decision advances
# the game 10 ticks (1 issuing tick + 9 skipped), so the move completes
# within a single step.
action = np.zeros(8, dtype=np.int64)
action[0] = 11
action[1] = ActionType.MOVE
action[2] = 1  # east
state, obs, mask, reward, done, info = gridrts.step(state, action)
worker = next(u for u in state.units.values() if u.kind == gridrts.UnitKind.WORKER
              and u.owner == gridrts.Owner.P1)
print(f"\nafter move east: worker at ({worker.row},{worker.col}), tick={state.tick}")

# Both reward streams are computed on every transition. In LearnToAttack the
# sparse stream pays +1 per valid attack issued; the shaped stream adds the
# decrease in Euclidean distance between the enemy base and our closest unit.
print(f"rewards: sparse={reward.sparse:+.3f} shaped={reward.shaped:+.3f}")

# States serialize to JSON for golden tests and resumable training.
snippet = gridrts.state_to_json(state)[:120]
print("\nserialized state starts with:", snippet, "...")
