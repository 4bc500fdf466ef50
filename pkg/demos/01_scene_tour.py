"""
A walk through one kitchen
==========================

Load a shipped floor plan, look at it, and play a short scripted episode
while printing what the environment reports after every action.
"""

from kitchen_fetch.reward import RewardWeights, compute_reward, distance_to_target
from kitchen_fetch.scene import (
    CLASS_NAMES, Action, AgentPose, EpisodeSpec, Heading, render_scene, reset, shipped_scene, step,
)

# %%
# The four floor plans ship with the package. Walls are ``#``, free floor is
# ``.`` and each letter is an object listed in the legend under the grid.
scene = shipped_scene(1)
print(render_scene(scene))

# %%
# An episode is fully described by its spec: scene, target class, start pose,
# step budget and the seed for any randomness inside the episode.
apple = CLASS_NAMES.index("Apple")
spec = EpisodeSpec(scene.id, apple, AgentPose((3, 1), Heading.N), max_steps=50, rng_seed=0)
state = reset(spec, scene)
print("start pose:", state.pose, " distance to an apple:", distance_to_target(state))

# %%
# Walk up to the apple and pick it up. Distances are shortest-path lengths
# on the floor grid, so each step toward the target is worth +alpha.
weights = RewardWeights()
for action in (Action.PICKUP_OBJECT, Action.MOVE_AHEAD, Action.PICKUP_OBJECT):
    before = distance_to_target(state)
    state, outcome = step(state, action)
    r = compute_reward(before, distance_to_target(state), outcome, weights)
    print(f"{Action(action).name:14s} d {before}->{distance_to_target(state)}  reward {r.total:+.1f}"
          f"  collided={outcome.collided} invalid={outcome.invalid_action} success={outcome.success}")
    if outcome.terminal:
        break

# %%
# The first pickup fails: the apple is two cells away, so the action is invalid
# and costs the penalty. One step later the apple is directly ahead and the
# second pickup ends the episode with the success bonus.
print(render_scene(scene, state.pose, state.objects))
print("held instance:", state.pose.holding, " steps used:", state.steps)
