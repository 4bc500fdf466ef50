"""Shaped reward: distance progress, success bonus, penalty for collisions and invalid actions.

``total = alpha * delta_d + beta * success - gamma_pen * penalty`` with no
clipping or normalisation. ``gamma_pen`` is the penalty weight; the discount
factor lives in the trainer config.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass

from .scene import StepOutcome, WorldState, distance_field


class RewardError(ValueError):
    pass


@dataclass(frozen=True)
class RewardWeights:
    alpha: float = 1.0
    beta: float = 10.0
    gamma_pen: float = 0.5

    def __post_init__(self):
        for name in ("alpha", "beta", "gamma_pen"):
            if getattr(self, name) < 0:
                raise ValueError(f"reward weight {name} must be non-negative")

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass(frozen=True)
class RewardBreakdown:
    delta_d: int
    success: int
    penalty: int
    total: float


def compute_reward(prev_d, new_d, outcome: StepOutcome, weights: RewardWeights) -> RewardBreakdown:
    if prev_d is None or new_d is None:
        raise RewardError("target distance is unreachable")
    delta_d = prev_d - new_d
    success = int(outcome.success)
    penalty = int(outcome.collided or outcome.invalid_action)
    total = weights.alpha * delta_d + weights.beta * success - weights.gamma_pen * penalty
    return RewardBreakdown(delta_d, success, penalty, total)


def distance_to_target(state: WorldState):
    """BFS distance from the agent to the nearest cell next to any target-class object.

    0 while a target-class object is held; None if no target cell is reachable.
    """
    best = None
    for obj in state.objects:
        if obj.class_id != state.target_class:
            continue
        if obj.held:
            return 0
        d = int(distance_field(state.grid, obj.cell)[state.pose.cell])
        if d >= 0 and (best is None or d < best):
            best = d
    return best
