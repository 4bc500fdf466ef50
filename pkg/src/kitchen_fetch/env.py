"""Episode runner that wires scene dynamics, perception and reward together."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from . import perception, scene
from .perception import PerceptionConfig
from .reward import RewardBreakdown, RewardWeights, compute_reward, distance_to_target
from .scene import Action, EpisodeSpec, Scene, StepOutcome


@dataclass
class EpisodeRecord:
    spec: EpisodeSpec
    success: bool = False
    cumulative_reward: float = 0.0
    move_count: int = 0
    optimal_path: int = 0
    pickup_attempts: int = 0
    steps: int = 0

    def to_dict(self) -> dict:
        pose = self.spec.start_pose
        return {
            "scene_id": self.spec.scene_id,
            "target_class": self.spec.target_class,
            "start_cell": list(pose.cell),
            "start_heading": pose.heading.name,
            "start_pitch": pose.pitch.name,
            "max_steps": self.spec.max_steps,
            "rng_seed": self.spec.rng_seed,
            "success": self.success,
            "cumulative_reward": self.cumulative_reward,
            "move_count": self.move_count,
            "optimal_path": self.optimal_path,
            "pickup_attempts": self.pickup_attempts,
            "steps": self.steps,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "EpisodeRecord":
        pose = scene.AgentPose(tuple(d["start_cell"]), scene.Heading[d["start_heading"]], scene.Pitch[d["start_pitch"]])
        spec = EpisodeSpec(d["scene_id"], d["target_class"], pose, d["max_steps"], d["rng_seed"])
        return cls(spec, d["success"], d["cumulative_reward"], d["move_count"], d["optimal_path"],
                   d["pickup_attempts"], d["steps"])


class FetchEnv:
    """One episode at a time: observation encoding, reward and per-episode bookkeeping.

    ``mode`` picks the observation encoder ("enhanced" or "baseline"). Episodes
    are either given explicitly to :meth:`reset` or drawn from ``sampler_rng``.
    """

    def __init__(
        self,
        scenes: Sequence[Scene],
        perception_config: PerceptionConfig,
        weights: RewardWeights,
        mode: str = "enhanced",
        max_steps: int = scene.DEFAULT_MAX_STEPS,
        sampler_rng: Optional[np.random.Generator] = None,
        target_classes: Optional[Sequence[int]] = None,
    ):
        perception.channel_count(mode)
        self.scenes = list(scenes)
        self._by_id = {s.id: s for s in self.scenes}
        self.perception = perception_config
        self.weights = weights
        self.mode = mode
        self.max_steps = max_steps
        self.sampler_rng = sampler_rng if sampler_rng is not None else np.random.default_rng(0)
        self.target_classes = target_classes
        self.state = None
        self.record: Optional[EpisodeRecord] = None
        self._dist = None

    def sample_spec(self) -> EpisodeSpec:
        return scene.sample_episode(self.sampler_rng, self.scenes, self.max_steps, self.target_classes)

    def reset(self, spec: Optional[EpisodeSpec] = None):
        if spec is None:
            spec = self.sample_spec()
        if spec.scene_id not in self._by_id:
            raise scene.EpisodeError(f"scene {spec.scene_id} is not loaded in this env")
        self.state = scene.reset(spec, self._by_id[spec.scene_id])
        self._dist = distance_to_target(self.state)
        if self._dist is None:
            raise scene.EpisodeError(f"target class {spec.target_class} unreachable in scene {spec.scene_id}")
        self.record = EpisodeRecord(spec, optimal_path=self._dist)
        return self.observe()

    def observe(self):
        feats = perception.observe(self.state, self.perception, self.mode)
        return feats, perception.context_vector(self.state.target_class)

    def step(self, action: int) -> tuple[np.ndarray, np.ndarray, RewardBreakdown, StepOutcome]:
        self.state, outcome = scene.step(self.state, action)
        new_d = self._dist if outcome.success else distance_to_target(self.state)
        rew = compute_reward(self._dist, new_d, outcome, self.weights)
        self._dist = new_d
        rec = self.record
        rec.cumulative_reward += rew.total
        rec.steps = outcome.steps_elapsed
        if action == Action.MOVE_AHEAD and not outcome.collided:
            rec.move_count += 1
        if outcome.pickup_attempted and not rec.success:
            rec.pickup_attempts += 1
        rec.success = rec.success or outcome.success
        feats, ctx = self.observe() if not outcome.terminal else (None, None)
        return feats, ctx, rew, outcome
