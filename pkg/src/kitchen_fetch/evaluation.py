"""Evaluation episodes, the four task metrics, seed aggregation and the comparison table."""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .env import EpisodeRecord, FetchEnv
from .perception import PerceptionConfig, channel_count
from .policy import PolicyParams, forward, sample_action
from .reward import RewardWeights
from .scene import Scene, sample_episode

METRICS = ("success_rate_pct", "avg_cumulative_reward", "navigation_efficiency_pct", "interaction_efficiency")
METRIC_LABELS = {
    "success_rate_pct": "Success Rate (%)",
    "avg_cumulative_reward": "Avg. Cumulative Reward",
    "navigation_efficiency_pct": "Navigation Efficiency (%)",
    "interaction_efficiency": "Interaction Efficiency",
}


class CheckpointMismatch(ValueError):
    pass


# --------------------------------------------------------------------------- episodes


def episode_specs(scenes: Sequence[Scene], episodes_per_scene: int, seed: int, max_steps: int = 200,
                  target_classes=None):
    """The fixed evaluation episode set: scene-major, ``episodes_per_scene`` each."""
    specs = []
    for sc in scenes:
        rng = np.random.default_rng([seed, sc.id])
        specs += [sample_episode(rng, [sc], max_steps, target_classes) for _ in range(episodes_per_scene)]
    return specs


def run_evaluation(
    policy,
    scenes: Sequence[Scene],
    episodes_per_scene: int,
    seed: int,
    policy_mode: str = "stochastic",
    *,
    obs_mode: str = "enhanced",
    perception_config: PerceptionConfig = PerceptionConfig(),
    weights: RewardWeights = RewardWeights(),
    max_steps: int = 200,
    target_classes=None,
) -> list[EpisodeRecord]:
    """Run the fixed episode set for ``seed`` with frozen parameters.

    ``policy`` is a PolicyParams or a checkpoint path. All episodes advance in
    lock-step so the network sees one batch per tick; each episode owns its
    action stream, so records depend only on (seed, episode index).
    """
    if policy_mode not in ("stochastic", "greedy"):
        raise ValueError(f"unknown policy mode {policy_mode!r}")
    if not isinstance(policy, PolicyParams):
        from .checkpoint import load_checkpoint

        policy, _ = load_checkpoint(policy)
    want = (channel_count(obs_mode), perception_config.window)
    have = (policy.spec.input_channels, policy.spec.window)
    if want != have:
        raise CheckpointMismatch(f"checkpoint expects input (channels, window) = {have}, "
                                 f"{obs_mode} observations are {want}")

    specs = episode_specs(scenes, episodes_per_scene, seed, max_steps, target_classes)
    envs, rngs, obs = [], [], []
    for k, spec in enumerate(specs):
        env = FetchEnv(scenes, perception_config, weights, obs_mode, max_steps)
        obs.append(env.reset(spec))
        envs.append(env)
        rngs.append(np.random.default_rng([seed, k, 7]))
    active = list(range(len(specs)))
    while active:
        out = forward(policy, np.stack([obs[i][0] for i in active]), np.stack([obs[i][1] for i in active]))
        still = []
        for j, i in enumerate(active):
            probs = out.action_probs[j]
            if policy_mode == "greedy":
                a = int(np.argmax(probs))
            else:
                a, _ = sample_action(probs, rngs[i])
            f, c, _, outcome = envs[i].step(a)
            if not outcome.terminal:
                obs[i] = (f, c)
                still.append(i)
        active = still
    return [env.record for env in envs]


# --------------------------------------------------------------------------- metrics


def success_rate(records: Sequence[EpisodeRecord]) -> float:
    if not records:
        raise ValueError("success rate of an empty record set")
    return 100.0 * sum(r.success for r in records) / len(records)


def average_cumulative_reward(records: Sequence[EpisodeRecord]) -> float:
    if not records:
        raise ValueError("average reward of an empty record set")
    return float(np.mean([r.cumulative_reward for r in records]))


def navigation_efficiency(records: Sequence[EpisodeRecord]) -> Optional[float]:
    """Mean of 100 * optimal / moves over successful episodes; None without successes.

    An episode that starts next to the target (optimal 0) counts as 100.
    """
    vals = [100.0 if r.optimal_path == 0 else 100.0 * r.optimal_path / max(r.move_count, 1)
            for r in records if r.success]
    return float(np.mean(vals)) if vals else None


def interaction_efficiency(records: Sequence[EpisodeRecord]) -> Optional[float]:
    """Mean pickup attempts up to and including the successful one; None without successes."""
    vals = [r.pickup_attempts for r in records if r.success]
    return float(np.mean(vals)) if vals else None


def summarize(records: Sequence[EpisodeRecord]) -> dict:
    return {
        "success_rate_pct": success_rate(records),
        "avg_cumulative_reward": average_cumulative_reward(records),
        "navigation_efficiency_pct": navigation_efficiency(records),
        "interaction_efficiency": interaction_efficiency(records),
        "episode_count": len(records),
    }


@dataclass
class MetricsSummary:
    success_rate_pct: Optional[float]
    avg_cumulative_reward: Optional[float]
    navigation_efficiency_pct: Optional[float]
    interaction_efficiency: Optional[float]
    episode_count: int = 0
    seeds: int = 1
    std: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "MetricsSummary":
        return cls(**{k: d.get(k) for k in ("success_rate_pct", "avg_cumulative_reward",
                                            "navigation_efficiency_pct", "interaction_efficiency")},
                   episode_count=d.get("episode_count", 0), seeds=d.get("seeds", 1), std=d.get("std") or {})


def aggregate_seeds(summaries: Sequence[dict]) -> MetricsSummary:
    """Per-metric mean and sample standard deviation (n - 1) across seeds.

    Seeds where a metric is undefined are left out of that metric; with fewer
    than two defined values the std is None.
    """
    if not summaries:
        raise ValueError("no summaries to aggregate")
    means, stds = {}, {}
    for key in METRICS:
        vals = [s[key] for s in summaries if s.get(key) is not None]
        means[key] = float(np.mean(vals)) if vals else None
        stds[key] = float(np.std(vals, ddof=1)) if len(vals) >= 2 else None
    return MetricsSummary(**means, episode_count=int(sum(s.get("episode_count", 0) for s in summaries)),
                          seeds=len(summaries), std=stds)


def relative_change(new: Optional[float], ref: Optional[float]) -> Optional[float]:
    if new is None or ref is None or ref == 0:
        return None
    return (new - ref) / ref * 100.0


@dataclass
class Comparison:
    enhanced: MetricsSummary
    baseline: MetricsSummary
    improvements: dict
    table: str

    def to_dict(self) -> dict:
        return {"enhanced": self.enhanced.to_dict(), "baseline": self.baseline.to_dict(),
                "relative_improvement_pct": self.improvements}


def _cell(mean, std) -> str:
    if mean is None:
        return "n/a"
    return f"{mean:.1f} ± {std:.1f}" if std is not None else f"{mean:.1f}"


def compare_report(enhanced: MetricsSummary, baseline: MetricsSummary) -> Comparison:
    """Side-by-side table (mean ± std) plus relative change (enhanced - baseline) / baseline * 100.

    For interaction efficiency fewer attempts is better, so a negative change
    there is an improvement.
    """
    improvements = {k: relative_change(getattr(enhanced, k), getattr(baseline, k)) for k in METRICS}
    rows = [("Metric", "Perception-Enhanced", "Baseline", "Rel. change (%)")]
    for k in METRICS:
        imp = improvements[k]
        rows.append((METRIC_LABELS[k], _cell(getattr(enhanced, k), enhanced.std.get(k)),
                     _cell(getattr(baseline, k), baseline.std.get(k)), "n/a" if imp is None else f"{imp:+.1f}"))
    widths = [max(len(r[i]) for r in rows) for i in range(4)]
    lines = ["  ".join(cell.ljust(w) for cell, w in zip(row, widths)).rstrip() for row in rows]
    lines.insert(1, "  ".join("-" * w for w in widths))
    return Comparison(enhanced, baseline, improvements, "\n".join(lines) + "\n")


# --------------------------------------------------------------------------- files


def write_records(path, records: Sequence[EpisodeRecord]) -> None:
    with open(path, "w", newline="\n") as f:
        for r in records:
            f.write(json.dumps(r.to_dict(), sort_keys=True) + "\n")


def read_records(path) -> list[EpisodeRecord]:
    return [EpisodeRecord.from_dict(json.loads(line)) for line in Path(path).read_text().splitlines() if line]


def write_json(path, obj) -> None:
    Path(path).write_text(json.dumps(obj, indent=2, sort_keys=True, allow_nan=False) + "\n")
