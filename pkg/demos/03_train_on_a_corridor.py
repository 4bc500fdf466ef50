"""
Training a first agent
======================

A corridor with a single apple at the far end is the smallest task that
still needs navigation and a pickup. PPO solves it in about 20k steps,
which takes well under a minute on one core.
"""

from pathlib import Path

from kitchen_fetch.config import load_config
from kitchen_fetch.evaluation import run_evaluation, summarize
from kitchen_fetch.ppo import TrainConfig, train

configs = Path(__file__).resolve().parents[1] / "configs"
cfg = load_config(configs / "corridor.yaml")
scenes = cfg.load_scenes(configs)

# %%
# ``train`` returns the final parameters and one metrics row per update:
# (step, mean episode reward, success rate, losses, entropy, clip fraction, KL, grad norm).
tc = TrainConfig(**{**cfg.train.to_dict(), "seed": 0})
result = train(tc, scenes, cfg.perception, cfg.reward, cfg.mode, cfg.network_spec())
for row in result.metrics[::8]:
    print(f"step {row[0]:6d}  reward {row[1]:6.2f}  success {row[2]:.2f}  entropy {row[5]:.2f}")

# %%
# Evaluate on a fixed episode set, both sampling from the policy and taking
# its most likely action.
for mode in ("stochastic", "greedy"):
    records = run_evaluation(result.params, scenes, 100, seed=123, policy_mode=mode,
                             obs_mode=cfg.mode, perception_config=cfg.perception, weights=cfg.reward)
    s = summarize(records)
    print(f"{mode:10s} success {s['success_rate_pct']:5.1f}%  navigation efficiency "
          f"{s['navigation_efficiency_pct']}  interaction efficiency {s['interaction_efficiency']}")
