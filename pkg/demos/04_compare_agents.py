"""
Enhanced versus baseline
========================

Train both agents with identical settings on the four kitchens and print the
comparison table. The full run (five seeds, 200k steps each) takes about
forty minutes; pass a smaller budget to get a quick, noisier picture:

    python demos/04_compare_agents.py 50000 2
"""

import dataclasses
import sys
from pathlib import Path

from kitchen_fetch.config import load_config
from kitchen_fetch.evaluation import aggregate_seeds, compare_report, run_evaluation, summarize
from kitchen_fetch.ppo import TrainConfig, train

configs = Path(__file__).resolve().parents[1] / "configs"
cfg = load_config(configs / "comparison.yaml")
steps = int(sys.argv[1]) if len(sys.argv) > 1 else cfg.train.total_steps
n_seeds = int(sys.argv[2]) if len(sys.argv) > 2 else len(cfg.seeds)
scenes = cfg.load_scenes(configs)

summaries = {}
for mode in ("enhanced", "baseline"):
    mcfg = dataclasses.replace(cfg, mode=mode)
    per_seed = []
    for seed in cfg.seeds[:n_seeds]:
        tc = TrainConfig(**{**cfg.train.to_dict(), "seed": seed, "total_steps": steps})
        res = train(tc, scenes, cfg.perception, cfg.reward, mode, mcfg.network_spec(),
                    max_steps=cfg.episodes.max_steps)
        recs = run_evaluation(res.params, scenes, cfg.evaluation.episodes_per_scene, cfg.evaluation.seed,
                              cfg.evaluation.policy_mode, obs_mode=mode, perception_config=cfg.perception,
                              weights=cfg.reward, max_steps=cfg.episodes.max_steps)
        per_seed.append(summarize(recs))
        print(f"{mode:8s} seed {seed}: success {per_seed[-1]['success_rate_pct']:.1f}%")
    summaries[mode] = aggregate_seeds(per_seed)

# %%
# Relative change is (enhanced - baseline) / baseline * 100; for interaction
# efficiency (attempts per success) a negative change is the better outcome.
print(compare_report(summaries["enhanced"], summaries["baseline"]).table)
