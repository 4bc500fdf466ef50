"""``kitchen-fetch``: train, evaluate, compare and inspect from the command line.

Exit status: 0 success, 1 runtime failure, 2 usage or configuration error.

Run outputs go under ``<output root>/<mode>/``; the root is ``--output`` if
given, else ``$KITCHEN_FETCH_OUTPUT``, else the config's ``output_dir``.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import os
import platform
import sys
import time
from pathlib import Path

import numpy as np

from . import __version__
from .checkpoint import CheckpointError, load_checkpoint
from .config import ConfigError, ExperimentConfig, apply_overrides, from_dict, load_config
from .evaluation import (
    CheckpointMismatch, aggregate_seeds, compare_report, run_evaluation,
    summarize, write_json, write_records,
)
from .perception import channel_count, observation_schema
from .ppo import EVAL_HEADER, METRICS_HEADER, train
from .scene import EpisodeError, SceneFormatError, load_scene, render_scene, shipped_scene

OUTPUT_ENV = "KITCHEN_FETCH_OUTPUT"
EXIT_OK, EXIT_FAILURE, EXIT_USAGE = 0, 1, 2

log = logging.getLogger("kitchen_fetch")


class UsageError(Exception):
    pass


# --------------------------------------------------------------------------- helpers


def _config(path, overrides) -> ExperimentConfig:
    if path is None:
        return from_dict(apply_overrides({}, overrides))
    if not Path(path).is_file():
        raise UsageError(f"config file not found: {path}")
    return load_config(path, overrides)


def _output_root(cli_value, cfg: ExperimentConfig) -> Path:
    return Path(cli_value or os.environ.get(OUTPUT_ENV) or cfg.output_dir)


def write_curves(seed_dir: Path, metrics: list, evals: list) -> None:
    """One plot-ready ``step,value`` file per logged quantity under ``curves/``."""
    curves = seed_dir / "curves"
    curves.mkdir(exist_ok=True)
    for header, rows, prefix in ((METRICS_HEADER, metrics, "train_"), (EVAL_HEADER, evals, "eval_")):
        for col, name in enumerate(header[1:], start=1):
            with open(curves / f"{prefix}{name}.csv", "w", newline="") as f:
                w = csv.writer(f, lineterminator="\n")
                w.writerow(("step", name))
                for row in rows:
                    v = row[col]
                    w.writerow((row[0], "" if v is None else repr(float(v))))


def _seed_summaries(run_dir: Path) -> dict:
    out = {}
    for p in sorted(run_dir.glob("seed_*/summary.json")):
        out[p.parent.name] = json.loads(p.read_text())
    return out


# --------------------------------------------------------------------------- commands


def cmd_train(args) -> int:
    cfg = _config(args.config, args.override)
    if args.mode:
        cfg = from_dict({**cfg.to_dict(), "mode": args.mode})
    scenes = cfg.load_scenes(Path(args.config).parent if args.config else None)
    run_dir = _output_root(args.output, cfg) / cfg.mode
    run_dir.mkdir(parents=True, exist_ok=True)
    (run_dir / "config.yaml").write_text(cfg.to_yaml())

    manifest = {
        "config_sha256": cfg.digest(),
        "version": __version__,
        "python": platform.python_version(),
        "numpy": np.__version__,
        "command": ["kitchen-fetch", *sys.argv[1:]],
        "overrides": list(args.override or ()),
        "mode": cfg.mode,
        "seeds": list(cfg.seeds),
        "runs": {},
    }
    start = time.perf_counter()
    summaries = []
    for seed in cfg.seeds:
        seed_dir = run_dir / f"seed_{seed}"
        t0 = time.perf_counter()
        tc = from_dict({**cfg.to_dict(), "train": {**cfg.to_dict()["train"], "seed": seed}}).train
        log.info("training %s seed %d -> %s", cfg.mode, seed, seed_dir)
        res = train(tc, scenes, cfg.perception, cfg.reward, cfg.mode, cfg.network_spec(), seed_dir,
                    cfg.episodes.max_steps, cfg.episodes.target_classes)
        write_curves(seed_dir, res.metrics, res.evals)
        records = run_evaluation(res.params, scenes, cfg.evaluation.episodes_per_scene, cfg.evaluation.seed,
                                 cfg.evaluation.policy_mode, obs_mode=cfg.mode, perception_config=cfg.perception,
                                 weights=cfg.reward, max_steps=cfg.episodes.max_steps,
                                 target_classes=cfg.episodes.target_classes)
        write_records(seed_dir / "records.jsonl", records)
        summary = summarize(records)
        write_json(seed_dir / "summary.json", summary)
        summaries.append(summary)
        manifest["runs"][str(seed)] = {
            "dir": seed_dir.name, "updates": res.updates, "steps": res.steps,
            "stopped_early": res.stopped_early, "wall_time_s": round(time.perf_counter() - t0, 3),
        }
        print(f"seed {seed}: success {summary['success_rate_pct']:.1f}% over {summary['episode_count']} episodes")
    manifest["wall_time_s"] = round(time.perf_counter() - start, 3)
    write_json(run_dir / "manifest.json", manifest)
    write_json(run_dir / "summary.json", aggregate_seeds(summaries).to_dict())
    print(f"wrote {run_dir}")
    return EXIT_OK


def _infer_mode(channels: int) -> str:
    for mode in ("enhanced", "baseline"):
        if channel_count(mode) == channels:
            return mode
    raise CheckpointMismatch(f"checkpoint input has {channels} channels; no observation mode matches")


def cmd_eval(args) -> int:
    ckpt = Path(args.checkpoint)
    if not ckpt.is_file():
        raise UsageError(f"checkpoint not found: {ckpt}")
    cfg = _config(args.config, args.override)
    params, _ = load_checkpoint(ckpt)
    mode = args.mode or (cfg.mode if args.config else _infer_mode(params.spec.input_channels))
    scenes = cfg.load_scenes(Path(args.config).parent if args.config else None)
    episodes = args.episodes or cfg.evaluation.episodes_per_scene
    seed = cfg.evaluation.seed if args.seed is None else args.seed
    policy_mode = args.policy_mode or cfg.evaluation.policy_mode
    records = run_evaluation(params, scenes, episodes, seed, policy_mode, obs_mode=mode,
                             perception_config=cfg.perception, weights=cfg.reward,
                             max_steps=cfg.episodes.max_steps, target_classes=cfg.episodes.target_classes)
    out = Path(args.out) if args.out else ckpt.parent / "eval"
    out.mkdir(parents=True, exist_ok=True)
    write_records(out / "records.jsonl", records)
    summary = summarize(records)
    summary.update(policy_mode=policy_mode, seed=seed, mode=mode)
    write_json(out / "summary.json", summary)
    for key in ("success_rate_pct", "avg_cumulative_reward", "navigation_efficiency_pct", "interaction_efficiency"):
        v = summary[key]
        print(f"{key:28s} {'n/a' if v is None else f'{v:.3f}'}")
    print(f"wrote {out}")
    return EXIT_OK


def cmd_compare(args) -> int:
    dirs = [Path(args.enhanced), Path(args.baseline)]
    for d in dirs:
        if not d.is_dir():
            raise UsageError(f"run directory not found: {d}")
    per = [_seed_summaries(d) for d in dirs]
    for d, s in zip(dirs, per):
        if not s:
            raise UsageError(f"no seed_*/summary.json files under {d}")
    if len(per[0]) != len(per[1]):
        print(f"warning: seed counts differ ({len(per[0])} vs {len(per[1])}); using what is available",
              file=sys.stderr)
    enhanced, baseline = (aggregate_seeds(list(s.values())) for s in per)
    comp = compare_report(enhanced, baseline)
    print(comp.table, end="")
    out = Path(args.out) if args.out else dirs[0].parent / "comparison.json"
    out.parent.mkdir(parents=True, exist_ok=True)
    write_json(out, {**comp.to_dict(), "runs": [str(d) for d in dirs]})
    out.with_suffix(".txt").write_text(comp.table)
    print(f"wrote {out}")
    return EXIT_OK


def cmd_inspect(args) -> int:
    if args.what == "schema":
        print(observation_schema(args.mode), end="")
        return EXIT_OK
    if args.what == "scene":
        if args.target is None:
            raise UsageError("inspect scene needs a scene id or path")
        target = args.target
        try:
            scene = shipped_scene(int(target)) if target.isdigit() else load_scene(Path(target).read_bytes())
        except (OSError, EpisodeError) as e:
            raise UsageError(f"cannot read scene {target}: {e}") from None
        print(f"scene {scene.id}: {scene.grid.name} ({scene.grid.height}x{scene.grid.width})")
        print(render_scene(scene), end="")
        return EXIT_OK
    if args.target is None:
        raise UsageError("inspect checkpoint needs a path")
    try:
        from .checkpoint import decode_checkpoint

        params, adam, version = decode_checkpoint(Path(args.target).read_bytes())
    except OSError as e:
        raise UsageError(f"cannot read checkpoint {args.target}: {e}") from None
    spec = params.spec
    print(f"format version   {version}")
    print(f"input            {spec.input_channels} channels x {spec.window}x{spec.window}")
    print(f"conv layers      {', '.join(f'{o}@{k}x{k}/s{s}' for o, k, s in spec.conv_layers)}")
    print(f"hidden units     {spec.hidden_units}")
    print(f"context units    {spec.context_units}")
    print(f"actions          {spec.action_count}")
    print(f"parameters       {spec.parameter_count}")
    print(f"optimizer state  {'adam, step ' + str(adam.t) if adam else 'none'}")
    return EXIT_OK


# --------------------------------------------------------------------------- parser


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="kitchen-fetch", description=__doc__.split("\n")[0])
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    p.add_argument("-v", "--verbose", action="store_true", help="log training progress")
    sub = p.add_subparsers(dest="command", required=True)

    t = sub.add_parser("train", help="train one agent per seed in the config")
    t.add_argument("config", help="experiment YAML file")
    t.add_argument("--override", action="append", metavar="PATH=VALUE",
                   help="dotted-path override, e.g. train.total_steps=4096 (repeatable)")
    t.add_argument("--mode", choices=("enhanced", "baseline"), help="override the config's observation mode")
    t.add_argument("--output", help=f"output root (default: ${OUTPUT_ENV} or the config's output_dir)")
    t.set_defaults(func=cmd_train)

    e = sub.add_parser("eval", help="evaluate a checkpoint on the fixed episode set")
    e.add_argument("checkpoint")
    e.add_argument("--config", help="experiment YAML (scenes, perception, reward, evaluation settings)")
    e.add_argument("--override", action="append", metavar="PATH=VALUE")
    e.add_argument("--episodes", type=int, help="episodes per scene")
    e.add_argument("--seed", type=int, help="evaluation seed")
    e.add_argument("--policy-mode", choices=("stochastic", "greedy"))
    e.add_argument("--mode", choices=("enhanced", "baseline"), help="observation mode (default: from config or checkpoint)")
    e.add_argument("--out", help="output directory (default: <checkpoint dir>/eval)")
    e.set_defaults(func=cmd_eval)

    c = sub.add_parser("compare", help="tabulate two multi-seed runs")
    c.add_argument("enhanced", help="run directory of the perception-enhanced agent")
    c.add_argument("baseline", help="run directory of the baseline agent")
    c.add_argument("--out", help="comparison JSON path (default: next to the run directories)")
    c.set_defaults(func=cmd_compare)

    i = sub.add_parser("inspect", help="show a scene, the observation schema or a checkpoint")
    i.add_argument("what", choices=("scene", "schema", "checkpoint"))
    i.add_argument("target", nargs="?", help="scene id or .scene path, or checkpoint path")
    i.add_argument("--mode", choices=("enhanced", "baseline"), default="enhanced", help="schema mode")
    i.set_defaults(func=cmd_inspect)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)  # exits 2 on usage errors
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    try:
        return args.func(args)
    except (UsageError, ConfigError, CheckpointError, CheckpointMismatch, SceneFormatError) as e:
        print(f"kitchen-fetch: error: {e}", file=sys.stderr)
        return EXIT_USAGE
    except Exception as e:  # runtime failure: report, keep whatever was flushed to disk
        print(f"kitchen-fetch: {args.command} failed: {type(e).__name__}: {e}", file=sys.stderr)
        if args.verbose:
            raise
        return EXIT_FAILURE


if __name__ == "__main__":
    sys.exit(main())
