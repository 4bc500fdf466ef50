"""Experiment configuration: one YAML document per run, with dotted-path overrides.

The document has the sections ``scenes``, ``episodes``, ``perception``,
``reward``, ``network``, ``train`` and ``evaluation`` plus the top-level keys
``mode``, ``output_dir`` and ``seeds``. Every section maps onto one of the
library dataclasses, so validation errors carry the offending field path,
e.g. ``train.learning_rate: must be > 0``.
"""

from __future__ import annotations

import copy
import hashlib
import json
from dataclasses import dataclass, fields
from pathlib import Path
from typing import Optional

import yaml

from .perception import PerceptionConfig, channel_count
from .policy import NetworkSpec
from .ppo import TrainConfig
from .reward import RewardWeights
from .scene import CLASS_NAMES, Scene, load_scene, shipped_scene

MODES = ("enhanced", "baseline")


class ConfigError(ValueError):
    """Invalid configuration; ``path`` is the dotted location of the problem."""

    def __init__(self, path: str, message: str):
        self.path = path
        super().__init__(f"{path}: {message}" if path else message)


@dataclass(frozen=True)
class EpisodeSettings:
    max_steps: int = 200
    target_classes: Optional[tuple] = None  # None -> every class present in the scene


@dataclass(frozen=True)
class NetworkSettings:
    """The architecture knobs; input channels and window follow from mode and perception."""

    conv_layers: tuple = ((16, 3, 1), (32, 3, 1))
    hidden_units: int = 128


@dataclass(frozen=True)
class EvalSettings:
    episodes_per_scene: int = 100
    policy_mode: str = "stochastic"
    seed: int = 1000


@dataclass(frozen=True)
class ExperimentConfig:
    scenes: tuple = (1, 2, 3, 4)  # shipped scene ids or paths to .scene files
    episodes: EpisodeSettings = EpisodeSettings()
    perception: PerceptionConfig = PerceptionConfig()
    reward: RewardWeights = RewardWeights()
    network: NetworkSettings = NetworkSettings()
    train: TrainConfig = TrainConfig()
    evaluation: EvalSettings = EvalSettings()
    mode: str = "enhanced"
    output_dir: str = "runs"
    seeds: tuple = (0, 1, 2, 3, 4)

    def network_spec(self) -> NetworkSpec:
        return NetworkSpec(channel_count(self.mode), self.perception.window,
                           self.network.conv_layers, self.network.hidden_units, len(CLASS_NAMES))

    def load_scenes(self, base: Optional[Path] = None) -> list[Scene]:
        out = []
        for i, ref in enumerate(self.scenes):
            try:
                if isinstance(ref, int):
                    out.append(shipped_scene(ref))
                else:
                    p = Path(ref)
                    if base is not None and not p.is_absolute():
                        p = base / p
                    out.append(load_scene(p.read_bytes()))
            except (OSError, KeyError, ValueError) as e:
                raise ConfigError(f"scenes[{i}]", str(e)) from None
        return out

    def to_dict(self) -> dict:
        return _plain(self)

    def to_yaml(self) -> str:
        return yaml.safe_dump(self.to_dict(), sort_keys=False, default_flow_style=None)

    def digest(self) -> str:
        """SHA-256 of the canonical JSON form; identical configs hash identically."""
        blob = json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode()).hexdigest()


SECTIONS = {
    "episodes": EpisodeSettings,
    "perception": PerceptionConfig,
    "reward": RewardWeights,
    "network": NetworkSettings,
    "train": TrainConfig,
    "evaluation": EvalSettings,
}
TOP_LEVEL = ("scenes", "mode", "output_dir", "seeds")


def _plain(obj):
    if hasattr(obj, "__dataclass_fields__"):
        return {f.name: _plain(getattr(obj, f.name)) for f in fields(obj)}
    if isinstance(obj, (tuple, list)):
        return [_plain(v) for v in obj]
    return obj


def _tuplify(v):
    return tuple(_tuplify(x) for x in v) if isinstance(v, list) else v


def _coerce(path: str, value, default, optional: bool = False):
    """Check ``value`` against the type of the field default; ints widen to floats."""
    if value is None and (optional or default is None):
        return None
    if default is None:
        return _tuplify(value)
    if isinstance(default, bool):
        if not isinstance(value, bool):
            raise ConfigError(path, f"expected true/false, got {value!r}")
        return value
    if isinstance(default, int):
        if isinstance(value, bool) or not isinstance(value, int):
            raise ConfigError(path, f"expected an integer, got {value!r}")
        return value
    if isinstance(default, float):
        if isinstance(value, str):
            # YAML 1.1 reads exponent forms without a dot (1e-3) as strings
            try:
                return float(value)
            except ValueError:
                pass
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError(path, f"expected a number, got {value!r}")
        return float(value)
    if isinstance(default, str):
        if not isinstance(value, str):
            raise ConfigError(path, f"expected a string, got {value!r}")
        return value
    return _tuplify(value)


def _build_section(name: str, cls, data) -> object:
    if data is None:
        data = {}
    if not isinstance(data, dict):
        raise ConfigError(name, "expected a mapping")
    known = {f.name: f for f in fields(cls)}
    defaults = cls()
    kwargs = {}
    for key, value in data.items():
        if key not in known:
            raise ConfigError(f"{name}.{key}", "unknown field")
        optional = "Optional" in str(known[key].type)
        kwargs[key] = _coerce(f"{name}.{key}", value, getattr(defaults, key), optional)
    try:
        return cls(**kwargs)
    except (TypeError, ValueError) as e:
        # the dataclass validators name the field in their message; recover it for the path
        msg = str(e)
        bad = next((k for k in known if msg.startswith(k) or f" {k} " in f" {msg} "), None)
        raise ConfigError(f"{name}.{bad}" if bad else name, msg) from None


def from_dict(data: dict) -> ExperimentConfig:
    if not isinstance(data, dict):
        raise ConfigError("", "config document must be a mapping")
    for key in data:
        if key not in SECTIONS and key not in TOP_LEVEL:
            raise ConfigError(key, "unknown field")
    kwargs = {name: _build_section(name, cls, data.get(name)) for name, cls in SECTIONS.items()}

    if "mode" in data:
        if data["mode"] not in MODES:
            raise ConfigError("mode", f"must be one of {', '.join(MODES)}, got {data['mode']!r}")
        kwargs["mode"] = data["mode"]
    if "output_dir" in data:
        kwargs["output_dir"] = _coerce("output_dir", data["output_dir"], "")
    if "seeds" in data:
        seeds = data["seeds"]
        if not isinstance(seeds, list) or not seeds:
            raise ConfigError("seeds", "must be a non-empty list of integers")
        for i, s in enumerate(seeds):
            _coerce(f"seeds[{i}]", s, 0)
        if len(set(seeds)) != len(seeds):
            raise ConfigError("seeds", "seed list contains duplicates")
        kwargs["seeds"] = tuple(seeds)
    if "scenes" in data:
        scenes = data["scenes"]
        if not isinstance(scenes, list) or not scenes:
            raise ConfigError("scenes", "must be a non-empty list of scene ids or paths")
        for i, s in enumerate(scenes):
            if isinstance(s, bool) or not isinstance(s, (int, str)):
                raise ConfigError(f"scenes[{i}]", f"expected a scene id or path, got {s!r}")
        kwargs["scenes"] = tuple(scenes)

    cfg = ExperimentConfig(**kwargs)
    _check_cross_fields(cfg)
    return cfg


def _check_cross_fields(cfg: ExperimentConfig) -> None:
    tc = cfg.episodes.target_classes
    if tc is not None:
        if not tc or any(isinstance(c, bool) or not isinstance(c, int) or not 0 <= c < len(CLASS_NAMES) for c in tc):
            raise ConfigError("episodes.target_classes", f"expected class ids in [0, {len(CLASS_NAMES)})")
    if cfg.episodes.max_steps < 1:
        raise ConfigError("episodes.max_steps", "must be >= 1")
    if cfg.evaluation.policy_mode not in ("stochastic", "greedy"):
        raise ConfigError("evaluation.policy_mode", "must be stochastic or greedy")
    if cfg.evaluation.episodes_per_scene < 1:
        raise ConfigError("evaluation.episodes_per_scene", "must be >= 1")
    try:
        cfg.network_spec()
    except ValueError as e:
        raise ConfigError("network", str(e)) from None


def _set_path(data: dict, dotted: str, value) -> None:
    """Assign ``value`` at ``dotted``; a bare key resolves to the unique section that owns it."""
    parts = dotted.split(".")
    if len(parts) == 1 and parts[0] not in TOP_LEVEL:
        owners = [s for s, cls in SECTIONS.items() if parts[0] in {f.name for f in fields(cls)}]
        if len(owners) != 1:
            reason = "unknown field" if not owners else f"ambiguous, qualify it ({', '.join(owners)})"
            raise ConfigError(dotted, reason)
        parts = [owners[0], parts[0]]
    node = data
    for p in parts[:-1]:
        node = node.setdefault(p, {})
        if not isinstance(node, dict):
            raise ConfigError(dotted, "cannot descend into a non-mapping")
    node[parts[-1]] = value


def apply_overrides(data: dict, overrides) -> dict:
    """``overrides`` are ``path=value`` strings; values are parsed as YAML scalars/lists."""
    data = copy.deepcopy(data)
    for item in overrides or ():
        if "=" not in item:
            raise ConfigError(item, "override must look like path=value")
        path, raw = item.split("=", 1)
        _set_path(data, path.strip(), yaml.safe_load(raw))
    return data


def load_config(path, overrides=()) -> ExperimentConfig:
    text = Path(path).read_text()
    try:
        data = yaml.safe_load(text)
    except yaml.YAMLError as e:
        raise ConfigError("", f"{path}: not valid YAML ({e})") from None
    return from_dict(apply_overrides(data or {}, overrides))


def save_config(path, cfg: ExperimentConfig) -> None:
    Path(path).write_text(cfg.to_yaml())
