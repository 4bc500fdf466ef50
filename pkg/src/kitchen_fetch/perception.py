"""Simulated detection and segmentation, and the two observation encoders.

The detector and segmenter are frozen noisy oracles over the scene's true
visible objects. Both encoders produce an egocentric window of
``2 * window_radius + 1`` cells with the agent at the centre and its heading
pointing up (row 0 is furthest ahead).

Channel layout of the enhanced tensor, K = number of classes::

    0        occupancy (1 = obstacle seen)
    1        known (1 = cell inside the unoccluded view cone)
    2        appearance (color id of seen objects, scaled to (0, 1])
    3..3+K   one-hot class planes painted over mask cells
    3+K      union of all masks
    4+K      mask cells whose detected class is the target class
    5+K      pitch, broadcast (Up 1.0, Level 0.5, Down 0.0)

The baseline tensor keeps channels 0, 1, 2 and the pitch plane, in that order.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np

from .scene import (
    CLASS_NAMES,
    FOV_DEPTH,
    NUM_CLASSES,
    NUM_COLORS,
    CellKind,
    Pitch,
    WorldState,
    visible_cells,
    visible_objects,
)

EgoCell = tuple[int, int]

PITCH_LEVELS = {Pitch.UP: 1.0, Pitch.LEVEL: 0.5, Pitch.DOWN: 0.0}

OCCUPANCY, KNOWN, APPEARANCE = 0, 1, 2
CLASS_BASE = 3
INSTANCE = CLASS_BASE + NUM_CLASSES
TARGET = INSTANCE + 1
PITCH = TARGET + 1
ENHANCED_CHANNELS = PITCH + 1
BASELINE_SOURCE = (OCCUPANCY, KNOWN, APPEARANCE, PITCH)
BASELINE_CHANNELS = len(BASELINE_SOURCE)


@dataclass(frozen=True)
class PerceptionConfig:
    window_radius: int = 5
    p_detect: float = 0.95
    p_misclass: float = 0.05
    p_mask_dropout: float = 0.05
    p_false_positive: float = 0.05

    def __post_init__(self):
        if self.window_radius < 1:
            raise ValueError("window_radius must be >= 1")
        for name in ("p_detect", "p_misclass", "p_mask_dropout"):
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                raise ValueError(f"{name} must lie in [0, 1], got {v}")
        # expected count per frame; kept in [0, 1] like the other knobs
        if not 0.0 <= self.p_false_positive <= 1.0:
            raise ValueError(f"p_false_positive must lie in [0, 1], got {self.p_false_positive}")

    @property
    def window(self) -> int:
        return 2 * self.window_radius + 1

    @classmethod
    def noiseless(cls, window_radius: int = 5) -> "PerceptionConfig":
        return cls(window_radius, 1.0, 0.0, 0.0, 0.0)

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass(frozen=True)
class Detection:
    box: tuple[int, int, int, int]  # min_row, max_row, min_col, max_col (inclusive)
    class_label: int
    confidence: float
    instance: int = -1  # -1 marks a spurious detection

    def contains(self, cell: EgoCell) -> bool:
        r0, r1, c0, c1 = self.box
        return r0 <= cell[0] <= r1 and c0 <= cell[1] <= c1


@dataclass(frozen=True)
class SegmentMask:
    detection_index: int
    cells: frozenset[EgoCell]


def channel_count(mode: str = "enhanced") -> int:
    if mode == "enhanced":
        return ENHANCED_CHANNELS
    if mode == "baseline":
        return BASELINE_CHANNELS
    raise ValueError(f"unknown observation mode {mode!r}")


def observation_schema(mode: str = "enhanced") -> str:
    if mode not in ("enhanced", "baseline"):
        raise ValueError(f"unknown observation mode {mode!r}")
    names = {
        OCCUPANCY: "occupancy: 1 where a seen cell is an obstacle",
        KNOWN: "known: 1 inside the unoccluded view cone, 0 = unknown",
        APPEARANCE: f"appearance: (color_id + 1) / {NUM_COLORS} on seen object cells",
        INSTANCE: "instance: union of all segmentation masks",
        TARGET: "target: mask cells whose detected class is the episode target",
        PITCH: "pitch: broadcast, Up 1.0 / Level 0.5 / Down 0.0",
    }
    for k, name in enumerate(CLASS_NAMES):
        names[CLASS_BASE + k] = f"class {k} ({name}): mask cells labelled {name}"
    order = range(ENHANCED_CHANNELS) if mode == "enhanced" else BASELINE_SOURCE
    lines = [f"# observation schema ({mode}), {len(order)} channels, egocentric window, heading up"]
    lines += [f"{i}\t{names[src]}" for i, src in enumerate(order)]
    return "\n".join(lines) + "\n"


# --------------------------------------------------------------------------- geometry


def _ego_view(state: WorldState, radius: int) -> dict:
    """World cell -> egocentric (row, col) for every seen cell inside the window."""
    pose = state.pose
    seen = visible_cells(state.grid, pose.cell, pose.heading, FOV_DEPTH)
    return {cell: (radius - k, radius + l) for cell, (k, l) in seen.items() if k <= radius and abs(l) <= radius}


def _base_planes(state: WorldState, radius: int) -> np.ndarray:
    """Occupancy and known planes for the current cell/heading; memoised on the grid."""
    pose = state.pose
    grid = state.grid
    key = ("planes", pose.cell, int(pose.heading), radius)
    hit = grid.cache.get(key)
    if hit is None:
        w = 2 * radius + 1
        hit = np.zeros((2, w, w))
        for cell, (r, c) in _ego_view(state, radius).items():
            hit[1, r, c] = 1.0
            if grid.cells[cell] == CellKind.OBSTACLE:
                hit[0, r, c] = 1.0
        hit.setflags(write=False)
        grid.cache[key] = hit
    return hit


def _object_cells(state: WorldState, radius: int) -> list[tuple[object, list[EgoCell]]]:
    ego = _ego_view(state, radius)
    out = []
    for obj, cells in visible_objects(state):
        cells = [ego[c] for c in cells if c in ego]
        if cells:
            out.append((obj, cells))
    return out


# --------------------------------------------------------------------------- detector / segmenter


def detect(state: WorldState, config: PerceptionConfig, rng: np.random.Generator) -> list[Detection]:
    """Noisy detections of the visible objects plus Poisson false positives.

    Four uniforms are drawn per visible object whatever the outcome, so the
    generator advances identically for a given set of visible objects.
    """
    dets = []
    for obj, cells in _object_cells(state, config.window_radius):
        u_det, u_mis, u_cls, u_conf = rng.random(4)
        if u_det >= config.p_detect:
            continue
        label = obj.class_id
        if u_mis < config.p_misclass:
            wrong = int(u_cls * (NUM_CLASSES - 1))
            label = wrong if wrong < obj.class_id else wrong + 1
        rows = [r for r, _ in cells]
        cols = [c for _, c in cells]
        box = (min(rows), max(rows), min(cols), max(cols))
        dets.append(Detection(box, label, 1.0 - 0.5 * float(u_conf), obj.instance_id))

    n_spurious = int(rng.poisson(config.p_false_positive)) if config.p_false_positive > 0 else 0
    if n_spurious:
        known = np.argwhere(_base_planes(state, config.window_radius)[1] > 0)
        for _ in range(n_spurious):
            if len(known) == 0:
                break
            r, c = (int(v) for v in known[int(rng.integers(len(known)))])
            label = int(rng.integers(NUM_CLASSES))
            conf = 0.5 * (1.0 - float(rng.random()))
            dets.append(Detection((r, r, c, c), label, conf, -1))

    dets.sort(key=lambda d: (-d.confidence, d.instance))
    return dets


def segment(
    detections: list[Detection], state: WorldState, config: PerceptionConfig, rng: np.random.Generator
) -> list[SegmentMask]:
    """Box-prompted masks: true footprints with per-cell dropout; spurious boxes give one cell."""
    footprints = {obj.instance_id: cells for obj, cells in _object_cells(state, config.window_radius)}
    masks = []
    for i, det in enumerate(detections):
        if det.instance < 0 or det.instance not in footprints:
            r0, _, c0, _ = det.box
            masks.append(SegmentMask(i, frozenset({(r0, c0)})))
            continue
        cells = footprints[det.instance]
        keep = rng.random(len(cells)) >= config.p_mask_dropout
        masks.append(SegmentMask(i, frozenset(c for c, k in zip(cells, keep) if k and det.contains(c))))
    return masks


# --------------------------------------------------------------------------- encoders


def _appearance_and_pitch(state: WorldState, config: PerceptionConfig, planes: np.ndarray, appearance: int, pitch: int):
    for obj, cells in _object_cells(state, config.window_radius):
        value = (obj.color_id + 1) / NUM_COLORS
        for r, c in cells:
            planes[appearance, r, c] = value
    planes[pitch] = PITCH_LEVELS[state.pose.pitch]


def encode_enhanced(
    detections: list[Detection],
    masks: list[SegmentMask],
    target_class: int,
    state: WorldState,
    config: PerceptionConfig,
) -> np.ndarray:
    w = config.window
    planes = np.zeros((ENHANCED_CHANNELS, w, w))
    planes[:2] = _base_planes(state, config.window_radius)
    _appearance_and_pitch(state, config, planes, APPEARANCE, PITCH)
    for mask in masks:
        det = detections[mask.detection_index]
        for r, c in mask.cells:
            if not (0 <= r < w and 0 <= c < w):
                raise ValueError(f"mask cell {(r, c)} outside the {w}x{w} window")
            planes[CLASS_BASE + det.class_label, r, c] = 1.0
            planes[INSTANCE, r, c] = 1.0
            if det.class_label == target_class:
                planes[TARGET, r, c] = 1.0
    return planes


def encode_baseline(state: WorldState, config: PerceptionConfig) -> np.ndarray:
    w = config.window
    planes = np.zeros((BASELINE_CHANNELS, w, w))
    planes[:2] = _base_planes(state, config.window_radius)
    _appearance_and_pitch(state, config, planes, 2, 3)
    return planes


def observe(state: WorldState, config: PerceptionConfig, mode: str, rng: np.random.Generator | None = None) -> np.ndarray:
    """Encoded observation for ``mode``; perception noise draws from ``rng`` (default: the state's)."""
    if mode == "baseline":
        return encode_baseline(state, config)
    if mode != "enhanced":
        raise ValueError(f"unknown observation mode {mode!r}")
    rng = state.rng if rng is None else rng
    dets = detect(state, config, rng)
    masks = segment(dets, state, config, rng)
    return encode_enhanced(dets, masks, state.target_class, state, config)


def context_vector(target_class: int) -> np.ndarray:
    """Target one-hot handed to both agents next to the planes."""
    ctx = np.zeros(NUM_CLASSES)
    ctx[target_class] = 1.0
    return ctx
