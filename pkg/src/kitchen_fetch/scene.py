"""Gridworld kitchen scenes with target-object fetch episodes.

A scene is a rectangular grid of Floor/Obstacle cells plus an inventory of
small kitchen objects. The agent has a cell, a heading (N/E/S/W) and a
pitch (Up/Level/Down). It sees a widening forward cone of depth
``FOV_DEPTH``; an object is only visible when its height band matches the
pitch (High<->Up, Mid<->Level, Low<->Down) and no obstacle sits on the
discrete ray between the agent and the object.

Dynamics are deterministic. ``reset`` and ``step`` are pure functions of
their inputs; all randomness in an episode lives in ``WorldState.rng``,
which the perception layer draws from.

Scene asset format
------------------
Plain text. Header lines are ``# key: value``; recognised keys are
``id``, ``name`` and ``object`` (repeatable)::

    # id: 1
    # name: FloorPlan1
    # object: A Apple Mid
    # object: B Bread Low fixed

``object`` lines read ``<letter> <ClassName> <High|Mid|Low> [fixed]``;
``fixed`` marks a non-pickupable object. After the header comes the
character grid: ``#`` obstacle, ``.`` floor, a letter marks a cell of the
inventory object with that letter. A letter repeated over 4-connected
cells forms a multi-cell footprint; its first cell in row-major order is
the anchor. Instance ids follow inventory order.
"""

from __future__ import annotations

import dataclasses
import enum
from collections import deque
from dataclasses import dataclass, field
from importlib import resources
from typing import Iterable, Optional, Sequence

import numpy as np

Cell = tuple[int, int]

FOV_DEPTH = 5
DEFAULT_MAX_STEPS = 200

CLASS_NAMES = ("Mug", "Apple", "Knife", "Bread", "Pot", "Fork", "Phone", "Container")
NUM_CLASSES = len(CLASS_NAMES)
# Mug/Container, Knife/Fork and Pot/Phone look alike.
CLASS_COLORS = (0, 1, 2, 3, 4, 2, 4, 0)
NUM_COLORS = max(CLASS_COLORS) + 1


class CellKind(enum.IntEnum):
    FLOOR = 0
    OBSTACLE = 1


class Heading(enum.IntEnum):
    N = 0
    E = 1
    S = 2
    W = 3


class Pitch(enum.IntEnum):
    UP = 0
    LEVEL = 1
    DOWN = 2


class HeightBand(enum.IntEnum):
    HIGH = 0
    MID = 1
    LOW = 2


class Action(enum.IntEnum):
    MOVE_AHEAD = 0
    ROTATE_LEFT = 1
    ROTATE_RIGHT = 2
    LOOK_UP = 3
    LOOK_DOWN = 4
    PICKUP_OBJECT = 5
    DROP_OBJECT = 6


NUM_ACTIONS = len(Action)

# Heading -> (forward, right) unit vectors in (row, col); rows grow southward.
HEADING_VECTORS = {
    Heading.N: ((-1, 0), (0, 1)),
    Heading.E: ((0, 1), (1, 0)),
    Heading.S: ((1, 0), (0, -1)),
    Heading.W: ((0, -1), (-1, 0)),
}

# BFS expansion order N, E, S, W.
_NEIGHBOURS = ((-1, 0), (0, 1), (1, 0), (0, -1))

# Pitch and height band share their index: Up sees High, Level Mid, Down Low.
_BAND_FOR_PITCH = {Pitch.UP: HeightBand.HIGH, Pitch.LEVEL: HeightBand.MID, Pitch.DOWN: HeightBand.LOW}


class SceneFormatError(ValueError):
    """Malformed scene asset. ``line``/``column`` are 1-based when known."""

    def __init__(self, message: str, line: int | None = None, column: int | None = None):
        self.line = line
        self.column = column
        where = ""
        if line is not None:
            where = f"line {line}" + (f", column {column}" if column is not None else "") + ": "
        super().__init__(where + message)


class EpisodeError(ValueError):
    """Invalid episode specification or an illegal call on a finished episode."""


@dataclass(frozen=True, eq=False)
class GridMap:
    """Static occupancy of a floor plan.

    ``cells`` holds ``CellKind`` values and is treated as read-only. Derived
    lookups (visibility cones, BFS distance fields) are memoised in ``cache``.
    """

    width: int
    height: int
    cells: np.ndarray
    id: int = 0
    name: str = ""
    cache: dict = field(default_factory=dict, repr=False)

    def __eq__(self, other):
        if not isinstance(other, GridMap):
            return NotImplemented
        return (self.width, self.height, self.id) == (other.width, other.height, other.id) and bool(
            np.array_equal(self.cells, other.cells)
        )

    __hash__ = object.__hash__

    def in_bounds(self, cell: Cell) -> bool:
        r, c = cell
        return 0 <= r < self.height and 0 <= c < self.width

    def is_floor(self, cell: Cell) -> bool:
        return self.in_bounds(cell) and self.cells[cell] == CellKind.FLOOR

    def floor_cells(self) -> list[Cell]:
        rows, cols = np.nonzero(self.cells == CellKind.FLOOR)
        return [(int(r), int(c)) for r, c in zip(rows, cols)]


@dataclass(frozen=True)
class SceneObject:
    instance_id: int
    class_id: int
    color_id: int
    cell: Cell
    height_band: HeightBand = HeightBand.MID
    pickupable: bool = True
    held: bool = False
    # Every cell covered by the object, anchor included.
    footprint: tuple[Cell, ...] = ()

    def __post_init__(self):
        if not self.footprint:
            object.__setattr__(self, "footprint", (self.cell,))

    @property
    def class_name(self) -> str:
        return CLASS_NAMES[self.class_id]

    def moved_to(self, anchor: Cell) -> "SceneObject":
        dr, dc = anchor[0] - self.cell[0], anchor[1] - self.cell[1]
        fp = tuple((r + dr, c + dc) for r, c in self.footprint)
        return dataclasses.replace(self, cell=anchor, footprint=fp, held=False)


@dataclass(frozen=True)
class Scene:
    grid: GridMap
    objects: tuple[SceneObject, ...]
    # Asset letter per instance id, used for rendering.
    labels: tuple[str, ...] = ()

    @property
    def id(self) -> int:
        return self.grid.id

    def class_ids(self) -> list[int]:
        return sorted({o.class_id for o in self.objects})


@dataclass(frozen=True)
class AgentPose:
    cell: Cell
    heading: Heading = Heading.N
    pitch: Pitch = Pitch.LEVEL
    holding: Optional[int] = None


@dataclass(frozen=True)
class StepOutcome:
    collided: bool = False
    invalid_action: bool = False
    pickup_attempted: bool = False
    pickup_succeeded: bool = False
    picked_instance: Optional[int] = None
    success: bool = False
    terminal: bool = False
    steps_elapsed: int = 0


@dataclass(frozen=True)
class EpisodeSpec:
    scene_id: int
    target_class: int
    start_pose: AgentPose
    max_steps: int = DEFAULT_MAX_STEPS
    rng_seed: int = 0


@dataclass(frozen=True)
class WorldState:
    """World state s_t. ``rng`` is excluded from equality."""

    scene: Scene
    objects: tuple[SceneObject, ...]
    pose: AgentPose
    target_class: int
    max_steps: int
    steps: int = 0
    terminal: bool = False
    rng: np.random.Generator = field(default=None, compare=False, repr=False)

    @property
    def grid(self) -> GridMap:
        return self.scene.grid

    def object_at(self, cell: Cell) -> Optional[SceneObject]:
        for obj in self.objects:
            if not obj.held and cell in obj.footprint:
                return obj
        return None

    def held_object(self) -> Optional[SceneObject]:
        if self.pose.holding is None:
            return None
        for obj in self.objects:
            if obj.instance_id == self.pose.holding:
                return obj
        return None


# --------------------------------------------------------------------------- assets


def load_scene(asset: bytes | str) -> Scene:
    """Parse a scene asset and validate it."""
    text = asset.decode("utf-8") if isinstance(asset, bytes) else asset
    header: dict[str, str] = {}
    inventory: list[tuple[str, int, HeightBand, bool, int]] = []
    grid_lines: list[tuple[int, str]] = []

    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.rstrip()
        if not line:
            if grid_lines:
                raise SceneFormatError("blank line inside grid", lineno)
            continue
        if line.startswith("# ") or (line.startswith("#") and ":" in line and not grid_lines):
            body = line[1:].strip()
            if ":" not in body:
                continue
            key, value = (s.strip() for s in body.split(":", 1))
            if key == "object":
                inventory.append(_parse_inventory(value, lineno))
            else:
                header[key] = value
            continue
        grid_lines.append((lineno, line))

    if not grid_lines:
        raise SceneFormatError("no grid")
    width = len(grid_lines[0][1])
    height = len(grid_lines)
    cells = np.zeros((height, width), dtype=np.uint8)
    letters = {letter: i for i, (letter, *_rest) in enumerate(inventory)}
    footprints: dict[str, list[Cell]] = {letter: [] for letter in letters}
    for r, (lineno, line) in enumerate(grid_lines):
        if len(line) != width:
            raise SceneFormatError(f"row has {len(line)} columns, expected {width}", lineno, len(line) + 1)
        for c, ch in enumerate(line):
            if ch == "#":
                cells[r, c] = CellKind.OBSTACLE
            elif ch == ".":
                cells[r, c] = CellKind.FLOOR
            elif ch in letters:
                cells[r, c] = CellKind.FLOOR
                footprints[ch].append((r, c))
            else:
                raise SceneFormatError(f"unknown grid character {ch!r}", lineno, c + 1)

    try:
        scene_id = int(header.get("id", "0"))
    except ValueError:
        raise SceneFormatError(f"bad id {header['id']!r}") from None
    grid = GridMap(width, height, cells, id=scene_id, name=header.get("name", ""))

    objects = []
    for instance_id, (letter, class_id, band, pickupable, lineno) in enumerate(inventory):
        fp = footprints[letter]
        if not fp:
            raise SceneFormatError(f"object {letter!r} does not appear in the grid", lineno)
        if not _connected(fp):
            raise SceneFormatError(f"footprint of object {letter!r} is not 4-connected", lineno)
        objects.append(
            SceneObject(
                instance_id=instance_id,
                class_id=class_id,
                color_id=CLASS_COLORS[class_id],
                cell=fp[0],
                height_band=band,
                pickupable=pickupable,
                footprint=tuple(fp),
            )
        )
    scene = Scene(grid, tuple(objects), tuple(letter for letter, *_rest in inventory))
    validate_scene(scene)
    return scene


def _parse_inventory(value: str, lineno: int):
    parts = value.split()
    if len(parts) not in (3, 4):
        raise SceneFormatError("object line needs '<letter> <class> <band> [fixed]'", lineno)
    letter, class_name, band_name = parts[:3]
    if len(letter) != 1 or not letter.isalpha():
        raise SceneFormatError(f"object anchor must be a single letter, got {letter!r}", lineno)
    if class_name not in CLASS_NAMES:
        raise SceneFormatError(f"unknown class {class_name!r}", lineno)
    try:
        band = HeightBand[band_name.upper()]
    except KeyError:
        raise SceneFormatError(f"unknown height band {band_name!r}", lineno) from None
    pickupable = True
    if len(parts) == 4:
        if parts[3] != "fixed":
            raise SceneFormatError(f"unexpected object flag {parts[3]!r}", lineno)
        pickupable = False
    return letter, CLASS_NAMES.index(class_name), band, pickupable, lineno


def _connected(cells: Sequence[Cell]) -> bool:
    todo, seen = [cells[0]], {cells[0]}
    pool = set(cells)
    while todo:
        r, c = todo.pop()
        for dr, dc in _NEIGHBOURS:
            n = (r + dr, c + dc)
            if n in pool and n not in seen:
                seen.add(n)
                todo.append(n)
    return len(seen) == len(pool)


def validate_scene(scene: Scene) -> None:
    grid = scene.grid
    if grid.width < 3 or grid.height < 3:
        raise SceneFormatError("grid smaller than 3x3")
    border = np.concatenate([grid.cells[0], grid.cells[-1], grid.cells[:, 0], grid.cells[:, -1]])
    if np.any(border != CellKind.OBSTACLE):
        raise SceneFormatError("border cells must be obstacles")
    floor = grid.floor_cells()
    if not floor:
        raise SceneFormatError("no floor cells")
    if len(_flood(grid, floor[0])) != len(floor):
        raise SceneFormatError("floor cells are not a single connected component")
    seen: dict[Cell, int] = {}
    for obj in scene.objects:
        for cell in obj.footprint:
            if not grid.is_floor(cell):
                raise SceneFormatError(f"object on obstacle at {cell}")
            if cell in seen:
                raise SceneFormatError(f"duplicate object cell {cell}")
            seen[cell] = obj.instance_id


def _flood(grid: GridMap, start: Cell) -> set[Cell]:
    seen = {start}
    todo = [start]
    while todo:
        r, c = todo.pop()
        for dr, dc in _NEIGHBOURS:
            n = (r + dr, c + dc)
            if n not in seen and grid.is_floor(n):
                seen.add(n)
                todo.append(n)
    return seen


_SCENE_CACHE: dict[int, Scene] = {}


def shipped_scene(scene_id: int) -> Scene:
    """One of the four packaged floor plans (ids 1..4)."""
    if scene_id not in _SCENE_CACHE:
        if scene_id not in (1, 2, 3, 4):
            raise EpisodeError(f"unknown scene_id {scene_id}")
        data = resources.files("kitchen_fetch.assets").joinpath(f"floorplan{scene_id}.scene").read_bytes()
        _SCENE_CACHE[scene_id] = load_scene(data)
    return _SCENE_CACHE[scene_id]


def render_scene(scene: Scene, pose: AgentPose | None = None, objects: Iterable[SceneObject] | None = None) -> str:
    """ASCII render in the asset's own notation, followed by an object legend."""
    objects = scene.objects if objects is None else objects
    rows = [["#" if k == CellKind.OBSTACLE else "." for k in row] for row in scene.grid.cells]
    legend = []
    for obj in objects:
        if obj.instance_id < len(scene.labels):
            letter = scene.labels[obj.instance_id]
        else:
            letter = chr(ord("A") + obj.instance_id % 26)
        if not obj.held:
            for r, c in obj.footprint:
                rows[r][c] = letter
        legend.append(f"{letter} = {obj.class_name} ({obj.height_band.name.lower()}"
                      f"{', fixed' if not obj.pickupable else ''}{', held' if obj.held else ''})")
    if pose is not None:
        r, c = pose.cell
        rows[r][c] = "^>v<"[pose.heading]
    return "\n".join("".join(row) for row in rows) + "\n" + "\n".join(legend)


# --------------------------------------------------------------------------- episodes


def reset(spec: EpisodeSpec, scene: Scene | None = None) -> WorldState:
    """Initial state of an episode. ``scene`` overrides the packaged asset lookup."""
    if scene is None:
        scene = shipped_scene(spec.scene_id)
    elif scene.id != spec.scene_id:
        raise EpisodeError(f"scene id {scene.id} does not match spec scene_id {spec.scene_id}")
    if spec.max_steps < 1:
        raise EpisodeError("max_steps must be >= 1")
    if not any(o.class_id == spec.target_class for o in scene.objects):
        raise EpisodeError(f"target class {spec.target_class} is absent from scene {scene.id}")
    pose = spec.start_pose
    if not scene.grid.is_floor(pose.cell) or any(pose.cell in o.footprint for o in scene.objects):
        raise EpisodeError(f"start cell {pose.cell} is not free floor")
    pose = dataclasses.replace(pose, holding=None)
    return WorldState(
        scene=scene,
        objects=scene.objects,
        pose=pose,
        target_class=spec.target_class,
        max_steps=spec.max_steps,
        rng=np.random.default_rng(spec.rng_seed),
    )


def step(state: WorldState, action: Action | int) -> tuple[WorldState, StepOutcome]:
    if state.terminal:
        raise EpisodeError("step called on a terminal state")
    action = Action(action)
    pose = state.pose
    objects = state.objects
    grid = state.grid
    collided = invalid = attempted = picked_ok = success = False
    picked = None

    fwd = HEADING_VECTORS[pose.heading][0]
    ahead = (pose.cell[0] + fwd[0], pose.cell[1] + fwd[1])

    if action == Action.MOVE_AHEAD:
        if grid.is_floor(ahead) and state.object_at(ahead) is None:
            pose = dataclasses.replace(pose, cell=ahead)
        else:
            collided = True
    elif action == Action.ROTATE_LEFT:
        pose = dataclasses.replace(pose, heading=Heading((pose.heading - 1) % 4))
    elif action == Action.ROTATE_RIGHT:
        pose = dataclasses.replace(pose, heading=Heading((pose.heading + 1) % 4))
    elif action == Action.LOOK_UP:
        if pose.pitch == Pitch.UP:
            invalid = True
        else:
            pose = dataclasses.replace(pose, pitch=Pitch(pose.pitch - 1))
    elif action == Action.LOOK_DOWN:
        if pose.pitch == Pitch.DOWN:
            invalid = True
        else:
            pose = dataclasses.replace(pose, pitch=Pitch(pose.pitch + 1))
    elif action == Action.PICKUP_OBJECT:
        attempted = True
        obj = state.object_at(ahead)
        if (
            pose.holding is None
            and obj is not None
            and obj.pickupable
            and _band_visible(obj, pose.pitch)
            and obj.cell in visible_cells(grid, pose.cell, pose.heading)
        ):
            picked_ok = True
            picked = obj.instance_id
            success = obj.class_id == state.target_class
            objects = tuple(dataclasses.replace(o, held=True) if o is obj else o for o in objects)
            pose = dataclasses.replace(pose, holding=obj.instance_id)
        else:
            invalid = True
    elif action == Action.DROP_OBJECT:
        held = state.held_object()
        if held is None:
            invalid = True
        else:
            placed = held.moved_to(ahead)
            free = all(
                grid.is_floor(c) and c != pose.cell and state.object_at(c) is None for c in placed.footprint
            )
            if free:
                objects = tuple(placed if o.instance_id == held.instance_id else o for o in objects)
                pose = dataclasses.replace(pose, holding=None)
            else:
                invalid = True

    steps = state.steps + 1
    terminal = success or steps >= state.max_steps
    outcome = StepOutcome(
        collided=collided,
        invalid_action=invalid,
        pickup_attempted=attempted,
        pickup_succeeded=picked_ok,
        picked_instance=picked,
        success=success,
        terminal=terminal,
        steps_elapsed=steps,
    )
    return dataclasses.replace(state, objects=objects, pose=pose, steps=steps, terminal=terminal), outcome


# --------------------------------------------------------------------------- visibility


def ray_cells(src: Cell, dst: Cell) -> list[Cell]:
    """Cells strictly between ``src`` and ``dst`` on the discrete ray.

    The ray takes ``n = max(|dr|, |dc|)`` unit steps; intermediate offsets are
    rounded half away from zero, so the ray is symmetric under the grid's
    rotations and reflections.
    """
    dr, dc = dst[0] - src[0], dst[1] - src[1]
    n = max(abs(dr), abs(dc))
    out = []
    for k in range(1, n):
        out.append((src[0] + _round_div(dr * k, n), src[1] + _round_div(dc * k, n)))
    return out


def _round_div(num: int, den: int) -> int:
    # round(num / den) with halves away from zero; den > 0
    q = (2 * abs(num) + den) // (2 * den)
    return q if num >= 0 else -q


def cone_offsets(depth: int = FOV_DEPTH) -> list[tuple[int, int]]:
    """(forward, right) offsets of the view cone, nearest first."""
    return [(k, l) for k in range(1, depth + 1) for l in range(-k, k + 1)]


def visible_cells(grid: GridMap, cell: Cell, heading: Heading, depth: int = FOV_DEPTH) -> dict[Cell, tuple[int, int]]:
    """Cells seen from ``cell`` facing ``heading``: in the cone, in bounds, unoccluded.

    Maps each world cell to its (forward, right) offset. Memoised on the grid.
    """
    key = ("vis", cell, int(heading), depth)
    hit = grid.cache.get(key)
    if hit is not None:
        return hit
    (fr, fc), (rr, rc) = HEADING_VECTORS[Heading(heading)]
    out = {}
    for k, l in cone_offsets(depth):
        target = (cell[0] + k * fr + l * rr, cell[1] + k * fc + l * rc)
        if not grid.in_bounds(target):
            continue
        if all(grid.cells[c] != CellKind.OBSTACLE for c in ray_cells(cell, target)):
            out[target] = (k, l)
    grid.cache[key] = out
    return out


def _band_visible(obj: SceneObject, pitch: Pitch) -> bool:
    return obj.height_band == _BAND_FOR_PITCH[Pitch(pitch)]


def visible_objects(state: WorldState, depth: int = FOV_DEPTH) -> list[tuple[SceneObject, list[Cell]]]:
    """Objects whose anchor cell is seen at the current pitch, with their seen footprint cells."""
    pose = state.pose
    seen = visible_cells(state.grid, pose.cell, pose.heading, depth)
    out = []
    for obj in state.objects:
        if obj.held or not _band_visible(obj, pose.pitch) or obj.cell not in seen:
            continue
        out.append((obj, [c for c in obj.footprint if c in seen]))
    return out


# --------------------------------------------------------------------------- shortest paths


def distance_field(grid: GridMap, to_adjacent_of: Cell) -> np.ndarray:
    """BFS distance from every cell to the nearest floor cell 4-adjacent to ``to_adjacent_of``.

    Unreachable cells (and obstacles) hold -1. Objects are not obstacles here,
    so the field is a lower bound on the moves an agent needs.
    """
    key = ("bfs", to_adjacent_of)
    hit = grid.cache.get(key)
    if hit is not None:
        return hit
    dist = np.full((grid.height, grid.width), -1, dtype=np.int64)
    queue: deque[Cell] = deque()
    r0, c0 = to_adjacent_of
    for dr, dc in _NEIGHBOURS:
        n = (r0 + dr, c0 + dc)
        if grid.is_floor(n) and dist[n] < 0:
            dist[n] = 0
            queue.append(n)
    while queue:
        r, c = queue.popleft()
        for dr, dc in _NEIGHBOURS:
            n = (r + dr, c + dc)
            if dist[n] < 0 and grid.is_floor(n):
                dist[n] = dist[r, c] + 1
                queue.append(n)
    dist.setflags(write=False)
    grid.cache[key] = dist
    return dist


def shortest_path_length(grid: GridMap, start: Cell, to_adjacent_of: Cell) -> Optional[int]:
    """Fewest 4-neighbour moves over floor from ``start`` to a cell next to ``to_adjacent_of``.

    Returns None when no such cell is reachable.
    """
    if not grid.is_floor(start):
        raise EpisodeError(f"start {start} is not a floor cell")
    d = int(distance_field(grid, to_adjacent_of)[start])
    return None if d < 0 else d


# --------------------------------------------------------------------------- sampling


def free_cells(scene: Scene) -> list[Cell]:
    taken = {c for o in scene.objects for c in o.footprint}
    return [c for c in scene.grid.floor_cells() if c not in taken]


def sample_episode(
    rng: np.random.Generator,
    scenes: Sequence[Scene],
    max_steps: int = DEFAULT_MAX_STEPS,
    target_classes: Sequence[int] | None = None,
) -> EpisodeSpec:
    """Uniform over scenes, then over the scene's pickupable target classes, start cell and heading.

    The agent starts level-headed. Draw order is fixed so a seeded generator
    yields a reproducible episode stream.
    """
    scene = scenes[int(rng.integers(len(scenes)))]
    classes = sorted({o.class_id for o in scene.objects if o.pickupable})
    if target_classes is not None:
        classes = [c for c in classes if c in target_classes]
    if not classes:
        raise EpisodeError(f"scene {scene.id} has no eligible target class")
    target = classes[int(rng.integers(len(classes)))]
    cells = free_cells(scene)
    cell = cells[int(rng.integers(len(cells)))]
    heading = Heading(int(rng.integers(4)))
    seed = int(rng.integers(2**63))
    return EpisodeSpec(scene.id, target, AgentPose(cell, heading, Pitch.LEVEL), max_steps, seed)
