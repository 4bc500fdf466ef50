import numpy as np
import pytest

from kitchen_fetch.scene import load_scene, shipped_scene

CORRIDOR = """\
# id: 1
# name: Corridor
# object: A Apple Mid
#########
#......A#
#########
"""

# a 9x9 fixture used for visibility and random-walk checks
ROOM = """\
# id: 7
# name: Room
# object: A Apple Mid
# object: M Mug Mid
# object: C Container High
# object: K Knife Low
#########
#A..#...#
#...#..M#
#.......#
#..##...#
#.......#
#C......#
#.....K.#
#########
"""


@pytest.fixture
def corridor():
    return load_scene(CORRIDOR)


@pytest.fixture
def room():
    return load_scene(ROOM)


@pytest.fixture(scope="session")
def shipped():
    return [shipped_scene(i) for i in range(1, 5)]


def random_grid_text(rng, h=15, w=15, p_wall=0.25):
    """A bordered random map; interior walls are dropped until the floor is connected."""
    cells = np.where(rng.random((h, w)) < p_wall, "#", ".")
    cells[0, :] = cells[-1, :] = cells[:, 0] = cells[:, -1] = "#"
    cells[1, 1] = "."
    # keep only the component containing (1, 1)
    seen, todo = {(1, 1)}, [(1, 1)]
    while todo:
        r, c = todo.pop()
        for dr, dc in ((1, 0), (-1, 0), (0, 1), (0, -1)):
            n = (r + dr, c + dc)
            if cells[n] == "." and n not in seen:
                seen.add(n)
                todo.append(n)
    for r in range(h):
        for c in range(w):
            if (r, c) not in seen:
                cells[r, c] = "#"
    return "\n".join("".join(row) for row in cells) + "\n"
