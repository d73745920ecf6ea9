from __future__ import annotations

import pytest

from skillplan.geometry import BBox
from skillplan.simenv import Scene, SceneObject, SimEnv
from skillplan.skills import default_registry


def make_scene(*objs, width=640, height=480):
    """objs: (label, bbox) or (label, bbox, depth)."""
    objects = []
    for i, o in enumerate(objs, 1):
        depth = o[2] if len(o) > 2 else 300.0
        objects.append(SceneObject(f"o{i}", o[0], BBox(*o[1]), depth))
    return Scene(width, height, objects)


@pytest.fixture
def registry():
    return default_registry()


@pytest.fixture
def two_blocks():
    return make_scene(("block", (0, 0, 5, 5)), ("block", (10, 10, 20, 20)), ("box", (100, 100, 200, 200)))


@pytest.fixture
def env(two_blocks):
    return SimEnv(two_blocks)
