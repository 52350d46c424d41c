import json
import math
from pathlib import Path

import numpy as np
import pytest
from scipy.spatial.transform import Rotation as SciRotation

from spatialrel.geometry import CameraIntrinsics, OrientedBox3D, Rotation
from spatialrel.ingest import SceneAnnotation, parse_scene

DATA = Path(__file__).parent / "data"
CAM = CameraIntrinsics(500.0, 500.0, 320.0, 240.0, 640, 480)
CATEGORIES = ["car", "bus", "truck", "chair", "table", "lamp", "sofa", "bicycle", "plant", "cone"]


def box(center, rotation=None, category="car", instance_id="a", dims=(2.0, 1.0, 1.5), front_axis="+x"):
    return OrientedBox3D(tuple(center), dims, rotation or Rotation(), category, instance_id, front_axis)


def random_rotation(rng: np.random.Generator, upright_bias=0.5) -> Rotation:
    """Mix of near-upright and fully random orientations."""
    if rng.random() < upright_bias:
        return Rotation.upright(rng.uniform(0, 2 * math.pi), rng.normal(0, 0.1), rng.normal(0, 0.1))
    x, y, z, w = SciRotation.random(random_state=rng).as_quat()
    return Rotation(w, x, y, z)


def random_box(rng, instance_id="a", category="car", front_axes=("+x",)) -> OrientedBox3D:
    center = (rng.uniform(-6, 6), rng.uniform(-2, 2), rng.uniform(1, 25))
    dims = tuple(rng.uniform(0.2, 5.0, size=3))
    return OrientedBox3D(center, dims, random_rotation(rng), category, instance_id, str(rng.choice(front_axes)))


def random_scene(rng, scene_id="s", n=None, duplicate=False, up=None) -> SceneAnnotation:
    n = n or int(rng.integers(1, 7))
    cats = list(rng.choice(CATEGORIES, size=n, replace=False))
    if duplicate and n > 1:
        cats[-1] = cats[0]
    objs = tuple(
        random_box(rng, f"o{i}", cats[i], front_axes=("+x", "-x", "+y", "-y")) for i in range(n)
    )
    return SceneAnnotation(scene_id, "img.png", CAM, objs, up)


def load_jsonl(path):
    return [json.loads(line) for line in Path(path).read_text(encoding="utf-8").splitlines() if line.strip()]


@pytest.fixture(scope="session")
def scenes50():
    return [parse_scene(line) for line in (DATA / "scenes50.jsonl").read_text(encoding="utf-8").splitlines()]


@pytest.fixture(scope="session")
def fixture_manifest():
    return json.loads((DATA / "scenes50.manifest.json").read_text())


def pytest_terminal_summary(terminalreporter):
    import sys

    mod = sys.modules.get("test_acceptance")
    if mod is not None and mod.RESULTS:
        terminalreporter.section("acceptance criteria")
        for line in mod.RESULTS:
            terminalreporter.write_line(line)
