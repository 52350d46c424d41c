"""Seeded synthetic street and indoor scenes for fixtures and stress tests."""

from __future__ import annotations

import math

from .geometry import CameraIntrinsics, OrientedBox3D, Rotation
from .ingest import SceneAnnotation
from .rng import SplitMix64, derive_seed

# category: (length, width, height) in meters, placement
OUTDOOR = {
    "car": ((4.5, 1.8, 1.5), "ground"),
    "bus": ((11.0, 2.5, 3.2), "ground"),
    "truck": ((7.0, 2.4, 3.0), "ground"),
    "pedestrian": ((0.5, 0.6, 1.7), "ground"),
    "bicycle": ((1.7, 0.6, 1.1), "ground"),
    "motorcycle": ((2.1, 0.8, 1.3), "ground"),
    "traffic cone": ((0.4, 0.4, 0.7), "ground"),
    "barrier": ((0.5, 2.0, 1.0), "ground"),
    "trailer": ((8.0, 2.5, 3.5), "ground"),
    "traffic light": ((0.4, 0.4, 1.0), "pole"),
    "street sign": ((0.1, 0.8, 0.8), "pole"),
}
INDOOR = {
    "chair": ((0.5, 0.5, 0.9), "floor"),
    "table": ((1.2, 0.8, 0.75), "floor"),
    "sofa": ((0.9, 2.0, 0.85), "floor"),
    "bed": ((2.0, 1.6, 0.6), "floor"),
    "cabinet": ((0.5, 1.0, 1.8), "floor"),
    "bookshelf": ((0.35, 0.9, 1.9), "floor"),
    "plant": ((0.4, 0.4, 0.8), "floor"),
    "box": ((0.5, 0.4, 0.35), "floor"),
    "lamp": ((0.3, 0.3, 0.5), "raised"),
    "monitor": ((0.2, 0.6, 0.4), "raised"),
    "laptop": ((0.25, 0.35, 0.25), "raised"),
    "bottle": ((0.08, 0.08, 0.25), "raised"),
}


def _uniform(rng: SplitMix64, lo: float, hi: float) -> float:
    return lo + (hi - lo) * rng.uniform()


def synthetic_scene(scene_id: str, seed: int) -> SceneAnnotation:
    rng = SplitMix64(derive_seed(seed, "scene", scene_id))
    outdoor = rng.below(2) == 0
    vocab = OUTDOOR if outdoor else INDOOR
    width, height = (1280, 720) if outdoor else (640, 480)
    f = _uniform(rng, 500.0, 1000.0)
    cam = CameraIntrinsics(f, f, width / 2, height / 2, width, height)
    cam_height = _uniform(rng, 1.4, 1.8) if outdoor else _uniform(rng, 1.2, 1.6)
    zmin, zmax = (3.0, 30.0) if outdoor else (1.0, 7.0)

    names = sorted(vocab)
    rng.shuffle(names)
    chosen = names[: rng.randint(4, min(10, len(names)))]
    if rng.uniform() < 0.25:
        chosen.append(chosen[rng.below(len(chosen))])

    main_yaw = _uniform(rng, 0.0, 2 * math.pi)
    objects = []
    for j, cat in enumerate(chosen):
        dims, placement = vocab[cat]
        dims = tuple(d * _uniform(rng, 0.9, 1.1) for d in dims)
        z = _uniform(rng, zmin, zmax)
        x = _uniform(rng, -0.8, 0.8) * z * (width / 2) / f
        if placement in ("ground", "floor"):
            y = cam_height - dims[2] / 2
        elif placement == "pole":
            y = cam_height - _uniform(rng, 2.5, 5.0)
        else:
            y = cam_height - 0.75 - dims[2] / 2
        mode = rng.uniform()
        if mode < 0.45:
            yaw = main_yaw + math.radians(_uniform(rng, -12.0, 12.0))
        elif mode < 0.6:
            yaw = main_yaw + math.pi + math.radians(_uniform(rng, -12.0, 12.0))
        else:
            yaw = _uniform(rng, 0.0, 2 * math.pi)
        pitch = math.radians(_uniform(rng, -4.0, 4.0))
        roll = math.radians(_uniform(rng, -4.0, 4.0))
        if rng.uniform() < 0.04:
            # knocked over
            roll = math.copysign(math.pi / 2, rng.uniform() - 0.5)
            y = cam_height - dims[1] / 2
        rot = Rotation.upright(yaw, pitch, roll)
        objects.append(OrientedBox3D((x, y, z), dims, rot, cat, f"o{j}"))
    return SceneAnnotation(scene_id, f"synthetic/{scene_id}.png", cam, tuple(objects))


def synthetic_scenes(n: int, seed: int = 0, prefix: str = "syn") -> list[SceneAnnotation]:
    return [synthetic_scene(f"{prefix}{i:05d}", seed) for i in range(n)]
