"""Scene annotation parsing, validation and corpus statistics.

One scene per line, UTF-8 JSON. See ``docs/FORMAT.md`` for the field list.
"""

from __future__ import annotations

import json
import logging
import math
import statistics
from collections import Counter
from dataclasses import dataclass, field
from typing import Any, Iterable, Iterator, Mapping, Sequence

import numpy as np

from .errors import FrameError, SchemaError
from .geometry import DEFAULT_UP, FRONT_AXES, CameraIntrinsics, OrientedBox3D, Rotation

log = logging.getLogger(__name__)

ROOT = "<record>"
QUAT_NORM_TOL = 1e-6
UP_NORM_TOL = 1e-6

# opengl camera (x right, y up, z backward) -> internal: half turn about x
_OPENGL_TO_CAM = Rotation(0.0, 1.0, 0.0, 0.0)
# omni3d object-local (x width, y height pointing down, z length/front) -> internal
# local (x front, y left, z top): our front = +z, left = -x, top = -y
_OMNI3D_LOCAL = Rotation.from_matrix(np.array([[0.0, -1.0, 0.0], [0.0, 0.0, -1.0], [1.0, 0.0, 0.0]]))

FRAME_ALIASES = {"opencv": "opencv", "camera": "opencv", "cam": "opencv", "opengl": "opengl", "omni3d": "omni3d"}


@dataclass(frozen=True)
class SceneAnnotation:
    scene_id: str
    image: str
    camera: CameraIntrinsics
    objects: tuple[OrientedBox3D, ...]
    up: tuple[float, float, float] | None = None
    warnings: tuple[str, ...] = field(default=(), compare=False)

    @property
    def up_vector(self) -> tuple[float, float, float]:
        return self.up if self.up is not None else DEFAULT_UP

    def object(self, instance_id: str) -> OrientedBox3D:
        for b in self.objects:
            if b.instance_id == instance_id:
                return b
        raise KeyError(instance_id)


@dataclass(frozen=True)
class Violation:
    code: str
    message: str
    path: str


@dataclass(frozen=True)
class ValidationReport:
    scene_id: str
    violations: tuple[Violation, ...] = ()

    @property
    def ok(self) -> bool:
        return not self.violations

    def to_dict(self) -> dict:
        return {
            "scene_id": self.scene_id,
            "ok": self.ok,
            "violations": [{"code": v.code, "message": v.message, "path": v.path} for v in self.violations],
        }


# -- schema helpers ---------------------------------------------------------


def _get(obj: Mapping, key: str, path: str) -> Any:
    if key not in obj:
        raise SchemaError("MissingField", _join(path, key), "required field is missing")
    return obj[key]


def _join(path: str, key: str) -> str:
    return key if path in ("", ROOT) else f"{path}.{key}"


def _str(value: Any, path: str) -> str:
    if not isinstance(value, str):
        raise SchemaError("WrongType", path, f"expected string, got {type(value).__name__}")
    return value


def _num(value: Any, path: str) -> float:
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise SchemaError("WrongType", path, f"expected number, got {type(value).__name__}")
    if not math.isfinite(value):
        raise SchemaError("NonFinite", path, f"value {value!r} is not finite")
    return float(value)


def _int(value: Any, path: str) -> int:
    if isinstance(value, bool) or not isinstance(value, int):
        raise SchemaError("WrongType", path, f"expected integer, got {type(value).__name__}")
    return value


def _vector(value: Any, n: int, path: str) -> tuple[float, ...]:
    if not isinstance(value, list):
        raise SchemaError("WrongType", path, f"expected array of {n} numbers, got {type(value).__name__}")
    if len(value) != n:
        raise SchemaError("BadLength", path, f"expected {n} numbers, got {len(value)}")
    return tuple(_num(v, f"{path}[{i}]") for i, v in enumerate(value))


def _mapping(value: Any, path: str) -> Mapping:
    if not isinstance(value, dict):
        raise SchemaError("WrongType", path, f"expected object, got {type(value).__name__}")
    return value


def _frame(value: Any, path: str) -> str:
    tag = _str(value, path)
    if tag not in FRAME_ALIASES:
        raise FrameError(path, tag)
    return FRAME_ALIASES[tag]


def _to_internal(frame: str, center, dims, rot: Rotation):
    if frame == "opengl":
        x, y, z = center
        return (x, -y, -z), dims, _OPENGL_TO_CAM * rot
    if frame == "omni3d":
        w, h, l = dims
        return center, (l, w, h), rot * _OMNI3D_LOCAL
    return center, dims, rot


def _up_to_internal(frame: str, up):
    if frame == "opengl":
        return (up[0], -up[1], -up[2])
    return up


# -- public API --------------------------------------------------------------


def parse_scene(data: bytes | str | Mapping, front_axes: Mapping[str, str] | None = None) -> SceneAnnotation:
    """Parse one scene record into the internal camera frame.

    ``front_axes`` maps category -> local front axis (``"+x"``, ``"-y"``...)
    for objects that carry no explicit ``front`` field.
    """
    if isinstance(data, (bytes, str)):
        try:
            data = json.loads(data)
        except (json.JSONDecodeError, UnicodeDecodeError) as exc:
            raise SchemaError("InvalidJSON", ROOT, str(exc)) from None
    rec = _mapping(data, ROOT)
    front_axes = front_axes or {}
    warnings = []

    scene_id = _str(_get(rec, "scene_id", ROOT), "scene_id")
    image = _str(_get(rec, "image", ROOT), "image")
    cam = _mapping(_get(rec, "camera", ROOT), "camera")
    camera = CameraIntrinsics(
        fx=_num(_get(cam, "fx", "camera"), "camera.fx"),
        fy=_num(_get(cam, "fy", "camera"), "camera.fy"),
        cx=_num(_get(cam, "cx", "camera"), "camera.cx"),
        cy=_num(_get(cam, "cy", "camera"), "camera.cy"),
        width=_int(_get(cam, "width", "camera"), "camera.width"),
        height=_int(_get(cam, "height", "camera"), "camera.height"),
    )
    scene_frame = _frame(rec["frame"], "frame") if "frame" in rec else "opencv"
    up = None
    if rec.get("up") is not None:
        up = _up_to_internal(scene_frame, _vector(rec["up"], 3, "up"))

    raw_objects = _get(rec, "objects", ROOT)
    if not isinstance(raw_objects, list):
        raise SchemaError("WrongType", "objects", f"expected array, got {type(raw_objects).__name__}")
    objects = []
    for i, raw in enumerate(raw_objects):
        p = f"objects[{i}]"
        o = _mapping(raw, p)
        oid = _str(_get(o, "id", p), f"{p}.id")
        category = _str(_get(o, "category", p), f"{p}.category")
        center = _vector(_get(o, "center", p), 3, f"{p}.center")
        dims = _vector(_get(o, "dims", p), 3, f"{p}.dims")
        quat = _vector(_get(o, "quat", p), 4, f"{p}.quat")
        frame = _frame(o["frame"], f"{p}.frame") if "frame" in o else scene_frame
        qn = math.sqrt(sum(c * c for c in quat))
        if qn == 0.0:
            raise SchemaError("DegenerateQuaternion", f"{p}.quat", "quaternion has zero norm")
        if abs(qn - 1.0) > QUAT_NORM_TOL:
            msg = f"{p}.quat: norm {qn:.6g} renormalized"
            warnings.append(msg)
            log.warning("scene %s: %s", scene_id, msg)
        rot = Rotation(*quat)
        if "front" in o:
            front = _str(o["front"], f"{p}.front")
            if front not in FRONT_AXES:
                raise SchemaError("BadValue", f"{p}.front", f"front axis must be one of {sorted(FRONT_AXES)}")
        else:
            front = front_axes.get(category, "+x")
        center, dims, rot = _to_internal(frame, center, dims, rot)
        objects.append(OrientedBox3D(center, dims, rot, category, oid, front))

    return SceneAnnotation(scene_id, image, camera, tuple(objects), up, tuple(warnings))


def scene_to_record(s: SceneAnnotation) -> dict:
    rec = {
        "scene_id": s.scene_id,
        "image": s.image,
        "camera": {
            "fx": s.camera.fx,
            "fy": s.camera.fy,
            "cx": s.camera.cx,
            "cy": s.camera.cy,
            "width": s.camera.width,
            "height": s.camera.height,
        },
    }
    if s.up is not None:
        rec["up"] = list(s.up)
    rec["objects"] = [
        {
            "id": b.instance_id,
            "category": b.category,
            "center": list(b.center),
            "dims": list(b.dims),
            "quat": list(b.rotation.as_tuple()),
            "front": b.front_axis,
            "frame": "opencv",
        }
        for b in s.objects
    ]
    return rec


def serialize_scene(s: SceneAnnotation) -> str:
    """One JSON line (no trailing newline) in the internal frame."""
    return json.dumps(scene_to_record(s), ensure_ascii=False, separators=(",", ":"))


def validate(s: SceneAnnotation) -> ValidationReport:
    v = []
    cam = s.camera
    if not cam.width > 0:
        v.append(Violation("InvalidCamera", f"width must be positive, got {cam.width}", "camera.width"))
    if not cam.height > 0:
        v.append(Violation("InvalidCamera", f"height must be positive, got {cam.height}", "camera.height"))
    if not cam.fx > 0:
        v.append(Violation("InvalidCamera", f"fx must be positive, got {cam.fx}", "camera.fx"))
    if not cam.fy > 0:
        v.append(Violation("InvalidCamera", f"fy must be positive, got {cam.fy}", "camera.fy"))
    if not 0 <= cam.cx <= cam.width:
        v.append(Violation("InvalidCamera", f"cx={cam.cx} outside [0, {cam.width}]", "camera.cx"))
    if not 0 <= cam.cy <= cam.height:
        v.append(Violation("InvalidCamera", f"cy={cam.cy} outside [0, {cam.height}]", "camera.cy"))
    if s.up is not None:
        n = math.sqrt(sum(c * c for c in s.up))
        if not abs(n - 1.0) <= UP_NORM_TOL:
            v.append(Violation("NonUnitUp", f"up vector norm is {n:.6g}", "up"))
    seen = set()
    for i, b in enumerate(s.objects):
        p = f"objects[{i}]"
        if b.instance_id in seen:
            v.append(Violation("DuplicateId", f"instance id {b.instance_id!r} already used", f"{p}.id"))
        seen.add(b.instance_id)
        for j, c in enumerate(b.center):
            if not math.isfinite(c):
                v.append(Violation("NonFinite", f"center component {c!r}", f"{p}.center[{j}]"))
        for j, d in enumerate(b.dims):
            if not d > 0:
                v.append(Violation("NonPositiveDim", f"dimension {d!r} must be positive", f"{p}.dims[{j}]"))
        if not b.center[2] > 0:
            v.append(Violation("BehindCamera", f"center depth {b.center[2]!r} is not in front of the camera", f"{p}.center[2]"))
    return ValidationReport(s.scene_id, tuple(v))


def unique_referents(s: SceneAnnotation) -> dict[str, str]:
    """category -> instance_id for categories occurring exactly once."""
    counts = Counter(b.category for b in s.objects)
    return {b.category: b.instance_id for b in sorted(s.objects, key=lambda b: b.category) if counts[b.category] == 1}


def iter_records(lines: Iterable[str | bytes]) -> Iterator[tuple[int, str]]:
    """(1-based line number, text) for every non-blank line."""
    for n, line in enumerate(lines, 1):
        if isinstance(line, bytes):
            line = line.decode("utf-8")
        if line.strip():
            yield n, line


# -- statistics ---------------------------------------------------------------


@dataclass(frozen=True)
class CorpusStats:
    scene_count: int = 0
    object_count: int = 0
    category_histogram: tuple[tuple[str, int], ...] = ()
    unique_referents: tuple[tuple[str, int], ...] = ()
    depths: tuple[float, ...] = ()

    def merge(self, other: "CorpusStats") -> "CorpusStats":
        hist = Counter(dict(self.category_histogram))
        hist.update(dict(other.category_histogram))
        refs = dict(self.unique_referents)
        refs.update(dict(other.unique_referents))
        return CorpusStats(
            self.scene_count + other.scene_count,
            self.object_count + other.object_count,
            tuple(sorted(hist.items())),
            tuple(sorted(refs.items())),
            tuple(sorted(self.depths + other.depths)),
        )

    def depth_summary(self) -> dict[str, float] | None:
        if not self.depths:
            return None
        return {"min": self.depths[0], "median": statistics.median(self.depths), "max": self.depths[-1]}

    def to_dict(self) -> dict:
        return {
            "scene_count": self.scene_count,
            "object_count": self.object_count,
            "category_histogram": dict(self.category_histogram),
            "unique_referents": dict(self.unique_referents),
            "depth": self.depth_summary(),
        }

    def render(self) -> str:
        lines = [f"scenes   {self.scene_count}", f"objects  {self.object_count}"]
        d = self.depth_summary()
        if d:
            lines.append(f"depth m  min {d['min']:.2f}  median {d['median']:.2f}  max {d['max']:.2f}")
        if self.category_histogram:
            width = max(len(c) for c, _ in self.category_histogram)
            lines.append("")
            lines.append(f"{'category':<{width}}  count")
            lines.extend(f"{c:<{width}}  {n:>5}" for c, n in self.category_histogram)
        if self.unique_referents:
            total = sum(n for _, n in self.unique_referents)
            lines.append("")
            lines.append(f"unique referents  {total} over {len(self.unique_referents)} scenes")
        return "\n".join(lines)


def scene_stats(s: SceneAnnotation) -> CorpusStats:
    hist = Counter(b.category for b in s.objects)
    return CorpusStats(
        1,
        len(s.objects),
        tuple(sorted(hist.items())),
        ((s.scene_id, len(unique_referents(s))),),
        tuple(sorted(float(np.linalg.norm(b.center_vec)) for b in s.objects)),
    )


def corpus_stats(scenes: Iterable[SceneAnnotation]) -> CorpusStats:
    total = CorpusStats()
    for s in scenes:
        total = total.merge(scene_stats(s))
    return total


# -- Omni3D-style converter ------------------------------------------------


def convert_omni3d(dataset: Mapping, include_invalid: bool = False) -> list[dict]:
    """Convert an Omni3D-style json export into scene records.

    Assumed source convention: ``center_cam`` in an OpenCV camera frame,
    ``dimensions`` as (width, height, length) and ``R_cam`` a 3x3 matrix
    whose columns are the object's width, height (pointing down) and length
    (front) axes. Annotations flagged ``behind_camera`` or not ``valid3D``
    are dropped unless ``include_invalid``.
    """
    by_image: dict[Any, list] = {}
    for ann in dataset.get("annotations", []):
        if not include_invalid and (ann.get("behind_camera") or not ann.get("valid3D", True)):
            continue
        by_image.setdefault(ann["image_id"], []).append(ann)
    records = []
    for img in sorted(dataset.get("images", []), key=lambda im: str(im["id"])):
        K = img["K"]
        objects = []
        for ann in sorted(by_image.get(img["id"], []), key=lambda a: str(a["id"])):
            q = Rotation.from_matrix(np.array(ann["R_cam"], dtype=np.float64))
            objects.append(
                {
                    "id": str(ann["id"]),
                    "category": ann["category_name"],
                    "center": [float(c) for c in ann["center_cam"]],
                    "dims": [float(d) for d in ann["dimensions"]],
                    "quat": list(q.as_tuple()),
                    "frame": "omni3d",
                }
            )
        records.append(
            {
                "scene_id": str(img["id"]),
                "image": img.get("file_path", ""),
                "camera": {
                    "fx": float(K[0][0]),
                    "fy": float(K[1][1]),
                    "cx": float(K[0][2]),
                    "cy": float(K[1][2]),
                    "width": int(img["width"]),
                    "height": int(img["height"]),
                },
                "objects": objects,
            }
        )
    return records
