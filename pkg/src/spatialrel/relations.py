"""Benchmark predicates and probing quantities with ambiguity margins.

Every comparison predicate returns an explicit ``ambiguous`` outcome when the
two compared quantities sit inside a configured margin of each other; those
instances never become questions.
"""

from __future__ import annotations

import enum
import itertools
import math
from collections import Counter
from dataclasses import asdict, dataclass, field, fields
from typing import Any, Mapping, Sequence

import numpy as np

from . import geometry as geo
from .errors import ConfigError, DegenerateProjection
from .geometry import DEFAULT_UP, OrientedBox3D

BENCHMARK_KINDS = (
    "closer_to_camera",
    "closer_to_object",
    "facing_camera",
    "facing_object",
    "same_direction",
    "higher",
    "on_which_side",
)
PROBING_KINDS = ("object_depth", "pairwise_distance", "viewer_pose")
ALL_KINDS = BENCHMARK_KINDS + PROBING_KINDS

ARITY = {
    "closer_to_camera": 2,
    "closer_to_object": 3,
    "facing_camera": 1,
    "facing_object": 3,
    "same_direction": 2,
    "higher": 2,
    "on_which_side": 2,
    "object_depth": 1,
    "pairwise_distance": 2,
    "viewer_pose": 1,
}


class Verdict(str, enum.Enum):
    FIRST = "first"
    SECOND = "second"
    AMBIGUOUS = "ambiguous"

    def swapped(self) -> "Verdict":
        return {Verdict.FIRST: Verdict.SECOND, Verdict.SECOND: Verdict.FIRST}.get(self, self)


class Side6(str, enum.Enum):
    FRONT = "front"
    BACK = "back"
    LEFT = "left"
    RIGHT = "right"
    TOP = "top"
    BOTTOM = "bottom"
    AMBIGUOUS = "ambiguous"


class Quadrant(str, enum.Enum):
    FRONT = "front"
    BEHIND = "behind"
    LEFT = "left"
    RIGHT = "right"
    AMBIGUOUS = "ambiguous"


class YesNo(str, enum.Enum):
    YES = "yes"
    NO = "no"
    AMBIGUOUS = "ambiguous"


@dataclass(frozen=True)
class MarginConfig:
    """Ambiguity margins. Angles are radians; the config file uses degrees."""

    distance_rel_margin: float = 0.15
    angle_margin: float = math.radians(15.0)
    same_dir_threshold: float = math.radians(45.0)
    facing_diff_margin: float = math.radians(20.0)
    height_abs_margin: float = 0.10

    def __post_init__(self):
        for f in fields(self):
            v = getattr(self, f.name)
            if not (isinstance(v, (int, float)) and math.isfinite(v) and v >= 0):
                raise ConfigError(f"margin {f.name} must be a finite nonnegative number, got {v!r}")
        if not self.same_dir_threshold > self.angle_margin:
            raise ConfigError("same_dir_threshold must exceed angle_margin")

    @classmethod
    def from_config(cls, d: Mapping[str, Any]) -> "MarginConfig":
        """Build from the config-file section (angles in degrees)."""
        known = {
            "distance_rel_margin": ("distance_rel_margin", float),
            "angle_margin_deg": ("angle_margin", math.radians),
            "same_dir_threshold_deg": ("same_dir_threshold", math.radians),
            "facing_diff_margin_deg": ("facing_diff_margin", math.radians),
            "height_abs_margin": ("height_abs_margin", float),
        }
        unknown = set(d) - set(known)
        if unknown:
            raise ConfigError(f"unknown margin keys: {sorted(unknown)}")
        kwargs = {}
        for key, value in d.items():
            name, conv = known[key]
            try:
                kwargs[name] = conv(value)
            except (TypeError, ValueError) as exc:
                raise ConfigError(f"margins.{key}: {exc}") from None
        return cls(**kwargs)

    def to_config(self) -> dict[str, float]:
        return {
            "distance_rel_margin": self.distance_rel_margin,
            "angle_margin_deg": math.degrees(self.angle_margin),
            "same_dir_threshold_deg": math.degrees(self.same_dir_threshold),
            "facing_diff_margin_deg": math.degrees(self.facing_diff_margin),
            "height_abs_margin": self.height_abs_margin,
        }

    def to_record(self) -> dict[str, float]:
        """Exact (radian) form stored in QA provenance."""
        return asdict(self)

    @classmethod
    def from_record(cls, d: Mapping[str, float]) -> "MarginConfig":
        return cls(**d)


@dataclass(frozen=True)
class Decision:
    verdict: Verdict
    evidence: tuple[float, float]

    def swapped(self) -> "Decision":
        return Decision(self.verdict.swapped(), (self.evidence[1], self.evidence[0]))


@dataclass
class RelationFact:
    """One predicate instance.

    Participant order per kind: ``(a, b)`` for pairwise kinds,
    ``(ref, a, b)`` for ``closer_to_object``/``facing_object`` and
    ``(ref, target)`` for ``on_which_side``. A ``first`` outcome names ``a``.
    """

    kind: str
    participants: tuple[str, ...]
    outcome: Any
    evidence: dict[str, float]
    scene_id: str = ""

    def __post_init__(self):
        self.participants = tuple(self.participants)
        if len(self.participants) != ARITY[self.kind]:
            raise ValueError(f"{self.kind} takes {ARITY[self.kind]} participants, got {self.participants}")

    @property
    def key(self) -> tuple:
        return (self.scene_id, self.kind, self.participants)

    def sort_key(self) -> tuple:
        return (ALL_KINDS.index(self.kind), tuple(sorted(self.participants)), self.participants)

    def to_dict(self) -> dict:
        return {
            "kind": self.kind,
            "participants": list(self.participants),
            "outcome": self.outcome,
            "evidence": dict(self.evidence),
            "scene_id": self.scene_id,
        }


def _relative_decision(da: float, db: float, margin: float) -> Decision:
    big = max(da, db)
    if big == 0.0 or abs(da - db) / big < margin:
        return Decision(Verdict.AMBIGUOUS, (da, db))
    return Decision(Verdict.FIRST if da < db else Verdict.SECOND, (da, db))


def closer_to_camera(a: OrientedBox3D, b: OrientedBox3D, m: MarginConfig = MarginConfig()) -> Decision:
    da = float(np.linalg.norm(a.center_vec))
    db = float(np.linalg.norm(b.center_vec))
    return _relative_decision(da, db, m.distance_rel_margin)


def closer_to_object(
    a: OrientedBox3D, b: OrientedBox3D, ref: OrientedBox3D, m: MarginConfig = MarginConfig()
) -> Decision:
    da = pairwise_distance(a, ref)
    db = pairwise_distance(b, ref)
    return _relative_decision(da, db, m.distance_rel_margin)


def facing_camera_side(b: OrientedBox3D, m: MarginConfig = MarginConfig()) -> tuple[Side6, tuple[float, float]]:
    """Which face of ``b`` points most directly at the camera.

    Returns the side and the two largest face-normal dot products.
    """
    c = b.center_vec
    n = np.linalg.norm(c)
    if n == 0.0:
        raise DegenerateProjection(f"{b.instance_id} sits at the camera origin")
    local_view = b.rotation.inverse().apply(-c / n)
    dots = sorted(
        ((float(np.dot(normal, local_view)), face) for face, normal in geo.local_face_normals(b.front_axis).items()),
        reverse=True,
    )
    (best, face), (second, _) = dots[0], dots[1]
    if best - second < math.sin(m.angle_margin):
        return Side6.AMBIGUOUS, (best, second)
    return Side6(face), (best, second)


def _angle_diff(u_yaw: float, v_yaw: float) -> float:
    # remainder is exact, so the result is symmetric in its arguments
    return abs(math.remainder(v_yaw - u_yaw, geo.TWO_PI))


def facing_object(
    ref: OrientedBox3D,
    a: OrientedBox3D,
    b: OrientedBox3D,
    m: MarginConfig = MarginConfig(),
    up: Sequence[float] = DEFAULT_UP,
) -> Decision:
    """Which of ``a``/``b`` lies closer to ``ref``'s ground-plane heading."""
    heading = geo.ground_yaw(geo.facing_vector(ref), up)
    ta = _angle_diff(heading, geo.ground_yaw(a.center_vec - ref.center_vec, up))
    tb = _angle_diff(heading, geo.ground_yaw(b.center_vec - ref.center_vec, up))
    if abs(ta - tb) < m.facing_diff_margin or (ta > math.pi / 2 and tb > math.pi / 2):
        return Decision(Verdict.AMBIGUOUS, (ta, tb))
    return Decision(Verdict.FIRST if ta < tb else Verdict.SECOND, (ta, tb))


def same_direction_angle(a: OrientedBox3D, b: OrientedBox3D, up: Sequence[float] = DEFAULT_UP) -> float:
    return _angle_diff(geo.ground_yaw(geo.facing_vector(a), up), geo.ground_yaw(geo.facing_vector(b), up))


def same_direction(
    a: OrientedBox3D, b: OrientedBox3D, m: MarginConfig = MarginConfig(), up: Sequence[float] = DEFAULT_UP
) -> YesNo:
    delta = same_direction_angle(a, b, up)
    if abs(delta - m.same_dir_threshold) < m.angle_margin:
        return YesNo.AMBIGUOUS
    return YesNo.YES if delta <= m.same_dir_threshold else YesNo.NO


def higher(
    a: OrientedBox3D, b: OrientedBox3D, up: Sequence[float] = DEFAULT_UP, m: MarginConfig = MarginConfig()
) -> Decision:
    u = geo.unit(up)
    ha = float(np.dot(a.center_vec, u))
    hb = float(np.dot(b.center_vec, u))
    if abs(ha - hb) < m.height_abs_margin:
        return Decision(Verdict.AMBIGUOUS, (ha, hb))
    return Decision(Verdict.FIRST if ha > hb else Verdict.SECOND, (ha, hb))


_QUADRANT_BOUNDARIES = (math.pi / 4, 3 * math.pi / 4, -math.pi / 4, -3 * math.pi / 4)


def side_angle(ref: OrientedBox3D, target: OrientedBox3D, up: Sequence[float] = DEFAULT_UP) -> float:
    """atan2(left, forward) of ``target`` in ``ref``'s gravity-aligned frame."""
    fwd, left, _ = geo.relative_position(ref, target.center_vec, up)
    if math.hypot(fwd, left) < geo.DEGENERATE_EPS:
        raise DegenerateProjection(f"{target.instance_id} is straight above or below {ref.instance_id}")
    return math.atan2(left, fwd)


def quadrant_of(phi: float, margin: float) -> Quadrant:
    for boundary in _QUADRANT_BOUNDARIES:
        if abs(math.remainder(phi - boundary, geo.TWO_PI)) < margin:
            return Quadrant.AMBIGUOUS
    a = abs(phi)
    if a < math.pi / 4:
        return Quadrant.FRONT
    if a > 3 * math.pi / 4:
        return Quadrant.BEHIND
    return Quadrant.LEFT if phi > 0 else Quadrant.RIGHT


def on_which_side(
    ref: OrientedBox3D,
    target: OrientedBox3D,
    up: Sequence[float] = DEFAULT_UP,
    m: MarginConfig = MarginConfig(),
) -> Quadrant:
    return quadrant_of(side_angle(ref, target, up), m.angle_margin)


def object_depth(b: OrientedBox3D) -> tuple[float, float]:
    """(euclidean distance to the camera, z depth)."""
    return float(np.linalg.norm(b.center_vec)), b.center[2]


def pairwise_distance(a: OrientedBox3D, b: OrientedBox3D) -> float:
    return float(np.linalg.norm(a.center_vec - b.center_vec))


def evaluate(
    kind: str, boxes: Sequence[OrientedBox3D], m: MarginConfig, up: Sequence[float] = DEFAULT_UP
) -> tuple[Any, dict[str, float]]:
    """Outcome and evidence of ``kind`` over ``boxes`` in fact participant order."""
    if kind == "closer_to_camera":
        d = closer_to_camera(boxes[0], boxes[1], m)
        return d.verdict.value, {"distance_a": d.evidence[0], "distance_b": d.evidence[1]}
    if kind == "closer_to_object":
        ref, a, b = boxes
        d = closer_to_object(a, b, ref, m)
        return d.verdict.value, {"distance_a": d.evidence[0], "distance_b": d.evidence[1]}
    if kind == "facing_camera":
        side, (best, second) = facing_camera_side(boxes[0], m)
        return side.value, {"best_dot": best, "second_dot": second}
    if kind == "facing_object":
        d = facing_object(*boxes, m=m, up=up)
        return d.verdict.value, {"angle_a": d.evidence[0], "angle_b": d.evidence[1]}
    if kind == "same_direction":
        delta = same_direction_angle(boxes[0], boxes[1], up)
        return same_direction(boxes[0], boxes[1], m, up).value, {"angle": delta}
    if kind == "higher":
        d = higher(boxes[0], boxes[1], up, m)
        return d.verdict.value, {"height_a": d.evidence[0], "height_b": d.evidence[1]}
    if kind == "on_which_side":
        phi = side_angle(boxes[0], boxes[1], up)
        return quadrant_of(phi, m.angle_margin).value, {"angle": phi}
    if kind == "object_depth":
        euclid, z = object_depth(boxes[0])
        return euclid, {"euclidean": euclid, "z_depth": z}
    if kind == "pairwise_distance":
        dist = pairwise_distance(boxes[0], boxes[1])
        return dist, {"distance": dist}
    if kind == "viewer_pose":
        pose = geo.viewer_pose(boxes[0], up)
        values = {"azimuth": pose.azimuth, "elevation": pose.elevation, "distance": pose.distance}
        return values, dict(values)
    raise ValueError(f"unknown predicate kind {kind!r}")


def is_ambiguous(outcome: Any) -> bool:
    return outcome == "ambiguous"


def _candidate_tuples(kind: str, ids: Sequence[str]):
    """Participant tuples of ``kind`` over sorted ``ids``; one per distinct question."""
    if ARITY[kind] == 1:
        return [(i,) for i in ids]
    if kind == "on_which_side":
        return list(itertools.permutations(ids, 2))
    if ARITY[kind] == 2:
        return list(itertools.combinations(ids, 2))
    return [(ref, a, b) for ref in ids for a, b in itertools.combinations([i for i in ids if i != ref], 2)]


def eligible_objects(scene) -> list[OrientedBox3D]:
    """Objects that can be named in a question: scene-unique category and in front of the camera."""
    from .ingest import unique_referents

    ids = set(unique_referents(scene).values())
    return sorted((b for b in scene.objects if b.instance_id in ids and b.center[2] > 0), key=lambda b: b.instance_id)


def relation_facts(
    scene,
    m: MarginConfig = MarginConfig(),
    kinds: Sequence[str] = ALL_KINDS,
    skipped: Counter | None = None,
) -> list[RelationFact]:
    """All non-ambiguous facts of ``kinds`` in ``scene``, sorted deterministically.

    Tuples raising a geometry error are dropped and tallied per kind in
    ``skipped`` when given.
    """
    objs = eligible_objects(scene)
    by_id = {b.instance_id: b for b in objs}
    up = scene.up_vector
    facts = []
    for kind in kinds:
        for ids in _candidate_tuples(kind, list(by_id)):
            try:
                outcome, evidence = evaluate(kind, [by_id[i] for i in ids], m, up)
            except DegenerateProjection:
                if skipped is not None:
                    skipped[kind] += 1
                continue
            if is_ambiguous(outcome):
                continue
            facts.append(RelationFact(kind, ids, outcome, evidence, scene.scene_id))
    facts.sort(key=RelationFact.sort_key)
    return facts


def recompute_fact(scene, kind: str, participants: Sequence[str], m: MarginConfig) -> RelationFact:
    """Re-evaluate one fact from the scene; raises KeyError for unknown ids."""
    by_id = {b.instance_id: b for b in scene.objects}
    outcome, evidence = evaluate(kind, [by_id[i] for i in participants], m, scene.up_vector)
    return RelationFact(kind, tuple(participants), outcome, evidence, scene.scene_id)
