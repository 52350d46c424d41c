"""Pinhole camera and oriented-box geometry.

Camera frame used everywhere in the package::

    +x  right
    +y  down
    +z  forward (optical axis)

Object-local frame: +x front (length), +y left (width), +z top (height).
A per-box ``front_axis`` can move the front to any horizontal local axis;
top stays local +z.
"""

from __future__ import annotations

import functools
import itertools
import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .errors import DegenerateProjection, NonPositiveDepth

Vec3 = np.ndarray

TWO_PI = 2.0 * math.pi
DEFAULT_UP = (0.0, -1.0, 0.0)
DEGENERATE_EPS = 1e-8

FRONT_AXES = {
    "+x": (1.0, 0.0, 0.0),
    "-x": (-1.0, 0.0, 0.0),
    "+y": (0.0, 1.0, 0.0),
    "-y": (0.0, -1.0, 0.0),
}
LOCAL_TOP = (0.0, 0.0, 1.0)


def vec3(v: Sequence[float]) -> Vec3:
    a = np.asarray(v, dtype=np.float64)
    if a.shape != (3,):
        raise ValueError(f"expected a 3-vector, got shape {a.shape}")
    return a


def unit(v: Sequence[float]) -> Vec3:
    a = vec3(v)
    n = np.linalg.norm(a)
    if n == 0.0:
        raise ValueError("cannot normalize a zero vector")
    return a / n


def cross(a: Sequence[float], b: Sequence[float]) -> Vec3:
    """3-vector cross product; np.cross carries heavy per-call overhead at this size."""
    return np.array(
        [a[1] * b[2] - a[2] * b[1], a[2] * b[0] - a[0] * b[2], a[0] * b[1] - a[1] * b[0]],
        dtype=np.float64,
    )


def wrap_2pi(angle: float) -> float:
    """Map an angle to [0, 2*pi)."""
    a = math.fmod(angle, TWO_PI)
    if a < 0.0:
        a += TWO_PI
    if a >= TWO_PI:
        a = 0.0
    return a


def wrap_pi(angle: float) -> float:
    """Map an angle to [-pi, pi)."""
    return wrap_2pi(angle + math.pi) - math.pi


@dataclass(frozen=True)
class Rotation:
    """Unit quaternion ``(w, x, y, z)`` rotating object-local into camera frame.

    The quaternion is renormalized at construction when its norm is off by
    more than 1e-12; exactly-unit inputs are stored bit-for-bit.
    """

    w: float = 1.0
    x: float = 0.0
    y: float = 0.0
    z: float = 0.0

    def __post_init__(self):
        q = (float(self.w), float(self.x), float(self.y), float(self.z))
        if not all(math.isfinite(c) for c in q):
            raise ValueError(f"non-finite quaternion {q}")
        n = math.sqrt(sum(c * c for c in q))
        if n == 0.0:
            raise ValueError("zero quaternion")
        if abs(n - 1.0) > 1e-12:
            q = tuple(c / n for c in q)
        for name, c in zip("wxyz", q):
            object.__setattr__(self, name, c)

    @classmethod
    def identity(cls) -> "Rotation":
        return cls(1.0, 0.0, 0.0, 0.0)

    @classmethod
    def from_axis_angle(cls, axis: Sequence[float], angle: float) -> "Rotation":
        a = unit(axis)
        s = math.sin(angle / 2.0)
        return cls(math.cos(angle / 2.0), a[0] * s, a[1] * s, a[2] * s)

    @classmethod
    def from_matrix(cls, m) -> "Rotation":
        # Shepperd's method; picks the numerically largest pivot.
        m = np.asarray(m, dtype=np.float64)
        tr = m[0, 0] + m[1, 1] + m[2, 2]
        if tr > 0:
            s = math.sqrt(tr + 1.0) * 2
            w = 0.25 * s
            x = (m[2, 1] - m[1, 2]) / s
            y = (m[0, 2] - m[2, 0]) / s
            z = (m[1, 0] - m[0, 1]) / s
        elif m[0, 0] > m[1, 1] and m[0, 0] > m[2, 2]:
            s = math.sqrt(1.0 + m[0, 0] - m[1, 1] - m[2, 2]) * 2
            w = (m[2, 1] - m[1, 2]) / s
            x = 0.25 * s
            y = (m[0, 1] + m[1, 0]) / s
            z = (m[0, 2] + m[2, 0]) / s
        elif m[1, 1] > m[2, 2]:
            s = math.sqrt(1.0 + m[1, 1] - m[0, 0] - m[2, 2]) * 2
            w = (m[0, 2] - m[2, 0]) / s
            x = (m[0, 1] + m[1, 0]) / s
            y = 0.25 * s
            z = (m[1, 2] + m[2, 1]) / s
        else:
            s = math.sqrt(1.0 + m[2, 2] - m[0, 0] - m[1, 1]) * 2
            w = (m[1, 0] - m[0, 1]) / s
            x = (m[0, 2] + m[2, 0]) / s
            y = (m[1, 2] + m[2, 1]) / s
            z = 0.25 * s
        return cls(w, x, y, z)

    @classmethod
    def upright(cls, yaw: float = 0.0, pitch: float = 0.0, roll: float = 0.0) -> "Rotation":
        """Rotation of an upright object turned by ``yaw`` about the camera up axis.

        ``yaw = 0`` faces +z (away from the camera). Pitch is applied about the
        object's left axis and roll about its front axis, both before yaw.
        Under the default up vector this is the inverse of :meth:`to_ypr`.
        """
        local = (
            cls.from_axis_angle((0, 0, 1), yaw)
            * cls.from_axis_angle((0, 1, 0), pitch)
            * cls.from_axis_angle((1, 0, 0), roll)
        )
        return UPRIGHT_BASE * local

    def to_ypr(self) -> tuple[float, float, float]:
        """Yaw, pitch, roll in radians; inverse of :meth:`upright`. Display only."""
        m = UPRIGHT_BASE.inverse().matrix() @ self.matrix()
        yaw = math.atan2(m[1, 0], m[0, 0])
        pitch = math.asin(max(-1.0, min(1.0, -m[2, 0])))
        roll = math.atan2(m[2, 1], m[2, 2])
        return yaw, pitch, roll

    def as_tuple(self) -> tuple[float, float, float, float]:
        return (self.w, self.x, self.y, self.z)

    def norm(self) -> float:
        return math.sqrt(self.w**2 + self.x**2 + self.y**2 + self.z**2)

    def inverse(self) -> "Rotation":
        return Rotation(self.w, -self.x, -self.y, -self.z)

    def __mul__(self, other: "Rotation") -> "Rotation":
        """Composition: ``(a * b).apply(v) == a.apply(b.apply(v))``."""
        if not isinstance(other, Rotation):
            return NotImplemented
        w1, x1, y1, z1 = self.as_tuple()
        w2, x2, y2, z2 = other.as_tuple()
        return Rotation(
            w1 * w2 - x1 * x2 - y1 * y2 - z1 * z2,
            w1 * x2 + x1 * w2 + y1 * z2 - z1 * y2,
            w1 * y2 - x1 * z2 + y1 * w2 + z1 * x2,
            w1 * z2 + x1 * y2 - y1 * x2 + z1 * w2,
        )

    def matrix(self) -> np.ndarray:
        w, x, y, z = self.as_tuple()
        return np.array(
            [
                [1 - 2 * (y * y + z * z), 2 * (x * y - z * w), 2 * (x * z + y * w)],
                [2 * (x * y + z * w), 1 - 2 * (x * x + z * z), 2 * (y * z - x * w)],
                [2 * (x * z - y * w), 2 * (y * z + x * w), 1 - 2 * (x * x + y * y)],
            ]
        )

    def apply(self, v: Sequence[float]) -> Vec3:
        # v' = v + 2w (q x v) + 2 q x (q x v)
        v = vec3(v)
        q = np.array([self.x, self.y, self.z])
        t = 2.0 * cross(q, v)
        return v + self.w * t + cross(q, t)


# Local (front, left, top) -> camera (+z, -x, -y): an upright object facing away.
UPRIGHT_BASE = Rotation.from_matrix(
    np.array([[0.0, -1.0, 0.0], [0.0, 0.0, -1.0], [1.0, 0.0, 0.0]])
)


@dataclass(frozen=True)
class CameraIntrinsics:
    fx: float
    fy: float
    cx: float
    cy: float
    width: int
    height: int

    def matrix(self) -> np.ndarray:
        return np.array([[self.fx, 0.0, self.cx], [0.0, self.fy, self.cy], [0.0, 0.0, 1.0]])


@dataclass(frozen=True)
class OrientedBox3D:
    """Oriented 3D box in the camera frame.

    ``dims`` are (length, width, height) along the local x, y, z axes. Values
    are stored as given; :func:`spatialrel.ingest.validate` checks them.
    """

    center: tuple[float, float, float]
    dims: tuple[float, float, float]
    rotation: Rotation
    category: str
    instance_id: str
    front_axis: str = "+x"

    def __post_init__(self):
        object.__setattr__(self, "center", tuple(float(c) for c in self.center))
        object.__setattr__(self, "dims", tuple(float(d) for d in self.dims))
        if self.front_axis not in FRONT_AXES:
            raise ValueError(f"front_axis must be one of {sorted(FRONT_AXES)}, got {self.front_axis!r}")

    @property
    def center_vec(self) -> Vec3:
        return np.array(self.center, dtype=np.float64)

    def translated(self, offset: Sequence[float]) -> "OrientedBox3D":
        c = tuple(float(a + b) for a, b in zip(self.center, offset))
        return OrientedBox3D(c, self.dims, self.rotation, self.category, self.instance_id, self.front_axis)

    def rotated(self, r: Rotation) -> "OrientedBox3D":
        """Same center, orientation pre-multiplied by ``r`` (camera-frame rotation)."""
        return OrientedBox3D(self.center, self.dims, r * self.rotation, self.category, self.instance_id, self.front_axis)


@dataclass(frozen=True)
class ViewerPose:
    azimuth: float
    elevation: float
    distance: float


def project(cam: CameraIntrinsics, p: Sequence[float]) -> tuple[float, float]:
    x, y, z = (float(c) for c in p)
    if not z > 0:
        raise NonPositiveDepth(f"point depth must be positive, got z={z}")
    return cam.fx * x / z + cam.cx, cam.fy * y / z + cam.cy


def backproject(cam: CameraIntrinsics, uv: Sequence[float], depth_z: float) -> Vec3:
    if not depth_z > 0:
        raise NonPositiveDepth(f"depth must be positive, got {depth_z}")
    u, v = uv
    return np.array([(u - cam.cx) * depth_z / cam.fx, (v - cam.cy) * depth_z / cam.fy, float(depth_z)])


def box_corners(b: OrientedBox3D) -> np.ndarray:
    """The 8 corners as an (8, 3) array, sign pattern in ``itertools.product`` order."""
    half = np.array(b.dims) / 2.0
    signs = np.array(list(itertools.product((-1.0, 1.0), repeat=3)))
    return b.center_vec + (signs * half) @ b.rotation.matrix().T


def local_face_normals(front_axis: str = "+x") -> dict[str, Vec3]:
    """Outward local normals keyed by face name."""
    front = np.array(FRONT_AXES[front_axis])
    top = np.array(LOCAL_TOP)
    left = cross(top, front)
    return {
        "front": front,
        "back": -front,
        "left": left,
        "right": -left,
        "top": top,
        "bottom": -top,
    }


def facing_vector(b: OrientedBox3D) -> Vec3:
    return b.rotation.apply(FRONT_AXES[b.front_axis])


def _ground_basis(up: Sequence[float]) -> tuple[Vec3, Vec3, Vec3]:
    """(reference, left, up) basis; reference is +z projected on the ground plane."""
    return _ground_basis_cached(tuple(float(c) for c in up))


@functools.lru_cache(maxsize=256)
def _ground_basis_cached(up: tuple[float, float, float]) -> tuple[Vec3, Vec3, Vec3]:
    u = unit(up)
    for axis in ((0.0, 0.0, 1.0), (1.0, 0.0, 0.0)):
        a = np.array(axis)
        ref = a - np.dot(a, u) * u
        n = np.linalg.norm(ref)
        if n > DEGENERATE_EPS:
            ref = ref / n
            basis = (ref, cross(u, ref), u)
            for v in basis:
                v.flags.writeable = False
            return basis
    raise AssertionError("unreachable: +z and +x cannot both be parallel to up")


def ground_components(v: Sequence[float], up: Sequence[float] = DEFAULT_UP) -> tuple[float, float]:
    """Components of ``v`` along the ground-plane reference and left axes."""
    ref, left, _ = _ground_basis(up)
    v = vec3(v)
    return float(np.dot(v, ref)), float(np.dot(v, left))


def ground_yaw(v: Sequence[float], up: Sequence[float] = DEFAULT_UP) -> float:
    """Heading of ``v`` on the ground plane, counterclockwise about ``up`` from +z.

    Raises DegenerateProjection when ``v`` has (almost) no horizontal part.
    """
    fwd, left = ground_components(v, up)
    if math.hypot(fwd, left) < DEGENERATE_EPS:
        raise DegenerateProjection(f"vector {tuple(vec3(v))} is parallel to up")
    return wrap_2pi(math.atan2(left, fwd))


def ground_angle_between(u: Sequence[float], v: Sequence[float], up: Sequence[float] = DEFAULT_UP) -> float:
    """Unsigned ground-plane angle between two directions, in [0, pi]."""
    return abs(wrap_pi(ground_yaw(v, up) - ground_yaw(u, up)))


def viewer_pose(b: OrientedBox3D, up: Sequence[float] = DEFAULT_UP) -> ViewerPose:
    """Where the camera sits as seen from the object.

    Azimuth 0 means the object faces the camera; it grows counterclockwise
    about ``up`` (camera moving toward the object's left side). Elevation is
    positive when the camera is above the object.
    """
    c = b.center_vec
    distance = float(np.linalg.norm(c))
    if distance == 0.0:
        raise DegenerateProjection("object center coincides with the camera")
    to_camera = -c
    azimuth = wrap_2pi(ground_yaw(to_camera, up) - ground_yaw(facing_vector(b), up))
    s = float(np.dot(to_camera, unit(up))) / distance
    elevation = math.asin(max(-1.0, min(1.0, s)))
    return ViewerPose(azimuth, elevation, distance)


def relative_position(
    reference: OrientedBox3D, target: Sequence[float], up: Sequence[float] = DEFAULT_UP
) -> tuple[float, float, float]:
    """``target - reference.center`` as (forward, left, up) in the reference's gravity-aligned frame."""
    u = unit(up)
    f = facing_vector(reference)
    f = f - np.dot(f, u) * u
    n = np.linalg.norm(f)
    if n < DEGENERATE_EPS:
        raise DegenerateProjection(f"{reference.instance_id} faces straight along the up axis")
    f = f / n
    left = cross(u, f)
    d = vec3(target) - reference.center_vec
    return float(np.dot(d, f)), float(np.dot(d, left)), float(np.dot(d, u))
