"""Rigid/affine transform primitives shared across the scene graph, renderer,
session protocol, and marker alignment.

Conventions (stated once, relied on everywhere):

* Quaternions are stored ``[w, x, y, z]`` and kept unit-norm (renormalized to
  within 1e-9 after every operation that touches them).
* A ``Transform`` composes as translate * rotate * scale, i.e. scale is
  applied first, then rotation, then translation.
* World transforms compose parent-first: ``world = parent_world @ local``.
* A ``Pose`` is a rigid transform (no scale); for cameras it maps
  camera-local coordinates into the parent/world frame.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

QUAT_NORM_TOL = 1e-9


def quat_normalize(q) -> np.ndarray:
    q = np.asarray(q, dtype=np.float64)
    n = float(np.linalg.norm(q))
    if n == 0.0:
        raise ValueError("zero-norm quaternion")
    return q / n


def quat_multiply(a, b) -> np.ndarray:
    aw, ax, ay, az = a
    bw, bx, by, bz = b
    return quat_normalize(
        [
            aw * bw - ax * bx - ay * by - az * bz,
            aw * bx + ax * bw + ay * bz - az * by,
            aw * by - ax * bz + ay * bw + az * bx,
            aw * bz + ax * by - ay * bx + az * bw,
        ]
    )


def quat_conjugate(q) -> np.ndarray:
    w, x, y, z = q
    return np.array([w, -x, -y, -z], dtype=np.float64)


def quat_from_axis_angle(axis, angle: float) -> np.ndarray:
    axis = np.asarray(axis, dtype=np.float64)
    n = np.linalg.norm(axis)
    if n == 0.0:
        raise ValueError("zero rotation axis")
    half = 0.5 * angle
    return quat_normalize(np.concatenate(([math.cos(half)], math.sin(half) * axis / n)))


def quat_to_matrix(q) -> np.ndarray:
    w, x, y, z = quat_normalize(q)
    return np.array(
        [
            [1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y)],
            [2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x)],
            [2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y)],
        ],
        dtype=np.float64,
    )


def quat_from_matrix(m) -> np.ndarray:
    """Rotation matrix (3x3, proper orthonormal) to quaternion, w >= 0."""
    m = np.asarray(m, dtype=np.float64)
    tr = m[0, 0] + m[1, 1] + m[2, 2]
    if tr > 0:
        s = math.sqrt(tr + 1.0) * 2
        q = [0.25 * s, (m[2, 1] - m[1, 2]) / s, (m[0, 2] - m[2, 0]) / s, (m[1, 0] - m[0, 1]) / s]
    elif m[0, 0] > m[1, 1] and m[0, 0] > m[2, 2]:
        s = math.sqrt(1.0 + m[0, 0] - m[1, 1] - m[2, 2]) * 2
        q = [(m[2, 1] - m[1, 2]) / s, 0.25 * s, (m[0, 1] + m[1, 0]) / s, (m[0, 2] + m[2, 0]) / s]
    elif m[1, 1] > m[2, 2]:
        s = math.sqrt(1.0 + m[1, 1] - m[0, 0] - m[2, 2]) * 2
        q = [(m[0, 2] - m[2, 0]) / s, (m[0, 1] + m[1, 0]) / s, 0.25 * s, (m[1, 2] + m[2, 1]) / s]
    else:
        s = math.sqrt(1.0 + m[2, 2] - m[0, 0] - m[1, 1]) * 2
        q = [(m[1, 0] - m[0, 1]) / s, (m[0, 2] + m[2, 0]) / s, (m[1, 2] + m[2, 1]) / s, 0.25 * s]
    q = quat_normalize(q)
    if q[0] < 0:
        q = -q
    return q


def quat_rotate(q, v) -> np.ndarray:
    """Rotate a 3-vector, or each row of an (n, 3) array."""
    v = np.asarray(v, dtype=np.float64)
    m = quat_to_matrix(q)
    if v.ndim == 1:
        return m @ v
    return v @ m.T


def quat_angle_between(a, b) -> float:
    """Magnitude of the rotation taking quaternion a to b, in radians."""
    d = abs(float(np.dot(quat_normalize(a), quat_normalize(b))))
    return 2.0 * math.acos(min(1.0, d))


@dataclass
class Transform:
    """Scale-rotate-translate transform. ``scale`` is per-axis (uniform scale
    is just three equal components)."""

    translation: np.ndarray = field(default_factory=lambda: np.zeros(3))
    rotation: np.ndarray = field(default_factory=lambda: np.array([1.0, 0.0, 0.0, 0.0]))
    scale: np.ndarray = field(default_factory=lambda: np.ones(3))

    def __post_init__(self):
        self.translation = np.asarray(self.translation, dtype=np.float64).reshape(3)
        self.rotation = quat_normalize(self.rotation)
        self.scale = np.asarray(self.scale, dtype=np.float64).reshape(3)
        if np.any(self.scale <= 0):
            raise ValueError("scale components must be positive")

    @staticmethod
    def identity() -> "Transform":
        return Transform()

    @staticmethod
    def from_translation(t) -> "Transform":
        return Transform(translation=np.asarray(t, dtype=np.float64))

    def matrix(self) -> np.ndarray:
        m = np.eye(4)
        m[:3, :3] = quat_to_matrix(self.rotation) * self.scale[np.newaxis, :]
        m[:3, 3] = self.translation
        return m

    def is_identity(self, tol: float = 0.0) -> bool:
        return (
            np.all(np.abs(self.translation) <= tol)
            and abs(abs(self.rotation[0]) - 1.0) <= tol
            and np.all(np.abs(self.scale - 1.0) <= tol)
        )

    def to_dict(self) -> dict:
        return {
            "t": [float(v) for v in self.translation],
            "q": [float(v) for v in self.rotation],
            "s": [float(v) for v in self.scale],
        }

    @staticmethod
    def from_dict(d: dict) -> "Transform":
        return Transform(
            translation=np.array(d["t"], dtype=np.float64),
            rotation=np.array(d["q"], dtype=np.float64),
            scale=np.array(d["s"], dtype=np.float64),
        )


@dataclass
class Pose:
    """Rigid transform: rotation (unit quaternion) + translation in meters."""

    rotation: np.ndarray = field(default_factory=lambda: np.array([1.0, 0.0, 0.0, 0.0]))
    translation: np.ndarray = field(default_factory=lambda: np.zeros(3))

    def __post_init__(self):
        self.rotation = quat_normalize(self.rotation)
        self.translation = np.asarray(self.translation, dtype=np.float64).reshape(3)

    @staticmethod
    def identity() -> "Pose":
        return Pose()

    def matrix(self) -> np.ndarray:
        m = np.eye(4)
        m[:3, :3] = quat_to_matrix(self.rotation)
        m[:3, 3] = self.translation
        return m

    def compose(self, other: "Pose") -> "Pose":
        """Self applied after other: matches ``self.matrix() @ other.matrix()``."""
        return Pose(
            rotation=quat_multiply(self.rotation, other.rotation),
            translation=quat_rotate(self.rotation, other.translation) + self.translation,
        )

    def inverse(self) -> "Pose":
        qinv = quat_conjugate(self.rotation)
        return Pose(rotation=qinv, translation=-quat_rotate(qinv, self.translation))

    def apply(self, points) -> np.ndarray:
        pts = np.atleast_2d(np.asarray(points, dtype=np.float64))
        out = pts @ quat_to_matrix(self.rotation).T + self.translation
        return out if np.asarray(points).ndim > 1 else out[0]

    def to_dict(self) -> dict:
        return {
            "q": [float(v) for v in self.rotation],
            "t": [float(v) for v in self.translation],
        }

    @staticmethod
    def from_dict(d: dict) -> "Pose":
        return Pose(rotation=np.array(d["q"], dtype=np.float64), translation=np.array(d["t"], dtype=np.float64))


@dataclass
class Aabb:
    """Axis-aligned box. The empty sentinel has min=+inf / max=-inf and is
    the identity for union."""

    min: np.ndarray
    max: np.ndarray

    def __post_init__(self):
        self.min = np.asarray(self.min, dtype=np.float64).reshape(3)
        self.max = np.asarray(self.max, dtype=np.float64).reshape(3)

    @staticmethod
    def empty() -> "Aabb":
        return Aabb(np.full(3, np.inf), np.full(3, -np.inf))

    @staticmethod
    def from_points(points) -> "Aabb":
        pts = np.asarray(points, dtype=np.float64).reshape(-1, 3)
        if pts.shape[0] == 0:
            return Aabb.empty()
        return Aabb(pts.min(axis=0), pts.max(axis=0))

    @property
    def is_empty(self) -> bool:
        return bool(np.any(self.min > self.max))

    @property
    def center(self) -> np.ndarray:
        return 0.5 * (self.min + self.max)

    @property
    def diagonal(self) -> float:
        if self.is_empty:
            return 0.0
        return float(np.linalg.norm(self.max - self.min))

    def union(self, other: "Aabb") -> "Aabb":
        return Aabb(np.minimum(self.min, other.min), np.maximum(self.max, other.max))

    def contains_box(self, other: "Aabb", tol: float = 0.0) -> bool:
        if other.is_empty:
            return True
        if self.is_empty:
            return False
        return bool(np.all(self.min <= other.min + tol) and np.all(self.max >= other.max - tol))

    def contains_point(self, p) -> bool:
        p = np.asarray(p, dtype=np.float64)
        return bool(np.all(p >= self.min) and np.all(p <= self.max))

    def corners(self) -> np.ndarray:
        mn, mx = self.min, self.max
        return np.array(
            [[x, y, z] for x in (mn[0], mx[0]) for y in (mn[1], mx[1]) for z in (mn[2], mx[2])]
        )

    @property
    def volume(self) -> float:
        if self.is_empty:
            return 0.0
        return float(np.prod(self.max - self.min))
