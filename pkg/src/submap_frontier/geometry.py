"""Planar rigid transforms, points and axis-aligned bounding boxes."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import TYPE_CHECKING

import numpy as np

if TYPE_CHECKING:
    from .grid import Submap


def wrap_angle(theta: float) -> float:
    """Normalize an angle to the half-open interval (-pi, pi]."""
    wrapped = math.remainder(theta, 2.0 * math.pi)
    if wrapped <= -math.pi:
        wrapped += 2.0 * math.pi
    return wrapped


@dataclass(frozen=True)
class Point2:
    x: float
    y: float

    def __post_init__(self):
        if not (math.isfinite(self.x) and math.isfinite(self.y)):
            raise ValueError(f"non-finite point ({self.x}, {self.y})")

    def as_array(self) -> np.ndarray:
        return np.array([self.x, self.y], dtype=float)


@dataclass(frozen=True)
class RigidTransform2:
    """SE(2) pose: rotation by ``theta`` followed by translation ``(x, y)``.

    ``T_a_b`` maps coordinates expressed in frame ``b`` into frame ``a``.
    Composition ``a @ b`` applies ``b`` first, then ``a``.
    """

    x: float = 0.0
    y: float = 0.0
    theta: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, "theta", wrap_angle(float(self.theta)))
        object.__setattr__(self, "x", float(self.x))
        object.__setattr__(self, "y", float(self.y))

    @classmethod
    def identity(cls) -> RigidTransform2:
        return cls(0.0, 0.0, 0.0)

    @property
    def translation(self) -> np.ndarray:
        return np.array([self.x, self.y])

    def rotation_matrix(self) -> np.ndarray:
        c, s = math.cos(self.theta), math.sin(self.theta)
        return np.array([[c, -s], [s, c]])

    def __matmul__(self, other: RigidTransform2) -> RigidTransform2:
        return compose(self, other)

    def inverse(self) -> RigidTransform2:
        return invert(self)

    def apply(self, points: np.ndarray) -> np.ndarray:
        """Project an ``(n, 2)`` array of points from source to target frame."""
        pts = np.asarray(points, dtype=float)
        c, s = math.cos(self.theta), math.sin(self.theta)
        out = np.empty_like(pts)
        out[..., 0] = c * pts[..., 0] - s * pts[..., 1] + self.x
        out[..., 1] = s * pts[..., 0] + c * pts[..., 1] + self.y
        return out

    def as_tuple(self) -> tuple[float, float, float]:
        return (self.x, self.y, self.theta)


def compose(a: RigidTransform2, b: RigidTransform2) -> RigidTransform2:
    c, s = math.cos(a.theta), math.sin(a.theta)
    return RigidTransform2(
        a.x + c * b.x - s * b.y,
        a.y + s * b.x + c * b.y,
        a.theta + b.theta,
    )


def invert(t: RigidTransform2) -> RigidTransform2:
    c, s = math.cos(t.theta), math.sin(t.theta)
    return RigidTransform2(-(c * t.x + s * t.y), s * t.x - c * t.y, -t.theta)


def project_point(t: RigidTransform2, p: Point2) -> Point2:
    x, y = t.apply(np.array([p.x, p.y]))
    return Point2(float(x), float(y))


@dataclass(frozen=True)
class BoundingBox:
    min_x: float
    min_y: float
    max_x: float
    max_y: float

    def __post_init__(self):
        if self.min_x > self.max_x or self.min_y > self.max_y:
            raise ValueError(f"inverted bounding box {self}")

    @classmethod
    def from_points(cls, points: np.ndarray) -> BoundingBox:
        pts = np.asarray(points, dtype=float).reshape(-1, 2)
        if len(pts) == 0:
            raise ValueError("cannot bound an empty point set")
        lo, hi = pts.min(axis=0), pts.max(axis=0)
        return cls(float(lo[0]), float(lo[1]), float(hi[0]), float(hi[1]))

    def contains(self, points: np.ndarray) -> np.ndarray:
        pts = np.asarray(points, dtype=float)
        return (
            (pts[..., 0] >= self.min_x)
            & (pts[..., 0] <= self.max_x)
            & (pts[..., 1] >= self.min_y)
            & (pts[..., 1] <= self.max_y)
        )

    def union(self, other: BoundingBox) -> BoundingBox:
        return BoundingBox(
            min(self.min_x, other.min_x),
            min(self.min_y, other.min_y),
            max(self.max_x, other.max_x),
            max(self.max_y, other.max_y),
        )

    @property
    def area(self) -> float:
        return (self.max_x - self.min_x) * (self.max_y - self.min_y)


def intersects(a: BoundingBox, b: BoundingBox) -> bool:
    """Closed-interval overlap test; shared edges and corners intersect."""
    return (
        a.min_x <= b.max_x
        and b.min_x <= a.max_x
        and a.min_y <= b.max_y
        and b.min_y <= a.max_y
    )


class DegenerateSubmapError(ValueError):
    """Raised when a submap has no grid cells to bound."""


def global_bounding_box(submap: Submap, pose: RigidTransform2) -> BoundingBox:
    """Axis-aligned box in the global frame around the submap's grid extent."""
    if submap.storage.size == 0:
        raise DegenerateSubmapError(f"submap {submap.id} has an empty grid")
    (x0, y0), (x1, y1) = submap.local_extent()
    corners = np.array([[x0, y0], [x1, y0], [x1, y1], [x0, y1]])
    return BoundingBox.from_points(pose.apply(corners))
