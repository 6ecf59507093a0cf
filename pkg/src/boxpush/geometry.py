"""Planar poses, frame transforms and angle helpers.

All angles are radians in (-pi, pi]; degrees appear only at config-parsing
boundaries.  The box frame has its x axis along the box heading (direction
of straight travel) and its y axis 90 degrees counter-clockwise from it.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

TWO_PI = 2.0 * math.pi


def wrap_angle(theta: float) -> float:
    """Wrap an angle to the half-open interval (-pi, pi]."""
    if not math.isfinite(theta):
        raise ValueError(f"non-finite angle: {theta!r}")
    return math.pi - (math.pi - theta) % TWO_PI


def angle_diff(a: float, b: float) -> float:
    """Shortest signed difference a - b, wrapped to (-pi, pi]."""
    return wrap_angle(a - b)


@dataclass(slots=True)
class Pose2D:
    """Position plus heading in the world frame."""

    x: float = 0.0
    y: float = 0.0
    theta: float = 0.0

    def normalized(self) -> "Pose2D":
        return Pose2D(self.x, self.y, wrap_angle(self.theta))

    def heading_vector(self) -> tuple[float, float]:
        return (math.cos(self.theta), math.sin(self.theta))


@dataclass(slots=True)
class Twist2D:
    """Planar velocity: world-frame linear components and yaw rate."""

    vx: float = 0.0
    vy: float = 0.0
    omega: float = 0.0

    def speed(self) -> float:
        return math.hypot(self.vx, self.vy)


@dataclass(slots=True, frozen=True)
class BoxFrameCoord:
    """Coordinates of a point expressed in the box frame.

    ``ell`` is the along-heading component, ``w`` the lateral component
    (positive to the left of the heading).
    """

    ell: float
    w: float


def rot(theta: float) -> tuple[tuple[float, float], tuple[float, float]]:
    """2x2 rotation matrix for ``theta`` as nested tuples (row major)."""
    c, s = math.cos(theta), math.sin(theta)
    return ((c, -s), (s, c))


def to_box_frame(box_pose: Pose2D, point: tuple[float, float]) -> BoxFrameCoord:
    """Express a world point in the box frame: R(theta)^T (p - c)."""
    dx = point[0] - box_pose.x
    dy = point[1] - box_pose.y
    c, s = math.cos(box_pose.theta), math.sin(box_pose.theta)
    return BoxFrameCoord(c * dx + s * dy, -s * dx + c * dy)


def from_box_frame(box_pose: Pose2D, coord: BoxFrameCoord) -> tuple[float, float]:
    """Inverse of :func:`to_box_frame`: c + R(theta) p."""
    c, s = math.cos(box_pose.theta), math.sin(box_pose.theta)
    return (
        box_pose.x + c * coord.ell - s * coord.w,
        box_pose.y + s * coord.ell + c * coord.w,
    )


def bearing_to(origin: tuple[float, float], target: tuple[float, float]) -> float:
    """World-frame bearing of ``target`` as seen from ``origin``.

    Raises ValueError when the points coincide (bearing undefined).
    """
    dx = target[0] - origin[0]
    dy = target[1] - origin[1]
    if dx == 0.0 and dy == 0.0:
        raise ValueError("bearing undefined for coincident points")
    return wrap_angle(math.atan2(dy, dx))


def clamp(value: float, lo: float, hi: float) -> float:
    if value < lo:
        return lo
    if value > hi:
        return hi
    return value
