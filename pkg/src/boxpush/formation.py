"""Caging formation layout around the box and the caging predicate.

The box travels broadside: its heading points out of one long face, so the
two long faces lead and trail (FRONT/REAR) while the short faces cap the
lateral ends (LEFT/RIGHT).  Robots sit against the faces, centered one
robot radius outside, facing the face's inward normal:

  * four "corner" slots on the long faces, ``delta`` in from each end,
  * for six robots, two more slots centered on the short end faces.

Slot order is front-left, front-right, left end, rear-right, rear-left,
right end; with this numbering the diagonal pairs (0, 3) and (1, 4) share
the torque sign for a given turn direction, and (3, 4) trail the box for
straight travel.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass
from typing import Optional, Sequence

from .geometry import BoxFrameCoord, Pose2D, from_box_frame, to_box_frame, wrap_angle


class Edge(enum.Enum):
    FRONT = "front"  # +ell face, outward normal along the box heading
    REAR = "rear"  # -ell face
    LEFT = "left"  # +w end face
    RIGHT = "right"  # -w end face


# faces sharing a corner
_ADJACENT = {
    (Edge.FRONT, Edge.LEFT),
    (Edge.FRONT, Edge.RIGHT),
    (Edge.REAR, Edge.LEFT),
    (Edge.REAR, Edge.RIGHT),
}


@dataclass(slots=True, frozen=True)
class FormationSlot:
    coord: BoxFrameCoord  # slot center in the box frame
    heading: float  # box-frame heading, the face's inward normal
    edge: Edge


def initial_placement(
    box_length: float,
    box_width: float,
    n_robots: int,
    delta: float,
    robot_radius: float,
) -> list[FormationSlot]:
    """Slot layout for ``n_robots`` in {4, 6} with corner offset ``delta``.

    ``delta`` is the distance of each long-face slot from the box end,
    measured along the face; slot centers stand exactly one robot radius
    off the face so spawned robots touch without penetrating.
    """
    if n_robots not in (4, 6):
        raise ValueError(f"supported formation sizes are 4 and 6, got {n_robots}")
    if delta <= 0.0 or delta >= box_length / 2.0:
        raise ValueError(
            f"delta must lie in (0, length/2), got {delta} for length {box_length}"
        )
    ell_off = box_width / 2.0 + robot_radius
    lat = box_length / 2.0 - delta
    front_left = FormationSlot(BoxFrameCoord(ell_off, lat), math.pi, Edge.FRONT)
    front_right = FormationSlot(BoxFrameCoord(ell_off, -lat), math.pi, Edge.FRONT)
    rear_right = FormationSlot(BoxFrameCoord(-ell_off, -lat), 0.0, Edge.REAR)
    rear_left = FormationSlot(BoxFrameCoord(-ell_off, lat), 0.0, Edge.REAR)
    if n_robots == 4:
        return [front_left, front_right, rear_right, rear_left]
    w_off = box_length / 2.0 + robot_radius
    left_end = FormationSlot(BoxFrameCoord(0.0, w_off), -math.pi / 2.0, Edge.LEFT)
    right_end = FormationSlot(BoxFrameCoord(0.0, -w_off), math.pi / 2.0, Edge.RIGHT)
    return [front_left, front_right, left_end, rear_right, rear_left, right_end]


def slot_world_pose(slot: FormationSlot, box_pose: Pose2D) -> Pose2D:
    x, y = from_box_frame(box_pose, slot.coord)
    return Pose2D(x, y, wrap_angle(box_pose.theta + slot.heading))


def assign_edge(coord: BoxFrameCoord, box_length: float, box_width: float) -> Edge:
    """Face whose outward region contains the point (largest overshoot)."""
    ha = box_width / 2.0
    hl = box_length / 2.0
    overshoots = (
        (coord.ell - ha, Edge.FRONT),
        (-coord.ell - ha, Edge.REAR),
        (coord.w - hl, Edge.LEFT),
        (-coord.w - hl, Edge.RIGHT),
    )
    return max(overshoots, key=lambda t: t[0])[1]


def _perimeter_pos(coord: BoxFrameCoord, edge: Edge, ha: float, hl: float) -> float:
    # counter-clockwise arc length from the front face's right corner
    if edge is Edge.FRONT:
        return coord.w + hl
    if edge is Edge.LEFT:
        return 2.0 * hl + (ha - coord.ell)
    if edge is Edge.REAR:
        return 2.0 * hl + 2.0 * ha + (hl - coord.w)
    return 4.0 * hl + 2.0 * ha + (coord.ell + ha)


@dataclass(slots=True, frozen=True)
class CagingResult:
    ok: bool
    violating_pair: Optional[tuple[int, int]] = None

    def __bool__(self) -> bool:
        return self.ok


def check_caging(
    robot_positions: Sequence[tuple[float, float]],
    box_pose: Pose2D,
    box_length: float,
    box_width: float,
    robot_radius: float,
) -> CagingResult:
    """Closure test for the formation around the box.

    Robots are assigned to faces from their live box-frame positions and
    ordered around the perimeter.  Each consecutive pair must satisfy:

      * same face: separation below the face length they cover,
      * neighbouring faces (sharing a corner): separation below
        min(length, width) + 2 * radius,

    and pairs on opposite faces are unconstrained.  Returns the first
    violating pair (indices into ``robot_positions``) on failure.
    """
    if len(robot_positions) < 2:
        raise ValueError("caging needs at least two robots")
    ha = box_width / 2.0
    hl = box_length / 2.0
    entries = []
    for i, pt in enumerate(robot_positions):
        coord = to_box_frame(box_pose, pt)
        edge = assign_edge(coord, box_length, box_width)
        entries.append((_perimeter_pos(coord, edge, ha, hl), i, edge))
    entries.sort()
    adjacent_limit = min(box_length, box_width) + 2.0 * robot_radius
    n = len(entries)
    for k in range(n):
        _, i, edge_i = entries[k]
        _, j, edge_j = entries[(k + 1) % n]
        if i == j:
            continue
        if edge_i is edge_j:
            limit = box_length if edge_i in (Edge.FRONT, Edge.REAR) else box_width
        elif (edge_i, edge_j) in _ADJACENT or (edge_j, edge_i) in _ADJACENT:
            limit = adjacent_limit
        else:
            continue  # opposite faces: no constraint
        pi = robot_positions[i]
        pj = robot_positions[j]
        if math.hypot(pi[0] - pj[0], pi[1] - pj[1]) >= limit:
            return CagingResult(False, (min(i, j), max(i, j)))
    return CagingResult(True)


def net_moment(
    points: Sequence[tuple[float, float]],
    forces: Sequence[tuple[float, float]],
    center: tuple[float, float] = (0.0, 0.0),
) -> float:
    """Net planar moment of point forces about ``center``."""
    if len(points) != len(forces):
        raise ValueError("points and forces must pair up")
    mz = 0.0
    for (px, py), (fx, fy) in zip(points, forces):
        mz += (px - center[0]) * fy - (py - center[1]) * fx
    return mz
