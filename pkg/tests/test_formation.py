import math

import pytest

from boxpush.formation import (
    CagingResult,
    Edge,
    FormationSlot,
    assign_edge,
    check_caging,
    initial_placement,
    net_moment,
    slot_world_pose,
)
from boxpush.geometry import BoxFrameCoord, Pose2D, from_box_frame

L, W, R = 1.35, 0.35, 0.105


def world_positions(slots, box_pose=Pose2D()):
    return [from_box_frame(box_pose, s.coord) for s in slots]


def test_six_robot_layout():
    slots = initial_placement(L, W, 6, 0.175, R)
    assert len(slots) == 6
    # four long-face slots at +/- (L/2 - delta) laterally
    lat = L / 2 - 0.175
    assert lat == pytest.approx(0.5)
    fronts = [s for s in slots if s.edge is Edge.FRONT]
    rears = [s for s in slots if s.edge is Edge.REAR]
    ends = [s for s in slots if s.edge in (Edge.LEFT, Edge.RIGHT)]
    assert len(fronts) == 2 and len(rears) == 2 and len(ends) == 2
    for s in fronts:
        assert s.coord.ell == pytest.approx(W / 2 + R)
        assert abs(s.coord.w) == pytest.approx(lat)
    for s in rears:
        assert s.coord.ell == pytest.approx(-(W / 2 + R))
    # short-end slots centered on the ends, one radius out
    for s in ends:
        assert s.coord.ell == 0.0
        assert abs(s.coord.w) == pytest.approx(L / 2 + R)


def test_four_robot_layout_has_no_end_slots():
    slots = initial_placement(L, W, 4, 0.05, R)
    assert len(slots) == 4
    assert all(s.edge in (Edge.FRONT, Edge.REAR) for s in slots)
    # symmetric about both axes
    coords = sorted((round(s.coord.ell, 9), round(s.coord.w, 9)) for s in slots)
    e, w = W / 2 + R, L / 2 - 0.05
    expected = sorted(
        [(round(e, 9), round(w, 9)), (round(e, 9), round(-w, 9)),
         (round(-e, 9), round(w, 9)), (round(-e, 9), round(-w, 9))]
    )
    assert coords == expected


def test_slots_face_inward():
    slots = initial_placement(L, W, 6, 0.175, R)
    for s in slots:
        # driving along the slot heading decreases distance to the center
        x, y = from_box_frame(Pose2D(), s.coord)
        hx = math.cos(s.heading)
        hy = math.sin(s.heading)
        before = math.hypot(x, y)
        after = math.hypot(x + 0.01 * hx, y + 0.01 * hy)
        assert after < before


def test_invalid_placement_args():
    with pytest.raises(ValueError):
        initial_placement(L, W, 5, 0.175, R)
    with pytest.raises(ValueError):
        initial_placement(L, W, 6, L / 2, R)  # delta too large
    with pytest.raises(ValueError):
        initial_placement(L, W, 6, 0.0, R)


def test_slot_world_pose_follows_box():
    slots = initial_placement(L, W, 6, 0.175, R)
    box = Pose2D(2.0, -1.0, math.pi / 3)
    for s in slots:
        p = slot_world_pose(s, box)
        assert p.theta == pytest.approx(
            math.atan2(
                math.sin(box.theta + s.heading), math.cos(box.theta + s.heading)
            )
        )
        expected = from_box_frame(box, s.coord)
        assert (p.x, p.y) == pytest.approx(expected)


def test_assign_edge():
    assert assign_edge(BoxFrameCoord(0.3, 0.0), L, W) is Edge.FRONT
    assert assign_edge(BoxFrameCoord(-0.3, 0.1), L, W) is Edge.REAR
    assert assign_edge(BoxFrameCoord(0.0, 0.8), L, W) is Edge.LEFT
    assert assign_edge(BoxFrameCoord(0.0, -0.8), L, W) is Edge.RIGHT


def test_caging_nominal_passes():
    slots = initial_placement(L, W, 6, 0.175, R)
    res = check_caging(world_positions(slots), Pose2D(), L, W, R)
    assert res.ok and res.violating_pair is None
    assert bool(res)


def test_caging_all_deltas():
    for delta in [0.05, 0.1, 0.175, 0.25, 0.30]:
        for n in (4, 6):
            slots = initial_placement(L, W, n, delta, R)
            box = Pose2D(1.0, 2.0, 0.7)
            pts = world_positions(slots, box)
            assert check_caging(pts, box, L, W, R).ok


def test_caging_detects_displaced_robot():
    slots = initial_placement(L, W, 6, 0.175, R)
    pts = world_positions(slots)
    # push the front-left robot 1 m straight out of the formation
    pts[0] = (pts[0][0] + 1.0, pts[0][1])
    res = check_caging(pts, Pose2D(), L, W, R)
    assert not res.ok
    assert 0 in res.violating_pair


def test_caging_opposite_edges_vacuous():
    # two robots on opposite long faces: no consecutive-pair constraint
    pts = [(W / 2 + R, 0.0), (-(W / 2 + R), 0.0)]
    assert check_caging(pts, Pose2D(), L, W, R).ok


def test_caging_requires_two_robots():
    with pytest.raises(ValueError):
        check_caging([(1.0, 0.0)], Pose2D(), L, W, R)


def test_net_moment_zero_for_balanced_pair():
    pts = [(0.28, 0.0), (-0.28, 0.0)]
    forces = [(-1.0, 0.0), (1.0, 0.0)]
    assert net_moment(pts, forces) == pytest.approx(0.0)


def test_net_moment_corner_exceeds_midpoint():
    # equal-magnitude inward forces applied at the long-face corners make a
    # strictly larger turning moment than the same forces at face midpoints
    corner = abs(net_moment([(W / 2, L / 2)], [(-1.0, 0.0)]))
    midpoint = abs(net_moment([(W / 2, 0.0)], [(-1.0, 0.0)]))
    assert corner > midpoint
    # front-left and rear-right pushing inward form a counter-clockwise couple
    couple = net_moment(
        [(W / 2, L / 2 - 0.175), (-W / 2, -(L / 2 - 0.175))],
        [(-1.0, 0.0), (1.0, 0.0)],
    )
    assert couple == pytest.approx(2.0 * 0.5)
