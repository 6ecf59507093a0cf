import dataclasses
import math
import random

import numpy as np
import pytest

from boxpush.formation import initial_placement, slot_world_pose
from boxpush.geometry import Pose2D, Twist2D, wrap_angle
from boxpush.r2p2 import (
    BoxPrimitive,
    ControlCommand,
    ControllerConfig,
    ControllerState,
    Observation,
    Phase,
    RepositionStuck,
    Role,
    assign_role,
    check_reposition,
    contact_lever,
    control_cycle,
    heading_error,
    prevent_velocity,
    push_velocity,
    reposition_step,
    select_primitive,
    support_velocity,
)

CFG = ControllerConfig()
L, W, R = 1.35, 0.35, 0.105


def make_obs(self_pose, box_pose=None, twist=None, target=(5.0, 0.0), flags=()):
    return Observation(
        self_pose=self_pose,
        box_pose=box_pose or Pose2D(),
        box_twist=twist or Twist2D(),
        target=target,
        peer_stop_flags=tuple(flags),
    )


def formation_observations(target, box_pose=None):
    box_pose = box_pose or Pose2D()
    slots = initial_placement(L, W, 6, 0.175, R)
    out = []
    for s in slots:
        pose = slot_world_pose(s, box_pose)
        out.append((s, make_obs(pose, box_pose, target=target)))
    return out


# ----------------------------------------------------------------- primitive


def test_select_primitive_examples():
    box = Pose2D(0, 0, 0)
    assert select_primitive(box, (1.0, 1.0), 0.2) is BoxPrimitive.TURN_ACW
    assert select_primitive(box, (1.0, 0.0), 0.2) is BoxPrimitive.STRAIGHT
    assert select_primitive(box, (1.0, -1.0), 0.2) is BoxPrimitive.TURN_CW
    # within the tolerance band: straight
    assert select_primitive(box, (1.0, math.tan(0.15)), 0.2) is BoxPrimitive.STRAIGHT


def test_select_primitive_wraps_across_seam():
    box = Pose2D(0, 0, math.pi - 0.05)
    target = (-1.0, -math.tan(0.05))  # bearing ~ -(pi - 0.05)
    assert select_primitive(box, target, 0.2) is BoxPrimitive.STRAIGHT


def test_primitive_consensus():
    rng = random.Random(2)
    for _ in range(200):
        box = Pose2D(rng.uniform(-5, 5), rng.uniform(-5, 5), rng.uniform(-3, 3))
        target = (rng.uniform(-5, 5), rng.uniform(-5, 5))
        first = select_primitive(box, target, 0.2)
        assert all(
            select_primitive(box, target, 0.2) is first for _ in range(5)
        )


def test_heading_error_modes():
    box = Pose2D(0, 0, -0.3)
    target = (math.cos(0.4), math.sin(0.4))
    assert heading_error(box, target, "shortest_arc") == pytest.approx(0.7)
    assert heading_error(box, target, "magnitude_difference") == pytest.approx(0.1)


# --------------------------------------------------------------------- roles


def test_roles_straight_motion_pattern():
    # goal dead ahead: trailing pair pushes, leading pair prevents, ends support
    obs = formation_observations(target=(5.0, 0.0))
    roles = [assign_role(o, BoxPrimitive.STRAIGHT, CFG) for _, o in obs]
    assert roles == [
        Role.PREVENT,  # front-left
        Role.PREVENT,  # front-right
        Role.SUPPORT,  # left end
        Role.PUSH,  # rear-right
        Role.PUSH,  # rear-left
        Role.SUPPORT,  # right end
    ]


def test_roles_turn_patterns_are_diagonal():
    obs = formation_observations(target=(5.0, 0.0))
    acw = [assign_role(o, BoxPrimitive.TURN_ACW, CFG) for _, o in obs]
    assert acw == [
        Role.PUSH,
        Role.PREVENT,
        Role.SUPPORT,
        Role.PUSH,
        Role.PREVENT,
        Role.SUPPORT,
    ]
    cw = [assign_role(o, BoxPrimitive.TURN_CW, CFG) for _, o in obs]
    # flipping the turn direction swaps push and prevent, support unchanged
    swap = {Role.PUSH: Role.PREVENT, Role.PREVENT: Role.PUSH,
            Role.SUPPORT: Role.SUPPORT}
    assert cw == [swap[r] for r in acw]


def test_lateral_outlier_is_support():
    # beyond the lateral half-length band the role is support regardless
    pose = Pose2D(0.0, L / 2 + 0.1, 0.3)
    obs = make_obs(pose)
    for prim in BoxPrimitive:
        assert assign_role(obs, prim, CFG) is Role.SUPPORT


def brute_force_role(robot_pose, box_pose, target, primitive, length, eps_w):
    rot = np.array(
        [
            [np.cos(box_pose.theta), -np.sin(box_pose.theta)],
            [np.sin(box_pose.theta), np.cos(box_pose.theta)],
        ]
    )
    rel = np.array([robot_pose.x - box_pose.x, robot_pose.y - box_pose.y])
    local = rot.T @ rel
    if abs(local[1]) > length / 2.0 + eps_w:
        return Role.SUPPORT
    f = np.array([np.cos(robot_pose.theta), np.sin(robot_pose.theta)])
    if primitive is BoxPrimitive.STRAIGHT:
        d = np.array([target[0] - box_pose.x, target[1] - box_pose.y])
        norm = np.linalg.norm(d)
        if norm == 0.0:
            return Role.SUPPORT
        s = float(f @ d) / norm
        if s > 0:
            return Role.PUSH
        if s < 0:
            return Role.PREVENT
        return Role.SUPPORT
    tau = float(rel[0] * f[1] - rel[1] * f[0])
    tau_des = 1.0 if primitive is BoxPrimitive.TURN_ACW else -1.0
    prod = tau * tau_des
    if prod > 0:
        return Role.PUSH
    if prod < 0:
        return Role.PREVENT
    return Role.SUPPORT


def test_role_matches_brute_force_10000():
    rng = random.Random(99)
    prims = list(BoxPrimitive)
    mismatches = 0
    for _ in range(10000):
        box = Pose2D(rng.uniform(-3, 3), rng.uniform(-3, 3), rng.uniform(-3, 3))
        robot = Pose2D(rng.uniform(-5, 5), rng.uniform(-5, 5), rng.uniform(-3, 3))
        target = (rng.uniform(-5, 5), rng.uniform(-5, 5))
        prim = prims[rng.randrange(3)]
        obs = make_obs(robot, box, target=target)
        if assign_role(obs, prim, CFG) is not brute_force_role(
            robot, box, target, prim, L, CFG.eps_width
        ):
            mismatches += 1
    assert mismatches == 0


def test_role_antisymmetry_random():
    rng = random.Random(5)
    swap = {Role.PUSH: Role.PREVENT, Role.PREVENT: Role.PUSH,
            Role.SUPPORT: Role.SUPPORT}
    for _ in range(2000):
        box = Pose2D(rng.uniform(-3, 3), rng.uniform(-3, 3), rng.uniform(-3, 3))
        robot = Pose2D(rng.uniform(-4, 4), rng.uniform(-4, 4), rng.uniform(-3, 3))
        obs = make_obs(robot, box)
        a = assign_role(obs, BoxPrimitive.TURN_ACW, CFG)
        c = assign_role(obs, BoxPrimitive.TURN_CW, CFG)
        assert c is swap[a]


# ------------------------------------------------------------- velocity laws


def test_push_velocity_examples():
    assert push_velocity(0.8, 4.0, 0.1) == (0.2, 0.0)
    assert push_velocity(0.04, 4.0, 0.1) == (0.1, 0.0)
    assert push_velocity(10.0, 4.0, 0.1) == (0.22, 0.0)


def test_prevent_velocity_examples():
    # box speed 0.05, omega 0.1 -> trace at 0.05 + 0.1*0.5 = 0.10
    v, om = prevent_velocity(Twist2D(vx=0.05, omega=0.1), 0.5, 0.15)
    assert (v, om) == pytest.approx((-0.10, -0.1))
    v, om = prevent_velocity(Twist2D(vx=0.2, omega=0.2), 0.5, 0.15)
    assert (v, om) == pytest.approx((-0.15, -0.2))


def test_support_velocity_examples():
    assert support_velocity(Twist2D(vx=0.1), 0.3) == pytest.approx((-0.1, 0.0))
    v, om = support_velocity(Twist2D(omega=0.2), 0.3)
    assert (v, om) == pytest.approx((-0.06, -0.2))
    v, om = support_velocity(Twist2D(omega=0.2), 0.3, "split")
    assert (v, om) == pytest.approx((0.06, -0.2))


def test_velocity_laws_against_oracle_1000():
    rng = random.Random(31)
    for _ in range(1000):
        e = rng.uniform(0, 5)
        kp = rng.uniform(0.5, 10)
        vmin = rng.uniform(0.01, 0.2)
        vmax = rng.uniform(vmin, 0.3)
        v, om = push_velocity(e, kp, vmin, vmax)
        assert abs(v - min(max(e / kp, vmin), vmax)) < 1e-12 and om == 0.0

        tw = Twist2D(rng.uniform(-0.3, 0.3), rng.uniform(-0.3, 0.3),
                     rng.uniform(-1, 1))
        r = rng.uniform(0, 1)
        vb = rng.uniform(0.05, 0.3)
        v, om = prevent_velocity(tw, r, vb)
        speed = float(np.hypot(tw.vx, tw.vy))
        assert abs(v - (-min(speed + abs(tw.omega) * r, vb))) < 1e-12
        assert v <= 0.0 and abs(v) <= vb
        assert om == -tw.omega

        v, om = support_velocity(tw, r, "combined")
        assert abs(v - (-(speed + abs(tw.omega) * r))) < 1e-12
        assert v <= 0.0
        v, om = support_velocity(tw, r, "split")
        assert abs(v - (-speed + tw.omega * r)) < 1e-12
        assert om == -tw.omega


def test_push_velocity_monotone_in_error():
    last = 0.0
    for e in np.linspace(0.0, 3.0, 400):
        v, _ = push_velocity(float(e), 8.0, 0.15, 0.22)
        assert v >= last - 1e-15
        last = v


def test_contact_lever():
    # robot centered off the front face: contact point is the face midpoint
    obs = make_obs(Pose2D(0.5, 0.0, math.pi))
    assert contact_lever(obs, CFG) == pytest.approx(W / 2)
    # off the left end: closest point is the end midpoint
    obs = make_obs(Pose2D(0.0, 1.0, -math.pi / 2))
    assert contact_lever(obs, CFG) == pytest.approx(L / 2)


# -------------------------------------------------------------- repositioning


def slot_and_state(index=0):
    slots = initial_placement(L, W, 6, 0.175, R)
    return slots[index], ControllerState(slot=slots[index])


def test_check_reposition():
    slot, state = slot_and_state()
    home = slot_world_pose(slot, Pose2D())
    assert not check_reposition(state, make_obs(home), CFG)
    off = Pose2D(home.x + 0.06, home.y, home.theta)
    assert check_reposition(state, make_obs(off), CFG)
    yawed = Pose2D(home.x, home.y, home.theta + math.radians(11.0))
    assert check_reposition(state, make_obs(yawed), CFG)
    slightly = Pose2D(home.x + 0.03, home.y, home.theta - math.radians(8.0))
    assert not check_reposition(state, make_obs(slightly), CFG)


def test_reposition_completes_immediately_when_in_place():
    slot, state = slot_and_state()
    state.phase = Phase.ALIGN_PARALLEL
    home = slot_world_pose(slot, Pose2D())
    cmd = reposition_step(state, make_obs(home), CFG)
    assert (cmd.v, cmd.omega, cmd.stop_flag) == (0.0, 0.0, False)
    assert state.phase is Phase.ACTIVE


def simulate_reposition(state, pose, box_pose, max_steps=2000, dt=0.05):
    # kinematic playback of the maneuver at control cadence
    for _ in range(max_steps):
        cmd = reposition_step(state, make_obs(pose, box_pose), CFG)
        if state.phase is Phase.ACTIVE:
            return pose
        pose = Pose2D(
            pose.x + cmd.v * math.cos(pose.theta) * dt,
            pose.y + cmd.v * math.sin(pose.theta) * dt,
            wrap_angle(pose.theta + cmd.omega * dt),
        )
    raise AssertionError("reposition did not finish")


def test_reposition_recovers_slide_along_edge():
    slot, state = slot_and_state()
    state.phase = Phase.ALIGN_PARALLEL
    home = slot_world_pose(slot, Pose2D())
    start = Pose2D(home.x, home.y + 0.1, home.theta)  # slid along the face
    final = simulate_reposition(state, start, Pose2D())
    assert math.hypot(final.x - home.x, final.y - home.y) <= CFG.reposition_pos_tol
    assert abs(wrap_angle(final.theta - home.theta)) <= CFG.reposition_heading_tol


def test_reposition_recovers_outward_offset_and_yaw():
    slot, state = slot_and_state(index=3)
    state.phase = Phase.ALIGN_PARALLEL
    home = slot_world_pose(slot, Pose2D())
    start = Pose2D(home.x - 0.15, home.y - 0.05, wrap_angle(home.theta + 1.0))
    final = simulate_reposition(state, start, Pose2D())
    assert math.hypot(final.x - home.x, final.y - home.y) <= CFG.reposition_pos_tol
    assert abs(wrap_angle(final.theta - home.theta)) <= CFG.reposition_heading_tol


def test_reposition_timeout_raises():
    slot, state = slot_and_state()
    state.phase = Phase.TRANSLATE
    cfg = dataclasses.replace(CFG, reposition_phase_timeout=3)
    far = Pose2D(5.0, 5.0, 0.0)
    with pytest.raises(RepositionStuck):
        for _ in range(10):
            reposition_step(state, make_obs(far), cfg)


# ----------------------------------------------------------------- full cycle


def test_cycle_halts_on_peer_flag_and_freezes_counter():
    slot, state = slot_and_state()
    home = slot_world_pose(slot, Pose2D())
    state.steps_since_check = 7
    cmd, state = control_cycle(make_obs(home, flags=(True, False)), state, CFG)
    assert (cmd.v, cmd.omega, cmd.stop_flag) == (0.0, 0.0, False)
    assert state.steps_since_check == 7


def test_cycle_triggers_reposition_at_interval():
    slot, state = slot_and_state()
    home = slot_world_pose(slot, Pose2D())
    drifted = Pose2D(home.x + 0.2, home.y, home.theta)
    state.steps_since_check = CFG.reposition_check_interval - 1
    cmd, state = control_cycle(make_obs(drifted), state, CFG)
    assert state.repositioning
    assert cmd.stop_flag


def test_cycle_ignores_peer_flags_while_repositioning():
    slot, state = slot_and_state()
    state.phase = Phase.TRANSLATE
    home = slot_world_pose(slot, Pose2D())
    drifted = Pose2D(home.x, home.y + 0.3, home.theta - math.pi / 2)
    cmd, state = control_cycle(make_obs(drifted, flags=(True,)), state, CFG)
    assert cmd.stop_flag
    assert cmd.v != 0.0 or cmd.omega != 0.0


def test_cycle_active_roles_and_commands():
    for (slot, obs), want_role, want_sign in zip(
        formation_observations(target=(5.0, 0.0)),
        [Role.PREVENT, Role.PREVENT, Role.SUPPORT, Role.PUSH, Role.PUSH,
         Role.SUPPORT],
        [0, 0, 0, 1, 1, 0],
    ):
        state = ControllerState(slot=slot)
        cmd, state = control_cycle(obs, state, CFG)
        assert state.last_role is want_role
        if want_sign:
            assert cmd.v >= CFG.v_min  # pushers move, floor applies
        else:
            assert cmd.v == pytest.approx(0.0)  # box at rest: tracers hold
        assert not cmd.stop_flag


def test_push_command_uses_translation_gain():
    # straight primitive, far target: v = e * k_trans capped at hardware
    slots = initial_placement(L, W, 6, 0.175, R)
    state = ControllerState(slot=slots[3])
    obs_far = make_obs(slot_world_pose(slots[3], Pose2D()), target=(0.5, 0.0))
    cmd, _ = control_cycle(obs_far, state, CFG)
    assert cmd.v == pytest.approx(max(0.5 * CFG.k_trans, CFG.v_min))


def test_observation_shape_guards_decentralization():
    names = {f.name for f in dataclasses.fields(Observation)}
    assert names == {"self_pose", "box_pose", "box_twist", "target",
                     "peer_stop_flags"}
