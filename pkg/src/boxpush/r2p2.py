"""Decentralized role-based controller (R2P2: rotate, push, prevent).

Each robot runs the same cycle from its own observation of the shared
scene: pick the box primitive (turn toward the target bearing, else go
straight), derive its role from its own placement and heading, and emit a
unicycle command.  Pushers drive proportional to the box error, preventers
back off tracing the box, support robots trace the box by default.

A robot that drifts from its formation slot interrupts the task with a
three-phase repositioning maneuver (align with the face, translate along
it, reorient inward) while flying a stop flag that halts every active
peer.  Nothing here reads peer poses; coordination flows only through the
box state and the one-bit flags, which is what makes the scheme
decentralized.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field
from typing import Optional, Sequence

from .formation import FormationSlot, slot_world_pose
from .geometry import (
    Pose2D,
    Twist2D,
    bearing_to,
    clamp,
    to_box_frame,
    wrap_angle,
)


class Role(enum.Enum):
    PUSH = "push"
    PREVENT = "prevent"
    SUPPORT = "support"


class BoxPrimitive(enum.Enum):
    TURN_ACW = "turn_acw"
    TURN_CW = "turn_cw"
    STRAIGHT = "straight"


class Phase(enum.Enum):
    ACTIVE = "active"
    ALIGN_PARALLEL = "align_parallel"
    TRANSLATE = "translate"
    REORIENT = "reorient"


class RepositionStuck(Exception):
    """A repositioning phase failed to converge within its timeout."""


@dataclass(slots=True)
class Observation:
    """Everything one robot may sense in a control step.

    Deliberately excludes peer poses: peers are visible only through their
    stop flags.
    """

    self_pose: Pose2D
    box_pose: Pose2D
    box_twist: Twist2D
    target: tuple[float, float]
    peer_stop_flags: tuple[bool, ...] = ()


@dataclass(slots=True)
class ControlCommand:
    v: float
    omega: float
    stop_flag: bool = False


@dataclass(slots=True)
class ControllerConfig:
    # velocity-law gains: proportional factors, i.e. reciprocals of the
    # divisor gain k_p used by the push law
    k_rot: float = 0.125
    k_trans: float = 0.3
    v_min: float = 0.15
    v_max_box: float = 0.2
    v_max_hw: float = 0.22
    omega_max_hw: float = 2.84
    # gentler speed window for turning pushes: the slots sweep with the box,
    # and robots that cannot strafe lose them (and the cage) at full speed
    turn_v_min: float = 0.05
    turn_v_max: float = 0.10
    eps_primitive: float = 0.2  # rad, ~11 deg; error that starts a turn
    eps_exit: float = 0.05  # rad; error at which a running turn completes
    eps_width: float = 0.02  # m, margin on the lateral support band
    box_length: float = 1.35
    box_width: float = 0.35
    robot_radius: float = 0.105
    reposition_check_interval: int = 10  # control steps
    reposition_pos_tol: float = 0.05  # m
    reposition_heading_tol: float = math.radians(10.0)
    reposition_phase_timeout: int = 600  # control steps per phase
    # "combined" commands -(|v| + omega*r); "split" uses -|v| + omega*r
    support_sign: str = "combined"
    # support station-keeping: yield (retreat law) whenever the end face
    # closes on the robot faster than support_yield_approach; otherwise
    # pursue the slot, tracking it even while it sweeps during turns (the
    # cage stays closed only while the support bridges its side).  Yield
    # stops at support_yield_standoff from the slot: past that the robot
    # holds its ground and walls off the sliding box.  The standoff clears
    # the swinging box corner (~2.3 cm reach past the end plane) while
    # keeping the perimeter closed, so a gliding box gets caught after a
    # few centimetres instead of shoving its cage ahead of itself.
    support_yield_approach: float = 0.02  # m/s
    support_yield_standoff: float = 0.04  # m
    pursue_pos_gain: float = 2.0  # 1/s
    pursue_heading_gain: float = 3.0  # 1/s
    # pursuit station sits this far off the end face: close enough to cage,
    # clear enough never to drag on the box and yaw it
    support_pursue_clearance: float = 0.02  # m
    # a pursuing support that closes less than support_stuck_progress per
    # drift check is pinned (e.g. against the box) and must manoeuvre
    support_stuck_progress: float = 0.02  # m per check interval
    # while the box turns, its slots sweep tangentially out from under the
    # lateral robots (they cannot strafe); that migration along the face
    # keeps the cage closed until roughly 0.2 m, so it only escalates past
    # this looser bound while drift off the face keeps the stock tolerance
    turn_tangential_tol: float = 0.15  # m
    # robots cannot yaw while pressed against the box, so a sustained turn
    # leaves them increasingly oblique to their slots (preventers drift at
    # twice the box rate because they counter-rotate); past this misalignment
    # the contact geometry degrades into a symmetric press whose torques
    # cancel, so re-dock before that rather than grind
    turn_heading_tol: float = math.radians(25.0)
    # "shortest_arc" wraps the signed difference; "magnitude_difference"
    # compares absolute headings |theta_box| - |theta_bearing|
    heading_error_mode: str = "shortest_arc"

    def __post_init__(self) -> None:
        if self.support_sign not in ("combined", "split"):
            raise ValueError(f"unknown support_sign: {self.support_sign}")
        if self.heading_error_mode not in ("shortest_arc", "magnitude_difference"):
            raise ValueError(
                f"unknown heading_error_mode: {self.heading_error_mode}"
            )


@dataclass(slots=True)
class ControllerState:
    slot: FormationSlot
    phase: Phase = Phase.ACTIVE
    steps_since_check: int = 0
    phase_steps: int = 0
    last_role: Role = Role.SUPPORT
    last_primitive: BoxPrimitive | None = None
    # slot distance at the previous drift check (supports only; math.inf
    # whenever the robot is not pursuing)
    last_drift: float = math.inf

    @property
    def repositioning(self) -> bool:
        return self.phase is not Phase.ACTIVE


# ------------------------------------------------------------- pure selectors


def select_primitive(
    box_pose: Pose2D,
    target: tuple[float, float],
    eps: float,
    last: BoxPrimitive | None = None,
    eps_exit: float | None = None,
) -> BoxPrimitive:
    """Box motion primitive from the bearing error alone.

    Every robot evaluates this on the same (box pose, target) pair, so the
    whole formation agrees without communicating.  When ``last`` and
    ``eps_exit`` are given the thresholds form a Schmitt pair: a turn is
    entered when the error exceeds ``eps`` but runs on until the error
    drops inside ``eps_exit``, so the formation does not chatter in and
    out of turns at the boundary.
    """
    dx = target[0] - box_pose.x
    dy = target[1] - box_pose.y
    if dx == 0.0 and dy == 0.0:
        return BoxPrimitive.STRAIGHT
    diff = wrap_angle(math.atan2(dy, dx) - box_pose.theta)
    if eps_exit is not None and last in (BoxPrimitive.TURN_ACW, BoxPrimitive.TURN_CW):
        if abs(diff) <= eps_exit:
            return BoxPrimitive.STRAIGHT
        return BoxPrimitive.TURN_ACW if diff > 0.0 else BoxPrimitive.TURN_CW
    if diff > eps:
        return BoxPrimitive.TURN_ACW
    if diff < -eps:
        return BoxPrimitive.TURN_CW
    return BoxPrimitive.STRAIGHT


def heading_error(
    box_pose: Pose2D, target: tuple[float, float], mode: str = "shortest_arc"
) -> float:
    """Magnitude of the box heading error toward the target bearing."""
    dx = target[0] - box_pose.x
    dy = target[1] - box_pose.y
    if dx == 0.0 and dy == 0.0:
        return 0.0
    theta_r = math.atan2(dy, dx)
    if mode == "magnitude_difference":
        return abs(abs(box_pose.theta) - abs(theta_r))
    return abs(wrap_angle(theta_r - box_pose.theta))


def translation_error(box_pose: Pose2D, target: tuple[float, float]) -> float:
    return math.hypot(target[0] - box_pose.x, target[1] - box_pose.y)


def assign_role(
    obs: Observation, primitive: BoxPrimitive, cfg: ControllerConfig
) -> Role:
    """Role from own placement and heading; no peer knowledge involved.

    Robots standing beyond the box's lateral extent (the short-end
    positions) are support by default.  Otherwise, for straight motion the
    sign of heading-dot-goal picks push (aligned) or prevent (opposed); for
    turns it is the sign of the torque the robot's heading would apply
    about the box center, compared with the desired turn direction.
    """
    coord = to_box_frame(obs.box_pose, (obs.self_pose.x, obs.self_pose.y))
    if abs(coord.w) > cfg.box_length / 2.0 + cfg.eps_width:
        return Role.SUPPORT
    fx = math.cos(obs.self_pose.theta)
    fy = math.sin(obs.self_pose.theta)
    if primitive is BoxPrimitive.STRAIGHT:
        dx = obs.target[0] - obs.box_pose.x
        dy = obs.target[1] - obs.box_pose.y
        dist = math.hypot(dx, dy)
        if dist == 0.0:
            return Role.SUPPORT
        s = (fx * dx + fy * dy) / dist
        if s > 0.0:
            return Role.PUSH
        if s < 0.0:
            return Role.PREVENT
        return Role.SUPPORT
    tau_des = 1.0 if primitive is BoxPrimitive.TURN_ACW else -1.0
    rx = obs.self_pose.x - obs.box_pose.x
    ry = obs.self_pose.y - obs.box_pose.y
    tau = rx * fy - ry * fx
    prod = tau * tau_des
    if prod > 0.0:
        return Role.PUSH
    if prod < 0.0:
        return Role.PREVENT
    return Role.SUPPORT


def contact_lever(obs: Observation, cfg: ControllerConfig) -> float:
    """Distance from the box center to this robot's contact point.

    The contact point is the closest point of the box rectangle to the
    robot center, computed from observable quantities only.
    """
    coord = to_box_frame(obs.box_pose, (obs.self_pose.x, obs.self_pose.y))
    ha = cfg.box_width / 2.0
    hl = cfg.box_length / 2.0
    qell = clamp(coord.ell, -ha, ha)
    qw = clamp(coord.w, -hl, hl)
    return math.hypot(qell, qw)


# ------------------------------------------------------------- velocity laws


def push_velocity(
    error: float, k_p: float, v_min: float, v_max: float = 0.22
) -> tuple[float, float]:
    """Proportional push speed with a floor at v_min, capped by hardware."""
    v = error / k_p
    if v < v_min:
        v = v_min
    if v > v_max:
        v = v_max
    return (v, 0.0)


def prevent_velocity(
    box_twist: Twist2D, r: float, v_max_box: float
) -> tuple[float, float]:
    """Back off tracing the box, no faster than the allowed box speed.

    The spin term enters by magnitude: the yield speed must stay a retreat
    (and stay within the box speed cap) whichever way the box happens to
    spin, else a backwards-spinning box would turn this into a charge.
    """
    v = -min(box_twist.speed() + abs(box_twist.omega) * r, v_max_box)
    return (v, -box_twist.omega)


def support_velocity(
    box_twist: Twist2D, r: float, sign_mode: str = "combined"
) -> tuple[float, float]:
    """Trace the box from the side while counter-yawing its spin."""
    if sign_mode == "split":
        v = -box_twist.speed() + box_twist.omega * r
    else:
        v = -(box_twist.speed() + abs(box_twist.omega) * r)
    return (v, -box_twist.omega)


def support_command(
    obs: Observation,
    slot: FormationSlot,
    primitive: BoxPrimitive,
    cfg: ControllerConfig,
) -> tuple[float, float, bool]:
    """Station-keeping for a supporting robot: (v, omega, pursuing).

    The cage only closes while the support bridges the gap between the
    lateral robots on its side, so it tracks a station just outside its
    slot even while the box turns and the slot sweeps.  Only when the end
    face is actively advancing at the robot does it switch to the retreat
    law and back off ahead of it (never past the yield standoff, where it
    holds and lets the box nudge it).  While pursuing, the pursuit itself
    is the recovery behaviour, so the caller must not escalate routine
    drift to a reposition (only a pursuit that stops converging).
    """
    tw = obs.box_twist
    bp = obs.box_pose
    slot_pose = slot_world_pose(slot, bp)
    # pursuit station: clearance outward along the slot's inward normal
    sx = slot_pose.x - cfg.support_pursue_clearance * math.cos(slot_pose.theta)
    sy = slot_pose.y - cfg.support_pursue_clearance * math.sin(slot_pose.theta)
    dx = sx - obs.self_pose.x
    dy = sy - obs.self_pose.y
    dist = math.hypot(dx, dy)
    rx = slot_pose.x - bp.x
    ry = slot_pose.y - bp.y
    # velocity of the slot point; outward = from box center toward the slot
    vpx = tw.vx - tw.omega * ry
    vpy = tw.vy + tw.omega * rx
    rlen = math.hypot(rx, ry)
    approach = (vpx * rx + vpy * ry) / rlen if rlen > 0.0 else 0.0
    if approach > cfg.support_yield_approach:
        if dist > cfg.support_yield_standoff:
            # already clear of the advancing end; hold instead of drifting
            return (0.0, 0.0, False)
        v, om = support_velocity(tw, contact_lever(obs, cfg), cfg.support_sign)
        return (v, om, False)
    station_speed = math.hypot(vpx, vpy)
    if dist < cfg.support_pursue_clearance + 0.005 and station_speed < 1e-3:
        # station at rest and the robot already cages the end: hold
        return (0.0, 0.0, True)
    herr = wrap_angle(math.atan2(dy, dx) - obs.self_pose.theta)
    gear = 1.0
    if abs(herr) > 0.5 * math.pi:
        # target is behind: back up instead of pirouetting
        herr = wrap_angle(herr - math.pi)
        gear = -1.0
    om = clamp(cfg.pursue_heading_gain * herr, -cfg.omega_max_hw, cfg.omega_max_hw)
    v = gear * min(cfg.pursue_pos_gain * dist + station_speed, cfg.v_max_hw) * math.cos(herr)
    return (v, om, True)


# -------------------------------------------------------------- repositioning


def check_reposition(
    state: ControllerState,
    obs: Observation,
    cfg: ControllerConfig,
    slack: float = 1.0,
) -> bool:
    """True when this robot has drifted out of its slot's tolerance.

    ``slack`` scales both tolerances; callers widen it while the box is
    turning, when the slots sweep underneath the robots.
    """
    slot_pose = slot_world_pose(state.slot, obs.box_pose)
    dx = obs.self_pose.x - slot_pose.x
    dy = obs.self_pose.y - slot_pose.y
    if math.hypot(dx, dy) > cfg.reposition_pos_tol * slack:
        return True
    herr = abs(wrap_angle(obs.self_pose.theta - slot_pose.theta))
    return herr > cfg.reposition_heading_tol * slack


_ALIGN_TOL = math.radians(2.0)
_TURN_GAIN = 2.0
_TURN_FLOOR = 0.3
_DRIVE_GAIN = 1.5
_DRIVE_FLOOR = 0.05


def _turn_toward(err: float, omega_max: float) -> float:
    mag = min(max(_TURN_GAIN * abs(err), _TURN_FLOOR), omega_max)
    return mag if err > 0.0 else -mag


def reposition_step(
    state: ControllerState, obs: Observation, cfg: ControllerConfig
) -> ControlCommand:
    """One step of the three-phase slot-recovery maneuver.

    Phases cascade in a single call when their goal is already met, so a
    robot that is still in place completes immediately with zero motion.
    Raises RepositionStuck when a phase exceeds its timeout.
    """
    pose = obs.self_pose
    done_pos = 0.5 * cfg.reposition_pos_tol
    done_heading = 0.5 * cfg.reposition_heading_tol
    for _ in range(4):
        slot_pose = slot_world_pose(state.slot, obs.box_pose)
        dx = slot_pose.x - pose.x
        dy = slot_pose.y - pose.y
        pos_err = math.hypot(dx, dy)
        if state.phase is Phase.ALIGN_PARALLEL:
            if pos_err <= done_pos:
                state.phase = Phase.REORIENT
                state.phase_steps = 0
                continue
            # face one of the two directions parallel to the slot's face
            par = wrap_angle(slot_pose.theta + math.pi / 2.0)
            err_a = wrap_angle(par - pose.theta)
            err_b = wrap_angle(par + math.pi - pose.theta)
            herr = err_a if abs(err_a) <= abs(err_b) else err_b
            if abs(herr) <= _ALIGN_TOL:
                state.phase = Phase.TRANSLATE
                state.phase_steps = 0
                continue
            state.phase_steps += 1
            if state.phase_steps > cfg.reposition_phase_timeout:
                raise RepositionStuck("align phase timed out")
            return ControlCommand(0.0, _turn_toward(herr, cfg.omega_max_hw), True)
        if state.phase is Phase.TRANSLATE:
            if pos_err <= done_pos:
                state.phase = Phase.REORIENT
                state.phase_steps = 0
                continue
            state.phase_steps += 1
            if state.phase_steps > cfg.reposition_phase_timeout:
                raise RepositionStuck("translate phase timed out")
            phi = wrap_angle(math.atan2(dy, dx) - pose.theta)
            speed = min(max(_DRIVE_GAIN * pos_err, _DRIVE_FLOOR), cfg.v_max_hw)
            if abs(phi) <= math.pi / 2.0:
                return ControlCommand(
                    speed, clamp(_TURN_GAIN * phi, -cfg.omega_max_hw,
                                 cfg.omega_max_hw), True
                )
            back = wrap_angle(phi - math.pi)
            return ControlCommand(
                -speed, clamp(_TURN_GAIN * back, -cfg.omega_max_hw,
                              cfg.omega_max_hw), True
            )
        if state.phase is Phase.REORIENT:
            herr = wrap_angle(slot_pose.theta - pose.theta)
            if abs(herr) <= done_heading:
                state.phase = Phase.ACTIVE
                state.phase_steps = 0
                state.steps_since_check = 0
                return ControlCommand(0.0, 0.0, False)
            state.phase_steps += 1
            if state.phase_steps > cfg.reposition_phase_timeout:
                raise RepositionStuck("reorient phase timed out")
            return ControlCommand(0.0, _turn_toward(herr, cfg.omega_max_hw), True)
    raise RepositionStuck("reposition cascade failed to settle")


# ---------------------------------------------------------------- full cycle


def control_cycle(
    obs: Observation, state: ControllerState, cfg: ControllerConfig
) -> tuple[ControlCommand, ControllerState]:
    """One control step for one robot: observation in, command out."""
    if state.repositioning:
        return reposition_step(state, obs, cfg), state

    if any(obs.peer_stop_flags):
        # halt and freeze counters until the flagged peer recovers
        return ControlCommand(0.0, 0.0, False), state

    primitive = select_primitive(
        obs.box_pose, obs.target, cfg.eps_primitive,
        state.last_primitive, cfg.eps_exit,
    )
    state.last_primitive = primitive
    role = assign_role(obs, primitive, cfg)
    state.last_role = role

    if role is Role.SUPPORT:
        v, om, pursuing = support_command(obs, state.slot, primitive, cfg)
    else:
        pursuing = False
        if role is Role.PUSH:
            if primitive is BoxPrimitive.STRAIGHT:
                err = translation_error(obs.box_pose, obs.target)
                v, om = push_velocity(
                    err, 1.0 / cfg.k_trans, cfg.v_min, cfg.v_max_hw
                )
            else:
                err = heading_error(obs.box_pose, obs.target, cfg.heading_error_mode)
                v, om = push_velocity(
                    err, 1.0 / cfg.k_rot, cfg.turn_v_min, cfg.turn_v_max
                )
        else:
            v, om = prevent_velocity(
                obs.box_twist, contact_lever(obs, cfg), cfg.v_max_box
            )

    state.steps_since_check += 1
    if state.steps_since_check >= cfg.reposition_check_interval:
        state.steps_since_check = 0
        if pursuing:
            # Pursuit is the support's own drift recovery; escalate only
            # when it stops converging (pinned against the box, or outrun
            # by it).
            slot_pose = slot_world_pose(state.slot, obs.box_pose)
            drift = math.hypot(
                obs.self_pose.x - slot_pose.x, obs.self_pose.y - slot_pose.y
            )
            trigger = (
                drift > cfg.reposition_pos_tol
                and drift > state.last_drift - cfg.support_stuck_progress
            )
            state.last_drift = drift
        elif role is Role.SUPPORT:
            # A yielding support parks away from its slot on purpose, so
            # the stock drift tolerance would flag it mid-turn every time.
            # Escalate only once it is lost well beyond the standoff.
            state.last_drift = math.inf
            slot_pose = slot_world_pose(state.slot, obs.box_pose)
            drift = math.hypot(
                obs.self_pose.x - slot_pose.x, obs.self_pose.y - slot_pose.y
            )
            trigger = drift > cfg.support_yield_standoff + cfg.reposition_pos_tol
        elif primitive is BoxPrimitive.STRAIGHT:
            state.last_drift = math.inf
            trigger = check_reposition(state, obs, cfg)
        else:
            # mid-turn: migration along the face is the slots sweeping
            # underneath, not a broken cage, so only drift off the face
            # (or enough sweep to open a perimeter gap) escalates; a robot
            # grown too oblique to its slot must also re-dock before the
            # degraded contact angles stall the turn
            state.last_drift = math.inf
            coord = to_box_frame(
                obs.box_pose, (obs.self_pose.x, obs.self_pose.y)
            )
            slot_pose = slot_world_pose(state.slot, obs.box_pose)
            herr = abs(wrap_angle(obs.self_pose.theta - slot_pose.theta))
            trigger = (
                abs(coord.ell - state.slot.coord.ell) > cfg.reposition_pos_tol
                or abs(coord.w - state.slot.coord.w) > cfg.turn_tangential_tol
                or herr > cfg.turn_heading_tol
            )
        if trigger:
            state.phase = Phase.ALIGN_PARALLEL
            state.phase_steps = 0
            return reposition_step(state, obs, cfg), state
    return ControlCommand(v, om, False), state
