"""Virtual-leader-follower baseline controller.

The box centroid acts as a virtual leader.  To reorient the formation each
robot chases the image of its own position rotated about the centroid by the
remaining heading error; to translate, every robot drives at one constant
speed along the goal direction while holding heading.  Unlike the role-based
controller, followers never servo their heading against the box face, so
contact quality is left to chance.  The same repositioning maneuver as the
role-based controller runs after a rotation completes and periodically during
translation, keeping the comparison about control structure rather than
recovery ability.
"""

from __future__ import annotations

import dataclasses
import enum
import math

from .formation import FormationSlot
from .geometry import bearing_to, clamp, wrap_angle
from .r2p2 import (
    BoxPrimitive,
    ControlCommand,
    ControllerConfig,
    Observation,
    Phase,
    check_reposition,
    reposition_step,
    select_primitive,
)


class VlfPhase(enum.Enum):
    ROTATE_FORMATION = "rotate_formation"
    TRANSLATE = "translate"


class VlfNavigationStuck(RuntimeError):
    """A formation-rotation maneuver exceeded its step budget."""


@dataclasses.dataclass
class VlfConfig:
    controller: ControllerConfig = dataclasses.field(
        default_factory=ControllerConfig
    )
    v_translate: float = 0.15       # m/s, shared constant drive speed
    heading_gain: float = 2.0       # rad/s per rad while tracking
    nav_pos_tol: float = 0.05       # m, "close enough" to a rotation target
    nav_align_tol: float = 0.3      # rad, point-turn before driving
    rotate_timeout_steps: int = 30000  # control steps per rotation phase


@dataclasses.dataclass
class VlfState:
    """Per-robot controller memory (same snapshot contract as the role-based
    controller; ``phase``/``phase_steps`` drive the shared reposition
    machinery)."""

    slot: FormationSlot
    vlf_phase: VlfPhase | None = None
    phase: Phase = Phase.ACTIVE
    phase_steps: int = 0
    steps_since_check: int = 0
    rotate_steps: int = 0

    @property
    def repositioning(self) -> bool:
        return self.phase is not Phase.ACTIVE


def vlf_desired_position(c, r_i, theta):
    """Rotate a follower position about the leader: r' = c + R(theta)(r - c)."""
    dx = r_i[0] - c[0]
    dy = r_i[1] - c[1]
    ct = math.cos(theta)
    st = math.sin(theta)
    return (c[0] + ct * dx - st * dy, c[1] + st * dx + ct * dy)


def _rotate_command(obs: Observation, cfg: VlfConfig) -> ControlCommand:
    box = obs.box_pose
    remaining = wrap_angle(bearing_to((box.x, box.y), obs.target) - box.theta)
    des = vlf_desired_position(
        (box.x, box.y), (obs.self_pose.x, obs.self_pose.y), remaining
    )
    dx = des[0] - obs.self_pose.x
    dy = des[1] - obs.self_pose.y
    dist = math.hypot(dx, dy)
    if dist <= cfg.nav_pos_tol:
        return ControlCommand(0.0, 0.0)
    hw = cfg.controller
    herr = wrap_angle(math.atan2(dy, dx) - obs.self_pose.theta)
    omega = clamp(cfg.heading_gain * herr, -hw.omega_max_hw, hw.omega_max_hw)
    if abs(herr) > cfg.nav_align_tol:
        return ControlCommand(0.0, omega)
    # ease off near the target so the turn-rate limit cannot force an orbit
    v = min(cfg.v_translate, max(1.5 * dist, 0.02))
    return ControlCommand(clamp(v, -hw.v_max_hw, hw.v_max_hw), omega)


def _translate_command(obs: Observation, cfg: VlfConfig) -> ControlCommand:
    box = obs.box_pose
    goal_dir = bearing_to((box.x, box.y), obs.target)
    herr = wrap_angle(goal_dir - obs.self_pose.theta)
    v = cfg.v_translate
    if abs(herr) > math.pi / 2:
        # drive in reverse rather than pirouette out of the formation
        herr = wrap_angle(herr - math.pi)
        v = -v
    hw = cfg.controller
    omega = clamp(cfg.heading_gain * herr, -hw.omega_max_hw, hw.omega_max_hw)
    return ControlCommand(clamp(v, -hw.v_max_hw, hw.v_max_hw), omega)


def vlf_control_cycle(obs: Observation, state: VlfState, cfg: VlfConfig):
    """One control decision for one follower. Returns (command, state)."""
    hw = cfg.controller
    if state.repositioning:
        cmd = reposition_step(state, obs, hw)
        if state.repositioning:
            cmd = dataclasses.replace(cmd, stop_flag=True)
        return cmd, state

    if any(obs.peer_stop_flags):
        return ControlCommand(0.0, 0.0), state

    primitive = select_primitive(obs.box_pose, obs.target, hw.eps_primitive)
    phase = (
        VlfPhase.TRANSLATE
        if primitive is BoxPrimitive.STRAIGHT
        else VlfPhase.ROTATE_FORMATION
    )
    entering_translate = phase is VlfPhase.TRANSLATE and (
        state.vlf_phase is not VlfPhase.TRANSLATE
    )
    if phase is not state.vlf_phase:
        state.vlf_phase = phase
        state.rotate_steps = 0

    if phase is VlfPhase.TRANSLATE:
        state.steps_since_check += 1
        if entering_translate or state.steps_since_check >= hw.reposition_check_interval:
            state.steps_since_check = 0
            if check_reposition(state, obs, hw):
                state.phase = Phase.ALIGN_PARALLEL
                state.phase_steps = 0
                cmd = reposition_step(state, obs, hw)
                if state.repositioning:
                    cmd = dataclasses.replace(cmd, stop_flag=True)
                return cmd, state
        return _translate_command(obs, cfg), state

    state.rotate_steps += 1
    if state.rotate_steps > cfg.rotate_timeout_steps:
        raise VlfNavigationStuck(
            f"formation rotation still unfinished after {state.rotate_steps} "
            "control steps"
        )
    return _rotate_command(obs, cfg), state
