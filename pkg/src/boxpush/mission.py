"""Mission orchestration.

Runs the physics and controllers in lockstep at the control cadence,
sequences waypoints, classifies the outcome (success, timeout, or a losing
event such as the box slipping out of the cage), and records a per-step
trace that can be serialized, replayed, and plotted.
"""

from __future__ import annotations

import dataclasses
import enum
import json
import math

from .formation import FormationSlot, check_caging, initial_placement, slot_world_pose
from .geometry import Pose2D, Twist2D
from .physics import (
    BoxBody,
    InterpenetrationFault,
    PhysicsParams,
    RobotBody,
    SimulationDiverged,
    TerrainParams,
    WorldState,
    advance,
    detect_robot_collisions,
)
from .r2p2 import (
    ControlCommand,
    ControllerConfig,
    ControllerState,
    Observation,
    Phase,
    RepositionStuck,
    control_cycle,
)
from .vlf import VlfConfig, VlfNavigationStuck, VlfState, vlf_control_cycle

JSONL_SCHEMA = "boxpush-run/1"
CSV_SCHEMA = "boxpush-run-csv/1"


class OutcomeKind(enum.Enum):
    SUCCESS = "success"
    FAILURE_A = "failure_a"  # mission time ceiling reached
    FAILURE_B = "failure_b"  # losing event before the ceiling
    ABORTED = "aborted"      # physics integrity fault; diagnostic only


class FailureReason(enum.Enum):
    BOX_SLIPPED_OUT = "box_slipped_out"
    INTER_ROBOT_COLLISION = "inter_robot_collision"
    REPOSITION_STUCK = "reposition_stuck"


@dataclasses.dataclass(frozen=True)
class Outcome:
    kind: OutcomeKind
    reason: FailureReason | None = None
    detail: str = ""

    def to_dict(self) -> dict:
        return {
            "kind": self.kind.value,
            "reason": self.reason.value if self.reason else None,
            "detail": self.detail,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "Outcome":
        return cls(
            OutcomeKind(d["kind"]),
            FailureReason(d["reason"]) if d.get("reason") else None,
            d.get("detail", ""),
        )


@dataclasses.dataclass
class MissionSpec:
    waypoints: tuple[tuple[float, float], ...]
    goal_tolerance: float = 0.20
    waypoint_tolerance: float = 0.15
    max_time: float = 1500.0
    controller: str = "r2p2"
    control_dt: float = 0.05
    slip_streak_steps: int = 10
    slip_speed_limit: float = 0.44  # 2x the robot hardware speed cap
    reposition_mode: str = "maneuver"
    teleport_penalty: float = 5.0

    def __post_init__(self) -> None:
        self.waypoints = tuple((float(x), float(y)) for x, y in self.waypoints)
        if not self.waypoints:
            raise ValueError("mission needs at least one waypoint")
        if self.goal_tolerance <= 0.0 or self.waypoint_tolerance <= 0.0:
            raise ValueError("tolerances must be positive")
        if self.control_dt <= 0.0:
            raise ValueError("control_dt must be positive")
        if self.controller not in ("r2p2", "vlf"):
            raise ValueError(f"unknown controller {self.controller!r}")
        if self.reposition_mode not in ("maneuver", "teleport"):
            raise ValueError(f"unknown reposition_mode {self.reposition_mode!r}")


@dataclasses.dataclass(slots=True)
class RobotSample:
    x: float
    y: float
    theta: float
    role: str
    v: float
    omega: float
    stop_flag: bool


@dataclasses.dataclass(slots=True)
class Sample:
    t: float
    box_x: float
    box_y: float
    box_theta: float
    box_vx: float
    box_vy: float
    box_omega: float
    waypoint_index: int
    caged: bool
    robots: tuple[RobotSample, ...]


@dataclasses.dataclass
class RunRecord:
    config: dict
    seed: int
    outcome: Outcome
    mission_time: float  # exactly control-step count x control dt
    penalty_time: float  # teleport penalties (reported separately)
    samples: list[Sample]


def slip_displaced(world: WorldState) -> bool:
    """Geometric half of the slip-out predicate: box centroid farther from
    the formation centroid than half-diagonal + 2 robot radii."""
    robots = world.robots
    cx = sum(r.pose.x for r in robots) / len(robots)
    cy = sum(r.pose.y for r in robots) / len(robots)
    bp = world.box.pose
    margin = world.box.half_diagonal + 2.0 * max(r.radius for r in robots)
    return math.hypot(bp.x - cx, bp.y - cy) > margin


def classify_outcome(
    world: WorldState,
    spec: MissionSpec,
    elapsed: float,
    slip_streak: int = 0,
) -> Outcome | None:
    """Terminal outcome for the current state, or None while ongoing.

    Order: success first, then the losing events, then the time ceiling.
    ``slip_streak`` is the number of consecutive control steps (including
    the current one) for which ``slip_displaced`` has held.
    """
    goal = spec.waypoints[-1]
    bp = world.box.pose
    if math.hypot(bp.x - goal[0], bp.y - goal[1]) <= spec.goal_tolerance:
        return Outcome(OutcomeKind.SUCCESS)
    pairs = detect_robot_collisions(world.robots, world.params.collision_tolerance)
    if pairs:
        return Outcome(
            OutcomeKind.FAILURE_B,
            FailureReason.INTER_ROBOT_COLLISION,
            detail=f"robots {pairs[0][0]} and {pairs[0][1]} overlap",
        )
    if slip_streak >= spec.slip_streak_steps:
        return Outcome(
            OutcomeKind.FAILURE_B,
            FailureReason.BOX_SLIPPED_OUT,
            detail=f"displaced for {slip_streak} control steps",
        )
    if world.box.twist.speed() > spec.slip_speed_limit:
        return Outcome(
            OutcomeKind.FAILURE_B,
            FailureReason.BOX_SLIPPED_OUT,
            detail=f"runaway speed {world.box.twist.speed():.3f} m/s",
        )
    if elapsed >= spec.max_time:
        return Outcome(OutcomeKind.FAILURE_A)
    return None


def build_world(
    terrain: TerrainParams,
    box: BoxBody,
    n_robots: int = 6,
    contact_placement: float = 0.175,
    robot_radius: float = 0.105,
    params: PhysicsParams | None = None,
) -> tuple[WorldState, list[FormationSlot]]:
    """Spawn the formation touching the box faces and return world + slots."""
    slots = initial_placement(
        box.length, box.width, n_robots, contact_placement, robot_radius
    )
    robots = [
        RobotBody(radius=robot_radius, pose=slot_world_pose(s, box.pose))
        for s in slots
    ]
    world = WorldState(
        box=box, robots=robots, terrain=terrain, params=params or PhysicsParams()
    )
    return world, slots


def run_mission(
    world: WorldState,
    spec: MissionSpec,
    slots: list[FormationSlot],
    controller_config=None,
    config: dict | None = None,
    seed: int = 0,
) -> RunRecord:
    box = world.box
    robots = world.robots
    n = len(robots)
    if len(slots) != n:
        raise ValueError("need one formation slot per robot")
    radius = max(r.radius for r in robots)
    start_cage = check_caging(
        [(r.pose.x, r.pose.y) for r in robots],
        box.pose,
        box.length,
        box.width,
        radius,
    )
    if not start_cage:
        raise ValueError(
            f"formation does not cage the box at mission start "
            f"(pair {start_cage.violating_pair})"
        )

    vlf = spec.controller == "vlf"
    if controller_config is None:
        controller_config = VlfConfig() if vlf else ControllerConfig()
    cycle = vlf_control_cycle if vlf else control_cycle
    if vlf:
        states = [VlfState(slot=s) for s in slots]
    else:
        states = [ControllerState(slot=s) for s in slots]

    n_sub = round(spec.control_dt / world.params.dt)
    if n_sub < 1 or abs(n_sub * world.params.dt - spec.control_dt) > 1e-12:
        raise ValueError("control_dt must be an integer multiple of physics dt")

    flags = [False] * n
    waypoint_index = 0
    steps = 0
    slip_streak = 0
    penalty = 0.0
    samples: list[Sample] = []
    outcome: Outcome | None = None

    while outcome is None:
        slip_streak = slip_streak + 1 if slip_displaced(world) else 0
        outcome = classify_outcome(
            world, spec, steps * spec.control_dt, slip_streak
        )
        if outcome is not None:
            break

        bp = box.pose
        if waypoint_index < len(spec.waypoints) - 1:
            wx, wy = spec.waypoints[waypoint_index]
            if math.hypot(bp.x - wx, bp.y - wy) <= spec.waypoint_tolerance:
                waypoint_index += 1
        target = spec.waypoints[waypoint_index]
        twist = box.twist

        cmds: list[ControlCommand] = []
        labels: list[str] = []
        new_flags: list[bool] = []
        try:
            for i in range(n):
                st = states[i]
                obs = Observation(
                    self_pose=robots[i].pose,
                    box_pose=bp,
                    box_twist=twist,
                    target=target,
                    peer_stop_flags=tuple(
                        flags[j] for j in range(n) if j != i
                    ),
                )
                was_repositioning = st.repositioning
                cmd, st = cycle(obs, st, controller_config)
                states[i] = st
                if spec.reposition_mode == "teleport" and st.repositioning:
                    robots[i].pose = slot_world_pose(slots[i], bp)
                    st.phase = Phase.ACTIVE
                    st.phase_steps = 0
                    st.steps_since_check = 0
                    cmd = ControlCommand(0.0, 0.0)
                    penalty += spec.teleport_penalty
                    label = "teleport"
                elif was_repositioning or st.repositioning:
                    label = "reposition"
                elif any(obs.peer_stop_flags):
                    label = "halt"
                elif vlf:
                    label = st.vlf_phase.value if st.vlf_phase else "idle"
                else:
                    label = st.last_role.value if st.last_role else "idle"
                cmds.append(cmd)
                labels.append(label)
                new_flags.append(cmd.stop_flag)
        except RepositionStuck as exc:
            outcome = Outcome(
                OutcomeKind.FAILURE_B, FailureReason.REPOSITION_STUCK, str(exc)
            )
            break
        except VlfNavigationStuck as exc:
            outcome = Outcome(OutcomeKind.FAILURE_A, detail=str(exc))
            break

        try:
            advance(world, [(c.v, c.omega) for c in cmds], n_steps=n_sub)
        except (SimulationDiverged, InterpenetrationFault) as exc:
            outcome = Outcome(
                OutcomeKind.ABORTED, detail=f"{type(exc).__name__}: {exc}"
            )
            break

        steps += 1
        flags = new_flags
        caged = bool(
            check_caging(
                [(r.pose.x, r.pose.y) for r in robots],
                box.pose,
                box.length,
                box.width,
                radius,
            )
        )
        samples.append(
            Sample(
                t=steps * spec.control_dt,
                box_x=box.pose.x,
                box_y=box.pose.y,
                box_theta=box.pose.theta,
                box_vx=box.twist.vx,
                box_vy=box.twist.vy,
                box_omega=box.twist.omega,
                waypoint_index=waypoint_index,
                caged=caged,
                robots=tuple(
                    RobotSample(
                        x=robots[i].pose.x,
                        y=robots[i].pose.y,
                        theta=robots[i].pose.theta,
                        role=labels[i],
                        v=cmds[i].v,
                        omega=cmds[i].omega,
                        stop_flag=new_flags[i],
                    )
                    for i in range(n)
                ),
            )
        )

    return RunRecord(
        config=dict(config or {}),
        seed=seed,
        outcome=outcome,
        mission_time=steps * spec.control_dt,
        penalty_time=penalty,
        samples=samples,
    )


# ------------------------------------------------------------- configuration


def terrain_from_config(cfg: dict, waypoints, box_xy) -> TerrainParams:
    """Build terrain; uphill/downhill orient the slope against/along the
    straight line from the box start to the final goal."""
    kind = cfg["kind"]
    if kind not in ("flat", "uphill", "downhill"):
        raise ValueError(f"unknown terrain kind {kind!r}")
    incline = 0.0 if kind == "flat" else float(cfg["incline_deg"])
    direction = cfg.get("downhill_dir")
    if direction is None:
        if kind == "flat":
            direction = (1.0, 0.0)
        else:
            gx, gy = waypoints[-1]
            dx = gx - box_xy[0]
            dy = gy - box_xy[1]
            norm = math.hypot(dx, dy)
            if norm == 0.0:
                raise ValueError("goal coincides with box start")
            sign = -1.0 if kind == "uphill" else 1.0
            direction = (sign * dx / norm, sign * dy / norm)
    return TerrainParams(
        incline_deg=incline,
        mu_static=float(cfg["mu_static"]),
        mu_dynamic=float(cfg["mu_dynamic"]),
        downhill_dir=tuple(direction),
    )


def controller_from_config(cfg: dict, box: dict, robots: dict):
    base = ControllerConfig(
        k_rot=float(cfg["k_rot"]),
        k_trans=float(cfg["k_trans"]),
        v_min=float(cfg["v_min_mps"]),
        v_max_box=float(cfg["v_max_box_mps"]),
        eps_primitive=float(cfg["eps_primitive_rad"]),
        support_sign=cfg["support_sign"],
        heading_error_mode=cfg["heading_error_mode"],
        box_length=float(box["length_m"]),
        box_width=float(box["width_m"]),
        robot_radius=float(robots["radius_m"]),
    )
    if cfg["kind"] == "vlf":
        v = cfg["vlf"]
        return VlfConfig(
            controller=base,
            v_translate=float(v["v_translate_mps"]),
            heading_gain=float(v["heading_gain"]),
            nav_pos_tol=float(v["nav_pos_tol_m"]),
        )
    return base


def run_from_config(cfg: dict) -> RunRecord:
    """Execute one mission from a fully-populated config dict (see
    config.make_config); the same dict replays the identical record."""
    box_cfg = cfg["box"]
    box = BoxBody(
        length=float(box_cfg["length_m"]),
        width=float(box_cfg["width_m"]),
        mass=float(box_cfg["mass_kg"]),
        pose=Pose2D(
            float(box_cfg["x_m"]), float(box_cfg["y_m"]),
            float(box_cfg["theta_rad"]),
        ),
    )
    m_cfg = cfg["mission"]
    spec = MissionSpec(
        waypoints=tuple(tuple(p) for p in m_cfg["waypoints_m"]),
        goal_tolerance=float(m_cfg["goal_tolerance_m"]),
        waypoint_tolerance=float(m_cfg["waypoint_tolerance_m"]),
        max_time=float(m_cfg["max_time_s"]),
        controller=cfg["controller"]["kind"],
        control_dt=float(m_cfg["control_dt_s"]),
        reposition_mode=m_cfg["reposition_mode"],
        teleport_penalty=float(m_cfg["teleport_penalty_s"]),
    )
    terrain = terrain_from_config(
        cfg["terrain"], spec.waypoints, (box.pose.x, box.pose.y)
    )
    robots_cfg = cfg["robots"]
    world, slots = build_world(
        terrain,
        box,
        n_robots=int(robots_cfg["count"]),
        contact_placement=float(robots_cfg["contact_placement_m"]),
        robot_radius=float(robots_cfg["radius_m"]),
    )
    controller = controller_from_config(cfg["controller"], box_cfg, robots_cfg)
    return run_mission(
        world, spec, slots, controller, config=cfg, seed=int(cfg["seed"])
    )


# ------------------------------------------------------------- serialization


def _sample_to_list(s: Sample) -> list:
    row = [
        s.t, s.box_x, s.box_y, s.box_theta, s.box_vx, s.box_vy, s.box_omega,
        s.waypoint_index, int(s.caged),
    ]
    for r in s.robots:
        row.extend([r.x, r.y, r.theta, r.role, r.v, r.omega, int(r.stop_flag)])
    return row


def _sample_from_list(row: list) -> Sample:
    head, rest = row[:9], row[9:]
    robots = []
    for k in range(0, len(rest), 7):
        x, y, th, role, v, om, flag = rest[k:k + 7]
        robots.append(RobotSample(x, y, th, role, v, om, bool(flag)))
    return Sample(
        t=head[0], box_x=head[1], box_y=head[2], box_theta=head[3],
        box_vx=head[4], box_vy=head[5], box_omega=head[6],
        waypoint_index=head[7], caged=bool(head[8]), robots=tuple(robots),
    )


def jsonl_bytes(record: RunRecord) -> bytes:
    """Newline-delimited serialization: one header line, one line per
    control-step sample. Deterministic byte-for-byte for identical records."""
    header = {
        "schema": JSONL_SCHEMA,
        "seed": record.seed,
        "outcome": record.outcome.to_dict(),
        "mission_time_s": record.mission_time,
        "penalty_time_s": record.penalty_time,
        "config": record.config,
    }
    lines = [json.dumps(header, sort_keys=True, separators=(",", ":"))]
    lines.extend(
        json.dumps(_sample_to_list(s), separators=(",", ":"))
        for s in record.samples
    )
    return ("\n".join(lines) + "\n").encode()


def write_jsonl(record: RunRecord, path) -> None:
    with open(path, "wb") as fh:
        fh.write(jsonl_bytes(record))


def read_jsonl(path) -> RunRecord:
    with open(path, "r", encoding="utf-8") as fh:
        lines = fh.read().splitlines()
    header = json.loads(lines[0])
    if header.get("schema") != JSONL_SCHEMA:
        raise ValueError(f"unsupported record schema {header.get('schema')!r}")
    samples = [_sample_from_list(json.loads(ln)) for ln in lines[1:] if ln]
    return RunRecord(
        config=header["config"],
        seed=header["seed"],
        outcome=Outcome.from_dict(header["outcome"]),
        mission_time=header["mission_time_s"],
        penalty_time=header["penalty_time_s"],
        samples=samples,
    )


def csv_text(record: RunRecord) -> str:
    """Flat CSV: t, box pose/twist, waypoint, caged, then per-robot
    x/y/theta/role/v/omega/flag blocks, in robot index order."""
    n = len(record.samples[0].robots) if record.samples else 0
    cols = ["t", "box_x", "box_y", "box_theta", "box_vx", "box_vy",
            "box_omega", "waypoint_index", "caged"]
    for i in range(n):
        cols.extend(
            f"r{i}_{name}"
            for name in ("x", "y", "theta", "role", "v", "omega", "flag")
        )
    out = [f"# schema: {CSV_SCHEMA}", ",".join(cols)]
    for s in record.samples:
        out.append(",".join(
            item if isinstance(item, str) else repr(item)
            if isinstance(item, float) else str(item)
            for item in _sample_to_list(s)
        ))
    return "\n".join(out) + "\n"


def write_csv(record: RunRecord, path) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        fh.write(csv_text(record))


def replay(record: RunRecord) -> RunRecord:
    """Re-run a record's config snapshot; byte-identical for valid records."""
    if not record.config:
        raise ValueError("record carries no config snapshot; cannot replay")
    return run_from_config(record.config)
