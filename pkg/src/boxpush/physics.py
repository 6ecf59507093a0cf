"""Deterministic planar rigid-body world: one box, kinematic disk robots.

Integration is semi-implicit Euler at a fixed millisecond-scale timestep.
Robots are velocity-controlled unicycles that achieve their (clamped)
commands exactly; only the box has force-driven dynamics.  Box-ground
interaction is stick/slip Coulomb friction with an inclined-plane gravity
component; robot-box contact is a spring-damper penalty force with a
regularized Coulomb friction cone.

Everything is pure float arithmetic with no randomness, so repeated runs
from equal initial states are bit-identical.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import NamedTuple, Optional, Sequence

from .geometry import Pose2D, Twist2D, wrap_angle

_PI = math.pi
_TWO_PI = 2.0 * math.pi


class PhysicsError(Exception):
    pass


class SimulationDiverged(PhysicsError):
    """A state variable became non-finite; carries the last valid state."""

    def __init__(self, message: str, last_valid: dict):
        super().__init__(message)
        self.last_valid = last_valid


class InterpenetrationFault(PhysicsError):
    """A robot sank deeper than one radius into the box."""

    def __init__(self, robot_index: int, time: float):
        super().__init__(
            f"robot {robot_index} interpenetrates the box at t={time:.3f}s"
        )
        self.robot_index = robot_index


class Wrench(NamedTuple):
    fx: float
    fy: float
    mz: float


@dataclass(slots=True)
class TerrainParams:
    """Inclined-plane surface description.

    ``incline_deg`` is the slope magnitude (sign conventions belong to the
    mission setup, which orients ``downhill_dir``).  ``downhill_dir`` is the
    world-frame unit vector along which the in-plane gravity component acts.
    """

    incline_deg: float = 0.0
    mu_static: float = 0.9
    mu_dynamic: float = 0.1
    gravity: float = 9.81
    downhill_dir: tuple[float, float] = (1.0, 0.0)

    def __post_init__(self) -> None:
        if not (0.0 <= self.mu_dynamic <= self.mu_static):
            raise ValueError(
                f"need 0 <= mu_dynamic <= mu_static, got "
                f"{self.mu_dynamic} / {self.mu_static}"
            )
        if self.gravity <= 0.0:
            raise ValueError("gravity must be positive")
        dx, dy = self.downhill_dir
        norm = math.hypot(dx, dy)
        if norm == 0.0:
            raise ValueError("downhill_dir must be a nonzero vector")
        self.downhill_dir = (dx / norm, dy / norm)

    @property
    def incline_rad(self) -> float:
        return math.radians(abs(self.incline_deg))


@dataclass(slots=True)
class BoxBody:
    """Rectangular payload.

    ``length`` is the long dimension and spans the box frame's lateral (w)
    axis; ``width`` is the short dimension and spans the heading (ell) axis,
    so straight travel moves the box broadside with its long edges leading
    and trailing.
    """

    length: float = 1.35
    width: float = 0.35
    mass: float = 2.0
    pose: Pose2D = field(default_factory=Pose2D)
    twist: Twist2D = field(default_factory=Twist2D)

    def __post_init__(self) -> None:
        if self.mass <= 0.0:
            raise ValueError("box mass must be positive")
        if self.length < self.width:
            raise ValueError("box length must be the long dimension")

    @property
    def inertia(self) -> float:
        return self.mass * (self.length**2 + self.width**2) / 12.0

    @property
    def half_diagonal(self) -> float:
        return 0.5 * math.hypot(self.length, self.width)


@dataclass(slots=True)
class RobotBody:
    """Velocity-controlled differential-drive disk.

    The drive follows a linear motor force-speed line: the achieved speed
    is the command scaled by (1 - opposing_load / motor_stall_force),
    where the opposing load is the component of the last contact reaction
    that acts against the commanded direction of travel.  A free robot
    tracks its command exactly; an overloaded robot does not park -- it
    keeps creeping at ``motor_creep_frac`` of the command, building
    contact force up to the wheel traction cap.  ``load_fx``/``load_fy``
    hold the force the robot applied to the box on the previous step
    (world frame) and are updated by the integrator.
    """

    radius: float = 0.105
    v_limits: tuple[float, float] = (-0.22, 0.22)
    omega_limits: tuple[float, float] = (-2.84, 2.84)
    pose: Pose2D = field(default_factory=Pose2D)
    v_cmd: float = 0.0
    omega_cmd: float = 0.0
    load_fx: float = 0.0
    load_fy: float = 0.0

    def __post_init__(self) -> None:
        if self.radius <= 0.0:
            raise ValueError("robot radius must be positive")
        if self.v_limits[0] > self.v_limits[1]:
            raise ValueError("v_limits out of order")
        if self.omega_limits[0] > self.omega_limits[1]:
            raise ValueError("omega_limits out of order")


@dataclass(slots=True)
class PhysicsParams:
    """Fixed simulation constants.

    Contact damping is capped at ``mass/dt`` per contact inside the
    integrator so that very light boxes stay inside the explicit-integration
    stability region; the configured value applies unchanged to every box
    used by the bundled studies.

    ``traction_force_limit`` is the largest force a robot's wheels can
    transmit through a contact before they slip.  The contact force
    saturates there, and a robot whose penetration corresponds to more than
    that force is pushed back out along the contact normal (the wheels
    lose ground, the chassis does not sink further).  The box can likewise
    shove a stalled robot backwards once it presses harder than the wheels
    can hold.

    ``motor_stall_force`` sets the slope of the drive's force-speed line:
    achieved speed falls off linearly with opposing load on this scale.
    ``motor_creep_frac`` floors that line -- an overloaded drive creeps at
    this fraction of its command instead of parking, so a formation leaning
    on a stuck box keeps loading the contact until either the box yields
    or the wheels reach the traction cap and skid.

    ``robot_mass`` only enters through that same load line: on an incline
    a robot's drive also carries the robot's own weight, so any motion
    with an uphill component loses speed and downhill motion runs at the
    command (the drive is velocity-governed, it never overspeeds).

    A per-contact momentum cap keeps the discrete contact inelastic: one
    step's impulse never drives the box's contact point faster than the
    robot approaches it, beyond a small penetration-recovery allowance
    (``penetration_recovery_rate`` times the current penetration), using
    the lever-arm effective mass at the point.  Boxes of ordinary mass
    never reach the cap -- spring and damper govern them unchanged -- but
    a near-massless box would otherwise ricochet between its cage robots,
    gaining speed from the spring on every bounce.
    """

    dt: float = 1e-3
    contact_stiffness: float = 5000.0
    contact_damping: float = 50.0
    penetration_recovery_rate: float = 50.0  # 1/s
    mu_robot_box: float = 0.3
    traction_force_limit: float = 30.0
    motor_stall_force: float = 6.2
    motor_creep_frac: float = 0.05
    robot_mass: float = 2.5
    stick_speed: float = 1e-4
    omega_reg: float = 1e-3
    slip_reg: float = 1e-3
    collision_tolerance: float = 2e-3


@dataclass(slots=True)
class ContactReport:
    """One robot-box contact: normal points from the robot into the box."""

    robot_index: int
    point: tuple[float, float]
    normal: tuple[float, float]
    penetration: float
    f_normal: float
    f_tangential: float


@dataclass(slots=True)
class WorldState:
    box: BoxBody
    robots: list[RobotBody]
    terrain: TerrainParams
    params: PhysicsParams = field(default_factory=PhysicsParams)
    time: float = 0.0
    step_count: int = 0

    def __post_init__(self) -> None:
        for rb in self.robots:
            if self.box.length < 4.0 * rb.radius:
                raise ValueError(
                    "box length must fit two robot diameters along an edge"
                )


def _contact(
    idx: int,
    t: float,
    rx: float,
    ry: float,
    rth: float,
    rv: float,
    bx: float,
    by: float,
    cth: float,
    sth: float,
    bvx: float,
    bvy: float,
    bom: float,
    ha: float,
    hl: float,
    radius: float,
    kc: float,
    cc: float,
    mu: float,
    slip_reg: float,
    fn_cap: float,
    inv_m: float,
    inv_i: float,
    rec: float,
    h: float,
):
    """Penalty contact between one robot disk and the box rectangle.

    Returns None when separated, else the tuple
    (fx, fy, qx, qy, f_normal, f_tangential, penetration, nx, ny)
    where (fx, fy) act on the box at world point (qx, qy) and (nx, ny) is
    the inward (robot-to-box) unit normal.  The normal force saturates at
    ``fn_cap`` (wheel traction limit) and at the one-step momentum cap
    (see PhysicsParams) computed from ``inv_m``/``inv_i`` at the point.
    """
    dx = rx - bx
    dy = ry - by
    ell = cth * dx + sth * dy
    w = -sth * dx + cth * dy
    qell = -ha if ell < -ha else (ha if ell > ha else ell)
    qw = -hl if w < -hl else (hl if w > hl else w)
    ddl = ell - qell
    ddw = w - qw
    if ddl == 0.0 and ddw == 0.0:
        # center inside the rectangle: deeper than one radius
        raise InterpenetrationFault(idx, t)
    d2 = ddl * ddl + ddw * ddw
    if d2 >= radius * radius:
        return None
    d = math.sqrt(d2)
    pen = radius - d
    nl = -ddl / d
    nw = -ddw / d
    nx = cth * nl - sth * nw
    ny = sth * nl + cth * nw
    qx = bx + cth * qell - sth * qw
    qy = by + sth * qell + cth * qw
    relx = rv * math.cos(rth) - (bvx - bom * (qy - by))
    rely = rv * math.sin(rth) - (bvy + bom * (qx - bx))
    closing = relx * nx + rely * ny
    fn = kc * pen + cc * closing
    if fn < 0.0:
        fn = 0.0
    else:
        rtn = (qx - bx) * ny - (qy - by) * nx
        meff = 1.0 / (inv_m + rtn * rtn * inv_i)
        cap = meff * ((closing if closing > 0.0 else 0.0) + rec * pen) / h
        if fn > cap:
            fn = cap
        if fn > fn_cap:
            fn = fn_cap
    slip = -relx * ny + rely * nx  # tangential component, t = (-ny, nx)
    scale = slip / slip_reg
    if scale > 1.0:
        scale = 1.0
    elif scale < -1.0:
        scale = -1.0
    ft = mu * fn * scale
    return (
        fn * nx - ft * ny,
        fn * ny + ft * nx,
        qx,
        qy,
        fn,
        ft,
        pen,
        nx,
        ny,
    )


def _ground_friction(
    bvx: float,
    bvy: float,
    bom: float,
    ax: float,
    ay: float,
    normal_load: float,
    mu_s: float,
    mu_d: float,
    r_eff: float,
    stick_speed: float,
    omega_reg: float,
):
    """Stick/slip ground reaction for applied force (ax, ay).

    Translation and rotation share one contact patch, so the two slip
    states are coupled through the generalized surface speed
    sqrt(v^2 + (omega*r_eff)^2): a rotating box has every support point
    sliding, which both denies it a static linear anchor and dilutes the
    linear kinetic force by v/slip (a fast-spinning slow-moving box feels
    almost no net sideways friction).  Rotation has no static cone of its
    own -- support is point-like for torque purposes -- so spin resistance
    is the kinetic plateau (2/3)*mu_d*N*r_eff, linearly regularized below
    ``omega_reg`` and diluted while the box translates.

    Returns (ffx, ffy, fmz, stick_linear).
    """
    speed2 = bvx * bvx + bvy * bvy
    srot = bom * r_eff
    slip2 = speed2 + srot * srot
    stick_lin = False
    if slip2 < stick_speed * stick_speed:
        cap = mu_s * normal_load
        if ax * ax + ay * ay <= cap * cap:
            ffx, ffy = -ax, -ay
            stick_lin = True
        else:
            # breakaway: kinetic friction opposing the applied force
            amag = math.sqrt(ax * ax + ay * ay)
            k = mu_d * normal_load / amag
            ffx, ffy = -ax * k, -ay * k
    else:
        slip = math.sqrt(slip2)
        k = mu_d * normal_load / slip
        ffx, ffy = -bvx * k, -bvy * k

    spin_slip = math.sqrt(bom * bom + speed2 / (r_eff * r_eff))
    if spin_slip < omega_reg:
        spin_slip = omega_reg
    fmz = -(2.0 / 3.0) * mu_d * normal_load * r_eff * (bom / spin_slip)
    return ffx, ffy, fmz, stick_lin


def advance(
    world: WorldState,
    commands: Optional[Sequence[tuple[float, float]]] = None,
    n_steps: int = 1,
    dt: Optional[float] = None,
) -> WorldState:
    """Run ``n_steps`` physics steps holding ``commands`` constant.

    ``commands`` is one (v, omega) pair per robot, clamped to hardware
    limits before integration; None keeps the previous commands.  Mutates
    and returns ``world``.
    """
    p = world.params
    h = p.dt if dt is None else dt
    box = world.box
    robots = world.robots
    terrain = world.terrain

    nrob = len(robots)
    if commands is not None:
        if len(commands) != nrob:
            raise ValueError("need one command per robot")
        for rb, (v, om) in zip(robots, commands):
            lo, hi = rb.v_limits
            rb.v_cmd = lo if v < lo else (hi if v > hi else v)
            lo, hi = rb.omega_limits
            rb.omega_cmd = lo if om < lo else (hi if om > hi else om)

    # unpack to locals (hot loop)
    cos = math.cos
    sin = math.sin
    bx = box.pose.x
    by = box.pose.y
    bth = box.pose.theta
    bvx = box.twist.vx
    bvy = box.twist.vy
    bom = box.twist.omega
    guard = bx + by + bth + bvx + bvy + bom
    if guard - guard != 0.0:
        raise SimulationDiverged(
            "non-finite box state on entry",
            {"time": world.time, "box": (bx, by, bth, bvx, bvy, bom)},
        )

    mass = box.mass
    inv_m = 1.0 / mass
    inv_i = 1.0 / box.inertia
    ha = 0.5 * box.width
    hl = 0.5 * box.length
    r_eff = box.half_diagonal
    inv_r2 = 1.0 / (r_eff * r_eff)

    alpha = terrain.incline_rad
    normal_load = mass * terrain.gravity * cos(alpha)
    spin_plateau = (2.0 / 3.0) * terrain.mu_dynamic * normal_load * r_eff
    g_inplane = mass * terrain.gravity * sin(alpha)
    gfx = g_inplane * terrain.downhill_dir[0]
    gfy = g_inplane * terrain.downhill_dir[1]
    mu_s = terrain.mu_static
    mu_d = terrain.mu_dynamic

    kc = p.contact_stiffness
    cc = p.contact_damping
    if cc > mass / h:
        cc = mass / h
    mu_rb = p.mu_robot_box
    slip_reg = p.slip_reg
    stick_speed = p.stick_speed
    omega_reg = p.omega_reg
    trac = p.traction_force_limit
    pen_cap = trac / kc
    rec_rate = p.penetration_recovery_rate
    stall = p.motor_stall_force
    creep = p.motor_creep_frac
    g_robot = p.robot_mass * terrain.gravity * sin(alpha)
    ddx = terrain.downhill_dir[0]
    ddy = terrain.downhill_dir[1]

    rxs = [rb.pose.x for rb in robots]
    rys = [rb.pose.y for rb in robots]
    rths = [rb.pose.theta for rb in robots]
    rvs = [rb.v_cmd for rb in robots]
    roms = [rb.omega_cmd for rb in robots]
    rads = [rb.radius for rb in robots]
    lfxs = [rb.load_fx for rb in robots]
    lfys = [rb.load_fy for rb in robots]

    t = world.time
    for _ in range(n_steps):
        p0, p1, p2, p3, p4, p5 = bx, by, bth, bvx, bvy, bom
        cth = cos(bth)
        sth = sin(bth)
        cfx = 0.0
        cfy = 0.0
        cmz = 0.0
        for i in range(nrob):
            v = rvs[i]
            th = rths[i]
            if v != 0.0:
                cr = cos(th)
                sr = sin(th)
                # motor line: load opposing the drive direction saps speed;
                # on an incline the robot's own weight joins the load when
                # the motion has an uphill component
                opp = lfxs[i] * cr + lfys[i] * sr
                if g_robot != 0.0:
                    opp -= g_robot * (cr * ddx + sr * ddy)
                if v < 0.0:
                    opp = -opp
                if opp > 0.0:
                    fac = 1.0 - opp / stall
                    if fac < creep:
                        fac = creep
                    v = v * fac
                rxs[i] += v * cr * h
                rys[i] += v * sr * h
            om = roms[i]
            if om != 0.0:
                th += om * h
                if th > _PI or th <= -_PI:
                    th = _PI - (_PI - th) % _TWO_PI
                rths[i] = th
            hit = _contact(
                i, t, rxs[i], rys[i], th, v,
                bx, by, cth, sth, bvx, bvy, bom,
                ha, hl, rads[i], kc, cc, mu_rb, slip_reg, trac,
                inv_m, inv_i, rec_rate, h,
            )
            if hit is not None:
                fx, fy, qx, qy = hit[0], hit[1], hit[2], hit[3]
                cfx += fx
                cfy += fy
                cmz += (qx - bx) * fy - (qy - by) * fx
                # the motor feels the sustained (elastic) load, not the
                # impact transient from the damping term
                pen = hit[6]
                el = kc * pen
                if el > trac:
                    el = trac
                lfxs[i] = el * hit[7]
                lfys[i] = el * hit[8]
                if pen > pen_cap:
                    # wheels slip: the chassis cannot sink past the
                    # penetration that saturates the traction limit
                    over = pen - pen_cap
                    rxs[i] -= over * hit[7]
                    rys[i] -= over * hit[8]
            else:
                lfxs[i] = 0.0
                lfys[i] = 0.0

        ax = cfx + gfx
        ay = cfy + gfy
        ffx, ffy, _, stick_lin = _ground_friction(
            bvx, bvy, bom, ax, ay,
            normal_load, mu_s, mu_d, r_eff, stick_speed, omega_reg,
        )
        if stick_lin:
            bvx = 0.0
            bvy = 0.0
        else:
            bvx += (ax + ffx) * inv_m * h
            bvy += (ay + ffy) * inv_m * h
            bx += bvx * h
            by += bvy * h
        # spin friction integrates implicitly: the regularized viscous
        # plateau is far stiffer than the explicit stability limit for
        # mid-weight boxes, and the implicit form is unconditionally
        # stable while matching the same torque law to first order
        spin_slip = math.sqrt(bom * bom + (bvx * bvx + bvy * bvy) * inv_r2)
        if spin_slip < omega_reg:
            spin_slip = omega_reg
        visc = spin_plateau / spin_slip
        bom = (bom + cmz * inv_i * h) / (1.0 + visc * inv_i * h)
        if bom != 0.0:
            bth += bom * h
            if bth > _PI or bth <= -_PI:
                bth = _PI - (_PI - bth) % _TWO_PI

        t += h
        guard = bx + by + bth + bvx + bvy + bom
        if guard - guard != 0.0:
            raise SimulationDiverged(
                f"box state diverged at t={t:.4f}s",
                {"time": t - h, "box": (p0, p1, p2, p3, p4, p5)},
            )

    box.pose.x = bx
    box.pose.y = by
    box.pose.theta = bth
    box.twist.vx = bvx
    box.twist.vy = bvy
    box.twist.omega = bom
    for i, rb in enumerate(robots):
        rb.pose.x = rxs[i]
        rb.pose.y = rys[i]
        rb.pose.theta = rths[i]
        rb.load_fx = lfxs[i]
        rb.load_fy = lfys[i]
    world.time = t
    world.step_count += n_steps
    return world


def step(
    world: WorldState,
    commands: Optional[Sequence[tuple[float, float]]] = None,
    dt: Optional[float] = None,
) -> WorldState:
    """Advance the world by a single physics step."""
    return advance(world, commands, 1, dt)


def robot_integrate(robot: RobotBody, dt: float) -> RobotBody:
    """Euler update of the unicycle kinematics for one robot.

    Position integrates with the pre-step heading, then the heading
    advances, which keeps the non-holonomic constraint
    sin(theta)*dx - cos(theta)*dy = 0 exact in floating point.
    """
    v = robot.v_cmd
    th = robot.pose.theta
    if v != 0.0:
        robot.pose.x += v * math.cos(th) * dt
        robot.pose.y += v * math.sin(th) * dt
    om = robot.omega_cmd
    if om != 0.0:
        robot.pose.theta = wrap_angle(th + om * dt)
    return robot


def contact_forces(world: WorldState) -> list[ContactReport]:
    """Current robot-box contacts, ordered by robot index."""
    box = world.box
    p = world.params
    cth = math.cos(box.pose.theta)
    sth = math.sin(box.pose.theta)
    cc = p.contact_damping
    if cc > box.mass / p.dt:
        cc = box.mass / p.dt
    reports = []
    terrain = world.terrain
    g_robot = p.robot_mass * terrain.gravity * math.sin(terrain.incline_rad)
    for i, rb in enumerate(world.robots):
        v = rb.v_cmd
        if v != 0.0:
            # same motor line as the integrator
            opp = rb.load_fx * math.cos(rb.pose.theta) + rb.load_fy * math.sin(
                rb.pose.theta
            )
            if g_robot != 0.0:
                opp -= g_robot * (
                    math.cos(rb.pose.theta) * terrain.downhill_dir[0]
                    + math.sin(rb.pose.theta) * terrain.downhill_dir[1]
                )
            if v < 0.0:
                opp = -opp
            if opp > 0.0:
                fac = 1.0 - opp / p.motor_stall_force
                if fac < p.motor_creep_frac:
                    fac = p.motor_creep_frac
                v = v * fac
        hit = _contact(
            i, world.time,
            rb.pose.x, rb.pose.y, rb.pose.theta, v,
            box.pose.x, box.pose.y, cth, sth,
            box.twist.vx, box.twist.vy, box.twist.omega,
            0.5 * box.width, 0.5 * box.length, rb.radius,
            p.contact_stiffness, cc, p.mu_robot_box, p.slip_reg,
            p.traction_force_limit,
            1.0 / box.mass, 1.0 / box.inertia,
            p.penetration_recovery_rate, p.dt,
        )
        if hit is not None:
            reports.append(
                ContactReport(
                    robot_index=i,
                    point=(hit[2], hit[3]),
                    normal=(hit[7], hit[8]),
                    penetration=hit[6],
                    f_normal=hit[4],
                    f_tangential=hit[5],
                )
            )
    return reports


def ground_friction_wrench(
    box: BoxBody,
    terrain: TerrainParams,
    applied: Wrench = Wrench(0.0, 0.0, 0.0),
    stick_speed: float = 1e-4,
    omega_reg: float = 1e-3,
) -> Wrench:
    """Ground reaction wrench on the box for a given applied wrench.

    When the whole contact patch is inside the stick regime (generalized
    surface speed sqrt(v^2 + (omega*r_eff)^2) below ``stick_speed``) and
    the applied force fits inside the static cone, the linear reaction
    cancels it exactly (sticking).  Otherwise the kinetic Coulomb force
    opposes the sliding velocity, diluted by rotation; spin resistance is
    the kinetic plateau (2/3)*mu_d*m*g*cos(alpha)*r_eff, regularized below
    ``omega_reg`` and diluted by translation.  ``applied.mz`` does not
    enter: rotation has no static cone.
    """
    alpha = terrain.incline_rad
    normal_load = box.mass * terrain.gravity * math.cos(alpha)
    ffx, ffy, fmz, _ = _ground_friction(
        box.twist.vx, box.twist.vy, box.twist.omega,
        applied.fx, applied.fy,
        normal_load, terrain.mu_static, terrain.mu_dynamic,
        box.half_diagonal, stick_speed, omega_reg,
    )
    return Wrench(ffx, ffy, fmz)


def gravity_wrench(box: BoxBody, terrain: TerrainParams) -> Wrench:
    """In-plane gravity force on the box (applied at the centroid)."""
    g_inplane = box.mass * terrain.gravity * math.sin(terrain.incline_rad)
    return Wrench(
        g_inplane * terrain.downhill_dir[0],
        g_inplane * terrain.downhill_dir[1],
        0.0,
    )


def detect_robot_collisions(
    robots: Sequence[RobotBody], tolerance: float = 2e-3
) -> list[tuple[int, int]]:
    """Index pairs (i < j) of robots whose disks overlap beyond tolerance."""
    pairs = []
    n = len(robots)
    for i in range(n):
        pi = robots[i].pose
        ri = robots[i].radius
        for j in range(i + 1, n):
            pj = robots[j].pose
            limit = ri + robots[j].radius - tolerance
            dx = pi.x - pj.x
            dy = pi.y - pj.y
            if dx * dx + dy * dy < limit * limit:
                pairs.append((i, j))
    return pairs
