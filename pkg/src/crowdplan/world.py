"""Deterministic crowd simulation world at 50 Hz.

Social-force pedestrians ping-pong along their routes, a kinematic
unicycle robot tracks the planned trajectory through a body-frame error
law, and a ledger counts active-collision ticks (contact while the robot
moves at or above the damage-threshold speed).
"""

import enum
from dataclasses import dataclass, field

import numpy as np

from . import kernels
from .costs import ObstacleField
from .traj import PiecewisePolyTraj

DT = 0.02                 # 50 Hz tick
V_SAFE = 0.4              # active-collision speed threshold [m/s]
GOAL_TOL = 0.5            # episode goal radius [m]

# Social force parameters (acceleration-space variant).
TAU_RELAX = 0.5
REP_A = 3.0
REP_B = 0.35
WALL_A = 5.0
WALL_B = 0.1
PED_GOAL_TOL = 0.3
SPEED_CAP = 1.3           # multiple of desired speed
DESIRED_SPEED_RANGE = (0.8, 1.4)

# Trajectory tracking gains and command limits.
K_X, K_Y, K_TH = 1.0, 4.0, 2.0
V_CMD_MIN, V_CMD_MAX = -0.2, 1.2
W_CMD_MAX = 1.5


def wrap_angle(a: float) -> float:
    return (a + np.pi) % (2.0 * np.pi) - np.pi


@dataclass
class Pedestrian:
    """Read view of one pedestrian's state and route."""

    pos: np.ndarray
    vel: np.ndarray
    goal: np.ndarray
    desired_speed: float
    radius: float
    route: list


class Crowd:
    """Array-of-structs pedestrian state for the hot stepping loop."""

    def __init__(self, positions, velocities, routes, desired_speeds, radii):
        self.pos = np.ascontiguousarray(positions, dtype=float).reshape(-1, 2)
        self.vel = np.ascontiguousarray(velocities, dtype=float).reshape(-1, 2)
        n = len(self.pos)
        self.routes = [np.asarray(r, dtype=float).reshape(-1, 2) for r in routes]
        if any(len(r) < 1 for r in self.routes):
            raise ValueError("each route needs at least one goal")
        self.route_idx = np.zeros(n, dtype=np.int64)
        self.route_dir = np.ones(n, dtype=np.int64)
        self.desired_speed = np.ascontiguousarray(desired_speeds, dtype=float)
        self.radius = np.ascontiguousarray(radii, dtype=float)
        self.goal = np.array([r[0] for r in self.routes], dtype=float)

    def __len__(self):
        return len(self.pos)

    def advance_goals(self):
        """Ping-pong route goals for pedestrians within tolerance."""
        for i in range(len(self.pos)):
            route = self.routes[i]
            if len(route) == 1:
                continue
            if np.hypot(*(self.goal[i] - self.pos[i])) <= PED_GOAL_TOL:
                nxt = self.route_idx[i] + self.route_dir[i]
                if nxt < 0 or nxt >= len(route):
                    self.route_dir[i] = -self.route_dir[i]
                    nxt = self.route_idx[i] + self.route_dir[i]
                self.route_idx[i] = nxt
                self.goal[i] = route[nxt]

    def snapshot_rows(self) -> np.ndarray:
        """(N, 5) rows (px, py, vx, vy, radius) for the planner."""
        return np.hstack([self.pos, self.vel, self.radius[:, None]])


@dataclass
class RobotPlant:
    """Kinematic unicycle with command limits."""

    pose: np.ndarray                  # (x, y, theta)
    body_vel: np.ndarray              # (v, omega)
    radius: float = 0.4
    v_limit: float = V_CMD_MAX
    v_reverse_limit: float = -V_CMD_MIN
    w_limit: float = W_CMD_MAX

    @property
    def position(self) -> np.ndarray:
        return self.pose[:2]

    @property
    def heading(self) -> float:
        return float(self.pose[2])

    @property
    def speed(self) -> float:
        return abs(float(self.body_vel[0]))

    def velocity_vector(self) -> np.ndarray:
        v = float(self.body_vel[0])
        return np.array([v * np.cos(self.pose[2]), v * np.sin(self.pose[2])])


@dataclass
class CollisionLedger:
    tcc: int = 0
    collided: bool = False
    contact: bool = False     # any contact on the latest tick
    active: bool = False      # contact at speed >= V_SAFE on the latest tick

    def record(self, contact: bool, speed: float):
        self.contact = contact
        self.active = contact and speed >= V_SAFE
        if self.active:
            self.tcc += 1
            self.collided = True


class EpisodeStatus(enum.Enum):
    RUNNING = "Running"
    GOAL_REACHED = "GoalReached"
    TIMEOUT = "Timeout"


@dataclass
class WorldState:
    """Full simulation state; stepped in place at exact DT multiples."""

    crowd: Crowd
    robot: RobotPlant
    field: ObstacleField
    rng: np.random.Generator
    ledger: CollisionLedger = field(default_factory=CollisionLedger)
    ticks: int = 0
    peds_see_robot: bool = False

    @property
    def time(self) -> float:
        return self.ticks * DT

    @property
    def pedestrians(self) -> list:
        c = self.crowd
        return [Pedestrian(c.pos[i].copy(), c.vel[i].copy(), c.goal[i].copy(),
                           float(c.desired_speed[i]), float(c.radius[i]),
                           [g.copy() for g in c.routes[i]])
                for i in range(len(c))]

    def nearest_ped_distance(self) -> float:
        if len(self.crowd) == 0:
            return np.inf
        d = np.linalg.norm(self.crowd.pos - self.robot.position, axis=1)
        return float(np.min(d))


def sfm_accel(ped: Pedestrian, neighbors: list, field: ObstacleField) -> np.ndarray:
    """Social-force acceleration on a single pedestrian."""
    n = 1 + len(neighbors)
    pos = np.zeros((n, 2))
    vel = np.zeros((n, 2))
    radii = np.zeros(n)
    pos[0], vel[0], radii[0] = ped.pos, ped.vel, ped.radius
    for k, nb in enumerate(neighbors, start=1):
        pos[k], vel[k], radii[k] = nb.pos, nb.vel, nb.radius
    goals = np.tile(ped.goal, (n, 1))
    speeds = np.full(n, ped.desired_speed)
    active = np.zeros(n, dtype=bool)
    active[0] = np.hypot(*(ped.goal - ped.pos)) > PED_GOAL_TOL
    acc = kernels.sfm_accelerations(
        pos, vel, goals, speeds, radii, active, field.esdf,
        field.origin[0], field.origin[1], field.resolution,
        TAU_RELAX, REP_A, REP_B, WALL_A, WALL_B, np.zeros(2), 0.0, False)
    return acc[0]


def tracking_command(robot: RobotPlant, ref) -> tuple[float, float]:
    """Body-frame error law against a reference flat state."""
    th = robot.heading
    c, s = np.cos(th), np.sin(th)
    dx = ref.pos[0] - robot.pose[0]
    dy = ref.pos[1] - robot.pose[1]
    e_x = c * dx + s * dy
    e_y = -s * dx + c * dy
    e_th = wrap_angle(ref.yaw - th)
    v_ref = float(np.hypot(ref.vel[0], ref.vel[1]))
    v_cmd = v_ref * np.cos(e_th) + K_X * e_x
    w_cmd = ref.yaw_rate + K_Y * v_ref * e_y + K_TH * np.sin(e_th)
    v_cmd = float(np.clip(v_cmd, V_CMD_MIN, V_CMD_MAX))
    w_cmd = float(np.clip(w_cmd, -W_CMD_MAX, W_CMD_MAX))
    return v_cmd, w_cmd


def world_step(state: WorldState, planned_traj: PiecewisePolyTraj | None,
               plan_age: float) -> WorldState:
    """Advance the world one tick; mutates and returns state."""
    crowd = state.crowd
    if len(crowd) > 0:
        crowd.advance_goals()
        active = np.linalg.norm(crowd.goal - crowd.pos, axis=1) > PED_GOAL_TOL
        acc = kernels.sfm_accelerations(
            crowd.pos, crowd.vel, crowd.goal, crowd.desired_speed,
            crowd.radius, active, state.field.esdf,
            state.field.origin[0], state.field.origin[1],
            state.field.resolution, TAU_RELAX, REP_A, REP_B, WALL_A, WALL_B,
            state.robot.position.copy(), state.robot.radius,
            state.peds_see_robot)
        crowd.vel += acc * DT
        speed = np.linalg.norm(crowd.vel, axis=1)
        cap = SPEED_CAP * crowd.desired_speed
        over = speed > cap
        if np.any(over):
            crowd.vel[over] *= (cap[over] / speed[over])[:, None]
        crowd.pos += crowd.vel * DT

    robot = state.robot
    if planned_traj is not None:
        age = float(np.clip(plan_age, 0.0, planned_traj.total_duration))
        ref = planned_traj.flat_state(age)
        v_cmd, w_cmd = tracking_command(robot, ref)
    else:
        v_cmd, w_cmd = 0.0, 0.0
    th = robot.heading
    robot.pose[0] += v_cmd * np.cos(th) * DT
    robot.pose[1] += v_cmd * np.sin(th) * DT
    robot.pose[2] = wrap_angle(th + w_cmd * DT)
    robot.body_vel[0] = v_cmd
    robot.body_vel[1] = w_cmd

    contact = state.field.distance(robot.position) < robot.radius
    if not contact and len(crowd) > 0:
        dist = np.linalg.norm(crowd.pos - robot.position, axis=1)
        contact = bool(np.any(dist < robot.radius + crowd.radius))
    state.ledger.record(contact, robot.speed)

    state.ticks += 1
    return state


def episode_status(state: WorldState, goal, elapsed: float,
                   time_limit: float) -> EpisodeStatus:
    """Goal test with the terminal tolerance, then the time budget."""
    if np.linalg.norm(state.robot.position - np.asarray(goal, float)) <= GOAL_TOL:
        return EpisodeStatus.GOAL_REACHED
    if elapsed > time_limit:
        return EpisodeStatus.TIMEOUT
    return EpisodeStatus.RUNNING
