"""Scenario library: map building, pedestrian routes, seeded instantiation.

A scenario file fixes the world geometry and pedestrian routes; the run
seed resolves everything stochastic (robot start/goal in endpoint mode,
pedestrian desired speeds and starting phases).  The training world is a
cross of two 3 m wide corridors with 17 pedestrians ping-ponging between
the corridor ends.
"""

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .costs import ObstacleField
from .world import Crowd, DESIRED_SPEED_RANGE, RobotPlant, WorldState


class ScenarioInvalid(Exception):
    """Malformed scenario file or inconsistent scenario contents."""


@dataclass(frozen=True)
class MapSpec:
    bounds: tuple              # (xmin, ymin, xmax, ymax)
    resolution: float = 0.1
    background: str = "free"   # boxes paint the opposite of the background
    boxes: tuple = ()

    def build(self) -> ObstacleField:
        xmin, ymin, xmax, ymax = self.bounds
        nx = int(round((xmax - xmin) / self.resolution))
        ny = int(round((ymax - ymin) / self.resolution))
        if nx <= 0 or ny <= 0:
            raise ScenarioInvalid("empty map bounds")
        xs = xmin + (np.arange(nx) + 0.5) * self.resolution
        ys = ymin + (np.arange(ny) + 0.5) * self.resolution
        X, Y = np.meshgrid(xs, ys, indexing="ij")
        if self.background == "free":
            occ = np.zeros((nx, ny), dtype=bool)
            for x0, y0, x1, y1 in self.boxes:
                occ |= (X >= x0) & (X <= x1) & (Y >= y0) & (Y <= y1)
        elif self.background == "occupied":
            occ = np.ones((nx, ny), dtype=bool)
            for x0, y0, x1, y1 in self.boxes:
                occ &= ~((X >= x0) & (X <= x1) & (Y >= y0) & (Y <= y1))
        else:
            raise ScenarioInvalid(f"unknown background {self.background!r}")
        return ObstacleField(occ, self.resolution, (xmin, ymin))


@dataclass(frozen=True)
class PedSpec:
    route: tuple               # ping-pong goal list ((x, y), ...)
    radius: float = 0.3
    desired_speed: float | None = None   # None: drawn per seed


@dataclass(frozen=True)
class Scenario:
    name: str
    map_spec: MapSpec
    pedestrians: tuple
    robot_start: tuple | None      # None: sampled from endpoints per seed
    robot_goal: tuple | None
    endpoints: tuple = ()
    path_via: tuple = ()           # waypoints inserted into the global path
    time_limit: float = 60.0
    seeds: tuple = tuple(range(100))

    def __post_init__(self):
        if len(self.seeds) == 0:
            raise ScenarioInvalid("scenario needs at least one seed")
        if self.robot_start is None and len(self.endpoints) < 2:
            raise ScenarioInvalid("endpoint mode needs >= 2 endpoints")

    def to_json(self) -> str:
        return json.dumps({
            "name": self.name,
            "map": {"bounds": list(self.map_spec.bounds),
                    "resolution": self.map_spec.resolution,
                    "background": self.map_spec.background,
                    "boxes": [list(b) for b in self.map_spec.boxes]},
            "pedestrians": [{"route": [list(p) for p in ped.route],
                             "radius": ped.radius,
                             "desired_speed": ped.desired_speed}
                            for ped in self.pedestrians],
            "robot": {"start": list(self.robot_start) if self.robot_start else None,
                      "goal": list(self.robot_goal) if self.robot_goal else None,
                      "endpoints": [list(e) for e in self.endpoints]},
            "path_via": [list(p) for p in self.path_via],
            "time_limit": self.time_limit,
            "seeds": list(self.seeds),
        }, indent=1)

    @staticmethod
    def from_json(text: str) -> "Scenario":
        try:
            doc = json.loads(text)
            m = doc["map"]
            robot = doc["robot"]
            return Scenario(
                name=doc["name"],
                map_spec=MapSpec(tuple(m["bounds"]), float(m["resolution"]),
                                 m.get("background", "free"),
                                 tuple(tuple(b) for b in m.get("boxes", []))),
                pedestrians=tuple(
                    PedSpec(tuple(tuple(p) for p in ped["route"]),
                            float(ped.get("radius", 0.3)),
                            ped.get("desired_speed"))
                    for ped in doc.get("pedestrians", [])),
                robot_start=tuple(robot["start"]) if robot.get("start") else None,
                robot_goal=tuple(robot["goal"]) if robot.get("goal") else None,
                endpoints=tuple(tuple(e) for e in robot.get("endpoints", [])),
                path_via=tuple(tuple(p) for p in doc.get("path_via", [])),
                time_limit=float(doc.get("time_limit", 60.0)),
                seeds=tuple(doc.get("seeds", range(100))),
            )
        except (KeyError, TypeError, ValueError) as exc:
            raise ScenarioInvalid(f"bad scenario document: {exc}") from exc


def load_scenario(path) -> Scenario:
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ScenarioInvalid(f"cannot read scenario file: {exc}") from exc
    return Scenario.from_json(text)


def _route_arc_point(route: np.ndarray, u: float) -> np.ndarray:
    """Point at fraction u of the route polyline's arc length."""
    seg = np.diff(route, axis=0)
    lengths = np.linalg.norm(seg, axis=1)
    total = lengths.sum()
    if total < 1e-9:
        return route[0].copy()
    target = u * total
    acc = 0.0
    for i, L in enumerate(lengths):
        if target <= acc + L or i == len(lengths) - 1:
            f = (target - acc) / L if L > 1e-9 else 0.0
            return route[i] + f * seg[i]
        acc += L
    return route[-1].copy()


def build_world(scenario: Scenario, rng: np.random.Generator):
    """Instantiate one seeded run: (WorldState, goal, global_path)."""
    field = scenario.map_spec.build()

    if scenario.robot_start is None:
        endpoints = np.asarray(scenario.endpoints, dtype=float)
        i = int(rng.integers(0, len(endpoints)))
        j = int(rng.integers(0, len(endpoints) - 1))
        if j >= i:
            j += 1
        start = endpoints[i]
        goal = endpoints[j]
    else:
        start = np.asarray(scenario.robot_start, dtype=float)
        goal = np.asarray(scenario.robot_goal, dtype=float)

    via = [np.asarray(v, dtype=float) for v in scenario.path_via]
    path_pts = [start] + [v for v in via
                          if np.linalg.norm(v - start) > 1e-9
                          and np.linalg.norm(v - goal) > 1e-9] + [goal]
    global_path = np.asarray(path_pts, dtype=float)

    heading = 0.0
    d0 = global_path[1] - global_path[0]
    if np.hypot(*d0) > 1e-9:
        heading = float(np.arctan2(d0[1], d0[0]))
    robot = RobotPlant(np.array([start[0], start[1], heading]), np.zeros(2))

    n = len(scenario.pedestrians)
    positions = np.zeros((n, 2))
    speeds = np.zeros(n)
    radii = np.zeros(n)
    routes = []
    for k, spec in enumerate(scenario.pedestrians):
        route = np.asarray(spec.route, dtype=float)
        if bool(rng.integers(0, 2)):
            route = route[::-1].copy()
        positions[k] = _route_arc_point(route, float(rng.uniform(0.0, 1.0)))
        speeds[k] = (spec.desired_speed if spec.desired_speed is not None
                     else float(rng.uniform(*DESIRED_SPEED_RANGE)))
        radii[k] = spec.radius
        routes.append(route)
    crowd = Crowd(positions, np.zeros((n, 2)), routes, speeds, radii)

    world = WorldState(crowd, robot, field, rng)
    return world, goal, global_path


# --- Built-in scenario builders (desk-scale re-authorings) ---------------

ARM_HALF = 12.0        # corridor arm length from the junction center [m]
ARM_WIDTH = 3.0
ENDPOINT_INSET = 1.0
N_CORRIDOR_PEDS = 17
_ROUTE_SEED = 12345    # fixed world: routes do not vary across run seeds


def _corridor_endpoints():
    e = ARM_HALF - ENDPOINT_INSET
    return ((-e, 0.0), (e, 0.0), (0.0, -e), (0.0, e))


def training_corridor_template() -> Scenario:
    """Two corridors crossing at a junction with 17 route-bound pedestrians."""
    half = ARM_WIDTH / 2.0
    m = ARM_HALF + 0.5
    map_spec = MapSpec(
        bounds=(-m, -m, m, m), resolution=0.1, background="occupied",
        boxes=((-ARM_HALF, -half, ARM_HALF, half),
               (-half, -ARM_HALF, half, ARM_HALF)))
    endpoints = _corridor_endpoints()
    rng = np.random.default_rng(_ROUTE_SEED)
    peds = []
    for _ in range(N_CORRIDOR_PEDS):
        i = int(rng.integers(0, 4))
        j = int(rng.integers(0, 3))
        if j >= i:
            j += 1
        a = np.array(endpoints[i])
        b = np.array(endpoints[j])
        if np.linalg.norm(a + b) > 1e-9:
            # Ends on different arms: route through the junction.
            route = (tuple(a), (0.0, 0.0), tuple(b))
        else:
            route = (tuple(a), tuple(b))
        peds.append(PedSpec(route=route))
    return Scenario(name="training_corridor", map_spec=map_spec,
                    pedestrians=tuple(peds), robot_start=None,
                    robot_goal=None, endpoints=endpoints,
                    path_via=((0.0, 0.0),))


def make_training_world(seed: int) -> Scenario:
    """Concrete corridor scenario with start/goal resolved from the seed."""
    template = training_corridor_template()
    rng = np.random.default_rng(np.random.SeedSequence([int(seed), 0]))
    endpoints = np.asarray(template.endpoints, dtype=float)
    i = int(rng.integers(0, len(endpoints)))
    j = int(rng.integers(0, len(endpoints) - 1))
    if j >= i:
        j += 1
    return Scenario(name=f"training_corridor_seed{seed}",
                    map_spec=template.map_spec,
                    pedestrians=template.pedestrians,
                    robot_start=tuple(endpoints[i]),
                    robot_goal=tuple(endpoints[j]),
                    endpoints=template.endpoints,
                    path_via=template.path_via,
                    seeds=(int(seed),))


def scene_obstacle_populated() -> Scenario:
    """Open 24 x 16 m field, 9 square obstacles, 19 crossing pedestrians."""
    rng = np.random.default_rng(2001)
    boxes = []
    for _ in range(9):
        cx = float(rng.uniform(-7.0, 7.0))
        cy = float(rng.uniform(-5.0, 5.0))
        s = 0.5
        boxes.append((cx - s, cy - s, cx + s, cy + s))
    peds = []
    for _ in range(19):
        y0 = float(rng.uniform(-6.5, 6.5))
        y1 = float(rng.uniform(-6.5, 6.5))
        if bool(rng.integers(0, 2)):
            route = ((float(rng.uniform(-9, -3)), y0),
                     (float(rng.uniform(3, 9)), y1))
        else:
            x0 = float(rng.uniform(-8, 8))
            x1 = float(rng.uniform(-8, 8))
            route = ((x0, -6.5), (x1, 6.5))
        peds.append(PedSpec(route=route))
    return Scenario(name="scene1_obstacles",
                    map_spec=MapSpec(bounds=(-12.0, -8.0, 12.0, 8.0),
                                     boxes=tuple(boxes)),
                    pedestrians=tuple(peds),
                    robot_start=(-10.0, 0.0), robot_goal=(10.0, 0.0))


def scene_human_dense() -> Scenario:
    """Open obstacle-free field with 31 pedestrians."""
    rng = np.random.default_rng(2002)
    peds = []
    for _ in range(31):
        if bool(rng.integers(0, 2)):
            route = ((float(rng.uniform(-9, -2)), float(rng.uniform(-6, 6))),
                     (float(rng.uniform(2, 9)), float(rng.uniform(-6, 6))))
        else:
            route = ((float(rng.uniform(-8, 8)), -6.0),
                     (float(rng.uniform(-8, 8)), 6.0))
        peds.append(PedSpec(route=route))
    return Scenario(name="scene2_crowd",
                    map_spec=MapSpec(bounds=(-12.0, -8.0, 12.0, 8.0)),
                    pedestrians=tuple(peds),
                    robot_start=(-10.0, 0.0), robot_goal=(10.0, 0.0))


def scene_narrow_indoor() -> Scenario:
    """Two rooms joined by a 1.4 m doorway, 7 pedestrians."""
    wall = 0.4
    gap = 0.7
    boxes = (
        # Outer shell.
        (-11.0, -6.0, 11.0, -5.6), (-11.0, 5.6, 11.0, 6.0),
        (-11.0, -6.0, -10.6, 6.0), (10.6, -6.0, 11.0, 6.0),
        # Dividing wall with a doorway at y = 0.
        (-wall / 2, -6.0, wall / 2, -gap),
        (-wall / 2, gap, wall / 2, 6.0),
    )
    rng = np.random.default_rng(2003)
    peds = []
    for _ in range(7):
        left = (float(rng.uniform(-9, -2)), float(rng.uniform(-4.5, 4.5)))
        right = (float(rng.uniform(2, 9)), float(rng.uniform(-4.5, 4.5)))
        peds.append(PedSpec(route=(left, (0.0, 0.0), right)))
    return Scenario(name="scene3_narrow",
                    map_spec=MapSpec(bounds=(-12.0, -7.0, 12.0, 7.0),
                                     boxes=boxes),
                    pedestrians=tuple(peds),
                    robot_start=(-9.5, 0.0), robot_goal=(9.5, 0.0),
                    path_via=((0.0, 0.0),))


BUILTIN_SCENES = {
    "training_corridor": training_corridor_template,
    "scene1_obstacles": scene_obstacle_populated,
    "scene2_crowd": scene_human_dense,
    "scene3_narrow": scene_narrow_indoor,
}
