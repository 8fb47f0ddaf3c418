"""Policy observation encoding.

Two robot-centered, globally axis-aligned 50x50 grids at 0.1 m resolution
(window +-2.5 m) with the three-level code 0.0 / 0.5 / 1.0, plus the
normalized kinematic state.  A cell is painted when its center lies
inside the painted disc or path stroke.
"""

import json
from dataclasses import dataclass

import numpy as np

from .costs import ObstacleField, PedestrianSnapshot
from .traj import PiecewisePolyTraj
from .world import RobotPlant

GRID = 50
RES = 0.1
HALF = GRID * RES / 2.0          # 2.5 m window half-width
PATH_SAMPLE_DT = 0.02            # 50 Hz path overlay sampling
PRED_HORIZON = 1.0               # pedestrian prediction horizon [s]
PRED_DT = 0.1

FREE, OCCUPIED, PATH = 0.0, 0.5, 1.0
PED_CURRENT, PED_PREDICTED = 0.5, 1.0

# Cell-center offsets from the robot position, shape (GRID, GRID, 2).
_OFFSETS = np.stack(np.meshgrid(
    -HALF + (np.arange(GRID) + 0.5) * RES,
    -HALF + (np.arange(GRID) + 0.5) * RES, indexing="ij"), axis=-1)


@dataclass(frozen=True)
class ObservationTensor:
    static_map: np.ndarray    # (50, 50) float32, indexed [ix, iy]
    ped_map: np.ndarray       # (50, 50) float32
    kin_state: np.ndarray     # (3,) float32: (vx, vy, theta) normalized

    def stacked_maps(self) -> np.ndarray:
        """Channel-stacked maps (2, 50, 50) for the CNN."""
        return np.stack([self.static_map, self.ped_map])


def cell_index(point, robot_pos) -> tuple[int, int]:
    """Window cell containing a global point; may be out of [0, GRID)."""
    rel = np.asarray(point, dtype=float) - np.asarray(robot_pos, dtype=float)
    return (int(np.floor((rel[0] + HALF) / RES)),
            int(np.floor((rel[1] + HALF) / RES)))


def encode_static(field: ObstacleField, robot_pos,
                  prev_traj: PiecewisePolyTraj | None = None,
                  plan_age: float = 0.0) -> np.ndarray:
    """Occupancy in grey with the previous plan overlaid in white."""
    robot_pos = np.asarray(robot_pos, dtype=float)
    centers = robot_pos[None, None, :] + _OFFSETS
    idx = np.floor((centers - field.origin) / field.resolution).astype(np.int64)
    nx, ny = field.shape
    valid = ((idx[..., 0] >= 0) & (idx[..., 0] < nx)
             & (idx[..., 1] >= 0) & (idx[..., 1] < ny))
    grid = np.zeros((GRID, GRID), dtype=np.float32)
    occ = np.zeros((GRID, GRID), dtype=bool)
    occ[valid] = field.occupancy[idx[..., 0][valid], idx[..., 1][valid]]
    grid[occ] = OCCUPIED

    if prev_traj is not None:
        t0 = float(np.clip(plan_age, 0.0, prev_traj.total_duration))
        ts = np.arange(t0, prev_traj.total_duration + 1e-9, PATH_SAMPLE_DT)
        for t in ts:
            pos = prev_traj.eval(min(t, prev_traj.total_duration), 0)[0]
            ix, iy = cell_index(pos, robot_pos)
            if 0 <= ix < GRID and 0 <= iy < GRID:
                grid[ix, iy] = PATH
    return grid


def _paint_disc(grid, centers, disc_center, radius, value):
    d2 = np.sum((centers - np.asarray(disc_center, float)) ** 2, axis=-1)
    grid[d2 <= radius * radius] = value


def encode_peds(peds: PedestrianSnapshot, robot_pos,
                horizon: float = PRED_HORIZON) -> np.ndarray:
    """Predicted motion in white first, then current discs in grey on top."""
    if horizon <= 0:
        raise ValueError("horizon must be positive")
    robot_pos = np.asarray(robot_pos, dtype=float)
    centers = robot_pos[None, None, :] + _OFFSETS
    grid = np.zeros((GRID, GRID), dtype=np.float32)
    data = peds.data
    steps = np.arange(PRED_DT, horizon + 1e-9, PRED_DT)
    for p in range(data.shape[0]):
        pos, vel, r = data[p, :2], data[p, 2:4], data[p, 4]
        for t in steps:
            _paint_disc(grid, centers, pos + vel * t, r, PED_PREDICTED)
    for p in range(data.shape[0]):
        _paint_disc(grid, centers, data[p, :2], data[p, 4], PED_CURRENT)
    return grid


def encode_state(robot: RobotPlant) -> np.ndarray:
    """Global-frame velocity and heading scaled to [-1, 1]."""
    v = robot.velocity_vector()
    return np.array([v[0] / robot.v_limit, v[1] / robot.v_limit,
                     robot.heading / np.pi], dtype=np.float32)


def observe(field: ObstacleField, peds: PedestrianSnapshot, robot: RobotPlant,
            prev_traj: PiecewisePolyTraj | None = None,
            plan_age: float = 0.0) -> ObservationTensor:
    pos = robot.position
    return ObservationTensor(encode_static(field, pos, prev_traj, plan_age),
                             encode_peds(peds, pos),
                             encode_state(robot))


_PGM_LUT = np.array([0, 128, 255], dtype=np.uint8)


def write_pgm(grid: np.ndarray, path) -> None:
    """Binary PGM of a 3-level grid; top row is max y, columns follow x."""
    levels = np.rint(np.asarray(grid, dtype=np.float64) * 2.0).astype(np.int64)
    img = _PGM_LUT[levels.T[::-1]]
    with open(path, "wb") as fh:
        fh.write(f"P5 {grid.shape[0]} {grid.shape[1]} 255\n".encode())
        fh.write(img.tobytes())


def dump_observation(obs: ObservationTensor, basename: str) -> None:
    """Write <basename>_static.pgm, <basename>_peds.pgm, <basename>_kin.json."""
    write_pgm(obs.static_map, f"{basename}_static.pgm")
    write_pgm(obs.ped_map, f"{basename}_peds.pgm")
    with open(f"{basename}_kin.json", "w") as fh:
        json.dump({"vx": float(obs.kin_state[0]),
                   "vy": float(obs.kin_state[1]),
                   "theta": float(obs.kin_state[2])}, fh)
        fh.write("\n")
