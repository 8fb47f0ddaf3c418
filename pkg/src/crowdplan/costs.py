"""Objective terms of the weighted spatial-temporal optimization.

Each term returns its value together with analytic gradients with respect
to the trajectory coefficients and piece durations (direct dependence
only; the pull-back to waypoints/tau happens in traj.backprop_params).
Penalty integrals use trapezoidal sampling with a fixed count per piece,
so sample times scale with piece durations.
"""

from dataclasses import dataclass

import numpy as np
from scipy import ndimage

from . import kernels
from .traj import V_EPS, PiecewisePolyTraj

MU = 0.05           # hinge smoothing width
N_SAMPLES = 30      # penalty samples per piece
EMPTY_MAP_DIST = 1e6


@dataclass(frozen=True)
class CostWeights:
    """Objective multipliers (time, feasibility, yaw rate, static, human)."""

    w_T: float = 1.0
    w_f: float = 1.0
    w_yr: float = 1.0
    w_s: float = 1.0
    w_h: float = 1.0

    def __post_init__(self):
        vals = self.as_array()
        if not (np.all(vals > 0) and np.all(np.isfinite(vals))):
            raise ValueError(f"weights must be positive finite, got {vals}")

    def as_array(self) -> np.ndarray:
        return np.array([self.w_T, self.w_f, self.w_yr, self.w_s, self.w_h])

    @staticmethod
    def from_array(a) -> "CostWeights":
        a = np.asarray(a, dtype=float)
        return CostWeights(*[float(x) for x in a])


@dataclass(frozen=True)
class PlannerLimits:
    """Soft limits and clearance thresholds of the planner."""

    v_bar: float = 1.0
    a_bar: float = 1.0
    yr_bar: float = 0.2
    d_s_th: float = 1.0
    d_h_th: float = 1.0
    robot_radius: float = 0.4
    ped_radius: float = 0.3


@dataclass(frozen=True)
class PedestrianSnapshot:
    """Pedestrian states frozen at plan start: (P, 5) rows (px, py, vx, vy, r)."""

    data: np.ndarray

    @staticmethod
    def empty() -> "PedestrianSnapshot":
        return PedestrianSnapshot(np.zeros((0, 5)))

    @staticmethod
    def from_lists(positions, velocities, radii) -> "PedestrianSnapshot":
        pos = np.asarray(positions, dtype=float).reshape(-1, 2)
        vel = np.asarray(velocities, dtype=float).reshape(-1, 2)
        rad = np.asarray(radii, dtype=float).reshape(-1, 1)
        if np.any(rad <= 0):
            raise ValueError("pedestrian radii must be positive")
        return PedestrianSnapshot(np.hstack([pos, vel, rad]))

    @property
    def count(self) -> int:
        return self.data.shape[0]


class ObstacleField:
    """Occupancy grid plus exact Euclidean distance field.

    Cells are indexed [ix, iy]; cell (ix, iy) is centered at
    origin + (ix + 0.5, iy + 0.5) * resolution.  The distance field is 0 on
    occupied cells and grows 1-Lipschitz into free space.
    """

    def __init__(self, occupancy: np.ndarray, resolution: float, origin):
        self.occupancy = np.ascontiguousarray(occupancy, dtype=bool)
        self.resolution = float(resolution)
        self.origin = np.asarray(origin, dtype=float).copy()
        if self.occupancy.any():
            self.esdf = np.ascontiguousarray(
                ndimage.distance_transform_edt(~self.occupancy) * self.resolution)
        else:
            self.esdf = np.full(self.occupancy.shape, EMPTY_MAP_DIST)

    @property
    def shape(self):
        return self.occupancy.shape

    @staticmethod
    def empty(width: float, height: float, resolution: float = 0.1,
              origin=(0.0, 0.0)) -> "ObstacleField":
        nx = int(round(width / resolution))
        ny = int(round(height / resolution))
        return ObstacleField(np.zeros((nx, ny), dtype=bool), resolution, origin)

    def cell_of(self, point) -> tuple[int, int]:
        p = np.asarray(point, dtype=float)
        ix = int(np.floor((p[0] - self.origin[0]) / self.resolution))
        iy = int(np.floor((p[1] - self.origin[1]) / self.resolution))
        return ix, iy

    def contains(self, point) -> bool:
        ix, iy = self.cell_of(point)
        return 0 <= ix < self.shape[0] and 0 <= iy < self.shape[1]

    def occupied_at(self, point) -> bool:
        ix, iy = self.cell_of(point)
        if 0 <= ix < self.shape[0] and 0 <= iy < self.shape[1]:
            return bool(self.occupancy[ix, iy])
        return False

    def distance(self, point) -> float:
        """Bilinear distance to the nearest occupied cell; 0 outside the map."""
        d, _, _, inside = kernels.esdf_bilinear(
            self.esdf, self.origin[0], self.origin[1], self.resolution,
            float(point[0]), float(point[1]))
        return d if inside else 0.0

    def distance_and_gradient(self, point):
        d, gx, gy, inside = kernels.esdf_bilinear(
            self.esdf, self.origin[0], self.origin[1], self.resolution,
            float(point[0]), float(point[1]))
        if not inside:
            return 0.0, np.zeros(2)
        return d, np.array([gx, gy])


@dataclass(frozen=True)
class Grads:
    """Gradient pair of one objective term."""

    coeffs: np.ndarray      # (M, 6, 2)
    durations: np.ndarray   # (M,)

    @staticmethod
    def zeros(n_pieces: int) -> "Grads":
        return Grads(np.zeros((n_pieces, 6, 2)), np.zeros(n_pieces))

    def scaled(self, a: float) -> "Grads":
        return Grads(a * self.coeffs, a * self.durations)


def l1_relax(x: float, mu: float = MU):
    """C1 one-sided hinge: 0 below zero, quadratic blend, then linear.

    Returns (value, derivative); the derivative lies in [0, 1].
    """
    if mu <= 0:
        raise ValueError("mu must be positive")
    return kernels.l1_relax_scalar(float(x), float(mu))


def control_effort(traj: PiecewisePolyTraj):
    """Integral of squared jerk, integrated in closed form per piece."""
    J, gc, gT = kernels.control_effort_grad(traj.coeffs, traj.durations)
    return float(J), Grads(gc, gT)


def feasibility_cost(traj: PiecewisePolyTraj, limits: PlannerLimits,
                     n_samples: int = N_SAMPLES, mu: float = MU):
    """Penalty on squared speed/acceleration above the soft limits."""
    if n_samples < 2:
        raise ValueError("need at least 2 samples per piece")
    J, gc, gT = kernels.feasibility_grad(
        traj.coeffs, traj.durations, n_samples, limits.v_bar, limits.a_bar, mu)
    return float(J), Grads(gc, gT)


def yaw_rate_cost(traj: PiecewisePolyTraj, limits: PlannerLimits,
                  n_samples: int = N_SAMPLES, mu: float = MU):
    """Penalty on squared flat-output yaw rate above the threshold."""
    if n_samples < 2:
        raise ValueError("need at least 2 samples per piece")
    J, gc, gT = kernels.yaw_rate_grad(
        traj.coeffs, traj.durations, n_samples, limits.yr_bar, mu, V_EPS)
    return float(J), Grads(gc, gT)


def static_cost(traj: PiecewisePolyTraj, field: ObstacleField,
                limits: PlannerLimits, n_samples: int = N_SAMPLES,
                mu: float = MU):
    """Penalty on static clearance below d_s_th.

    Samples outside the map count as clearance 0 (maximally penalized for
    non-negative clearances) with zero spatial gradient.
    """
    if n_samples < 2:
        raise ValueError("need at least 2 samples per piece")
    J, gc, gT = kernels.static_clearance_grad(
        traj.coeffs, traj.durations, n_samples, field.esdf,
        field.origin[0], field.origin[1], field.resolution,
        limits.robot_radius, limits.d_s_th, mu)
    return float(J), Grads(gc, gT)


def dynamic_cost(traj: PiecewisePolyTraj, peds: PedestrianSnapshot,
                 limits: PlannerLimits, n_samples: int = N_SAMPLES,
                 mu: float = MU):
    """Penalty on clearance to constant-velocity pedestrians below d_h_th."""
    if n_samples < 2:
        raise ValueError("need at least 2 samples per piece")
    J, gc, gT = kernels.dynamic_clearance_grad(
        traj.coeffs, traj.durations, n_samples,
        np.ascontiguousarray(peds.data, dtype=float),
        limits.robot_radius, limits.d_h_th, mu)
    return float(J), Grads(gc, gT)


def total_cost(traj: PiecewisePolyTraj, weights: CostWeights,
               field: ObstacleField, peds: PedestrianSnapshot,
               limits: PlannerLimits, n_samples: int = N_SAMPLES,
               mu: float = MU):
    """Weighted sum of all objective terms with combined gradients."""
    J_u, g_u = control_effort(traj)
    J_f, g_f = feasibility_cost(traj, limits, n_samples, mu)
    J_yr, g_yr = yaw_rate_cost(traj, limits, n_samples, mu)
    J_s, g_s = static_cost(traj, field, limits, n_samples, mu)
    J_h, g_h = dynamic_cost(traj, peds, limits, n_samples, mu)
    T = traj.total_duration

    J = (J_u + weights.w_T * T + weights.w_f * J_f + weights.w_yr * J_yr
         + weights.w_s * J_s + weights.w_h * J_h)
    gc = (g_u.coeffs + weights.w_f * g_f.coeffs + weights.w_yr * g_yr.coeffs
          + weights.w_s * g_s.coeffs + weights.w_h * g_h.coeffs)
    gT = (g_u.durations + weights.w_T
          + weights.w_f * g_f.durations + weights.w_yr * g_yr.durations
          + weights.w_s * g_s.durations + weights.w_h * g_h.durations)
    return float(J), Grads(gc, gT)
