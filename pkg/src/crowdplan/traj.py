"""Piecewise quintic trajectories parameterized by waypoints and durations.

The construction map solves the banded continuity/optimality system for
the minimum-squared-jerk spline through the waypoints; gradients of any
scalar of the coefficients/durations pull back to waypoint and duration
pre-image space through the same linear system.
"""

from dataclasses import dataclass, field

import numpy as np

from . import kernels

T_MIN = 0.05        # duration floor of the softplus transform [s]
V_EPS = 1e-3        # speed below which flat-output yaw is held [m/s]
DUMP_RATE = 50.0    # CSV/heading sampling rate [Hz]


class SingularSystem(Exception):
    """The spline construction system is numerically singular."""


class OutOfDomain(Exception):
    """Evaluation time lies outside [0, T]."""


def durations_from_tau(tau: np.ndarray) -> np.ndarray:
    """Map unconstrained pre-images to durations >= T_MIN via softplus."""
    return T_MIN + np.logaddexp(0.0, tau)


def tau_from_durations(durations: np.ndarray) -> np.ndarray:
    """Inverse of durations_from_tau; requires durations > T_MIN."""
    x = np.asarray(durations, dtype=float) - T_MIN
    if np.any(x <= 0):
        raise ValueError("durations must exceed T_MIN")
    return np.log(np.expm1(x))


def duration_tau_jacobian(durations: np.ndarray) -> np.ndarray:
    """dT/dtau evaluated from durations (sigmoid of the pre-image)."""
    return 1.0 - np.exp(-(np.asarray(durations, dtype=float) - T_MIN))


@dataclass(frozen=True)
class FlatState:
    """Robot flat outputs at one instant: planar derivatives plus heading."""

    pos: np.ndarray
    vel: np.ndarray
    acc: np.ndarray
    jerk: np.ndarray
    yaw: float
    yaw_rate: float


@dataclass(frozen=True)
class BoundaryState:
    """Position/velocity/acceleration boundary condition."""

    pos: np.ndarray
    vel: np.ndarray
    acc: np.ndarray

    @staticmethod
    def rest(pos) -> "BoundaryState":
        return BoundaryState(np.asarray(pos, dtype=float),
                             np.zeros(2), np.zeros(2))

    def as_rows(self) -> np.ndarray:
        return np.stack([np.asarray(self.pos, dtype=float),
                         np.asarray(self.vel, dtype=float),
                         np.asarray(self.acc, dtype=float)])


@dataclass(frozen=True)
class TrajParams:
    """Decision variables of the spatial-temporal optimization."""

    waypoints: np.ndarray   # (M-1, 2) interior junction positions
    tau: np.ndarray         # (M,) duration pre-images
    start: BoundaryState
    end: BoundaryState

    @property
    def n_pieces(self) -> int:
        return len(self.tau)

    def durations(self) -> np.ndarray:
        return durations_from_tau(self.tau)


@dataclass(frozen=True)
class PiecewisePolyTraj:
    """Immutable piecewise quintic 2-D trajectory.

    Pieces use monomial coefficients on local time s in [0, T_i]; piece
    intervals are closed-left/open-right with t = T mapping to the last
    piece.
    """

    coeffs: np.ndarray      # (M, 6, 2)
    durations: np.ndarray   # (M,)
    start: BoundaryState
    end: BoundaryState
    _heading_cache: dict = field(default_factory=dict, repr=False, compare=False)

    @property
    def n_pieces(self) -> int:
        return len(self.durations)

    @property
    def total_duration(self) -> float:
        return float(np.sum(self.durations))

    def piece_index(self, t: float) -> tuple[int, float]:
        """Containing piece and local time for a trajectory time t."""
        T = self.total_duration
        if t < 0.0 or t > T + 1e-9:
            raise OutOfDomain(f"t={t} outside [0, {T}]")
        t = min(t, T)
        ends = np.cumsum(self.durations)
        idx = int(np.searchsorted(ends[:-1], t, side="right"))
        start = ends[idx] - self.durations[idx]
        return idx, t - start

    def eval(self, t: float, max_order: int = 3) -> np.ndarray:
        """Derivatives 0..max_order at time t, shape (max_order+1, 2)."""
        idx, s = self.piece_index(t)
        out = np.empty((4, 2))
        kernels.piece_derivatives(self.coeffs[idx], s, out)
        return out[: max_order + 1]

    def _heading_table(self) -> np.ndarray:
        """Forward-filled yaw at DUMP_RATE, used below the speed epsilon."""
        if "table" not in self._heading_cache:
            n = max(int(np.ceil(self.total_duration * DUMP_RATE)) + 1, 2)
            ts = np.minimum(np.arange(n) / DUMP_RATE, self.total_duration)
            yaw = np.zeros(n)
            current = self._initial_heading()
            for k, t in enumerate(ts):
                v = self.eval(t, 1)[1]
                if np.hypot(v[0], v[1]) >= V_EPS:
                    current = float(np.arctan2(v[1], v[0]))
                yaw[k] = current
            self._heading_cache["table"] = yaw
        return self._heading_cache["table"]

    def _initial_heading(self) -> float:
        v0 = self.start.vel
        if np.hypot(v0[0], v0[1]) >= V_EPS:
            return float(np.arctan2(v0[1], v0[0]))
        # First well-defined heading anywhere along the trajectory, else 0.
        n = max(int(np.ceil(self.total_duration * DUMP_RATE)) + 1, 2)
        for t in np.minimum(np.arange(n) / DUMP_RATE, self.total_duration):
            v = self.eval(t, 1)[1]
            if np.hypot(v[0], v[1]) >= V_EPS:
                return float(np.arctan2(v[1], v[0]))
        return 0.0

    def flat_state(self, t: float) -> FlatState:
        """Full flat output at time t with singularity-safe yaw."""
        d = self.eval(t, 3)
        pos, vel, acc, jerk = d
        speed2 = float(vel[0] ** 2 + vel[1] ** 2)
        if speed2 >= V_EPS * V_EPS:
            yaw = float(np.arctan2(vel[1], vel[0]))
        else:
            table = self._heading_table()
            k = min(int(t * DUMP_RATE), len(table) - 1)
            yaw = float(table[k])
        den = max(speed2, V_EPS * V_EPS)
        yaw_rate = float(vel[0] * acc[1] - vel[1] * acc[0]) / den
        return FlatState(pos.copy(), vel.copy(), acc.copy(), jerk.copy(),
                         yaw, yaw_rate)

    def dump_csv(self, path) -> None:
        """Write (t, x, y, vx, vy, ax, ay, yaw, yaw_rate) rows at 50 Hz."""
        n = int(np.floor(self.total_duration * DUMP_RATE)) + 1
        rows = []
        for k in range(n):
            t = min(k / DUMP_RATE, self.total_duration)
            fs = self.flat_state(t)
            rows.append((t, fs.pos[0], fs.pos[1], fs.vel[0], fs.vel[1],
                         fs.acc[0], fs.acc[1], fs.yaw, fs.yaw_rate))
        header = "t,x,y,vx,vy,ax,ay,yaw,yaw_rate"
        np.savetxt(path, np.array(rows), delimiter=",", header=header,
                   comments="", fmt="%.9g")


def construct_minjerk(params: TrajParams) -> PiecewisePolyTraj:
    """Build the minimum-jerk quintic spline through the given parameters."""
    durations = params.durations()
    M = params.n_pieces
    if M < 1:
        raise ValueError("need at least one piece")
    if np.any(durations < T_MIN - 1e-12):
        raise ValueError("durations below floor")
    wp = np.asarray(params.waypoints, dtype=float).reshape(M - 1, 2)
    try:
        coeffs = kernels.minjerk_coeffs(wp, durations,
                                        params.start.as_rows(),
                                        params.end.as_rows())
    except np.linalg.LinAlgError as exc:
        raise SingularSystem(str(exc)) from exc
    if not np.all(np.isfinite(coeffs)):
        raise SingularSystem("non-finite spline coefficients")
    return PiecewisePolyTraj(coeffs, durations, params.start, params.end)


def backprop_params(traj: PiecewisePolyTraj, grad_coeffs: np.ndarray,
                    grad_durations_direct: np.ndarray):
    """Chain gradients in coefficient/duration space back to (waypoints, tau).

    grad_coeffs: (M, 6, 2) like traj.coeffs; grad_durations_direct: (M,)
    explicit duration dependence (quadrature weights, sample times).
    Returns (grad_waypoints (M-1, 2), grad_tau (M,)).
    """
    gc = np.ascontiguousarray(grad_coeffs, dtype=float)
    gd = np.ascontiguousarray(grad_durations_direct, dtype=float)
    try:
        grad_wp, grad_T = kernels.minjerk_backprop(traj.coeffs, traj.durations, gc, gd)
    except np.linalg.LinAlgError as exc:
        raise SingularSystem(str(exc)) from exc
    grad_tau = grad_T * duration_tau_jacobian(traj.durations)
    return grad_wp, grad_tau
