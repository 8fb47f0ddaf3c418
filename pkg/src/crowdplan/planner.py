"""Weighted spatial-temporal trajectory optimization.

Solves the total objective over (waypoints, duration pre-images) with an
L-BFGS/Armijo loop, plus local-goal selection along a global path and
collision-triggered replan detection.
"""

import enum
import json
from dataclasses import dataclass

import numpy as np

from . import kernels
from .costs import (MU, CostWeights, ObstacleField, PedestrianSnapshot,
                    PlannerLimits)
from .traj import (BoundaryState, FlatState, PiecewisePolyTraj, T_MIN, V_EPS,
                   TrajParams, construct_minjerk, tau_from_durations)

N_PIECES = 5
LOOKAHEAD = 5.0
REPLAN_SCAN_DT = 0.1       # 10 Hz trajectory scan
G_TOL = 1e-5
COST_REL_TOL = 1e-8
MAX_ITER = 200
LBFGS_MEMORY = 8
ARMIJO_C = 1e-4
ARMIJO_SHRINK = 0.5
START_CLEARANCE_FLOOR = 0.1   # start deeper than this inside a wall => pathological


class PlanStatus(enum.Enum):
    CONVERGED = "Converged"
    MAX_ITER = "MaxIter"
    FAILED = "Failed"


@dataclass(frozen=True)
class PlanRequest:
    start: FlatState
    local_goal: np.ndarray
    field: ObstacleField
    peds: PedestrianSnapshot
    weights: CostWeights
    limits: PlannerLimits

    def to_json(self) -> str:
        occ = self.field.occupancy
        rows = ["".join("1" if v else "0" for v in occ[ix]) for ix in range(occ.shape[0])]
        doc = {
            "start": {
                "pos": self.start.pos.tolist(),
                "vel": self.start.vel.tolist(),
                "acc": self.start.acc.tolist(),
                "jerk": self.start.jerk.tolist(),
                "yaw": self.start.yaw,
                "yaw_rate": self.start.yaw_rate,
            },
            "local_goal": np.asarray(self.local_goal, dtype=float).tolist(),
            "field": {
                "resolution": self.field.resolution,
                "origin": self.field.origin.tolist(),
                "occupancy_rows": rows,
            },
            "peds": self.peds.data.tolist(),
            "weights": self.weights.as_array().tolist(),
            "limits": {
                "v_bar": self.limits.v_bar, "a_bar": self.limits.a_bar,
                "yr_bar": self.limits.yr_bar, "d_s_th": self.limits.d_s_th,
                "d_h_th": self.limits.d_h_th,
                "robot_radius": self.limits.robot_radius,
                "ped_radius": self.limits.ped_radius,
            },
        }
        return json.dumps(doc)

    @staticmethod
    def from_json(text: str) -> "PlanRequest":
        doc = json.loads(text)
        s = doc["start"]
        start = FlatState(np.array(s["pos"]), np.array(s["vel"]),
                          np.array(s["acc"]), np.array(s["jerk"]),
                          float(s["yaw"]), float(s["yaw_rate"]))
        f = doc["field"]
        occ = np.array([[ch == "1" for ch in row] for row in f["occupancy_rows"]],
                       dtype=bool)
        field = ObstacleField(occ, f["resolution"], f["origin"])
        peds = PedestrianSnapshot(np.array(doc["peds"], dtype=float).reshape(-1, 5))
        return PlanRequest(start, np.array(doc["local_goal"]), field, peds,
                           CostWeights.from_array(doc["weights"]),
                           PlannerLimits(**doc["limits"]))


@dataclass(frozen=True)
class PlanResult:
    traj: PiecewisePolyTraj
    final_cost: float
    iterations: int
    status: PlanStatus

    @property
    def ok(self) -> bool:
        return self.status is not PlanStatus.FAILED

    def to_json(self) -> str:
        return json.dumps({
            "coeffs": self.traj.coeffs.tolist(),
            "durations": self.traj.durations.tolist(),
            "final_cost": self.final_cost,
            "iterations": self.iterations,
            "status": self.status.value,
        })


def initial_guess(request: PlanRequest, n_pieces: int = N_PIECES) -> TrajParams:
    """Straight-line waypoint seed with speed-budget durations."""
    start = np.asarray(request.start.pos, dtype=float)
    goal = np.asarray(request.local_goal, dtype=float)
    M = n_pieces
    fracs = np.arange(1, M)[:, None] / M
    waypoints = start[None, :] + fracs * (goal - start)[None, :]
    seg_len = float(np.linalg.norm(goal - start))
    T_piece = max(seg_len / (M * request.limits.v_bar), 2.0 * T_MIN)
    tau = tau_from_durations(np.full(M, T_piece))
    start_bc = BoundaryState(start, request.start.vel.copy(),
                             request.start.acc.copy())
    end_bc = BoundaryState.rest(goal)
    return TrajParams(waypoints, tau, start_bc, end_bc)


def _pack(params: TrajParams) -> np.ndarray:
    return np.concatenate([params.waypoints.ravel(), params.tau])


def _unpack(x: np.ndarray, M: int, start: BoundaryState,
            end: BoundaryState) -> TrajParams:
    return TrajParams(x[: 2 * (M - 1)].reshape(M - 1, 2).copy(),
                      x[2 * (M - 1):].copy(), start, end)


def solve(request: PlanRequest, n_pieces: int = N_PIECES,
          n_samples: int = 30, max_iter: int = MAX_ITER,
          warm_params: TrajParams | None = None) -> PlanResult:
    """Minimize the weighted objective over waypoints and durations.

    Straight-line seeds can sit on a symmetry saddle of the static
    penalty (zero lateral gradient through a centered obstacle); if the
    first descent ends in collision, two side-offset seeds are tried and
    the lowest-cost outcome wins.  A warm seed, when provided and
    cheaper than the straight-line guess, starts the first descent
    instead (the cost-improvement contract stays anchored to the
    straight-line guess).  Everything is deterministic.
    """
    params0 = initial_guess(request, n_pieces)
    M = n_pieces
    start_rows = params0.start.as_rows()
    end_rows = params0.end.as_rows()
    w5 = request.weights.as_array()
    lim6 = np.array([request.limits.v_bar, request.limits.a_bar,
                     request.limits.yr_bar, request.limits.d_s_th,
                     request.limits.d_h_th, request.limits.robot_radius])
    peds_data = np.ascontiguousarray(request.peds.data, dtype=float)
    field = request.field

    def evaluate(x):
        wp = np.ascontiguousarray(x[: 2 * (M - 1)].reshape(M - 1, 2))
        tau = np.ascontiguousarray(x[2 * (M - 1):])
        try:
            J, grad, coeffs, durations = kernels.solve_objective(
                wp, tau, start_rows, end_rows, w5, field.esdf,
                field.origin[0], field.origin[1], field.resolution,
                peds_data, lim6, n_samples, MU, V_EPS, T_MIN)
        except np.linalg.LinAlgError:
            return np.inf, None, None
        if not (np.isfinite(J) and np.all(np.isfinite(grad))):
            return np.inf, None, None
        return J, grad, (coeffs, durations)

    def finish(state, f, iters, status):
        coeffs, durations = state
        traj = PiecewisePolyTraj(coeffs, durations, params0.start, params0.end)
        return PlanResult(traj, float(f), iters, status)

    x0 = _pack(params0)
    f0, g0, st0 = evaluate(x0)

    start_clearance = request.field.distance(request.start.pos)
    if start_clearance <= START_CLEARANCE_FLOOR or not np.isfinite(f0):
        traj0 = construct_minjerk(params0)
        return PlanResult(traj0, float(f0), 0, PlanStatus.FAILED)

    if warm_params is not None and warm_params.n_pieces == M:
        x_w = _pack(warm_params)
        f_w, g_w, st_w = evaluate(x_w)
        if np.isfinite(f_w) and f_w < f0:
            x0, f0, g0, st0 = x_w, f_w, g_w, st_w

    best = finish(*_descend(x0, f0, g0, st0, evaluate, max_iter))
    if best.status is not PlanStatus.FAILED and _in_collision(best.traj, request):
        direction = np.asarray(request.local_goal, float) - request.start.pos
        norm = np.linalg.norm(direction)
        perp = (np.array([-direction[1], direction[0]]) / norm
                if norm > 1e-9 else np.array([0.0, 1.0]))
        bump = np.sin(np.pi * np.arange(1, M) / M)
        for side in (1.0, -1.0):
            wp = params0.waypoints + side * request.limits.d_s_th * bump[:, None] * perp
            x_alt = np.concatenate([wp.ravel(), params0.tau])
            f_alt, g_alt, st_alt = evaluate(x_alt)
            if not np.isfinite(f_alt):
                continue
            cand = finish(*_descend(x_alt, f_alt, g_alt, st_alt, evaluate, max_iter))
            if cand.status is not PlanStatus.FAILED and cand.final_cost < best.final_cost:
                best = cand
            if not _in_collision(best.traj, request):
                break
    return best


def _in_collision(traj: PiecewisePolyTraj, request: PlanRequest) -> bool:
    return bool(kernels.collision_scan(
        traj.coeffs, traj.durations, 0.0, REPLAN_SCAN_DT,
        request.field.esdf, request.field.origin[0], request.field.origin[1],
        request.field.resolution, request.limits.robot_radius,
        np.ascontiguousarray(request.peds.data, dtype=float)))


def _descend(x, f, g, state, evaluate, max_iter):
    """L-BFGS with Armijo backtracking from one seed.

    Returns (state, f, iterations, status) where state carries the
    coefficient/duration arrays of the accepted iterate.
    """
    s_hist, y_hist, rho_hist = [], [], []
    status = PlanStatus.MAX_ITER
    it = 0
    while it < max_iter:
        gnorm = float(np.max(np.abs(g)))
        if gnorm <= G_TOL:
            status = PlanStatus.CONVERGED
            break

        # Two-loop recursion over the stored curvature pairs.
        q = g.copy()
        alphas = []
        for s, y, rho in zip(reversed(s_hist), reversed(y_hist), reversed(rho_hist)):
            a = rho * np.dot(s, q)
            alphas.append(a)
            q -= a * y
        if y_hist:
            gamma = np.dot(s_hist[-1], y_hist[-1]) / np.dot(y_hist[-1], y_hist[-1])
            q *= gamma
        for (s, y, rho), a in zip(zip(s_hist, y_hist, rho_hist), reversed(alphas)):
            q += s * (a - rho * np.dot(y, q))
        p = -q
        slope = float(np.dot(g, p))
        if slope >= 0.0:
            p = -g
            slope = -float(np.dot(g, g))

        alpha = 1.0
        accepted = False
        saw_nonfinite = False
        for _ in range(40):
            x_new = x + alpha * p
            f_new, g_new, state_new = evaluate(x_new)
            if not np.isfinite(f_new):
                saw_nonfinite = True
                alpha *= ARMIJO_SHRINK
                continue
            if f_new <= f + ARMIJO_C * alpha * slope:
                accepted = True
                break
            alpha *= ARMIJO_SHRINK
        it += 1
        if not accepted:
            # Stalled line search: non-finite everywhere is a hard failure,
            # otherwise report the best point found so far.
            if saw_nonfinite and not np.isfinite(f_new):
                status = PlanStatus.FAILED
            else:
                status = (PlanStatus.CONVERGED if float(np.max(np.abs(g))) <= G_TOL
                          else PlanStatus.MAX_ITER)
            break

        s_vec = x_new - x
        y_vec = g_new - g
        sy = float(np.dot(s_vec, y_vec))
        if sy > 1e-12:
            s_hist.append(s_vec)
            y_hist.append(y_vec)
            rho_hist.append(1.0 / sy)
            if len(s_hist) > LBFGS_MEMORY:
                s_hist.pop(0)
                y_hist.pop(0)
                rho_hist.pop(0)

        rel_drop = (f - f_new) / max(abs(f), 1.0)
        x, f, g, state = x_new, f_new, g_new, state_new
        if rel_drop <= COST_REL_TOL:
            status = (PlanStatus.CONVERGED if float(np.max(np.abs(g))) <= G_TOL
                      else PlanStatus.MAX_ITER)
            break

    return state, float(f), it, status


def replan_needed(current_traj: PiecewisePolyTraj, t_elapsed: float,
                  field: ObstacleField, peds: PedestrianSnapshot,
                  limits: PlannerLimits) -> bool:
    """Scan the remaining trajectory at 10 Hz against the latest world."""
    if t_elapsed < 0 or t_elapsed > current_traj.total_duration:
        raise ValueError("t_elapsed outside trajectory domain")
    return bool(kernels.collision_scan(
        current_traj.coeffs, current_traj.durations, float(t_elapsed),
        REPLAN_SCAN_DT, field.esdf, field.origin[0], field.origin[1],
        field.resolution, limits.robot_radius,
        np.ascontiguousarray(peds.data, dtype=float)))


class LocalPlanner:
    """Planner binding used by episodes: local-goal selection plus solve."""

    def __init__(self, limits: PlannerLimits | None = None,
                 lookahead: float = LOOKAHEAD, n_pieces: int = N_PIECES,
                 n_samples: int = 30):
        self.limits = limits if limits is not None else PlannerLimits()
        self.lookahead = lookahead
        self.n_pieces = n_pieces
        self.n_samples = n_samples

    def plan(self, world, weights: CostWeights,
             global_path: np.ndarray) -> PlanResult:
        robot = world.robot
        start = FlatState(robot.position.copy(), robot.velocity_vector(),
                          np.zeros(2), np.zeros(2), robot.heading,
                          float(robot.body_vel[1]))
        goal = select_local_goal(global_path, robot.position, self.lookahead)
        peds = PedestrianSnapshot(world.crowd.snapshot_rows())
        req = PlanRequest(start, goal, world.field, peds, weights, self.limits)
        return solve(req, self.n_pieces, self.n_samples)

    def needs_replan(self, traj: PiecewisePolyTraj, plan_age: float,
                     world) -> bool:
        age = float(np.clip(plan_age, 0.0, traj.total_duration))
        peds = PedestrianSnapshot(world.crowd.snapshot_rows())
        return replan_needed(traj, age, world.field, peds, self.limits)


def select_local_goal(global_path: np.ndarray, robot_pos,
                      lookahead: float = LOOKAHEAD) -> np.ndarray:
    """Point on the polyline a fixed arc length past the robot's projection."""
    path = np.asarray(global_path, dtype=float).reshape(-1, 2)
    if len(path) == 0:
        raise ValueError("empty global path")
    if len(path) == 1:
        return path[0].copy()
    p = np.asarray(robot_pos, dtype=float)

    seg = np.diff(path, axis=0)
    seg_len = np.linalg.norm(seg, axis=1)
    cum = np.concatenate([[0.0], np.cumsum(seg_len)])

    best_d2 = np.inf
    proj_arc = 0.0
    for i in range(len(seg)):
        if seg_len[i] < 1e-12:
            t = 0.0
        else:
            t = float(np.clip(np.dot(p - path[i], seg[i]) / seg_len[i] ** 2, 0.0, 1.0))
        q = path[i] + t * seg[i]
        d2 = float(np.sum((p - q) ** 2))
        if d2 < best_d2 - 1e-12:
            best_d2 = d2
            proj_arc = cum[i] + t * seg_len[i]

    target = min(proj_arc + lookahead, cum[-1])
    i = int(np.searchsorted(cum[1:], target, side="left"))
    i = min(i, len(seg) - 1)
    rem = target - cum[i]
    frac = rem / seg_len[i] if seg_len[i] > 1e-12 else 0.0
    return path[i] + frac * seg[i]
