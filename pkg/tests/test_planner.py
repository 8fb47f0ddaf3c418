import numpy as np
import pytest

from crowdplan.costs import (CostWeights, ObstacleField, PedestrianSnapshot,
                             PlannerLimits)
from crowdplan.planner import (PlanRequest, PlanStatus, initial_guess,
                               replan_needed, select_local_goal, solve)
from crowdplan.traj import FlatState, T_MIN

LIMITS = PlannerLimits()


def flat(pos, vel=(0, 0), acc=(0, 0)):
    v = np.asarray(vel, float)
    yaw = float(np.arctan2(v[1], v[0])) if np.hypot(*v) > 1e-3 else 0.0
    return FlatState(np.asarray(pos, float), v, np.asarray(acc, float),
                     np.zeros(2), yaw, 0.0)


def open_field(size=30.0):
    return ObstacleField.empty(size, size, origin=(-size / 2, -size / 2))


def request(start_pos, goal, field=None, peds=None, weights=None, vel=(0, 0)):
    return PlanRequest(flat(start_pos, vel), np.asarray(goal, float),
                       field if field is not None else open_field(),
                       peds if peds is not None else PedestrianSnapshot.empty(),
                       weights if weights is not None else CostWeights(),
                       LIMITS)


class TestInitialGuess:
    def test_straight_segment(self):
        params = initial_guess(request([0, 0], [5, 0]), n_pieces=5)
        np.testing.assert_allclose(params.waypoints,
                                   [[1, 0], [2, 0], [3, 0], [4, 0]], atol=1e-12)
        np.testing.assert_allclose(params.durations(), 1.0, rtol=1e-12)

    def test_degenerate_goal(self):
        params = initial_guess(request([1, 1], [1, 1]), n_pieces=5)
        np.testing.assert_allclose(params.waypoints, [[1, 1]] * 4, atol=1e-12)
        np.testing.assert_allclose(params.durations(), 2 * T_MIN, rtol=1e-9)

    def test_rotation_equivariance(self):
        a = np.deg2rad(37.0)
        R = np.array([[np.cos(a), -np.sin(a)], [np.sin(a), np.cos(a)]])
        p1 = initial_guess(request([0, 0], [5, 0]), n_pieces=5)
        p2 = initial_guess(request([0, 0], R @ np.array([5, 0])), n_pieces=5)
        np.testing.assert_allclose(p2.waypoints, p1.waypoints @ R.T, atol=1e-12)
        np.testing.assert_allclose(p2.tau, p1.tau, atol=1e-12)


class TestSolve:
    def test_empty_map_near_straight(self):
        res = solve(request([0, 0], [5, 0]))
        assert res.status is PlanStatus.CONVERGED or res.status is PlanStatus.MAX_ITER
        for t in np.linspace(0, res.traj.total_duration, 101):
            pos = res.traj.eval(t, 0)[0]
            assert abs(pos[1]) < 0.05

    def test_obstacle_clearance(self):
        size, res_m = 20.0, 0.1
        n = int(size / res_m)
        occ = np.zeros((n, n), dtype=bool)
        centers = -size / 2 + (np.arange(n) + 0.5) * res_m
        X, Y = np.meshgrid(centers, centers, indexing="ij")
        occ[(np.abs(X - 2.5) < 0.5) & (np.abs(Y) < 0.5)] = True
        field = ObstacleField(occ, res_m, (-size / 2, -size / 2))
        result = solve(request([0, 0], [5, 0], field=field))
        assert result.ok
        for t in np.linspace(0, result.traj.total_duration, 200):
            pos = result.traj.eval(t, 0)[0]
            d_s = field.distance(pos) - LIMITS.robot_radius
            assert d_s >= 0.0, f"clearance {d_s} at t={t}"

    def test_time_weight_shortens_duration(self):
        slow = solve(request([0, 0], [5, 0], weights=CostWeights(w_T=1.0)))
        fast = solve(request([0, 0], [5, 0], weights=CostWeights(w_T=5.0)))
        assert fast.traj.total_duration < slow.traj.total_duration

    def test_monotone_improvement_and_budget(self):
        from crowdplan.costs import total_cost
        from crowdplan.traj import construct_minjerk
        rng = np.random.default_rng(9)
        iters = []
        for _ in range(30):
            start = rng.uniform(-3, 3, 2)
            goal = start + rng.uniform(2, 6) * _unit(rng)
            req = request(start, goal, vel=rng.uniform(-0.3, 0.3, 2))
            init = construct_minjerk(initial_guess(req))
            J0 = total_cost(init, req.weights, req.field, req.peds, req.limits)[0]
            res = solve(req)
            assert res.final_cost <= J0 + 1e-12
            iters.append(res.iterations)
        assert np.median(iters) <= 200

    def test_deterministic(self):
        req = request([0, 0], [4, 3])
        r1 = solve(req)
        r2 = solve(req)
        assert r1.final_cost == r2.final_cost
        np.testing.assert_array_equal(r1.traj.coeffs, r2.traj.coeffs)
        np.testing.assert_array_equal(r1.traj.durations, r2.traj.durations)
        assert r1.iterations == r2.iterations

    def test_human_weight_sensitivity(self):
        peds = PedestrianSnapshot.from_lists([[2.5, 0.3]], [[0.0, 0.0]], [0.3])

        def min_clearance(w_h):
            res = solve(request([0, 0], [5, 0], peds=peds,
                                weights=CostWeights(w_h=w_h)))
            clear = []
            for t in np.linspace(0, res.traj.total_duration, 200):
                pos = res.traj.eval(t, 0)[0]
                clear.append(np.linalg.norm(pos - [2.5, 0.3]) - 0.3
                             - LIMITS.robot_radius)
            return min(clear)

        c = [min_clearance(w) for w in (0.1, 1.0, 5.0)]
        assert c[1] >= c[0] - 1e-3
        assert c[2] >= c[1] - 1e-3

    def test_start_inside_obstacle_fails(self):
        size, res_m = 10.0, 0.1
        n = int(size / res_m)
        occ = np.zeros((n, n), dtype=bool)
        occ[45:55, 45:55] = True  # block around the origin
        field = ObstacleField(occ, res_m, (-5, -5))
        res = solve(request([0, 0], [4, 0], field=field))
        assert res.status is PlanStatus.FAILED

    def test_converged_implies_small_gradient(self):
        # The status contract: CONVERGED only with gradient below tolerance.
        from crowdplan.costs import total_cost
        from crowdplan.planner import G_TOL, _pack, _unpack
        from crowdplan.traj import backprop_params, construct_minjerk
        req = request([0, 0], [5, 0])
        res = solve(req)
        if res.status is PlanStatus.CONVERGED:
            from crowdplan.traj import TrajParams, tau_from_durations
            traj = res.traj
            J, grads = total_cost(traj, req.weights, req.field, req.peds,
                                  req.limits)
            gwp, gtau = backprop_params(traj, grads.coeffs, grads.durations)
            assert max(np.max(np.abs(gwp)), np.max(np.abs(gtau))) <= G_TOL * 1.001


def _unit(rng):
    a = rng.uniform(0, 2 * np.pi)
    return np.array([np.cos(a), np.sin(a)])


class TestReplanNeeded:
    def _plan(self):
        return solve(request([0, 0], [5, 0])).traj

    def test_empty_world(self):
        traj = self._plan()
        assert replan_needed(traj, 0.0, open_field(),
                             PedestrianSnapshot.empty(), LIMITS) is False

    def test_pedestrian_on_path_ahead(self):
        traj = self._plan()
        pos_ahead = traj.eval(min(1.0, traj.total_duration), 0)[0]
        peds = PedestrianSnapshot.from_lists([pos_ahead], [[0, 0]], [0.3])
        assert replan_needed(traj, 0.0, open_field(), peds, LIMITS) is True

    def test_pedestrian_behind(self):
        traj = self._plan()
        t_now = traj.total_duration * 0.5
        peds = PedestrianSnapshot.from_lists([[-1.0, 0.0]], [[0, 0]], [0.3])
        assert replan_needed(traj, t_now, open_field(), peds, LIMITS) is False

    def test_elapsed_domain(self):
        traj = self._plan()
        with pytest.raises(ValueError):
            replan_needed(traj, traj.total_duration + 1.0, open_field(),
                          PedestrianSnapshot.empty(), LIMITS)


class TestSelectLocalGoal:
    def test_straight_path(self):
        path = np.array([[0, 0], [10, 0]])
        np.testing.assert_allclose(select_local_goal(path, [0, 0], 5.0),
                                   [5, 0], atol=1e-12)

    def test_clamp_to_end(self):
        path = np.array([[0, 0], [10, 0]])
        np.testing.assert_allclose(select_local_goal(path, [12, 1], 5.0),
                                   [10, 0], atol=1e-12)

    def test_l_shaped_corner(self):
        path = np.array([[0, 0], [4, 0], [4, 6]])
        np.testing.assert_allclose(select_local_goal(path, [4, 0], 2.0),
                                   [4, 2], atol=1e-12)

    def test_point_on_polyline(self):
        path = np.array([[0, 0], [3, 4], [9, 4]])
        rng = np.random.default_rng(12)
        for _ in range(20):
            p = rng.uniform(-2, 10, 2)
            g = select_local_goal(path, p, rng.uniform(0, 15))
            d = min(_point_seg_dist(g, path[i], path[i + 1])
                    for i in range(len(path) - 1))
            assert d < 1e-9


def _point_seg_dist(p, a, b):
    ab = b - a
    t = np.clip(np.dot(p - a, ab) / np.dot(ab, ab), 0, 1)
    return np.linalg.norm(p - (a + t * ab))


class TestSerialization:
    def test_request_round_trip(self):
        field = ObstacleField.empty(4.0, 4.0, origin=(-2, -2))
        peds = PedestrianSnapshot.from_lists([[1, 1]], [[0.1, 0.2]], [0.3])
        req = PlanRequest(flat([0, 0], vel=[0.5, 0]), np.array([3.0, 1.0]),
                          field, peds, CostWeights(1.5, 1, 1, 2, 0.5), LIMITS)
        back = PlanRequest.from_json(req.to_json())
        np.testing.assert_array_equal(back.field.occupancy, field.occupancy)
        np.testing.assert_allclose(back.peds.data, peds.data)
        np.testing.assert_allclose(back.weights.as_array(),
                                   req.weights.as_array())
        np.testing.assert_allclose(back.start.pos, req.start.pos)

    def test_result_json(self):
        res = solve(request([0, 0], [3, 0]))
        import json
        doc = json.loads(res.to_json())
        assert doc["status"] in ("Converged", "MaxIter", "Failed")
        assert len(doc["durations"]) == 5
