import numpy as np
import pytest

from crowdplan.costs import ObstacleField
from crowdplan.traj import BoundaryState, PiecewisePolyTraj
from crowdplan.world import (Crowd, DT, EpisodeStatus, Pedestrian, REP_A,
                             RobotPlant, WorldState, episode_status, sfm_accel,
                             world_step)

from conftest import wall_field


def open_field(size=30.0):
    return ObstacleField.empty(size, size, origin=(-size / 2, -size / 2))


def make_world(ped_rows=None, routes=None, robot_pose=(0, 0, 0), field=None,
               seed=0):
    if ped_rows is None:
        ped_rows = np.zeros((0, 5))
    ped_rows = np.asarray(ped_rows, dtype=float).reshape(-1, 5)
    n = len(ped_rows)
    if routes is None:
        routes = [[row[:2]] for row in ped_rows]
    crowd = Crowd(ped_rows[:, :2], ped_rows[:, 2:4], routes,
                  np.full(n, 1.2), ped_rows[:, 4] if n else np.zeros(0))
    robot = RobotPlant(np.asarray(robot_pose, dtype=float), np.zeros(2))
    return WorldState(crowd, robot,
                      field if field is not None else open_field(),
                      np.random.default_rng(seed))


def constant_plan(vel, duration=10.0, start=(0, 0)):
    coeffs = np.zeros((1, 6, 2))
    coeffs[0, 0] = start
    coeffs[0, 1] = vel
    bc = BoundaryState(np.asarray(start, float), np.asarray(vel, float),
                       np.zeros(2))
    end = BoundaryState(np.asarray(start, float) + np.asarray(vel, float) * duration,
                        np.asarray(vel, float), np.zeros(2))
    return PiecewisePolyTraj(coeffs, np.array([duration]), bc, end)


class TestSfmAccel:
    def test_isolated_goal_term(self):
        ped = Pedestrian(np.zeros(2), np.zeros(2), np.array([10.0, 0.0]),
                         1.2, 0.3, [np.array([10.0, 0.0])])
        acc = sfm_accel(ped, [], open_field())
        np.testing.assert_allclose(acc, [2.4, 0.0], atol=1e-9)

    def test_at_goal_rest(self):
        ped = Pedestrian(np.zeros(2), np.zeros(2), np.zeros(2),
                         1.2, 0.3, [np.zeros(2)])
        acc = sfm_accel(ped, [], open_field())
        np.testing.assert_allclose(acc, 0.0, atol=1e-9)

    def test_contact_repulsion_magnitude(self):
        # Both pedestrians parked at their goals: only the repulsion acts,
        # and at separation r_i + r_j its magnitude is exactly A.
        a = Pedestrian(np.zeros(2), np.zeros(2), np.zeros(2), 1.2, 0.3,
                       [np.zeros(2)])
        b = Pedestrian(np.array([0.6, 0.0]), np.zeros(2),
                       np.array([0.6, 0.0]), 1.2, 0.3, [np.array([0.6, 0.0])])
        acc = sfm_accel(a, [b], open_field())
        assert np.linalg.norm(acc) == pytest.approx(REP_A, rel=1e-12)
        assert acc[0] < 0  # pushed away from the neighbor

    def test_wall_repulsion_points_away(self):
        field = wall_field(wall_x=0.5)
        ped = Pedestrian(np.array([0.3, 0.0]), np.zeros(2),
                         np.array([0.3, 0.0]), 1.2, 0.3,
                         [np.array([0.3, 0.0])])
        acc = sfm_accel(ped, [], field)
        assert acc[0] < 0


class TestWorldStep:
    def test_empty_world_rest_plan(self):
        state = make_world()
        plan = constant_plan([0.0, 0.0])
        world_step(state, plan, 0.0)
        assert state.time == pytest.approx(DT)
        np.testing.assert_allclose(state.robot.pose, 0.0, atol=1e-12)
        assert state.ledger.tcc == 0

    def test_active_contact_ticks(self):
        # Ten ticks of scripted contact at 0.6 m/s count ten times.
        state = make_world(ped_rows=[[0.3, 0.0, 0.0, 0.0, 0.3]])
        plan = constant_plan([0.6, 0.0])
        for k in range(10):
            world_step(state, plan, k * DT)
        assert state.ledger.tcc == 10
        assert state.ledger.collided is True

    def test_slow_contact_not_counted(self):
        state = make_world(ped_rows=[[0.3, 0.0, 0.0, 0.0, 0.3]])
        plan = constant_plan([0.2, 0.0])
        for k in range(10):
            world_step(state, plan, k * DT)
        assert state.ledger.contact is True
        assert state.ledger.tcc == 0
        assert state.ledger.collided is False

    def test_tracking_follows_straight_plan(self):
        state = make_world()
        plan = constant_plan([0.8, 0.0])
        for k in range(200):
            world_step(state, plan, k * DT)
        ref = plan.eval(200 * DT, 0)[0]
        assert np.linalg.norm(state.robot.position - ref) < 0.05
        assert state.robot.body_vel[0] == pytest.approx(0.8, abs=0.05)

    def test_speed_caps(self):
        rng = np.random.default_rng(3)
        rows = np.hstack([rng.uniform(-2, 2, (8, 2)),
                          rng.uniform(-3, 3, (8, 2)), np.full((8, 1), 0.3)])
        routes = [[rng.uniform(-5, 5, 2)] for _ in range(8)]
        state = make_world(ped_rows=rows, routes=routes)
        plan = constant_plan([2.0, 0.0])  # over the command limit
        for k in range(100):
            world_step(state, plan, k * DT)
            speeds = np.linalg.norm(state.crowd.vel, axis=1)
            assert np.all(speeds <= 1.3 * state.crowd.desired_speed + 1e-9)
            assert abs(state.robot.body_vel[0]) <= state.robot.v_limit + 1e-12
            assert abs(state.robot.body_vel[1]) <= state.robot.w_limit + 1e-12

    def test_ledger_sound_below_safe_speed(self):
        state = make_world(ped_rows=[[0.1, 0.0, 0.0, 0.0, 0.3]])
        for k in range(100):
            world_step(state, None, 0.0)  # robot parked
        assert state.ledger.tcc == 0

    def test_ping_pong_route(self):
        route = [np.array([0.0, 0.0]), np.array([3.0, 0.0])]
        state = make_world(ped_rows=[[0.0, 0.0, 0.0, 0.0, 0.3]],
                           routes=[route])
        xs = []
        for k in range(1500):
            world_step(state, None, 0.0)
            xs.append(state.crowd.pos[0, 0])
        xs = np.array(xs)
        assert xs.max() > 2.0       # walked out
        assert xs[-300:].min() < xs.max() - 0.5  # and turned back

    def test_determinism(self):
        def run():
            rng = np.random.default_rng(11)
            rows = np.hstack([rng.uniform(-2, 2, (6, 2)),
                              rng.uniform(-1, 1, (6, 2)), np.full((6, 1), 0.3)])
            routes = [[rng.uniform(-4, 4, 2), rng.uniform(-4, 4, 2)]
                      for _ in range(6)]
            state = make_world(ped_rows=rows, routes=routes)
            plan = constant_plan([0.5, 0.2])
            for k in range(300):
                world_step(state, plan, k * DT)
            return state

        a, b = run(), run()
        np.testing.assert_array_equal(a.crowd.pos, b.crowd.pos)
        np.testing.assert_array_equal(a.crowd.vel, b.crowd.vel)
        np.testing.assert_array_equal(a.robot.pose, b.robot.pose)
        assert a.ledger.tcc == b.ledger.tcc


class TestEpisodeStatus:
    def test_at_goal(self):
        state = make_world(robot_pose=(1, 2, 0))
        assert episode_status(state, [1, 2], 5.0, 60.0) is EpisodeStatus.GOAL_REACHED

    def test_timeout_just_outside_tolerance(self):
        state = make_world(robot_pose=(0.51, 0, 0))
        status = episode_status(state, [0, 0], 60.0 + DT, 60.0)
        assert status is EpisodeStatus.TIMEOUT

    def test_running(self):
        state = make_world(robot_pose=(5, 5, 0))
        assert episode_status(state, [0, 0], 0.0, 60.0) is EpisodeStatus.RUNNING
