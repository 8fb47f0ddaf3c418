import numpy as np
import pytest

from crowdplan.costs import ObstacleField, PedestrianSnapshot
from crowdplan.observe import (GRID, cell_index, dump_observation,
                               encode_peds, encode_state, encode_static,
                               observe, write_pgm)
from crowdplan.traj import BoundaryState, PiecewisePolyTraj
from crowdplan.world import RobotPlant

from conftest import wall_field


def robot_at(x=0.0, y=0.0, theta=0.0, v=0.0):
    return RobotPlant(np.array([x, y, theta], dtype=float),
                      np.array([v, 0.0]))


def straight_plan(start, vel, duration=3.0):
    coeffs = np.zeros((1, 6, 2))
    coeffs[0, 0] = start
    coeffs[0, 1] = vel
    bc = BoundaryState(np.asarray(start, float), np.asarray(vel, float),
                       np.zeros(2))
    return PiecewisePolyTraj(coeffs, np.array([duration]), bc, bc)


class TestWindow:
    def test_corner_cell(self):
        assert cell_index([2.49, 2.49], [0, 0]) == (49, 49)
        assert cell_index([-2.49, -2.49], [0, 0]) == (0, 0)

    def test_outside_window_dropped(self):
        field = wall_field(wall_x=40.0, size=100.0, origin=(-50, -50))
        grid = encode_static(field, [0, 0])
        assert np.all(grid == 0.0)


class TestEncodeStatic:
    def test_empty(self):
        field = ObstacleField.empty(20.0, 20.0, origin=(-10, -10))
        grid = encode_static(field, [0, 0], None)
        assert np.all(grid == 0.0)

    def test_wall_column_index(self):
        field = wall_field(wall_x=1.0, size=20.0, origin=(-10, -10))
        grid = encode_static(field, [0, 0])
        assert np.all(grid[35, :] == 0.5)
        assert np.all(grid[34, :] == 0.0)

    def test_path_overwrites_obstacle(self):
        field = wall_field(wall_x=1.0, size=20.0, origin=(-10, -10))
        plan = straight_plan([0, 0], [1.0, 0.0], duration=2.0)
        grid = encode_static(field, [0, 0], plan)
        ix, iy = cell_index([1.05, 0.0], [0, 0])
        assert grid[ix, iy] == 1.0
        # Off-path wall cells stay grey.
        assert grid[ix, iy + 10] == 0.5

    def test_no_plan_no_white(self):
        field = wall_field(wall_x=1.0, size=20.0, origin=(-10, -10))
        grid = encode_static(field, [0, 0], None)
        assert not np.any(grid == 1.0)

    def test_remaining_horizon_only(self):
        field = ObstacleField.empty(20.0, 20.0, origin=(-10, -10))
        plan = straight_plan([0, 0], [1.0, 0.0], duration=2.0)
        grid = encode_static(field, [1.0, 0.0], plan, plan_age=1.0)
        behind = cell_index([0.5, 0.0], [1.0, 0.0])
        ahead = cell_index([1.5, 0.0], [1.0, 0.0])
        assert grid[behind] == 0.0
        assert grid[ahead] == 1.0


class TestEncodePeds:
    def test_empty(self):
        grid = encode_peds(PedestrianSnapshot.empty(), [0, 0])
        assert np.all(grid == 0.0)

    def test_static_ped_grey_only(self):
        peds = PedestrianSnapshot.from_lists([[1.0, 0.0]], [[0, 0]], [0.3])
        grid = encode_peds(peds, [0, 0])
        ix, iy = cell_index([1.0, 0.0], [0, 0])
        assert grid[ix, iy] == 0.5
        assert not np.any(grid == 1.0)

    def test_moving_ped_trail(self):
        peds = PedestrianSnapshot.from_lists([[1.0, 0.0]], [[1.0, 0.0]], [0.3])
        grid = encode_peds(peds, [0, 0], horizon=1.0)
        here = cell_index([1.0, 0.0], [0, 0])
        trail = cell_index([1.8, 0.0], [0, 0])
        tip = cell_index([2.0, 0.0], [0, 0])
        assert grid[here] == 0.5
        assert grid[trail] == 1.0
        assert grid[tip] == 1.0
        # Nothing painted behind the pedestrian.
        behind = cell_index([0.5, 0.0], [0, 0])
        assert grid[behind] == 0.0

    def test_current_painted_over_prediction(self):
        # A second pedestrian's prediction sweeping across the first one's
        # current disc must lose to the grey current color.
        peds = PedestrianSnapshot.from_lists(
            [[1.0, 0.0], [1.0, -1.0]], [[0.0, 0.0], [0.0, 1.0]], [0.3, 0.3])
        grid = encode_peds(peds, [0, 0], horizon=1.0)
        ix, iy = cell_index([1.0, 0.0], [0, 0])
        assert grid[ix, iy] == 0.5

    def test_horizon_validation(self):
        with pytest.raises(ValueError):
            encode_peds(PedestrianSnapshot.empty(), [0, 0], horizon=0.0)


class TestEncodeState:
    def test_rest(self):
        np.testing.assert_allclose(encode_state(robot_at()), [0, 0, 0])

    def test_full_speed(self):
        x = encode_state(robot_at(v=1.2))
        np.testing.assert_allclose(x, [1.0, 0.0, 0.0], atol=1e-7)

    def test_heading_boundary(self):
        x = encode_state(robot_at(theta=np.pi))
        assert x[2] == pytest.approx(1.0)


class TestInvariants:
    def test_translation_equivariance(self):
        delta = np.array([12.3, -7.7])
        occ = np.zeros((200, 200), dtype=bool)
        occ[110:130, 90:100] = True
        f1 = ObstacleField(occ, 0.1, (-10, -10))
        f2 = ObstacleField(occ, 0.1, (-10 + delta[0], -10 + delta[1]))
        peds1 = PedestrianSnapshot.from_lists([[1.2, 0.4]], [[0.5, 0.1]], [0.3])
        peds2 = PedestrianSnapshot.from_lists([peds1.data[0, :2] + delta],
                                              [[0.5, 0.1]], [0.3])
        g1 = encode_static(f1, [0.7, 0.2])
        g2 = encode_static(f2, delta + [0.7, 0.2])
        np.testing.assert_array_equal(g1, g2)
        p1 = encode_peds(peds1, [0.7, 0.2])
        p2 = encode_peds(peds2, delta + [0.7, 0.2])
        np.testing.assert_array_equal(p1, p2)

    def test_determinism(self):
        field = wall_field(wall_x=1.0, size=20.0, origin=(-10, -10))
        peds = PedestrianSnapshot.from_lists([[1, 1]], [[0.3, -0.2]], [0.3])
        a = observe(field, peds, robot_at(v=0.5), None)
        b = observe(field, peds, robot_at(v=0.5), None)
        np.testing.assert_array_equal(a.static_map, b.static_map)
        np.testing.assert_array_equal(a.ped_map, b.ped_map)
        np.testing.assert_array_equal(a.kin_state, b.kin_state)


class TestDumps:
    def test_pgm_bytes_stable(self, tmp_path):
        field = wall_field(wall_x=1.0, size=20.0, origin=(-10, -10))
        peds = PedestrianSnapshot.from_lists([[1, 1]], [[0.3, -0.2]], [0.3])
        obs = observe(field, peds, robot_at(v=0.5), None)
        dump_observation(obs, str(tmp_path / "a"))
        dump_observation(obs, str(tmp_path / "b"))
        for suffix in ("_static.pgm", "_peds.pgm", "_kin.json"):
            a = (tmp_path / f"a{suffix}").read_bytes()
            b = (tmp_path / f"b{suffix}").read_bytes()
            assert a == b

    def test_pgm_header_and_levels(self, tmp_path):
        grid = np.zeros((GRID, GRID), dtype=np.float32)
        grid[0, 0] = 0.5
        grid[1, 0] = 1.0
        path = tmp_path / "g.pgm"
        write_pgm(grid, path)
        data = path.read_bytes()
        assert data.startswith(b"P5 50 50 255\n")
        pixels = np.frombuffer(data.split(b"\n", 1)[1], dtype=np.uint8)
        assert set(np.unique(pixels)) <= {0, 128, 255}
