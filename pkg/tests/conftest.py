import numpy as np
import pytest

from crowdplan import kernels
from crowdplan.costs import ObstacleField
from crowdplan.traj import (BoundaryState, PiecewisePolyTraj, TrajParams,
                            construct_minjerk, tau_from_durations)


@pytest.fixture(scope="session", autouse=True)
def _warm_kernels():
    # Compile numba kernels once so individual tests measure steady-state.
    kernels.warmup()


def random_params(rng: np.random.Generator, n_pieces: int | None = None,
                  span: float = 4.0) -> TrajParams:
    M = n_pieces if n_pieces is not None else int(rng.integers(1, 7))
    start = BoundaryState(rng.uniform(-1, 1, 2), rng.uniform(-0.5, 0.5, 2),
                          rng.uniform(-0.5, 0.5, 2))
    end = BoundaryState(start.pos + rng.uniform(0.3, 1.0) * span * _unit(rng),
                        rng.uniform(-0.5, 0.5, 2), rng.uniform(-0.5, 0.5, 2))
    line = np.linspace(start.pos, end.pos, M + 1)[1:-1]
    waypoints = line + rng.normal(0, 0.3, (max(M - 1, 0), 2))
    durations = rng.uniform(0.4, 1.5, M)
    return TrajParams(waypoints, tau_from_durations(durations), start, end)


def _unit(rng):
    a = rng.uniform(0, 2 * np.pi)
    return np.array([np.cos(a), np.sin(a)])


def random_traj(rng: np.random.Generator, n_pieces: int | None = None) -> PiecewisePolyTraj:
    return construct_minjerk(random_params(rng, n_pieces))


def quadrature_jerk_energy(traj: PiecewisePolyTraj, n: int = 20001) -> float:
    """Independent oracle: trapezoidal quadrature of squared jerk."""
    ts = np.linspace(0.0, traj.total_duration, n)
    jerk = np.array([traj.eval(t, 3)[3] for t in ts])
    return float(np.trapezoid((jerk ** 2).sum(axis=1), ts))


def wall_field(wall_x: float = 1.0, size: float = 6.0, res: float = 0.1,
               origin=(-3.0, -3.0)) -> ObstacleField:
    """Free map with everything at x >= wall_x occupied."""
    n = int(round(size / res))
    occ = np.zeros((n, n), dtype=bool)
    xs = origin[0] + (np.arange(n) + 0.5) * res
    occ[xs >= wall_x, :] = True
    return ObstacleField(occ, res, origin)


def directional_fd(f, x0: np.ndarray, direction: np.ndarray,
                   h: float = 1e-6) -> float:
    """Central finite difference of scalar f along a direction."""
    return (f(x0 + h * direction) - f(x0 - h * direction)) / (2.0 * h)
