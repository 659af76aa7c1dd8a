import math

import numpy as np
import pytest

from planners.base_planner import DroneState
from services.frontier_service import FrontierCluster, Viewpoint
from services.grid_world import Box, BoxObstacle, CellState, GroundTruthWorld, Pose, Scenario, SensorModel, VoxelGrid


def make_scenario(size=(4.0, 4.0, 2.0), obstacles=(), start=(2.0, 2.0, 1.0), yaw=0.0, resolution=0.2,
                  name='test') -> Scenario:
    bounds = Box.of((0.0, 0.0, 0.0), size)
    return Scenario(name, GroundTruthWorld(list(obstacles), bounds), resolution, Pose.of(start, yaw))


def free_grid(size=(4.0, 4.0, 2.0), resolution=0.1) -> VoxelGrid:
    grid = VoxelGrid(Box.of((0.0, 0.0, 0.0), size), resolution)
    grid.cells[:] = CellState.FREE
    return grid


def cluster_at(cluster_id, cells, grid, viewpoint=None, yaw=0.0, coverage=10) -> FrontierCluster:
    cells = np.atleast_2d(np.asarray(cells, dtype=np.int64))
    cluster = FrontierCluster(cluster_id, cells, grid.cell_centers(cells).mean(axis=0))
    if viewpoint is not None:
        cluster.viewpoints = [Viewpoint(tuple(float(v) for v in viewpoint), yaw, coverage, cluster_id)]
        cluster.dirty = False
    return cluster


@pytest.fixture
def sensor():
    return SensorModel(math.radians(80.0), math.radians(60.0), 4.5, 0.05)


@pytest.fixture
def empty_scenario():
    return make_scenario()


@pytest.fixture
def wall_world():
    """6 x 4 x 2 m box cut by a full-height wall at x in [3.0, 3.4]"""
    bounds = Box.of((0.0, 0.0, 0.0), (6.0, 4.0, 2.0))
    return GroundTruthWorld([BoxObstacle((3.0, 0.0, 0.0), (3.4, 4.0, 2.0))], bounds)


@pytest.fixture
def hover_state():
    return DroneState(np.array([2.0, 2.0, 1.0]), 0.0)
