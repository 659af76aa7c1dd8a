import json
import math
import os

import numpy as np
import pytest
from hypothesis import given, strategies as st

from errors import ConfigError, OutOfBounds, PoseInvalid
from services.grid_world import (
    Box, BoxObstacle, CellState, CylinderObstacle, GroundTruthWorld, Pose, SensorModel, VoxelGrid,
    is_intervisible, load_scenario, save_scenario, scenario_from_dict, sense, world_to_cell, wrap_angle,
)

from conftest import make_scenario

EXAMPLE_SCENARIO = os.path.join(os.path.dirname(__file__), '..', 'docs', 'example_scenario.json')


def unit_grid(resolution=0.1):
    return VoxelGrid(Box.of((0.0, 0.0, 0.0), (1.0, 1.0, 1.0)), resolution)


def test_world_to_cell_examples():
    grid = unit_grid()
    assert grid.dims == (10, 10, 10)
    assert world_to_cell(grid, (0.0, 0.0, 0.0)) == (0, 0, 0)
    assert world_to_cell(grid, (0.25, 0.14, 0.09)) == (2, 1, 0)
    # Upper bound is exclusive
    assert world_to_cell(grid, (1.0, 0.5, 0.5)) is None
    assert world_to_cell(grid, (-0.01, 0.5, 0.5)) is None


@given(st.tuples(*[st.floats(0.0, 0.999, allow_nan=False)] * 3))
def test_world_to_cell_contains_point(point):
    grid = unit_grid()
    cell = world_to_cell(grid, point)
    assert cell is not None
    center = grid.cell_center(cell)
    assert np.all(np.abs(np.asarray(point) - center) <= 0.5 * grid.resolution + 1e-9)


def test_grid_dims_round_up_partial_cells():
    grid = VoxelGrid(Box.of((0.0, 0.0, 0.0), (1.05, 0.3, 0.2)), 0.1)
    assert grid.dims == (11, 3, 2)


def test_non_positive_resolution_rejected():
    with pytest.raises(ValueError):
        VoxelGrid(Box.of((0, 0, 0), (1, 1, 1)), 0.0)


@given(st.floats(-50.0, 50.0, allow_nan=False))
def test_wrap_angle_range(angle):
    wrapped = wrap_angle(angle)
    assert -math.pi <= wrapped < math.pi
    assert math.isclose(math.cos(wrapped), math.cos(angle), abs_tol=1e-9)


def test_sense_stops_at_wall(wall_world, sensor):
    grid = VoxelGrid(wall_world.bounds, 0.1)
    result = sense(grid, wall_world, sensor, Pose.of((1.0, 2.0, 1.0), 0.0))
    assert result.changed > 0
    assert result.region is not None
    assert np.all(grid.cells[34:] == CellState.UNKNOWN)
    assert np.count_nonzero(grid.cells == CellState.OCCUPIED) > 0
    # Only wall cells are ever marked occupied
    occupied = np.argwhere(grid.cells == CellState.OCCUPIED)
    assert np.all((occupied[:, 0] >= 30) & (occupied[:, 0] <= 33))
    assert grid.cells[10, 20, 10] == CellState.FREE


def test_sense_never_reverts_known_cells(wall_world, sensor):
    grid = VoxelGrid(wall_world.bounds, 0.1)
    sense(grid, wall_world, sensor, Pose.of((1.0, 2.0, 1.0), 0.0))
    known = grid.cells != CellState.UNKNOWN
    before = grid.cells.copy()
    sense(grid, wall_world, sensor, Pose.of((2.0, 1.0, 1.0), 1.0))
    assert np.array_equal(grid.cells[known], before[known])


def test_sense_repeat_changes_nothing(wall_world, sensor):
    grid = VoxelGrid(wall_world.bounds, 0.1)
    pose = Pose.of((1.0, 2.0, 1.0), 0.3)
    sense(grid, wall_world, sensor, pose)
    version = grid.version
    again = sense(grid, wall_world, sensor, pose)
    assert again.changed == 0
    assert again.region is None
    assert grid.version == version


def test_sense_rejects_pose_inside_obstacle(wall_world, sensor):
    grid = VoxelGrid(wall_world.bounds, 0.1)
    with pytest.raises(PoseInvalid):
        sense(grid, wall_world, sensor, Pose.of((3.2, 2.0, 1.0), 0.0))
    with pytest.raises(PoseInvalid):
        sense(grid, wall_world, sensor, Pose.of((7.0, 2.0, 1.0), 0.0))


def test_sensor_fov_membership(sensor):
    origin = np.zeros(3)
    targets = np.array([[2.0, 0.0, 0.0], [0.0, 2.0, 0.0], [5.0, 0.0, 0.0], [2.0, 0.0, 1.5]])
    assert sensor.in_fov(origin, 0.0, targets).tolist() == [True, False, False, False]
    assert sensor.in_fov(origin, math.pi / 2, targets).tolist() == [False, True, False, False]


def test_sensor_validation():
    with pytest.raises(ValueError):
        SensorModel(fov_h=math.pi).validate(0.1)
    with pytest.raises(ValueError):
        SensorModel(range=0.0).validate(0.1)
    with pytest.raises(ValueError):
        SensorModel(ray_step=0.2).validate(0.1)
    SensorModel().validate(0.1)


def test_is_intervisible():
    grid = VoxelGrid(Box.of((0.0, 0.0, 0.0), (2.0, 1.0, 1.0)), 0.1)
    grid.cells[:] = CellState.FREE
    assert is_intervisible(grid, (0.05, 0.55, 0.55), (1.95, 0.55, 0.55))
    grid.cells[10, :, :] = CellState.UNKNOWN
    assert is_intervisible(grid, (0.05, 0.55, 0.55), (1.95, 0.55, 0.55))
    grid.cells[10, 5, 5] = CellState.OCCUPIED
    assert not is_intervisible(grid, (0.05, 0.55, 0.55), (1.95, 0.55, 0.55))
    assert is_intervisible(grid, (0.05, 0.15, 0.55), (1.95, 0.15, 0.55))
    with pytest.raises(OutOfBounds):
        is_intervisible(grid, (0.05, 0.55, 0.55), (2.5, 0.55, 0.55))


def test_is_intervisible_symmetric():
    rng = np.random.default_rng(3)
    grid = VoxelGrid(Box.of((0.0, 0.0, 0.0), (2.0, 2.0, 1.0)), 0.1)
    grid.cells[:] = rng.choice([0, 1, 2], size=grid.dims, p=[0.3, 0.6, 0.1]).astype(np.uint8)
    for _ in range(50):
        a = rng.uniform((0, 0, 0), (1.99, 1.99, 0.99))
        b = rng.uniform((0, 0, 0), (1.99, 1.99, 0.99))
        assert is_intervisible(grid, a, b) == is_intervisible(grid, b, a)


def test_solid_mask_uses_cell_centers():
    bounds = Box.of((0.0, 0.0, 0.0), (2.0, 2.0, 1.0))
    world = GroundTruthWorld([BoxObstacle((0.5, 0.5, 0.0), (0.7, 0.7, 1.0)),
                              CylinderObstacle((1.5, 1.5), 0.2, 0.0, 1.0)], bounds)
    grid = VoxelGrid(bounds, 0.1)
    solid = world.solid_mask(grid)
    assert solid[5, 5, 0] and solid[6, 6, 9]
    assert not solid[4, 5, 0] and not solid[7, 5, 0]
    assert solid[15, 15, 3]
    assert not solid[12, 12, 3]


def test_occupied_distance_and_inflation():
    grid = VoxelGrid(Box.of((0.0, 0.0, 0.0), (1.0, 1.0, 1.0)), 0.1)
    grid.cells[:] = CellState.FREE
    grid.cells[5, 5, 5] = CellState.OCCUPIED
    grid.mark_changed(None)
    dist = grid.occupied_distance()
    assert dist[5, 5, 5] == 0.0
    assert dist[8, 5, 5] == pytest.approx(0.3)
    inflated = grid.inflated_occupied(0.2)
    assert inflated[7, 5, 5] and not inflated[8, 5, 5]


def test_incremental_distance_matches_full_recompute(wall_world, sensor):
    grid = VoxelGrid(wall_world.bounds, 0.1)
    sense(grid, wall_world, sensor, Pose.of((1.0, 2.0, 1.0), 0.0))
    grid.occupied_distance()
    for pose in (Pose.of((2.0, 1.0, 1.0), 0.6), Pose.of((2.5, 3.2, 0.6), -0.5), Pose.of((1.5, 0.5, 1.5), 0.2)):
        sense(grid, wall_world, sensor, pose)
        incremental = grid.occupied_distance().copy()
        np.testing.assert_allclose(incremental, grid.copy().occupied_distance())
    assert incremental.max() == pytest.approx(grid.distance_cap)


def test_masks_follow_the_map_version():
    grid = unit_grid()
    free = grid.free_mask()
    assert grid.free_mask() is free
    assert not free.any()
    grid.cells[2, 2, 2] = CellState.FREE
    grid.cells[3, 3, 3] = CellState.OCCUPIED
    grid.mark_changed(Box.of((0.2, 0.2, 0.2), (0.4, 0.4, 0.4)), Box.of((0.3, 0.3, 0.3), (0.4, 0.4, 0.4)))
    assert grid.free_mask() is not free
    assert grid.free_mask()[2, 2, 2]
    assert grid.occupied_mask()[3, 3, 3]
    assert grid.inflated_occupied(0.2)[3, 5, 3]
    with pytest.raises(ValueError):
        grid.inflated_occupied(grid.distance_cap)
    with pytest.raises(ValueError):
        VoxelGrid(Box.of((0, 0, 0), (1, 1, 1)), 0.1, distance_cap=0.0)


def test_scenario_round_trip(tmp_path):
    scenario = make_scenario(obstacles=[BoxObstacle((1.0, 1.0, 0.0), (1.5, 1.5, 2.0)),
                                        CylinderObstacle((3.0, 3.0), 0.3, 0.0, 2.0)])
    path = tmp_path / 'scenario.json'
    save_scenario(scenario, str(path))
    loaded = load_scenario(str(path))
    assert loaded.to_dict() == scenario.to_dict()


def test_scenario_errors_name_the_field(tmp_path):
    base = make_scenario().to_dict()

    bad_type = dict(base, obstacles=[{'type': 'sphere'}])
    with pytest.raises(ConfigError) as e:
        scenario_from_dict(bad_type)
    assert e.value.field == 'obstacles[0].type'

    bad_start = dict(base, start_pose={'position': [9.0, 1.0, 1.0], 'yaw': 0.0})
    with pytest.raises(ConfigError) as e:
        scenario_from_dict(bad_start)
    assert e.value.field == 'start_pose.position'

    with pytest.raises(ConfigError) as e:
        scenario_from_dict(dict(base, resolution=0))
    assert e.value.field == 'resolution'

    path = tmp_path / 'broken.json'
    path.write_text('{"name": ')
    with pytest.raises(ConfigError) as e:
        load_scenario(str(path))
    assert e.value.field == 'scenario'
    assert 'line 1' in e.value.message


def test_scenario_missing_file():
    with pytest.raises(ConfigError) as e:
        load_scenario('/nonexistent/scenario.json')
    assert e.value.field == 'scenario'


def test_example_scenario_document_parses():
    with open(EXAMPLE_SCENARIO, encoding='utf-8') as handle:
        scenario = scenario_from_dict(json.load(handle))
    assert scenario.world.obstacles
