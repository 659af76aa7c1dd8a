from dataclasses import replace
import itertools

import numpy as np
import pytest

from errors import ConfigError, GenerationFailed
from services.grid_world import Box, CylinderObstacle, VoxelGrid
from services.scenario_service import (
    CORRIDOR_FREE, CORRIDOR_PARTS, PRESETS, START_CLEARANCE, ScenarioSpec, clearance, generate, jitter_start, preset,
    reachable_free_mask, _box_distance,
)

from conftest import make_scenario


@pytest.mark.parametrize('name', sorted(PRESETS))
def test_presets_generate_inside_bounds(name):
    scenario = generate(preset(name))
    bounds = scenario.world.bounds
    for obstacle in scenario.world.obstacles:
        box = obstacle.aabb()
        assert np.all(box.lo_array >= bounds.lo_array - 1e-9)
        assert np.all(box.hi_array <= bounds.hi_array + 1e-9)
    assert clearance(scenario.world, scenario.start_pose.p) >= START_CLEARANCE
    assert scenario.resolution == 0.2


def test_empty_preset_has_no_obstacles():
    scenario = generate(preset('empty'))
    assert scenario.world.obstacles == []
    assert clearance(scenario.world, (5.0, 5.0, 1.0)) == pytest.approx(1.0)


def test_same_seed_same_world():
    assert generate(preset('maze1', 7)).to_dict() == generate(preset('maze1', 7)).to_dict()
    assert generate(preset('outdoor', 3)).to_dict() == generate(preset('outdoor', 3)).to_dict()


def test_maze_depends_on_seed():
    assert generate(preset('maze2', 0)).to_dict() != generate(preset('maze2', 1)).to_dict()


def test_corridor_ignores_seed():
    assert generate(preset('corridor', 0)).to_dict() == generate(preset('corridor', 99)).to_dict()


def test_corridor_features_are_open():
    scenario = generate(preset('corridor'))
    assert set(CORRIDOR_PARTS.values()) <= set(CORRIDOR_FREE)
    assert len(CORRIDOR_PARTS) == 4
    for (x0, x1), (y0, y1) in CORRIDOR_FREE.values():
        center = np.array([0.5 * (x0 + x1), 0.5 * (y0 + y1), 1.0])
        assert not bool(scenario.world.contains(center[None, :])[0])
    assert bool(scenario.world.contains(np.array([[8.0, 6.0, 1.0]]))[0])


def test_maze_walls_are_axis_aligned_slabs():
    scenario = generate(preset('maze2', 4))
    assert scenario.world.obstacles
    for wall in scenario.world.obstacles:
        size = wall.aabb().size
        assert min(size[0], size[1]) == pytest.approx(0.4)
        assert size[2] == pytest.approx(2.0)


def test_outdoor_keeps_gaps():
    scenario = generate(preset('outdoor', 5))
    obstacles = scenario.world.obstacles
    assert any(isinstance(o, CylinderObstacle) for o in obstacles)
    for a, b in itertools.combinations(obstacles, 2):
        assert _box_distance(a.aabb(), b.aabb()) >= 1.2 - 1e-9


@pytest.mark.parametrize('name', ['maze1', 'maze2', 'corridor', 'outdoor'])
def test_free_space_connected(name):
    scenario = generate(preset(name, 2))
    grid = scenario.make_grid()
    reachable = reachable_free_mask(scenario.world, grid, scenario.start_pose.p)
    free = ~scenario.world.solid_mask(grid)
    assert reachable.sum() >= 0.95 * free.sum()


def test_reachable_mask_stops_at_wall(wall_world):
    grid = VoxelGrid(wall_world.bounds, 0.2)
    reachable = reachable_free_mask(wall_world, grid, (1.0, 2.0, 1.0))
    assert reachable.sum() == 15 * 20 * 10
    assert not reachable[16:].any()
    assert not reachable_free_mask(wall_world, grid, (9.0, 2.0, 1.0)).any()
    assert not reachable_free_mask(wall_world, grid, (3.2, 2.0, 1.0)).any()


def test_generation_fails_without_clearance():
    spec = replace(preset('empty'), start=(0.2, 5.0, 1.0))
    with pytest.raises(GenerationFailed):
        generate(spec)


def test_unknown_preset():
    with pytest.raises(ConfigError) as e:
        preset('bogus')
    assert e.value.field == 'type'


def test_preset_resolution_override():
    assert preset('maze1', 3, 0.1).resolution == 0.1
    assert preset('maze1', 3).seed == 3


@pytest.mark.parametrize('changes, field', [
    ({'generator': 'cave'}, 'generator'),
    ({'bounds': Box.of((0, 0, 0), (0, 1, 1))}, 'bounds'),
    ({'resolution': 0.0}, 'resolution'),
    ({'cell_size': 0.6}, 'cell_size'),
    ({'door_fraction': 1.0}, 'door_fraction'),
])
def test_spec_validation(changes, field):
    spec = replace(ScenarioSpec('bad', Box.of((0, 0, 0), (10, 10, 2)), 'maze'), **changes)
    with pytest.raises(ConfigError) as e:
        spec.validate()
    assert e.value.field == field


def test_jitter_start_is_seeded_and_safe():
    scenario = generate(preset('empty'))
    first = jitter_start(scenario, 3, 0.5)
    assert first == jitter_start(scenario, 3, 0.5)
    assert first != jitter_start(scenario, 4, 0.5)
    offset = first.p - scenario.start_pose.p
    assert np.hypot(offset[0], offset[1]) <= 0.5
    assert offset[2] == 0.0
    assert first.yaw == scenario.start_pose.yaw
    assert clearance(scenario.world, first.p) >= START_CLEARANCE


def test_jitter_start_falls_back_to_nominal():
    scenario = generate(preset('empty'))
    assert jitter_start(scenario, 3, 0.0) is scenario.start_pose
    # Only the exact centre of a 1 m cube keeps 0.5 m clearance
    tight = make_scenario(size=(1.0, 1.0, 1.0), start=(0.5, 0.5, 0.5))
    assert jitter_start(tight, 1, 0.4) == tight.start_pose
