import math

import numpy as np
import pytest

from errors import NoViewpoint
from services.frontier_service import (
    FrontierStore, Viewpoint, ViewpointParams, cluster_extent, cluster_frontiers,
    detect_frontiers, sample_viewpoints, select_best_viewpoint, yaw_change,
)
from services.grid_world import (
    Box, BoxObstacle, CellState, GroundTruthWorld, Pose, SensorModel, VoxelGrid, sense,
)

from conftest import cluster_at, free_grid


def test_detect_frontiers_half_known_slab():
    grid = VoxelGrid(Box.of((0.0, 0.0, 0.0), (1.0, 1.0, 0.1)), 0.1)
    grid.cells[:5] = CellState.FREE
    cells = detect_frontiers(grid)
    assert len(cells) == 10
    assert np.all(cells[:, 0] == 4)
    # Lexicographic order
    assert cells[:, 1].tolist() == list(range(10))


def test_detect_frontiers_ignores_occupied_and_diagonal_unknown():
    grid = VoxelGrid(Box.of((0.0, 0.0, 0.0), (0.3, 0.3, 0.1)), 0.1)
    grid.cells[:] = CellState.FREE
    grid.cells[0, 0, 0] = CellState.UNKNOWN
    grid.cells[2, 2, 0] = CellState.OCCUPIED
    cells = detect_frontiers(grid)
    assert sorted(map(tuple, cells.tolist())) == [(0, 1, 0), (1, 0, 0)]


def test_detect_frontiers_restricted_region():
    grid = VoxelGrid(Box.of((0.0, 0.0, 0.0), (2.0, 1.0, 0.1)), 0.1)
    grid.cells[:5] = CellState.FREE
    grid.cells[15:] = CellState.FREE
    full = detect_frontiers(grid)
    part = detect_frontiers(grid, Box.of((1.2, 0.0, 0.0), (2.0, 1.0, 0.1)))
    assert len(full) == 20
    assert np.all(part[:, 0] == 15)


def test_short_line_is_one_cluster():
    grid = VoxelGrid(Box.of((0.0, 0.0, 0.0), (2.0, 1.0, 1.0)), 0.1)
    cells = np.array([[i, 0, 0] for i in range(10)])
    clusters = cluster_frontiers(cells, grid)
    assert len(clusters) == 1
    assert clusters[0].average_point == pytest.approx([0.5, 0.05, 0.05])


def test_long_line_is_split():
    grid = VoxelGrid(Box.of((0.0, 0.0, 0.0), (6.0, 1.0, 1.0)), 0.1)
    cells = np.array([[i, 0, 0] for i in range(50)])
    clusters = cluster_frontiers(cells, grid, max_extent=2.0)
    assert len(clusters) >= 3
    assert sum(c.size for c in clusters) == 50
    for cluster in clusters:
        assert cluster_extent(grid.cell_centers(cluster.cells)) <= 2.0
    assert [c.id for c in clusters] == list(range(len(clusters)))


def test_disconnected_components_are_separate_clusters():
    grid = VoxelGrid(Box.of((0.0, 0.0, 0.0), (2.0, 2.0, 1.0)), 0.1)
    cells = np.array([[0, 0, 0], [1, 1, 1], [10, 10, 0], [11, 10, 0]])
    clusters = cluster_frontiers(cells, grid)
    # (0,0,0) and (1,1,1) touch diagonally
    assert [c.size for c in clusters] == [2, 2]


def test_yaw_change_minor_arc():
    assert yaw_change(0.1, -0.1) == pytest.approx(0.2)
    assert yaw_change(3.0, -3.0) == pytest.approx(2.0 * math.pi - 6.0)
    assert yaw_change(0.0, math.pi) == pytest.approx(math.pi)


def test_select_best_viewpoint_prefers_cheap_motion_within_top_tier():
    far = Viewpoint((5.0, 0.0, 1.0), 0.0, 100)
    near = Viewpoint((1.0, 0.0, 1.0), 0.0, 95)
    cheap_but_poor = Viewpoint((0.2, 0.0, 1.0), 0.0, 50)
    ordered = select_best_viewpoint([far, cheap_but_poor, near], Pose.of((0.0, 0.0, 1.0), 0.0))
    assert ordered[0] is near
    assert ordered[1:] == [far, cheap_but_poor]
    assert select_best_viewpoint([], Pose.of((0, 0, 0))) == []


def test_sample_viewpoints_sees_cluster(sensor):
    grid = free_grid((6.0, 6.0, 2.0), 0.1)
    cells = np.array([[30, j, 10] for j in range(25, 35)])
    cluster = cluster_at(7, cells, grid)
    viewpoints = sample_viewpoints(cluster, grid, sensor, Pose.of((1.0, 1.0, 1.0), 0.0))
    assert viewpoints
    params = ViewpointParams()
    threshold = max(params.min_coverage, params.coverage_fraction * cluster.size)
    center = cluster.average_point
    for vp in viewpoints:
        assert vp.coverage >= threshold
        assert vp.cluster_id == 7
        heading = math.atan2(center[1] - vp.position[1], center[0] - vp.position[0])
        assert yaw_change(vp.yaw, heading) < 1e-9
    assert viewpoints[0].coverage >= params.tie_tier * max(v.coverage for v in viewpoints)


def test_sample_viewpoints_avoids_obstacles(sensor):
    grid = free_grid((6.0, 6.0, 2.0), 0.1)
    grid.cells[:25] = CellState.OCCUPIED
    grid.mark_changed(None)
    cells = np.array([[30, j, 10] for j in range(25, 35)])
    viewpoints = sample_viewpoints(cluster_at(0, cells, grid), grid, sensor, Pose.of((4.0, 3.0, 1.0)))
    inflated = grid.inflated_occupied(ViewpointParams().inflation)
    for vp in viewpoints:
        idx, _ = grid.cells_of(vp.p)
        assert grid.cells[tuple(idx)] == CellState.FREE
        assert not inflated[tuple(idx)]


def test_tiny_cluster_has_no_viewpoint(sensor):
    grid = free_grid((4.0, 4.0, 2.0), 0.1)
    cluster = cluster_at(3, [[20, 20, 10], [20, 21, 10]], grid)
    with pytest.raises(NoViewpoint):
        sample_viewpoints(cluster, grid, sensor, Pose.of((1.0, 1.0, 1.0)))


def test_enclosed_cluster_has_no_viewpoint(sensor):
    grid = free_grid((4.0, 4.0, 2.0), 0.1)
    grid.cells[:] = CellState.OCCUPIED
    grid.cells[18:23, 18:23, 8:13] = CellState.FREE
    grid.mark_changed(None)
    cluster = cluster_at(0, [[20, 20, 10], [20, 21, 10], [21, 20, 10], [21, 21, 10]], grid)
    with pytest.raises(NoViewpoint):
        sample_viewpoints(cluster, grid, sensor, Pose.of((2.0, 2.0, 1.0)))


def random_world(seed, size=(5.0, 5.0, 2.0), obstacles=4, poses=6):
    rng = np.random.default_rng(seed)
    sx, sy, sz = size
    bounds = Box.of((0.0, 0.0, 0.0), size)
    boxes = []
    for _ in range(obstacles):
        lo = rng.uniform((0.5, 0.5, 0.0), (sx - 1.0, sy - 1.0, 0.25 * sz))
        boxes.append(BoxObstacle(tuple(lo), tuple(lo + rng.uniform((0.2, 0.2, 0.25 * sz), (1.0, 1.0, sz)))))
    world = GroundTruthWorld(boxes, bounds)
    count, poses = poses, []
    while len(poses) < count:
        p = rng.uniform((0.1, 0.1, 0.15 * sz), (sx - 0.1, sy - 0.1, 0.85 * sz))
        if not world.contains(p[None, :])[0]:
            poses.append(Pose.of(p, rng.uniform(-math.pi, math.pi)))
    return world, poses


@pytest.mark.parametrize('seed', range(5))
def test_incremental_store_matches_full_detection(seed):
    world, poses = random_world(seed)
    grid = VoxelGrid(world.bounds, 0.2)
    store = FrontierStore(grid, SensorModel())
    for pose in poses:
        result = sense(grid, world, SensorModel(), pose)
        store.update(result.region)
        assert np.array_equal(store.frontier_cells(), detect_frontiers(grid))
        for cluster in store.clusters.values():
            assert cluster_extent(grid.cell_centers(cluster.cells)) <= store.max_extent + 1e-9
            assert np.all(grid.state_at(cluster.cells) == CellState.FREE)


@pytest.mark.slow
@pytest.mark.parametrize('seed', range(50))
def test_incremental_store_matches_full_detection_on_large_grids(seed):
    world, poses = random_world(1000 + seed, size=(8.0, 8.0, 1.0), obstacles=10, poses=8)
    grid = VoxelGrid(world.bounds, 0.2)
    assert grid.dims == (40, 40, 5)
    store = FrontierStore(grid, SensorModel())
    for pose in poses:
        store.update(sense(grid, world, SensorModel(), pose).region)
    assert np.array_equal(store.frontier_cells(), detect_frontiers(grid))
    owners = [store.cluster_of(c) for c in store.frontier_cells()]
    assert None not in owners
    assert sum(c.size for c in store.clusters.values()) == len(owners)


def test_untouched_clusters_keep_their_ids():
    grid = VoxelGrid(Box.of((0.0, 0.0, 0.0), (6.0, 1.0, 0.2)), 0.1)
    grid.cells[:10] = CellState.FREE
    grid.cells[50:] = CellState.FREE
    store = FrontierStore(grid, SensorModel())
    store.rebuild()
    left = store.cluster_of((9, 0, 0))
    right = store.cluster_of((50, 0, 0))
    assert left is not None and right is not None and left != right

    grid.cells[45:50] = CellState.FREE
    region = Box.of((4.5, 0.0, 0.0), (5.0, 1.0, 0.2))
    grid.mark_changed(region)
    update = store.update(region)
    assert store.cluster_of((9, 0, 0)) == left
    assert right in update.removed
    assert store.cluster_of((45, 0, 0)) in update.added
    assert store.cluster_of((50, 0, 0)) is None
    assert store.still_frontier(np.array([[9, 0, 0], [50, 0, 0]])).tolist() == [True, False]


def test_sample_dirty_marks_dormant_clusters(wall_world, sensor):
    grid = VoxelGrid(wall_world.bounds, 0.1)
    pose = Pose.of((1.0, 2.0, 1.0), 0.0)
    sense(grid, wall_world, sensor, pose)
    store = FrontierStore(grid, sensor)
    store.rebuild()
    dormant = store.sample_dirty(pose)
    assert store.clusters
    for cluster in store.clusters.values():
        assert not cluster.dirty
        if cluster.id in dormant:
            assert cluster.dormant and not cluster.viewpoints
        else:
            assert cluster.active and cluster.best_viewpoint.cluster_id == cluster.id
    assert {c.id for c in store.dormant_clusters()} == set(dormant)
    records = store.records(1.5)
    assert [r['id'] for r in records] == sorted(store.clusters)
    assert all(r['t'] == 1.5 for r in records)


def test_reused_cluster_drops_viewpoints_inside_new_obstacles():
    grid = VoxelGrid(Box.of((0.0, 0.0, 0.0), (2.0, 1.0, 0.2)), 0.1)
    grid.cells[:10] = CellState.FREE
    store = FrontierStore(grid, SensorModel())
    store.rebuild()
    assert len(store) == 1
    cluster_id = next(iter(store.clusters))
    blocked = Viewpoint((0.35, 0.55, 0.15), 0.0, 20, cluster_id)
    clear = Viewpoint((0.75, 0.95, 0.15), 0.0, 15, cluster_id)
    store.clusters[cluster_id].viewpoints = [blocked, clear]
    store.clusters[cluster_id].dirty = False

    # Nothing moved under the viewpoints: the cluster is reused as it was
    region = Box.of((0.3, 0.5, 0.0), (1.0, 0.6, 0.2))
    grid.mark_changed(region)
    update = store.update(region)
    assert update.reused == [cluster_id]
    assert store.clusters[cluster_id].viewpoints == [blocked, clear]
    assert not store.clusters[cluster_id].dirty

    grid.cells[3, 5, :] = CellState.OCCUPIED
    grid.mark_changed(region, Box.of((0.3, 0.5, 0.0), (0.4, 0.6, 0.2)))
    update = store.update(region)
    cluster = store.clusters[cluster_id]
    assert update.reused == [cluster_id]
    assert cluster.viewpoints == [clear]
    assert cluster.dirty


def test_viewpoint_coverage_is_repeatable(wall_world, sensor):
    grid = VoxelGrid(wall_world.bounds, 0.1)
    pose = Pose.of((1.0, 2.0, 1.0), 0.0)
    sense(grid, wall_world, sensor, pose)
    store = FrontierStore(grid, sensor)
    store.rebuild()
    largest = max(store.clusters.values(), key=lambda c: c.size)
    params = ViewpointParams(coverage_samples=10)
    try:
        first = sample_viewpoints(largest, grid, sensor, pose, params)
    except NoViewpoint:
        pytest.skip("largest cluster has no viewpoint in this layout")
    assert sample_viewpoints(largest, grid, sensor, pose, params) == first
    assert all(vp.coverage <= largest.size for vp in first)
