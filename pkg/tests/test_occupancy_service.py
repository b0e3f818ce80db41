"""
Log-odds occupancy updates, free-space marking and dynamic cell culling.
"""

import math

import numpy as np
import pytest

from gpmesh.config import FineConfig, MesherConfig
from gpmesh.models.geometry import Frame, PointCloud, PoseSE3
from gpmesh.models.mesh_map import MeshMap
from gpmesh.models.occupancy import Observation, OccupancyGrid, OccupancyVoxel
from gpmesh.models.range_image import RangeGeometry
from gpmesh.services.mesher_service import update_cells
from gpmesh.services.occupancy_service import (
    bin_occupied_ranges,
    cull_dynamic,
    logodds_update,
    mark_free,
    mark_occupied,
    occupancy_probability,
    update_grid,
)
from gpmesh.utils.spatial_hash import encode_key, point_keys

from tests.conftest import plane_cloud

GEOMETRY = RangeGeometry.from_degrees(16, 360, 15.0, -25.0)


def patch(x: float, lo: float, hi: float, step: float) -> np.ndarray:
    """Points on the plane x = const over a square of y, z."""
    vals = np.arange(lo, hi + 1e-9, step)
    return np.array([(x, y, z) for y in vals for z in vals])


class TestLogOdds:
    def test_single_hit(self):
        voxel = logodds_update(OccupancyVoxel(), Observation.HIT)
        assert voxel.log_odds == pytest.approx(math.log(7 / 3), abs=1e-12)
        assert voxel.log_odds == pytest.approx(0.8473, abs=1e-4)

    def test_hit_then_miss(self):
        voxel = logodds_update(logodds_update(OccupancyVoxel(), Observation.HIT), Observation.MISS)
        assert voxel.log_odds == pytest.approx(0.4418, abs=1e-4)
        assert voxel.probability == pytest.approx(0.609, abs=1e-3)

    def test_uninformative_observation(self):
        voxel = logodds_update(OccupancyVoxel(log_odds=1.25), Observation.HIT, p_hit=0.5)
        assert voxel.log_odds == 1.25

    def test_clamped(self):
        voxel = OccupancyVoxel()
        for _ in range(100):
            logodds_update(voxel, Observation.HIT)
        assert voxel.log_odds == 10.0
        for _ in range(100):
            logodds_update(voxel, Observation.MISS)
        assert voxel.log_odds == -10.0

    def test_records_scan_index(self):
        assert logodds_update(OccupancyVoxel(), Observation.HIT, scan_index=7).last_update == 7

    def test_probability_values(self):
        assert occupancy_probability(0.0) == 0.5
        assert occupancy_probability(math.log(7 / 3)) == pytest.approx(0.7, abs=1e-12)
        assert occupancy_probability(10.0) == pytest.approx(1.0 / (1.0 + math.exp(-10.0)))
        assert occupancy_probability(-10.0) == pytest.approx(1.0 / (1.0 + math.exp(10.0)))

    def test_probability_is_monotone(self):
        p = occupancy_probability(np.linspace(-10, 10, 1001))
        assert np.all(np.diff(p) > 0)

    def test_matches_recursive_bayes(self, rng):
        """Summed log-odds equal the recursive Bayes filter started from 0.5."""
        for _ in range(1000):
            voxel = OccupancyVoxel()
            belief = 0.5
            for _ in range(20):
                hit = rng.random() < 0.5
                p_hit = rng.uniform(0.5, 0.95)
                p_miss = rng.uniform(0.05, 0.5)
                p = p_hit if hit else p_miss
                logodds_update(voxel, Observation.HIT if hit else Observation.MISS, p_hit, p_miss, clamp=1e9)
                belief = belief * p / (belief * p + (1.0 - belief) * (1.0 - p))
            assert voxel.probability == pytest.approx(belief, abs=1e-12)

    def test_repeated_hits_never_lower_probability(self):
        voxel = OccupancyVoxel()
        last = voxel.probability
        for _ in range(30):
            logodds_update(voxel, Observation.HIT)
            assert voxel.probability >= last
            last = voxel.probability


class TestMarking:
    def test_empty_scan(self):
        assert mark_occupied(MeshMap(), PointCloud.empty(frame=Frame.WORLD)) == set()

    def test_points_share_a_voxel(self):
        mesh_map = MeshMap()
        mesh_map.get_or_create(encode_key(0, 0, 0))
        scan = PointCloud(points=[[0.2, 0.2, 0.2], [0.7, 0.1, 0.9]], frame=Frame.WORLD)
        assert mark_occupied(mesh_map, scan) == {encode_key(0, 0, 0)}

    def test_points_outside_the_map_are_ignored(self):
        mesh_map = MeshMap()
        mesh_map.get_or_create(encode_key(0, 0, 0))
        scan = PointCloud(points=[[0.2, 0.2, 0.2], [5.5, 0.5, 0.5]], frame=Frame.WORLD)
        assert mark_occupied(mesh_map, scan) == {encode_key(0, 0, 0)}

    def test_only_occupied_voxel_known(self):
        grid = OccupancyGrid()
        key = encode_key(11, 1, 1)
        grid.get_or_create(key)
        scan = PointCloud(points=[[11.0, 1.0, 1.0]])
        assert mark_free(grid, {key}, scan, PoseSE3.identity(), GEOMETRY) == set()

    def test_voxel_in_front_of_an_occupied_voxel_is_free(self):
        grid = OccupancyGrid()
        near = encode_key(5, 0, 0)
        grid.get_or_create(near)
        scan = PointCloud(points=[[11.0, 1.0, 1.0]])
        occupied = {encode_key(11, 1, 1)}
        free = mark_free(grid, occupied, scan, PoseSE3.identity(), GEOMETRY)
        assert free == {near}
        assert not free & occupied

    def test_occupied_voxel_nearer_than_candidate(self):
        grid = OccupancyGrid()
        grid.get_or_create(encode_key(10, 0, 0))
        scan = PointCloud(points=[[5.25, 0.25, 0.25]])
        assert mark_free(grid, {encode_key(5, 0, 0)}, scan, PoseSE3.identity(), GEOMETRY) == set()

    def test_return_outside_occupied_voxels_frees_nothing(self):
        grid = OccupancyGrid()
        grid.get_or_create(encode_key(5, 0, 0))
        scan = PointCloud(points=[[11.0, 1.0, 1.0]])
        assert mark_free(grid, {encode_key(20, 20, 20)}, scan, PoseSE3.identity(), GEOMETRY) == set()

    def test_voxel_within_one_voxel_of_the_return_is_not_free(self):
        grid = OccupancyGrid()
        grid.get_or_create(encode_key(10, 1, 1))
        scan = PointCloud(points=[[11.5, 1.5, 1.5]])
        assert mark_free(grid, {encode_key(11, 1, 1)}, scan, PoseSE3.identity(), GEOMETRY) == set()

    def test_returns_beyond_max_range_are_ignored(self):
        grid = OccupancyGrid()
        grid.get_or_create(encode_key(5, 0, 0))
        scan = PointCloud(points=[[11.0, 1.0, 1.0]])
        assert mark_free(grid, {encode_key(11, 1, 1)}, scan, PoseSE3.identity(), GEOMETRY, max_range=8.0) == set()

    @pytest.mark.parametrize("pose", [
        PoseSE3(translation=[10.0, 0.0, 0.0]),
        PoseSE3.from_rotvec([0.0, 0.0, math.pi / 2], [2.0, -3.0, 0.0]),
    ])
    def test_sensor_pose_is_applied(self, pose):
        points = np.array([[11.0, 1.0, 1.0]])
        occupied = {int(k) for k in point_keys(pose.apply(points), 1.0)}
        near = int(point_keys(pose.apply([[5.5, 0.5, 0.5]]), 1.0)[0])
        grid = OccupancyGrid()
        grid.get_or_create(near)
        assert mark_free(grid, occupied, PointCloud(points=points), pose, GEOMETRY) == {near}

    def test_occupied_range_is_the_voxel_centre(self):
        pose = PoseSE3(translation=[0.5, 0.5, 0.5])
        scan = PointCloud(points=[[4.0, 0.0, 0.0], [10.9, 0.0, 0.0]])
        ranges = bin_occupied_ranges(scan, pose, GEOMETRY, {encode_key(4, 0, 0)}, 1.0)
        assert np.count_nonzero(np.isfinite(ranges)) == 1
        assert ranges[np.isfinite(ranges)][0] == pytest.approx(4.0)

    def test_update_grid(self):
        grid = OccupancyGrid()
        hit, miss = encode_key(0, 0, 0), encode_key(1, 0, 0)
        update_grid(grid, {hit}, {miss}, FineConfig(), 3)
        assert grid.voxels[hit].last_update == 3 and grid.voxels[miss].last_update == 3
        assert grid.voxels[hit].log_odds == pytest.approx(math.log(7 / 3))
        assert grid.voxels[miss].log_odds == pytest.approx(math.log(4 / 6))


class TestCulling:
    def planar_map(self):
        return update_cells(plane_cloud(0.3), MeshMap(), MesherConfig())

    def test_confident_cells_are_pinned(self):
        mesh_map = self.planar_map()
        grid = OccupancyGrid()
        grid.get_or_create(encode_key(0, 0, 0)).log_odds = 2.2
        cull_dynamic(mesh_map, grid)
        cell = mesh_map.get(encode_key(0, 0, 0))
        assert cell.pinned and cell.training.shape[0] == 100

    def test_free_cells_are_cleared_but_kept(self):
        mesh_map = self.planar_map()
        grid = OccupancyGrid()
        grid.get_or_create(encode_key(0, 0, 0)).log_odds = -2.2
        cull_dynamic(mesh_map, grid)
        cell = mesh_map.get(encode_key(0, 0, 0))
        assert cell is not None and cell.training.shape[0] == 0
        assert cell.valid_vertex_count == 0 and not cell.pinned
        keys = mesh_map.sorted_keys()
        cull_dynamic(mesh_map, grid)
        assert mesh_map.sorted_keys() == keys

    def test_empty_grid_changes_nothing(self):
        mesh_map = self.planar_map()
        cull_dynamic(mesh_map, OccupancyGrid())
        assert mesh_map.get(encode_key(0, 0, 0)).training.shape[0] == 100

    def test_undecided_cells_untouched(self):
        mesh_map = self.planar_map()
        grid = OccupancyGrid()
        grid.get_or_create(encode_key(0, 0, 0)).log_odds = 0.5
        cull_dynamic(mesh_map, grid)
        cell = mesh_map.get(encode_key(0, 0, 0))
        assert not cell.pinned and cell.training.shape[0] == 100

    def test_vacated_cell_is_cleared_and_wall_pinned(self):
        """A patch seen once and then looked through is cleared; the wall behind it stays."""
        cfg = MesherConfig()
        fine = FineConfig()
        cube = patch(3.5, 0.05, 0.95, 0.1)
        wall = patch(8.5, -3.0, 3.0, 0.1)
        mesh_map = update_cells(PointCloud(points=np.vstack([cube, wall]), frame=Frame.WORLD), MeshMap(), cfg)
        grid = OccupancyGrid()
        scans = [cube] + [wall] * 20
        for k, points in enumerate(scans):
            scan = PointCloud(points=points)
            world = scan.transformed(PoseSE3.identity(), Frame.WORLD)
            occupied = mark_occupied(mesh_map, world)
            free = mark_free(grid, occupied, scan, PoseSE3.identity(), GEOMETRY, fine.max_range_m)
            update_grid(grid, occupied, free, fine, k)
            cull_dynamic(mesh_map, grid, fine.p_occ, fine.p_free)
        cube_cell = mesh_map.get(encode_key(3, 0, 0))
        assert cube_cell.training.shape[0] == 0
        assert grid.voxels[encode_key(3, 0, 0)].probability < fine.p_free
        wall_cell = mesh_map.get(encode_key(8, 1, 1))
        assert wall_cell.pinned and wall_cell.training.shape[0] > 0
