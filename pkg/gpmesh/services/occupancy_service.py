# services/occupancy_service.py - Log-odds occupancy and dynamic cell culling
import logging
from typing import Optional, Set, Union

import numpy as np
from scipy.special import expit, logit

from gpmesh.config import FineConfig
from gpmesh.models.geometry import PointCloud, PoseSE3
from gpmesh.models.mesh_map import MeshMap
from gpmesh.models.occupancy import Observation, OccupancyGrid, OccupancyVoxel
from gpmesh.models.range_image import RangeGeometry
from gpmesh.services.coarse_removal_service import project_points
from gpmesh.utils.spatial_hash import key_centers, point_keys
from gpmesh.utils.validators import validate_probability

logger = logging.getLogger(__name__)

# Sub-cell offsets, in voxel sizes, through which a known voxel is projected into bins.
SUBCELL_OFFSETS = np.stack(np.meshgrid(*[[-1.0 / 3.0, 0.0, 1.0 / 3.0]] * 3, indexing="ij"), axis=-1).reshape(-1, 3)


def occupancy_probability(log_odds: Union[float, np.ndarray]):
    """P = 1 / (1 + exp(-log_odds))"""
    p = expit(log_odds)
    return float(p) if np.ndim(p) == 0 else p


def logodds_update(voxel: OccupancyVoxel, observation: Observation, p_hit: float = 0.7, p_miss: float = 0.4,
                   clamp: float = 10.0, scan_index: Optional[int] = None) -> OccupancyVoxel:
    p = p_hit if Observation(observation) == Observation.HIT else p_miss
    validate_probability(p, "observation probability")
    voxel.log_odds = float(np.clip(voxel.log_odds + logit(p), -clamp, clamp))
    if scan_index is not None:
        voxel.last_update = scan_index
    return voxel


def mark_occupied(mesh_map: MeshMap, scan_world: PointCloud, voxel_size: Optional[float] = None) -> Set[int]:
    """Occupancy voxels holding scan points whose centre lies in an existing mesh cell."""
    voxel_size = voxel_size or mesh_map.voxel_size
    if scan_world.is_empty:
        return set()
    keys = np.unique(point_keys(scan_world.points, voxel_size))
    cell_keys = point_keys(key_centers(keys, voxel_size), mesh_map.voxel_size)
    return {int(k) for k, c in zip(keys, cell_keys) if int(c) in mesh_map}


def bin_occupied_ranges(scan: PointCloud, sensor_pose: PoseSE3, geometry: RangeGeometry, occupied: Set[int],
                        voxel_size: float, max_range: float = 80.0) -> np.ndarray:
    """Per flattened pixel, centre range of the occupied voxel holding its nearest return (-inf if none)."""
    r_occ = np.full(geometry.rows * geometry.cols, -np.inf)
    if scan.is_empty or not occupied:
        return r_occ
    rows, cols, ranges, ok = project_points(scan.points, geometry)
    idx = np.flatnonzero(ok & (ranges <= max_range))
    if not idx.size:
        return r_occ
    pixel = rows[idx] * geometry.cols + cols[idx]
    order = np.lexsort((ranges[idx], pixel))
    pixels, first = np.unique(pixel[order], return_index=True)
    nearest = idx[order[first]]
    keys = point_keys(sensor_pose.apply(scan.points[nearest]), voxel_size)
    hit = np.isin(keys, np.fromiter(occupied, dtype=np.int64, count=len(occupied)))
    centres = key_centers(keys[hit], voxel_size)
    r_occ[pixels[hit]] = np.linalg.norm(centres - sensor_pose.translation, axis=1)
    return r_occ


def mark_free(grid: OccupancyGrid, occupied: Set[int], scan: PointCloud, sensor_pose: PoseSE3,
              geometry: RangeGeometry, max_range: float = 80.0) -> Set[int]:
    """Known voxels lying in front of an occupied voxel on the same bearing.

    Each bearing bin carries the centre range r_occ of the occupied voxel its
    nearest return fell in. A known, unoccupied voxel covering that bin is free
    when its own centre range is below r_occ - voxel_size.
    """
    known = [k for k in grid.sorted_keys() if k not in occupied]
    if not known or not occupied or scan.is_empty:
        return set()
    size = grid.voxel_size
    r_occ = bin_occupied_ranges(scan, sensor_pose, geometry, occupied, size, max_range)
    centres = key_centers(np.array(known, dtype=np.int64), size)
    centre_range = np.linalg.norm(centres - sensor_pose.translation, axis=1)
    covers = (centres[:, None, :] + SUBCELL_OFFSETS[None] * size).reshape(-1, 3)
    rows, cols, _, ok = project_points(sensor_pose.inverse().apply(covers), geometry)
    bin_range = np.full(covers.shape[0], -np.inf)
    bin_range[ok] = r_occ[rows[ok] * geometry.cols + cols[ok]]
    reach = bin_range.reshape(len(known), -1).max(axis=1)
    free = centre_range < reach - size
    return {known[i] for i in np.flatnonzero(free)}


def update_grid(grid: OccupancyGrid, occupied: Set[int], free: Set[int], cfg: FineConfig,
                scan_index: int) -> OccupancyGrid:
    for key in sorted(occupied):
        logodds_update(grid.get_or_create(key), Observation.HIT, cfg.p_hit, cfg.p_miss, cfg.logodds_clamp, scan_index)
    for key in sorted(free):
        logodds_update(grid.get_or_create(key), Observation.MISS, cfg.p_hit, cfg.p_miss, cfg.logodds_clamp, scan_index)
    return grid


def cull_dynamic(mesh_map: MeshMap, grid: OccupancyGrid, p_occ: float = 0.8, p_free: float = 0.3) -> MeshMap:
    """Clear cells whose occupancy voxel fell below p_free; pin cells above p_occ."""
    if not len(grid) or mesh_map.is_empty:
        return mesh_map
    keys = mesh_map.sorted_keys()
    occ_keys = point_keys(key_centers(np.array(keys, dtype=np.int64), mesh_map.voxel_size), grid.voxel_size)
    cleared = 0
    for key, occ_key in zip(keys, occ_keys):
        voxel = grid.voxels.get(int(occ_key))
        if voxel is None:
            continue
        cell = mesh_map.cells[key]
        p = voxel.probability
        if p < p_free:
            if cell.training.shape[0] or cell.pinned:
                cleared += 1
            cell.clear()
        elif p > p_occ:
            cell.pinned = True
    if cleared:
        logger.info(f"Fine removal cleared {cleared} cells")
    return mesh_map
