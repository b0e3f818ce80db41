# services/coarse_removal_service.py - Range-image differencing between keyframes
import logging
from typing import Tuple

import numpy as np

from gpmesh.errors import GeometryMismatchError
from gpmesh.models.geometry import PointCloud, PoseSE3
from gpmesh.models.range_image import EMPTY_PIXEL, RangeGeometry, RangeImage

logger = logging.getLogger(__name__)

MIN_RANGE = 1e-6


def project_points(points: np.ndarray, geometry: RangeGeometry) -> Tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
    """Pixel (row, col) and range of each point plus a mask of points that land in the image."""
    pts = np.asarray(points, dtype=np.float64).reshape(-1, 3)
    ranges = np.linalg.norm(pts, axis=1)
    ok = ranges >= MIN_RANGE
    safe = np.where(ok, ranges, 1.0)
    azimuth = np.arctan2(pts[:, 1], pts[:, 0])
    elevation = np.arcsin(np.clip(pts[:, 2] / safe, -1.0, 1.0))
    cols = np.floor((1.0 - (azimuth / np.pi + 1.0) / 2.0) * geometry.cols).astype(np.int64) % geometry.cols
    fov = geometry.fov_up - geometry.fov_down
    rows = np.floor((geometry.fov_up - elevation) / fov * geometry.rows).astype(np.int64)
    ok &= (rows >= 0) & (rows < geometry.rows)
    return rows, cols, ranges, ok


def spherical_project(cloud: PointCloud, geometry: RangeGeometry) -> RangeImage:
    """Minimum-range image of a sensor-frame cloud."""
    img = np.full((geometry.rows, geometry.cols), EMPTY_PIXEL)
    if not cloud.is_empty:
        rows, cols, ranges, ok = project_points(cloud.points, geometry)
        np.minimum.at(img, (rows[ok], cols[ok]), ranges[ok])
    return RangeImage(geometry=geometry, ranges=img)


def range_diff_mask(img_prev: RangeImage, img_cur: RangeImage, r_th: float, cur_cloud: PointCloud) -> np.ndarray:
    """Flag current points whose pixel range changed by more than r_th between the images."""
    if img_prev.geometry != img_cur.geometry:
        raise GeometryMismatchError("range images were projected with different geometries")
    mask = np.zeros(len(cur_cloud), dtype=bool)
    if cur_cloud.is_empty:
        return mask
    rows, cols, _, ok = project_points(cur_cloud.points, img_cur.geometry)
    r_prev = img_prev.ranges[rows[ok], cols[ok]]
    r_cur = img_cur.ranges[rows[ok], cols[ok]]
    both = np.isfinite(r_prev) & np.isfinite(r_cur)
    diff = np.where(both, np.abs(r_cur - r_prev), 0.0)
    mask[ok] = both & (diff > r_th)
    return mask


def coarse_remove(cur_kf_cloud: PointCloud, prev_agg_cloud: PointCloud, t_rel: PoseSE3,
                  geometry: RangeGeometry, r_th: float) -> Tuple[PointCloud, int]:
    """Drop current keyframe points that disagree with the previous aggregate.

    `t_rel` maps the previous aggregate's frame into the current sensor frame.
    """
    if cur_kf_cloud.is_empty or prev_agg_cloud.is_empty:
        return cur_kf_cloud, 0
    prev_in_cur = prev_agg_cloud.transformed(t_rel, frame=cur_kf_cloud.frame)
    img_prev = spherical_project(prev_in_cur, geometry)
    img_cur = spherical_project(cur_kf_cloud, geometry)
    flagged = range_diff_mask(img_prev, img_cur, r_th, cur_kf_cloud)
    removed = int(flagged.sum())
    if removed:
        logger.debug(f"Coarse removal flagged {removed}/{len(cur_kf_cloud)} points")
    return cur_kf_cloud.select(~flagged), removed
