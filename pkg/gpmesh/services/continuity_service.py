# services/continuity_service.py - Scan-order smoothness scores
import logging

import numpy as np

from gpmesh.models.geometry import PointCloud
from gpmesh.models.mesh_map import ContinuityParams

logger = logging.getLogger(__name__)

MIN_RANGE = 1e-6


def continuity_scores(cloud: PointCloud, params: ContinuityParams) -> np.ndarray:
    """Discontinuity score per point; small on smooth surfaces, large on isolated points.

    The neighbourhood of point i is the run of `neighborhood` points around it in
    scan order (shifted inwards at the ends of the cloud).
    """
    n = len(cloud)
    scores = np.zeros(n)
    if n < 2:
        return scores
    pts = cloud.points
    ranges = cloud.ranges
    k = params.neighborhood
    idx = np.arange(n)

    if n <= k:
        size = n - 1
        sum_p = pts.sum(axis=0)[None, :] - pts
        sum_r = ranges.sum() - ranges
    else:
        size = k
        csum_p = np.vstack([np.zeros((1, 3)), np.cumsum(pts, axis=0)])
        csum_r = np.concatenate([[0.0], np.cumsum(ranges)])
        start = np.clip(idx - k // 2, 0, n - k - 1)
        stop = start + k + 1
        sum_p = csum_p[stop] - csum_p[start] - pts
        sum_r = csum_r[stop] - csum_r[start] - ranges

    ok = ranges >= MIN_RANGE
    safe = np.where(ok, ranges, 1.0)
    c1 = np.linalg.norm(size * pts - sum_p, axis=1) / (size * safe)
    c2 = np.abs(size * ranges - sum_r) / (size * safe)
    scores[ok] = (params.w1 * c1 + params.w2 * c2)[ok]
    return scores


def continuity_filter(cloud: PointCloud, scores: np.ndarray, c_th: float,
                      exclude_above: bool = True) -> PointCloud:
    """Keep points on the smooth side of c_th. Points at the sensor origin are always dropped.

    exclude_above=False applies the opposite comparison (drop scores below c_th).
    """
    scores = np.asarray(scores, dtype=np.float64)
    if scores.shape[0] != len(cloud):
        raise ValueError(f"{scores.shape[0]} scores for a cloud of {len(cloud)} points")
    keep = scores <= c_th if exclude_above else scores >= c_th
    keep &= cloud.ranges >= MIN_RANGE
    dropped = len(cloud) - int(keep.sum())
    if dropped:
        logger.debug(f"Continuity filter dropped {dropped}/{len(cloud)} points")
    return cloud.select(keep)
