# services/keyframe_service.py
import logging
from typing import Sequence, Tuple

import numpy as np

from gpmesh.config import DEFAULT_DOWNSAMPLE_TABLE, DEFAULT_KEYFRAME_TABLE
from gpmesh.models.geometry import Frame, PointCloud, PoseSE3
from gpmesh.models.keyframe import SlidingWindow, SpaciousnessState
from gpmesh.utils.spatial_hash import encode_keys, voxel_coords
from gpmesh.utils.validators import validate_positive

logger = logging.getLogger(__name__)


def median_range(cloud: PointCloud) -> float:
    """Median point range; the lower-middle element for even counts."""
    ranges = cloud.ranges
    mid = (ranges.shape[0] - 1) // 2
    return float(np.partition(ranges, mid)[mid])


def spaciousness_update(state: SpaciousnessState, cloud: PointCloud) -> SpaciousnessState:
    if cloud.is_empty:
        logger.warning("Spaciousness update skipped: empty cloud")
        return state
    median = median_range(cloud)
    if not state.initialized:
        return state.model_copy(update={"m": median, "initialized": True})
    return state.model_copy(update={"m": state.alpha * state.m + state.beta * median})


def _lookup(table: Sequence[Sequence[float]], m: float) -> Tuple[float, ...]:
    if m < 0:
        raise ValueError(f"spaciousness must be non-negative, got {m}")
    for row in table:
        if m > row[0]:
            return tuple(float(v) for v in row[1:])
    return tuple(float(v) for v in table[-1][1:])


def keyframe_thresholds(m: float, table: Sequence[Sequence[float]] = DEFAULT_KEYFRAME_TABLE) -> Tuple[float, float]:
    """(translation_m, rotation_rad) thresholds for spaciousness m."""
    trans_th, rot_th = _lookup(table, m)
    return trans_th, rot_th


def downsample_size(m: float, table: Sequence[Sequence[float]] = DEFAULT_DOWNSAMPLE_TABLE) -> float:
    return _lookup(table, m)[0]


def should_select(prev_kf_pose: PoseSE3, cur_pose: PoseSE3, thresholds: Tuple[float, float]) -> bool:
    trans_th, rot_th = thresholds
    delta = prev_kf_pose.inverse() @ cur_pose
    return bool(np.linalg.norm(delta.translation) >= trans_th or delta.rotation_angle() >= rot_th)


def aggregate_window(window: SlidingWindow) -> PointCloud:
    """Express every keyframe of the window in the newest keyframe's sensor frame."""
    frames = window.frames
    if not frames:
        raise ValueError("cannot aggregate an empty window")
    newest = frames[-1]
    to_newest = newest.pose.inverse()
    parts = []
    for kf in frames[:-1]:
        parts.append((to_newest @ kf.pose).apply(kf.cloud.points))
    parts.append(newest.cloud.points)
    return PointCloud(points=np.concatenate(parts, axis=0), timestamp=newest.timestamp, frame=Frame.SENSOR)


def voxel_downsample(cloud: PointCloud, size: float) -> PointCloud:
    """One centroid per occupied cell, in order of each cell's first point."""
    validate_positive(size, "downsample size")
    if cloud.is_empty:
        return cloud
    keys = encode_keys(voxel_coords(cloud.points, size))
    _, first, inverse = np.unique(keys, return_index=True, return_inverse=True)
    inverse = inverse.reshape(-1)
    sums = np.zeros((first.shape[0], 3))
    np.add.at(sums, inverse, cloud.points)
    counts = np.bincount(inverse, minlength=first.shape[0])
    centroids = sums / counts[:, None]
    order = np.argsort(first, kind="stable")
    return PointCloud(points=centroids[order], timestamp=cloud.timestamp, frame=cloud.frame)
