# services/evaluation_service.py - Mesh accuracy and trajectory error metrics
import logging
from typing import Sequence, Tuple

import numpy as np
from scipy.spatial import cKDTree

from gpmesh.models.geometry import PointCloud, PoseSE3
from gpmesh.models.report import ApeResult, MeshScores
from gpmesh.utils.spatial_hash import key_centers, point_keys
from gpmesh.utils.validators import validate_positive

logger = logging.getLogger(__name__)


def _points(cloud) -> np.ndarray:
    if isinstance(cloud, PointCloud):
        return cloud.points
    return np.asarray(cloud, dtype=np.float64).reshape(-1, 3)


class ObservedRegion:
    """Voxel keys of every world point the sensor returned; crops ground truth to what was seen."""

    def __init__(self, voxel_size: float):
        validate_positive(voxel_size, "observed voxel size")
        self.voxel_size = voxel_size
        self._keys = np.empty(0, dtype=np.int64)

    def __len__(self) -> int:
        return self._keys.shape[0]

    def add(self, points_world: np.ndarray):
        if len(points_world):
            self._keys = np.union1d(self._keys, point_keys(points_world, self.voxel_size))

    def centers(self) -> np.ndarray:
        return key_centers(self._keys, self.voxel_size)


def crop_to_observed(reference, observed, radius: float) -> np.ndarray:
    """Reference points within `radius` of an observed point."""
    validate_positive(radius, "crop radius")
    ref = _points(reference)
    seen = _points(observed)
    if ref.shape[0] == 0 or seen.shape[0] == 0:
        return np.empty((0, 3))
    dist, _ = cKDTree(seen).query(ref, distance_upper_bound=radius)
    return ref[dist <= radius]


def eval_mesh(candidate, ground_truth, delta: float = 0.1, recall_reference=None) -> MeshScores:
    """Precision / recall / F1 (percent) between two point samplings at threshold delta.

    Precision is measured against `ground_truth`; recall against `recall_reference`
    when given (typically the ground truth cropped to the observed region).
    """
    validate_positive(delta, "delta")
    cand = _points(candidate)
    gt = _points(ground_truth)
    ref = gt if recall_reference is None else _points(recall_reference)
    if cand.shape[0] == 0 or gt.shape[0] == 0 or ref.shape[0] == 0:
        logger.warning(f"Mesh evaluation on empty input ({cand.shape[0]} candidate, {gt.shape[0]} reference, "
                       f"{ref.shape[0]} recall points)")
        return MeshScores(delta=delta, candidate_points=cand.shape[0], reference_points=ref.shape[0])
    to_gt, _ = cKDTree(gt).query(cand)
    to_cand, _ = cKDTree(cand).query(ref)
    precision = 100.0 * float(np.mean(to_gt <= delta))
    recall = 100.0 * float(np.mean(to_cand <= delta))
    total = precision + recall
    f1 = 2.0 * precision * recall / total if total > 0 else 0.0
    return MeshScores(delta=delta, precision=precision, recall=recall, f1=f1,
                      accuracy_mean=float(to_gt.mean()), completion_mean=float(to_cand.mean()),
                      candidate_points=cand.shape[0], reference_points=ref.shape[0])


def ghost_fraction(candidate, dynamic_points, static_reference, delta: float = 0.1) -> float:
    """Percent of candidate samples within delta of a dynamic-labelled return and farther than delta from static truth."""
    validate_positive(delta, "delta")
    cand = _points(candidate)
    dyn = _points(dynamic_points)
    if cand.shape[0] == 0 or dyn.shape[0] == 0:
        return 0.0
    to_dyn, _ = cKDTree(dyn).query(cand, distance_upper_bound=delta)
    ghost = to_dyn <= delta
    static = _points(static_reference)
    if static.shape[0]:
        to_static, _ = cKDTree(static).query(cand, distance_upper_bound=delta)
        ghost &= to_static > delta
    return 100.0 * float(np.mean(ghost))


def associate_by_time(estimated: Sequence[Tuple[float, PoseSE3]], ground_truth: Sequence[Tuple[float, PoseSE3]],
                      max_dt: float = 0.05):
    """Pair each estimated pose with the nearest ground-truth stamp within max_dt."""
    if not estimated or not ground_truth:
        return []
    gt_stamps = np.array([t for t, _ in ground_truth])
    order = np.argsort(gt_stamps, kind="stable")
    sorted_stamps = gt_stamps[order]
    pairs = []
    for stamp, pose in estimated:
        pos = int(np.searchsorted(sorted_stamps, stamp))
        best = None
        for cand in (pos - 1, pos):
            if 0 <= cand < sorted_stamps.shape[0]:
                dt = abs(sorted_stamps[cand] - stamp)
                if dt <= max_dt and (best is None or dt < best[0]):
                    best = (dt, cand)
        if best is not None:
            pairs.append((pose, ground_truth[int(order[best[1]])][1]))
    return pairs


def align_rigid(source: np.ndarray, target: np.ndarray) -> PoseSE3:
    """Least-squares rotation + translation mapping source points onto target (no scale)."""
    mu_s = source.mean(axis=0)
    mu_t = target.mean(axis=0)
    cov = (target - mu_t).T @ (source - mu_s) / source.shape[0]
    u, _, vt = np.linalg.svd(cov)
    d = np.sign(np.linalg.det(u @ vt))
    rot = u @ np.diag([1.0, 1.0, d if d != 0 else 1.0]) @ vt
    return PoseSE3(rotation=rot, translation=mu_t - rot @ mu_s)


def eval_ape(estimated: Sequence[Tuple[float, PoseSE3]], ground_truth: Sequence[Tuple[float, PoseSE3]],
             max_dt: float = 0.05, align: bool = True) -> ApeResult:
    """Translational absolute pose error after rigid alignment of the estimate to the ground truth."""
    pairs = associate_by_time(estimated, ground_truth, max_dt)
    if not pairs:
        logger.warning("APE evaluation found no time-associated poses")
        return ApeResult()
    est = np.array([p.translation for p, _ in pairs])
    ref = np.array([g.translation for _, g in pairs])
    alignment = align_rigid(est, ref) if align and len(pairs) >= 3 else PoseSE3.identity()
    errors = np.linalg.norm(alignment.apply(est) - ref, axis=1)
    return ApeResult(mean=float(errors.mean()), rmse=float(np.sqrt(np.mean(errors ** 2))), matched=len(pairs),
                     errors=errors.tolist(), alignment=alignment)
