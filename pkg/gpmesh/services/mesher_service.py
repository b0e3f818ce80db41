# services/mesher_service.py - Per-cell GP surfaces, fusion and triangulation
import logging
from concurrent.futures import ThreadPoolExecutor
from typing import List, Sequence, Tuple

import numpy as np

from gpmesh.config import AxisSelection, FusionRule, MesherConfig
from gpmesh.errors import GPConditioningError
from gpmesh.models.geometry import Mesh, PointCloud
from gpmesh.models.mesh_map import AxisLayer, CellIndex, GPCell, MeshMap, layer_axes
from gpmesh.services.gp_service import gp_train_predict
from gpmesh.utils.spatial_hash import decode_key, encode_key, point_keys, voxel_coords

logger = logging.getLogger(__name__)

MIN_VARIANCE = 1e-12


# ============= Cell indexing =============

def cell_index(point, voxel_size: float) -> CellIndex:
    ix, iy, iz = (int(i) for i in voxel_coords(np.asarray(point, dtype=np.float64), voxel_size)[0])
    return CellIndex(ix=ix, iy=iy, iz=iz, voxel_size=voxel_size)


def encode_index(idx: CellIndex) -> int:
    return encode_key(idx.ix, idx.iy, idx.iz)


def decode_index(key: int, voxel_size: float = 1.0) -> CellIndex:
    ix, iy, iz = decode_key(key)
    return CellIndex(ix=ix, iy=iy, iz=iz, voxel_size=voxel_size)


# ============= Fusion =============

def fuse_prediction(history: Sequence[Tuple[float, float]], sigma_update_sq: float,
                    rule: FusionRule = FusionRule.INVERSE_VARIANCE) -> float:
    """Fuse (value, variance) predictions that pass the variance gate; NaN if none pass."""
    weight_sum = 0.0
    value_sum = 0.0
    for value, variance in history:
        if not variance < sigma_update_sq:
            continue
        w = _fusion_weight(variance, rule)
        weight_sum += w
        value_sum += w * value
    return value_sum / weight_sum if weight_sum > 0 else float("nan")


def _fusion_weight(variance, rule: FusionRule):
    if rule == FusionRule.LITERAL:
        return variance
    return 1.0 / np.maximum(variance, MIN_VARIANCE)


def _fuse_into(layer: AxisLayer, mean: np.ndarray, variance: np.ndarray, cfg: MesherConfig):
    gate = variance < cfg.sigma_update_sq
    w = np.where(gate, _fusion_weight(variance, cfg.fusion_rule), 0.0)
    layer.weight_sum += w
    layer.weighted_value_sum += w * np.where(gate, mean, 0.0)
    layer.mean = mean
    layer.variance = variance


# ============= Triangulation =============

def connect_vertices(vertices: np.ndarray, variances: np.ndarray, sigma_match_sq: float,
                     valid: np.ndarray = None) -> np.ndarray:
    """Two triangles per fully valid quad of a g x g grid, split along the shorter diagonal.

    Faces index the flattened grid (row-major, i * g + j).
    """
    g = variances.shape[0]
    ok = (variances < sigma_match_sq) & np.all(np.isfinite(vertices), axis=2)
    if valid is not None:
        ok &= valid
    faces: List[Tuple[int, int, int]] = []
    for i in range(g - 1):
        for j in range(g - 1):
            if not (ok[i, j] and ok[i + 1, j] and ok[i + 1, j + 1] and ok[i, j + 1]):
                continue
            a, b, c, d = i * g + j, (i + 1) * g + j, (i + 1) * g + j + 1, i * g + j + 1
            diag_ac = np.linalg.norm(vertices[i + 1, j + 1] - vertices[i, j])
            diag_bd = np.linalg.norm(vertices[i, j + 1] - vertices[i + 1, j])
            if diag_ac <= diag_bd:
                faces += [(a, b, c), (a, c, d)]
            else:
                faces += [(a, b, d), (b, c, d)]
    return np.array(faces, dtype=np.int64).reshape(-1, 3)


# ============= Cell updates =============

def _merge_training(old: np.ndarray, new: np.ndarray, cap: int) -> np.ndarray:
    combined = np.vstack([old, new])
    # keep the last copy of repeated points, in arrival order
    _, first_in_reversed = np.unique(combined[::-1], axis=0, return_index=True)
    combined = combined[np.sort(combined.shape[0] - 1 - first_in_reversed)]
    if combined.shape[0] > cap:
        combined = combined[np.linspace(0, combined.shape[0] - 1, cap).round().astype(np.int64)]
    return combined


def _select_axes(points: np.ndarray, cfg: MesherConfig) -> List[int]:
    if points.shape[0] < 3:
        return [0, 1, 2]
    centered = points - points.mean(axis=0)
    eigvals, eigvecs = np.linalg.eigh(centered.T @ centered)
    if eigvals[1] <= 1e-12 * max(eigvals[2], 1e-300):
        # collinear or coincident points: no surface direction
        return [0, 1, 2]
    normal = np.abs(eigvecs[:, 0])
    if cfg.axis_selection == AxisSelection.DOMINANT:
        return [int(np.argmax(normal))]
    return [a for a in range(3) if normal[a] >= cfg.min_axis_alignment]


def _predict_layer(cell: GPCell, axis: int, cfg: MesherConfig):
    a0, a1 = layer_axes(axis)
    u, v = cell.grid_locations(axis)
    test = np.stack(np.meshgrid(u, v, indexing="ij"), axis=-1).reshape(-1, 2)
    values = cell.training[:, axis]
    offset = values.mean()
    mean, variance = gp_train_predict(cell.training[:, (a0, a1)], values - offset, test, cfg.kernel_sigma_f,
                                      cfg.length_scale, cfg.sigma_in_sq, key=cell.key)
    g = cell.grid_g
    return (mean + offset).reshape(g, g), variance.reshape(g, g)


def _refresh_validity(cell: GPCell, layer: AxisLayer, cfg: MesherConfig):
    lo = cell.min_corner[layer.axis] - cell.spacing
    hi = cell.min_corner[layer.axis] + cell.voxel_size + cell.spacing
    fused = layer.fused
    with np.errstate(invalid="ignore"):
        in_bounds = (fused >= lo) & (fused <= hi)
    layer.valid = (layer.variance < cfg.sigma_match_sq) & np.isfinite(fused) & in_bounds


def update_cell(cell: GPCell, points: np.ndarray, cfg: MesherConfig, scan_index: int = 0) -> GPCell:
    """Add world points to one cell, re-predict its layers and fuse the new predictions."""
    cell.training = _merge_training(cell.training, points, cfg.max_training_points)
    cell.update_count += 1
    cell.last_update = scan_index
    if cell.training.shape[0] < cfg.min_training_points:
        return cell
    axes = _select_axes(cell.training, cfg)
    try:
        predictions = {axis: _predict_layer(cell, axis, cfg) for axis in axes}
    except GPConditioningError as e:
        logger.warning(f"Cell {cell.key} left unreconstructed: {e.detail}")
        cell.reconstructable = False
        for layer in cell.layers:
            layer.valid[:] = False
        return cell
    cell.reconstructable = True
    for layer in cell.layers:
        layer.active = layer.axis in predictions
        if layer.active:
            _fuse_into(layer, *predictions[layer.axis], cfg)
            _refresh_validity(cell, layer, cfg)
        else:
            layer.valid[:] = False
    return cell


def update_cells(cloud: PointCloud, mesh_map: MeshMap, cfg: MesherConfig, scan_index: int = 0) -> MeshMap:
    """Route world points to their cells and update every touched cell."""
    if cloud.is_empty:
        return mesh_map
    keys = point_keys(cloud.points, mesh_map.voxel_size)
    unique_keys, inverse = np.unique(keys, return_inverse=True)
    inverse = inverse.reshape(-1)
    order = np.argsort(inverse, kind="stable")
    splits = np.cumsum(np.bincount(inverse, minlength=unique_keys.shape[0]))[:-1]
    groups = np.split(cloud.points[order], splits)
    jobs = [(mesh_map.get_or_create(int(key)), pts) for key, pts in zip(unique_keys, groups)]

    def run(job):
        return update_cell(job[0], job[1], cfg, scan_index)

    if cfg.workers > 1 and len(jobs) > 1:
        with ThreadPoolExecutor(max_workers=cfg.workers) as pool:
            list(pool.map(run, jobs))
    else:
        for job in jobs:
            run(job)
    logger.debug(f"Updated {len(jobs)} cells; map holds {len(mesh_map)}")
    return mesh_map


# ============= Extraction =============

def extract_global_mesh(mesh_map: MeshMap, pinned_only: bool = False) -> Mesh:
    """Union of all cells' triangulated layers, ordered by cell key, axis and grid position."""
    vertex_blocks = []
    face_blocks = []
    base = 0
    for cell in mesh_map.iter_sorted():
        if pinned_only and not cell.pinned:
            continue
        for layer in cell.layers:
            if not layer.active or not layer.valid.any():
                continue
            verts = cell.layer_vertices(layer.axis)
            faces = connect_vertices(verts, layer.variance, np.inf, valid=layer.valid)
            if faces.shape[0] == 0:
                continue
            used = np.unique(faces)
            remap = np.full(cell.grid_g * cell.grid_g, -1, dtype=np.int64)
            remap[used] = base + np.arange(used.shape[0])
            vertex_blocks.append(verts.reshape(-1, 3)[used])
            face_blocks.append(remap[faces])
            base += used.shape[0]
    if not face_blocks:
        return Mesh()
    return Mesh(vertices=np.vstack(vertex_blocks), faces=np.vstack(face_blocks))
