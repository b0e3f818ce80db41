# services/registration_service.py - Point-to-mesh Levenberg-Marquardt pose refinement
import copy
import logging
import math
from typing import Dict, Optional, Tuple, Union

import numpy as np
from scipy.spatial import cKDTree
from scipy.spatial.transform import Rotation

from gpmesh.config import RegistrationConfig
from gpmesh.models.geometry import PointCloud, PoseSE3, project_rotation
from gpmesh.models.mesh_map import MeshMap
from gpmesh.models.registration import Association, SolverReport
from gpmesh.utils.spatial_hash import decode_keys, voxel_coords

logger = logging.getLogger(__name__)

CANDIDATES = 16
TIE_TOLERANCE = 1e-12
DEGENERATE_NORM = 1e-9
STEP_TOLERANCE = 1e-6
COST_TOLERANCE = 1e-7
LAMBDA_MAX = 1e10
_INT_MAX = np.iinfo(np.int64).max

# 8-neighbourhood of a grid vertex, walked around the ring
RING_OFFSETS = ((-1, -1), (-1, 0), (-1, 1), (0, 1), (1, 1), (1, 0), (1, -1), (0, -1))


# ============= Vertex lookup =============

class VertexIndex:
    """KD-tree over every valid vertex of a (read-only) mesh map.

    Each vertex carries its cell key and grid id (axis * g^2 + i * g + j) for
    deterministic tie-breaking; smooth normals are computed on demand and cached.
    """

    def __init__(self, mesh_map: MeshMap):
        self.voxel_size = mesh_map.voxel_size
        self.grid_g = mesh_map.grid_g
        self._layers: Dict[Tuple[int, int], Tuple[np.ndarray, np.ndarray]] = {}
        self._normals: Dict[int, Optional[np.ndarray]] = {}
        self.frame: Optional[PoseSE3] = None
        positions, keys, grids = [], [], []
        g = self.grid_g
        for cell in mesh_map.iter_sorted():
            for layer in cell.layers:
                if not layer.active or not layer.valid.any():
                    continue
                verts = cell.layer_vertices(layer.axis)
                self._layers[(cell.key, layer.axis)] = (verts, layer.valid.copy())
                ii, jj = np.nonzero(layer.valid)
                positions.append(verts[ii, jj])
                keys.append(np.full(ii.shape[0], cell.key, dtype=np.int64))
                grids.append(layer.axis * g * g + ii * g + jj)
        if positions:
            self.positions = np.vstack(positions)
            self.keys = np.concatenate(keys)
            self.grids = np.concatenate(grids).astype(np.int64)
            self.tree = cKDTree(self.positions)
        else:
            self.positions = np.zeros((0, 3))
            self.keys = np.zeros(0, dtype=np.int64)
            self.grids = np.zeros(0, dtype=np.int64)
            self.tree = None
        self.cells = decode_keys(self.keys)

    def __len__(self) -> int:
        return int(self.positions.shape[0])

    def transformed(self, pose: PoseSE3) -> "VertexIndex":
        """The same vertices expressed in another world frame (x -> pose x)."""
        moved = copy.copy(self)
        moved.frame = pose if self.frame is None else pose @ self.frame
        moved.positions = pose.apply(self.positions)
        moved._normals = {}
        return moved

    def query(self, points: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
        """Nearest valid vertex in the 27-cell neighbourhood of each point (-1 when none)."""
        pts = np.asarray(points, dtype=np.float64).reshape(-1, 3)
        if self.frame is not None:
            pts = self.frame.inverse().apply(pts)
        m = pts.shape[0]
        if self.tree is None or m == 0:
            return np.full(m, -1, dtype=np.int64), np.full(m, np.inf)
        k = min(CANDIDATES, len(self))
        bound = 2.0 * math.sqrt(3.0) * self.voxel_size
        dist, idx = self.tree.query(pts, k=k, distance_upper_bound=bound)
        dist = np.asarray(dist, dtype=np.float64).reshape(m, k)
        idx = np.asarray(idx, dtype=np.int64).reshape(m, k)
        found = np.isfinite(dist)
        safe = np.where(found, idx, 0)
        point_cells = voxel_coords(pts, self.voxel_size)
        near = np.all(np.abs(self.cells[safe] - point_cells[:, None, :]) <= 1, axis=2)
        ok = found & near
        dist = np.where(ok, dist, np.inf)
        best = dist.min(axis=1)
        tie = ok & (dist <= best[:, None] + TIE_TOLERANCE)
        tie_keys = np.where(tie, self.keys[safe], _INT_MAX)
        tie &= tie_keys == tie_keys.min(axis=1)[:, None]
        col = np.argmin(np.where(tie, self.grids[safe], _INT_MAX), axis=1)
        rows = np.arange(m)
        has = np.isfinite(best)
        return np.where(has, safe[rows, col], -1), np.where(has, dist[rows, col], np.inf)

    def grid_position(self, i: int) -> Tuple[int, int, int]:
        g = self.grid_g
        grid = int(self.grids[i])
        return grid // (g * g), (grid // g) % g, grid % g

    def normal(self, i: int) -> Optional[np.ndarray]:
        if i not in self._normals:
            axis, gi, gj = self.grid_position(i)
            verts, valid = self._layers[(int(self.keys[i]), axis)]
            g = self.grid_g
            ring = [verts[gi + di, gj + dj] for di, dj in RING_OFFSETS
                    if 0 <= gi + di < g and 0 <= gj + dj < g and valid[gi + di, gj + dj]]
            normal = smooth_normal(np.array(ring)) if len(ring) >= 4 else None
            if normal is not None and self.frame is not None:
                normal = self.frame.rotation @ normal
            self._normals[i] = normal
        return self._normals[i]


def nearest_vertex(mesh_map: Union[MeshMap, VertexIndex], point) -> Optional[Tuple[np.ndarray, int, Tuple[int, int, int]]]:
    """(vertex, cell key, (axis, i, j)) of the nearest valid vertex, or None."""
    index = mesh_map if isinstance(mesh_map, VertexIndex) else VertexIndex(mesh_map)
    idx, _ = index.query(np.asarray(point, dtype=np.float64).reshape(1, 3))
    if idx[0] < 0:
        return None
    i = int(idx[0])
    return index.positions[i].copy(), int(index.keys[i]), index.grid_position(i)


def smooth_normal(vertices: np.ndarray) -> Optional[np.ndarray]:
    """Normalised sum of (v_q - v_{q-1}) x (v_q - v_{q+2}) over an ordered vertex ring.

    Vertices without a q+2 neighbour are skipped. Returns None when the sum vanishes.
    """
    v = np.asarray(vertices, dtype=np.float64).reshape(-1, 3)
    n = v.shape[0]
    if n < 4:
        return None
    q = np.arange(1, n - 2)
    total = np.cross(v[q] - v[q - 1], v[q] - v[q + 2]).sum(axis=0)
    norm = np.linalg.norm(total)
    if norm < DEGENERATE_NORM:
        return None
    return total / norm


# ============= Residuals =============

def residual(pose: PoseSE3, assoc: Association) -> float:
    """e = n_q . (R v_p + t - v_q)"""
    return float(assoc.n_q @ (pose.rotation @ assoc.v_p + pose.translation - assoc.v_q))


def residuals(pose: PoseSE3, p: np.ndarray, q: np.ndarray, n: np.ndarray) -> np.ndarray:
    return np.einsum("ij,ij->i", n, pose.apply(p) - q)


def jacobian(pose: PoseSE3, p: np.ndarray, n: np.ndarray) -> np.ndarray:
    """d e / d (omega, tau) for the update R <- Exp(omega) R, t <- t + tau."""
    rotated = np.asarray(p, dtype=np.float64).reshape(-1, 3) @ pose.rotation.T
    return np.hstack([np.cross(rotated, n), n])


def retract(pose: PoseSE3, delta: np.ndarray) -> PoseSE3:
    rot = Rotation.from_rotvec(delta[:3]).as_matrix() @ pose.rotation
    return PoseSE3(rotation=project_rotation(rot),
                   translation=pose.translation + delta[3:])


def huber_cost(e: np.ndarray, delta: float) -> float:
    a = np.abs(e)
    return float(np.sum(np.where(a <= delta, e * e, 2.0 * delta * a - delta * delta)))


def huber_weights(e: np.ndarray, delta: float) -> np.ndarray:
    a = np.abs(e)
    return np.where(a <= delta, 1.0, delta / np.maximum(a, 1e-300))


# ============= Solver =============

def associate(index: VertexIndex, pose: PoseSE3, points: np.ndarray,
              max_distance: float) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    """(sensor points, vertices, normals) of every usable association under `pose`."""
    idx, dist = index.query(pose.apply(points))
    keep = (idx >= 0) & (dist <= max_distance)
    vertex_ids, inverse = np.unique(idx[keep], return_inverse=True)
    table = np.full((vertex_ids.shape[0], 3), np.nan)
    for row, i in enumerate(vertex_ids):
        normal = index.normal(int(i))
        if normal is not None:
            table[row] = normal
    normals = table[inverse.reshape(-1)]
    usable = np.isfinite(normals[:, 0])
    matched = idx[keep][usable]
    return points[keep][usable], index.positions[matched], normals[usable]


def _pose_cost(index: VertexIndex, pose: PoseSE3, points: np.ndarray, cfg: RegistrationConfig):
    p, q, n = associate(index, pose, points, cfg.max_association_m)
    unmatched = points.shape[0] - p.shape[0]
    cost = huber_cost(residuals(pose, p, q, n), cfg.huber_delta_m)
    cost += unmatched * huber_cost(np.array([cfg.max_association_m]), cfg.huber_delta_m)
    return cost, (p, q, n)


def _lm_refine(pose: PoseSE3, p: np.ndarray, q: np.ndarray, n: np.ndarray,
               cfg: RegistrationConfig) -> Tuple[PoseSE3, int]:
    lam = cfg.lambda_init
    e = residuals(pose, p, q, n)
    cost = huber_cost(e, cfg.huber_delta_m)
    steps = 0
    for steps in range(1, cfg.max_lm_iters + 1):
        w = huber_weights(e, cfg.huber_delta_m)
        jac = jacobian(pose, p, n)
        hessian = jac.T @ (jac * w[:, None])
        gradient = jac.T @ (w * e)
        try:
            delta = np.linalg.solve(hessian + lam * np.eye(6), -gradient)
        except np.linalg.LinAlgError:
            lam *= 10.0
            continue
        candidate = retract(pose, delta)
        e_new = residuals(candidate, p, q, n)
        new_cost = huber_cost(e_new, cfg.huber_delta_m)
        if new_cost < cost:
            relative = (cost - new_cost) / max(cost, 1e-300)
            pose, e, cost = candidate, e_new, new_cost
            lam = max(lam / 10.0, 1e-12)
            if np.linalg.norm(delta) < STEP_TOLERANCE or relative < COST_TOLERANCE:
                break
        else:
            lam *= 10.0
            if np.linalg.norm(delta) < STEP_TOLERANCE or lam > LAMBDA_MAX:
                break
    return pose, steps


def solve_pose(prior: PoseSE3, mesh_map: Union[MeshMap, VertexIndex], cloud: PointCloud,
               cfg: RegistrationConfig = None) -> Tuple[PoseSE3, SolverReport]:
    """Refine a sensor-to-world pose against the mesh map.

    The prior comes back unchanged (converged=False) when fewer than
    `min_inliers` points associate or when the refined pose scores worse.
    """
    cfg = cfg or RegistrationConfig()
    index = mesh_map if isinstance(mesh_map, VertexIndex) else VertexIndex(mesh_map)
    if len(index) == 0 or cloud.is_empty:
        return prior, SolverReport()
    points = cloud.points
    initial_cost, (p, q, n) = _pose_cost(index, prior, points, cfg)
    if p.shape[0] < cfg.min_inliers:
        logger.debug(f"Registration skipped: {p.shape[0]} associations < {cfg.min_inliers}")
        return prior, SolverReport(initial_cost=initial_cost, final_cost=initial_cost, inlier_count=p.shape[0])

    pose = prior
    steps = 0
    rounds = 0
    for rounds in range(1, cfg.max_outer + 1):
        if rounds > 1:
            _, (p, q, n) = _pose_cost(index, pose, points, cfg)
            if p.shape[0] < cfg.min_inliers:
                break
        refined, used = _lm_refine(pose, p, q, n, cfg)
        steps += used
        change = refined.inverse() @ pose
        pose = refined
        if np.linalg.norm(change.translation) + change.rotation_angle() < STEP_TOLERANCE:
            break

    final_cost, (p, _, _) = _pose_cost(index, pose, points, cfg)
    if final_cost > initial_cost:
        logger.debug(f"Registration rejected: cost {final_cost:.4f} > prior cost {initial_cost:.4f}")
        return prior, SolverReport(iterations=steps, outer_rounds=rounds, initial_cost=initial_cost,
                                   final_cost=initial_cost, inlier_count=p.shape[0])
    return pose, SolverReport(iterations=steps, outer_rounds=rounds, initial_cost=initial_cost,
                              final_cost=final_cost, converged=True, inlier_count=p.shape[0])


# ============= Pose priors =============

def constant_velocity_prior(t_prev2: PoseSE3, t_prev1: PoseSE3) -> PoseSE3:
    return t_prev1 @ (t_prev2.inverse() @ t_prev1)


def fuse_pose(odom_pose: PoseSE3, last_refined: Optional[PoseSE3] = None,
              last_odom_at_refine: Optional[PoseSE3] = None) -> PoseSE3:
    """Carry the odometry increment since the last refinement onto the refined pose."""
    if last_refined is None or last_odom_at_refine is None:
        return odom_pose
    return last_refined @ (last_odom_at_refine.inverse() @ odom_pose)
