# services/ingest_service.py - Scan, pose and mesh file formats
import logging
from typing import List, Optional, Sequence, Tuple

import numpy as np
from plyfile import PlyData, PlyElement, PlyParseError
from pypcd4 import PointCloud as PcdCloud

from gpmesh.errors import EmptyScanError, PoseFormatError, ScanFormatError
from gpmesh.models.geometry import Frame, Mesh, PointCloud, PoseFormat, PoseSE3, ScanFormat
from gpmesh.utils.atomic_io import atomic_open, ensure_parent_dir
from gpmesh.utils.validators import validate_positive

logger = logging.getLogger(__name__)

BIN_RECORD_BYTES = 16
ORTHONORMAL_TOLERANCE = 1e-4

Trajectory = List[Tuple[float, PoseSE3]]


# ============= Scans =============

def read_scan(path: str, fmt: ScanFormat = ScanFormat.BIN_XYZI, timestamp: float = 0.0) -> PointCloud:
    """Read one scan into a sensor-frame cloud, keeping the file's point order."""
    fmt = ScanFormat(fmt)
    if fmt == ScanFormat.BIN_XYZI:
        points = _read_bin_xyzi(path)
    elif fmt == ScanFormat.PLY:
        points, _ = _read_ply(path)
    else:
        points = _read_pcd(path)
    if points.shape[0] == 0:
        raise EmptyScanError(path)
    return PointCloud(points=points, timestamp=timestamp, frame=Frame.SENSOR)


def _read_bin_xyzi(path: str) -> np.ndarray:
    with open(path, "rb") as f:
        data = f.read()
    if len(data) == 0:
        raise EmptyScanError(path)
    tail = len(data) % BIN_RECORD_BYTES
    if tail:
        raise ScanFormatError(path, len(data) - tail, f"trailing partial record of {tail} bytes")
    records = np.frombuffer(data, dtype="<f4").reshape(-1, 4)
    xyz = records[:, :3].astype(np.float64)
    bad = ~np.all(np.isfinite(xyz), axis=1)
    if bad.any():
        row = int(np.argmax(bad))
        raise ScanFormatError(path, row * BIN_RECORD_BYTES, "non-finite coordinate")
    return xyz


def write_scan_bin(cloud: PointCloud, path: str, intensity: Optional[np.ndarray] = None):
    """Write x, y, z, intensity little-endian float32 records."""
    ensure_parent_dir(path)
    records = np.zeros((len(cloud), 4), dtype="<f4")
    records[:, :3] = cloud.points
    if intensity is not None:
        records[:, 3] = intensity
    with atomic_open(path, "wb") as f:
        f.write(records.tobytes())


def _read_pcd(path: str) -> np.ndarray:
    try:
        pcd = PcdCloud.from_path(path)
    except OSError:
        raise
    except Exception as e:
        raise ScanFormatError(path, 0, f"unreadable PCD: {e}")
    if not {"x", "y", "z"} <= set(pcd.fields):
        raise ScanFormatError(path, 0, "FIELDS lack x, y or z")
    points = np.asarray(pcd.numpy(("x", "y", "z")), dtype=np.float64).reshape(-1, 3)
    finite = np.all(np.isfinite(points), axis=1)
    if not finite.all():
        # organised clouds pad missing returns with NaN
        logger.debug(f"{path}: dropped {int((~finite).sum())} non-finite points")
        points = points[finite]
    return points


# ============= PLY =============

def _load_ply(path: str) -> PlyData:
    try:
        return PlyData.read(path)
    except OSError:
        raise
    except PlyParseError as e:
        raise ScanFormatError(path, 0, str(e))
    except (ValueError, EOFError) as e:
        raise ScanFormatError(path, 0, f"truncated or malformed PLY body: {e}")


def _read_ply(path: str) -> Tuple[np.ndarray, np.ndarray]:
    ply = _load_ply(path)
    names = {element.name for element in ply.elements}

    vertices = np.zeros((0, 3))
    faces = np.zeros((0, 3), dtype=np.int64)
    if "vertex" in names:
        data = ply["vertex"].data
        if not {"x", "y", "z"} <= set(data.dtype.names or ()):
            raise ScanFormatError(path, 0, "vertex element lacks x, y or z")
        vertices = np.column_stack([data[a].astype(np.float64) for a in ("x", "y", "z")])
        if not np.all(np.isfinite(vertices)):
            raise ScanFormatError(path, 0, "non-finite vertex coordinate")
    if "face" in names:
        data = ply["face"].data
        key = next((k for k in ("vertex_indices", "vertex_index") if k in (data.dtype.names or ())), None)
        if key is None:
            raise ScanFormatError(path, 0, "face element lacks vertex_indices")
        lists = data[key]
        if len(lists):
            sizes = np.array([len(row) for row in lists])
            if np.any(sizes != 3):
                row = int(np.argmax(sizes != 3))
                raise ScanFormatError(path, 0, f"face {row} has {sizes[row]} vertices; only triangles are supported")
            faces = np.vstack(lists).astype(np.int64)
    return vertices, faces


def write_mesh_ply(mesh: Mesh, path: str, binary: bool = True):
    """Write vertices as float32 and faces as `list uchar int`."""
    ensure_parent_dir(path)
    vertex = np.zeros(mesh.vertices.shape[0], dtype=[("x", "<f4"), ("y", "<f4"), ("z", "<f4")])
    for axis, name in enumerate(("x", "y", "z")):
        vertex[name] = mesh.vertices[:, axis]
    face = np.zeros(mesh.faces.shape[0], dtype=[("vertex_indices", "<i4", (3,))])
    face["vertex_indices"] = mesh.faces
    elements = [PlyElement.describe(vertex, "vertex"),
                PlyElement.describe(face, "face", len_types={"vertex_indices": "u1"})]
    with atomic_open(path, "wb") as f:
        PlyData(elements, text=not binary, byte_order="<").write(f)


def read_mesh_ply(path: str) -> Mesh:
    vertices, faces = _read_ply(path)
    try:
        return Mesh(vertices=vertices, faces=faces)
    except ValueError as e:
        raise ScanFormatError(path, 0, f"invalid mesh: {e}")


def read_labels(path: str, count: int) -> np.ndarray:
    """Per-point dynamic flags written by `numpy.save`, one per scan point."""
    try:
        labels = np.load(path, allow_pickle=False)
    except (OSError, ValueError) as e:
        raise ScanFormatError(path, 0, f"unreadable labels: {e}")
    labels = np.asarray(labels).reshape(-1)
    if labels.shape[0] != count:
        raise ScanFormatError(path, 0, f"{labels.shape[0]} labels for {count} points")
    return labels.astype(bool)


# ============= Poses =============

def read_poses(path: str, fmt: PoseFormat = PoseFormat.KITTI_3X4, scan_rate_hz: float = 10.0) -> Trajectory:
    """Read a trajectory. KITTI rows get timestamps index / scan_rate_hz."""
    fmt = PoseFormat(fmt)
    trajectory: Trajectory = []
    with open(path, "r", encoding="utf-8") as f:
        for line_no, line in enumerate(f, start=1):
            text = line.strip()
            if not text or text.startswith("#"):
                continue
            try:
                values = [float(v) for v in text.split()]
            except ValueError:
                raise PoseFormatError(path, line_no, "non-numeric value")
            if not all(np.isfinite(values)):
                raise PoseFormatError(path, line_no, "non-finite value")
            if fmt == PoseFormat.KITTI_3X4:
                if len(values) != 12:
                    raise PoseFormatError(path, line_no, f"expected 12 values, got {len(values)}")
                m = np.array(values).reshape(3, 4)
                _check_orthonormal(path, line_no, m[:, :3])
                pose = PoseSE3.from_approximate(m[:, :3], m[:, 3])
                stamp = len(trajectory) / scan_rate_hz
            else:
                if len(values) != 8:
                    raise PoseFormatError(path, line_no, f"expected 8 values, got {len(values)}")
                try:
                    pose = PoseSE3.from_quaternion(values[4:8], values[1:4])
                except ValueError as e:
                    raise PoseFormatError(path, line_no, str(e))
                stamp = values[0]
            trajectory.append((stamp, pose))
    return trajectory


def _check_orthonormal(path: str, line_no: int, rot: np.ndarray):
    err = max(np.max(np.abs(rot.T @ rot - np.eye(3))), abs(np.linalg.det(rot) - 1.0))
    if err > ORTHONORMAL_TOLERANCE:
        raise PoseFormatError(path, line_no, f"rotation is not orthonormal (error {err:.2e})")


def write_trajectory(trajectory: Sequence[Tuple[float, PoseSE3]], path: str,
                     fmt: PoseFormat = PoseFormat.KITTI_3X4):
    fmt = PoseFormat(fmt)
    ensure_parent_dir(path)
    rows = []
    for stamp, pose in trajectory:
        if fmt == PoseFormat.KITTI_3X4:
            values = pose.matrix()[:3, :].reshape(-1)
        else:
            values = np.concatenate([[stamp], pose.translation, pose.quaternion()])
        rows.append(" ".join(f"{v:.17g}" for v in values))
    with atomic_open(path, "w") as f:
        f.write("".join(row + "\n" for row in rows))


# ============= Surface sampling =============

def sample_mesh_surface(mesh: Mesh, density: float, seed: int = 0) -> PointCloud:
    """Area-uniform random points; the count is Poisson with mean density * total area."""
    validate_positive(density, "density")
    areas = mesh.face_areas()
    total = float(areas.sum()) if areas.size else 0.0
    if total <= 0.0:
        return PointCloud.empty(frame=Frame.WORLD)
    rng = np.random.default_rng(seed)
    n = int(rng.poisson(density * total))
    if n == 0:
        return PointCloud.empty(frame=Frame.WORLD)
    face_ids = rng.choice(areas.shape[0], size=n, p=areas / total)
    r1 = np.sqrt(rng.random(n))[:, None]
    r2 = rng.random(n)[:, None]
    tri = mesh.vertices[mesh.faces[face_ids]]
    points = (1.0 - r1) * tri[:, 0] + r1 * (1.0 - r2) * tri[:, 1] + r1 * r2 * tri[:, 2]
    return PointCloud(points=points, frame=Frame.WORLD)
