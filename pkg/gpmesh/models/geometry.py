# geometry.py - Point clouds, rigid poses and triangle meshes
from enum import Enum
from typing import Iterable, Optional

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator
from scipy.spatial.transform import Rotation

# Max orthonormality / determinant error accepted for a rotation.
ROTATION_TOLERANCE = 1e-9


# ============= Enums =============

class Frame(str, Enum):
    SENSOR = "sensor"
    WORLD = "world"


class ScanFormat(str, Enum):
    BIN_XYZI = "bin_xyzi"
    PLY = "ply"
    PCD_ASCII = "pcd_ascii"


class PoseFormat(str, Enum):
    KITTI_3X4 = "kitti_3x4"
    TUM = "tum"


def _frozen(arr: np.ndarray) -> np.ndarray:
    arr.setflags(write=False)
    return arr


def project_rotation(rot: np.ndarray) -> np.ndarray:
    """Nearest rotation matrix to a product that has drifted off SO(3)."""
    return Rotation.from_matrix(rot).as_matrix()


# ============= Poses =============

class PoseSE3(BaseModel):
    """Rigid transform x -> R x + t."""

    model_config = ConfigDict(arbitrary_types_allowed=True, frozen=True)

    rotation: np.ndarray = Field(default_factory=lambda: np.eye(3))
    translation: np.ndarray = Field(default_factory=lambda: np.zeros(3))

    @field_validator("rotation", mode="before")
    @classmethod
    def _check_rotation(cls, value):
        rot = np.array(value, dtype=np.float64)
        if rot.shape != (3, 3) or not np.all(np.isfinite(rot)):
            raise ValueError(f"rotation must be a finite 3x3 matrix, got shape {rot.shape}")
        if np.max(np.abs(rot.T @ rot - np.eye(3))) > ROTATION_TOLERANCE:
            raise ValueError("rotation is not orthonormal")
        if abs(np.linalg.det(rot) - 1.0) > ROTATION_TOLERANCE:
            raise ValueError("rotation is not proper (det != 1)")
        return _frozen(rot)

    @field_validator("translation", mode="before")
    @classmethod
    def _check_translation(cls, value):
        t = np.array(value, dtype=np.float64).reshape(-1)
        if t.shape != (3,) or not np.all(np.isfinite(t)):
            raise ValueError("translation must be a finite 3-vector")
        return _frozen(t)

    @classmethod
    def identity(cls) -> "PoseSE3":
        return cls()

    @classmethod
    def from_matrix(cls, matrix) -> "PoseSE3":
        m = np.asarray(matrix, dtype=np.float64)
        return cls(rotation=m[:3, :3], translation=m[:3, 3])

    @classmethod
    def from_rotvec(cls, rotvec, translation=(0.0, 0.0, 0.0)) -> "PoseSE3":
        return cls(rotation=Rotation.from_rotvec(np.asarray(rotvec, dtype=np.float64)).as_matrix(),
                   translation=translation)

    @classmethod
    def from_quaternion(cls, quat_xyzw, translation) -> "PoseSE3":
        q = np.asarray(quat_xyzw, dtype=np.float64)
        norm = np.linalg.norm(q)
        if not norm > 0.0:
            raise ValueError("zero-norm quaternion")
        return cls(rotation=Rotation.from_quat(q / norm).as_matrix(), translation=translation)

    @classmethod
    def from_approximate(cls, rotation, translation) -> "PoseSE3":
        """Project a nearly orthonormal matrix onto SO(3) (closest in Frobenius norm)."""
        u, _, vt = np.linalg.svd(np.asarray(rotation, dtype=np.float64))
        d = np.sign(np.linalg.det(u @ vt))
        rot = u @ np.diag([1.0, 1.0, d]) @ vt
        return cls(rotation=rot, translation=translation)

    def matrix(self) -> np.ndarray:
        m = np.eye(4)
        m[:3, :3] = self.rotation
        m[:3, 3] = self.translation
        return m

    def compose(self, other: "PoseSE3") -> "PoseSE3":
        return PoseSE3(rotation=project_rotation(self.rotation @ other.rotation),
                       translation=self.rotation @ other.translation + self.translation)

    def __matmul__(self, other: "PoseSE3") -> "PoseSE3":
        return self.compose(other)

    def inverse(self) -> "PoseSE3":
        rt = self.rotation.T
        return PoseSE3(rotation=rt, translation=-(rt @ self.translation))

    def apply(self, points: np.ndarray) -> np.ndarray:
        pts = np.asarray(points, dtype=np.float64).reshape(-1, 3)
        return pts @ self.rotation.T + self.translation

    def rotvec(self) -> np.ndarray:
        return Rotation.from_matrix(self.rotation).as_rotvec()

    def rotation_angle(self) -> float:
        return float(np.linalg.norm(self.rotvec()))

    def quaternion(self) -> np.ndarray:
        """Unit quaternion (x, y, z, w) with w >= 0."""
        q = Rotation.from_matrix(self.rotation).as_quat()
        return -q if q[3] < 0 else q

    def is_close(self, other: "PoseSE3", atol: float = 1e-9) -> bool:
        return bool(np.allclose(self.rotation, other.rotation, atol=atol)
                    and np.allclose(self.translation, other.translation, atol=atol))


# ============= Point clouds =============

class PointCloud(BaseModel):
    """Ordered 3D points in meters."""

    model_config = ConfigDict(arbitrary_types_allowed=True, frozen=True)

    points: np.ndarray
    timestamp: float = 0.0
    frame: Frame = Frame.SENSOR

    @field_validator("points", mode="before")
    @classmethod
    def _check_points(cls, value):
        pts = np.array(value, dtype=np.float64)
        if pts.size == 0:
            pts = pts.reshape(0, 3)
        if pts.ndim != 2 or pts.shape[1] != 3:
            raise ValueError(f"points must have shape (N, 3), got {pts.shape}")
        if not np.all(np.isfinite(pts)):
            raise ValueError("points contain non-finite coordinates")
        return _frozen(pts)

    @classmethod
    def empty(cls, timestamp: float = 0.0, frame: Frame = Frame.SENSOR) -> "PointCloud":
        return cls(points=np.zeros((0, 3)), timestamp=timestamp, frame=frame)

    @classmethod
    def concatenate(cls, clouds: Iterable["PointCloud"], timestamp: float,
                    frame: Frame) -> "PointCloud":
        arrays = [c.points for c in clouds]
        if not arrays:
            return cls.empty(timestamp, frame)
        return cls(points=np.concatenate(arrays, axis=0), timestamp=timestamp, frame=frame)

    def __len__(self) -> int:
        return int(self.points.shape[0])

    @property
    def is_empty(self) -> bool:
        return self.points.shape[0] == 0

    @property
    def ranges(self) -> np.ndarray:
        return np.linalg.norm(self.points, axis=1)

    def select(self, mask: np.ndarray) -> "PointCloud":
        return PointCloud(points=self.points[mask], timestamp=self.timestamp, frame=self.frame)

    def transformed(self, pose: PoseSE3, frame: Optional[Frame] = None) -> "PointCloud":
        return PointCloud(points=pose.apply(self.points), timestamp=self.timestamp,
                          frame=frame or self.frame)


# ============= Meshes =============

class Mesh(BaseModel):
    """Triangle mesh; faces index into vertices."""

    model_config = ConfigDict(arbitrary_types_allowed=True, frozen=True)

    vertices: np.ndarray = Field(default_factory=lambda: np.zeros((0, 3)))
    faces: np.ndarray = Field(default_factory=lambda: np.zeros((0, 3), dtype=np.int64))

    @field_validator("vertices", mode="before")
    @classmethod
    def _check_vertices(cls, value):
        v = np.array(value, dtype=np.float64)
        if v.size == 0:
            v = v.reshape(0, 3)
        if v.ndim != 2 or v.shape[1] != 3 or not np.all(np.isfinite(v)):
            raise ValueError("vertices must be a finite (V, 3) array")
        return _frozen(v)

    @field_validator("faces", mode="before")
    @classmethod
    def _check_faces(cls, value):
        f = np.array(value, dtype=np.int64)
        if f.size == 0:
            f = f.reshape(0, 3)
        if f.ndim != 2 or f.shape[1] != 3:
            raise ValueError("faces must be an (F, 3) integer array")
        return _frozen(f)

    @model_validator(mode="after")
    def _check_indices(self):
        if self.faces.size:
            if self.faces.min() < 0 or self.faces.max() >= self.vertices.shape[0]:
                raise ValueError("face index out of range")
            f = self.faces
            if np.any((f[:, 0] == f[:, 1]) | (f[:, 1] == f[:, 2]) | (f[:, 0] == f[:, 2])):
                raise ValueError("degenerate face (repeated vertex index)")
        return self

    @property
    def is_empty(self) -> bool:
        return self.faces.shape[0] == 0

    def face_areas(self) -> np.ndarray:
        if self.is_empty:
            return np.zeros(0)
        a, b, c = (self.vertices[self.faces[:, i]] for i in range(3))
        return 0.5 * np.linalg.norm(np.cross(b - a, c - a), axis=1)
