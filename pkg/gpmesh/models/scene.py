# scene.py - Scripted synthetic worlds for the simulated LiDAR
from enum import Enum
from typing import List, Tuple

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, model_validator

from gpmesh.models.geometry import Mesh, PointCloud, PoseSE3

Vec3 = Tuple[float, float, float]


class Rectangle(BaseModel):
    """Static rectangle origin + a * edge_u + b * edge_v, a, b in [0, 1]."""

    origin: Vec3
    edge_u: Vec3
    edge_v: Vec3

    @model_validator(mode="after")
    def _check_edges(self):
        u, v = np.array(self.edge_u), np.array(self.edge_v)
        if np.linalg.norm(u) == 0 or np.linalg.norm(v) == 0:
            raise ValueError("rectangle edges must be non-zero")
        if abs(u @ v) > 1e-9 * np.linalg.norm(u) * np.linalg.norm(v):
            raise ValueError("rectangle edges must be orthogonal")
        return self

    def corners(self) -> np.ndarray:
        o, u, v = np.array(self.origin), np.array(self.edge_u), np.array(self.edge_v)
        return np.array([o, o + u, o + u + v, o + v])


class Box(BaseModel):
    """Axis-aligned box; a non-zero velocity (m/s) makes it a moving body."""

    center: Vec3
    size: Vec3
    velocity: Vec3 = (0.0, 0.0, 0.0)

    @model_validator(mode="after")
    def _check_size(self):
        if min(self.size) <= 0:
            raise ValueError("box sizes must be positive")
        return self

    @property
    def moving(self) -> bool:
        return any(v != 0.0 for v in self.velocity)

    def bounds_at(self, t: float) -> Tuple[np.ndarray, np.ndarray]:
        c = np.array(self.center) + t * np.array(self.velocity)
        half = np.array(self.size) / 2.0
        return c - half, c + half


class TrajectoryKind(str, Enum):
    LINEAR = "linear"
    CIRCLE = "circle"


class TrajectoryScript(BaseModel):
    kind: TrajectoryKind = TrajectoryKind.LINEAR
    start: Vec3 = (0.0, 0.0, 1.5)
    velocity: Vec3 = (0.0, 0.0, 0.0)
    yaw: float = 0.0
    center: Vec3 = (0.0, 0.0, 1.5)
    radius: float = Field(3.0, gt=0.0)
    angular_speed: float = 0.2

    def pose_at(self, t: float) -> PoseSE3:
        if self.kind == TrajectoryKind.LINEAR:
            position = np.array(self.start) + t * np.array(self.velocity)
            return PoseSE3.from_rotvec([0.0, 0.0, self.yaw], position)
        theta = self.angular_speed * t
        c = np.array(self.center)
        position = c + self.radius * np.array([np.cos(theta), np.sin(theta), 0.0])
        heading = theta + np.copysign(np.pi / 2.0, self.angular_speed)
        return PoseSE3.from_rotvec([0.0, 0.0, heading], position)


class SensorModel(BaseModel):
    """Spinning multi-beam sensor; rows sweep fov_up to fov_down, columns +pi to -pi."""

    rows: int = Field(32, ge=1)
    cols: int = Field(512, ge=1)
    fov_up_deg: float = 15.0
    fov_down_deg: float = -25.0
    max_range: float = Field(80.0, gt=0.0)
    min_range: float = Field(0.3, ge=0.0)
    rate_hz: float = Field(10.0, gt=0.0)
    range_noise_std: float = Field(0.0, ge=0.0)

    @model_validator(mode="after")
    def _check_fov(self):
        if not self.fov_up_deg > self.fov_down_deg:
            raise ValueError("fov_up_deg must exceed fov_down_deg")
        return self


class SceneScript(BaseModel):
    rectangles: List[Rectangle] = []
    boxes: List[Box] = []
    sensor: SensorModel = Field(default_factory=SensorModel)
    trajectory: TrajectoryScript = Field(default_factory=TrajectoryScript)
    num_scans: int = Field(1, ge=0)


class SyntheticScene(BaseModel):
    model_config = ConfigDict(arbitrary_types_allowed=True)

    script: SceneScript
    seed: int
    mesh: Mesh
    trajectory: List[Tuple[float, PoseSE3]]
    scans: List[PointCloud]
    labels: List[np.ndarray]

    @property
    def dynamic_fraction(self) -> float:
        total = sum(label.shape[0] for label in self.labels)
        return sum(int(label.sum()) for label in self.labels) / total if total else 0.0
