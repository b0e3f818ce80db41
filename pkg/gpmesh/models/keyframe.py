# keyframe.py - Spaciousness state, keyframes and the sliding window
from collections import deque
from typing import Deque, List, Optional

from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator

from gpmesh.models.geometry import Frame, PointCloud, PoseSE3


class SpaciousnessState(BaseModel):
    """Exponentially smoothed median scan range."""

    model_config = ConfigDict(frozen=True)

    m: float = Field(0.0, ge=0.0)
    alpha: float = Field(0.95, ge=0.0, le=1.0)
    beta: float = Field(0.05, ge=0.0, le=1.0)
    initialized: bool = False

    @model_validator(mode="after")
    def _check_weights(self):
        if abs(self.alpha + self.beta - 1.0) > 1e-9:
            raise ValueError("alpha + beta must equal 1")
        return self


class Keyframe(BaseModel):
    model_config = ConfigDict(arbitrary_types_allowed=True, frozen=True)

    cloud: PointCloud
    pose: PoseSE3
    timestamp: float

    @field_validator("cloud")
    @classmethod
    def _check_frame(cls, cloud: PointCloud):
        if cloud.frame != Frame.SENSOR:
            raise ValueError("keyframe clouds are kept in the sensor frame")
        return cloud


class SlidingWindow:
    """Bounded FIFO of keyframes; the oldest frame drops out when full."""

    def __init__(self, capacity: int = 5):
        if capacity < 1:
            raise ValueError(f"window capacity must be at least 1, got {capacity}")
        self.capacity = capacity
        self._frames: Deque[Keyframe] = deque(maxlen=capacity)

    def push(self, keyframe: Keyframe):
        if self._frames and keyframe.timestamp < self._frames[-1].timestamp:
            raise ValueError(
                f"keyframe at t={keyframe.timestamp} is older than the newest frame "
                f"at t={self._frames[-1].timestamp}"
            )
        self._frames.append(keyframe)

    @property
    def frames(self) -> List[Keyframe]:
        return list(self._frames)

    @property
    def newest(self) -> Optional[Keyframe]:
        return self._frames[-1] if self._frames else None

    def __len__(self) -> int:
        return len(self._frames)

    def clear(self):
        self._frames.clear()
