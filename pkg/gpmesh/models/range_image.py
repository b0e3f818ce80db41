# range_image.py - Spherical range images
import math

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator

# Marks a pixel that no point projected into.
EMPTY_PIXEL = np.inf


class RangeGeometry(BaseModel):
    """Image size and vertical field of view (radians)."""

    model_config = ConfigDict(frozen=True)

    rows: int = Field(64, ge=1)
    cols: int = Field(900, ge=1)
    fov_up: float = math.radians(2.0)
    fov_down: float = math.radians(-24.8)

    @model_validator(mode="after")
    def _check_fov(self):
        if not self.fov_up > self.fov_down:
            raise ValueError("fov_up must exceed fov_down")
        return self

    @classmethod
    def from_degrees(cls, rows: int, cols: int, fov_up_deg: float, fov_down_deg: float) -> "RangeGeometry":
        return cls(rows=rows, cols=cols, fov_up=math.radians(fov_up_deg), fov_down=math.radians(fov_down_deg))


class RangeImage(BaseModel):
    model_config = ConfigDict(arbitrary_types_allowed=True, frozen=True)

    geometry: RangeGeometry
    ranges: np.ndarray

    @field_validator("ranges", mode="before")
    @classmethod
    def _check_ranges(cls, value):
        img = np.array(value, dtype=np.float64)
        if img.ndim != 2:
            raise ValueError("range image must be two-dimensional")
        finite = np.isfinite(img)
        if np.any(img[finite] <= 0.0):
            raise ValueError("range image pixels must be positive or empty")
        img.setflags(write=False)
        return img

    @model_validator(mode="after")
    def _check_shape(self):
        if self.ranges.shape != (self.geometry.rows, self.geometry.cols):
            raise ValueError(f"range image shape {self.ranges.shape} does not match its geometry")
        return self

    @classmethod
    def empty(cls, geometry: RangeGeometry) -> "RangeImage":
        return cls(geometry=geometry, ranges=np.full((geometry.rows, geometry.cols), EMPTY_PIXEL))

    @property
    def filled(self) -> int:
        return int(np.isfinite(self.ranges).sum())
