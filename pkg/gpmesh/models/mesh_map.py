# mesh_map.py - GP surface cells and the hashed cell map
from dataclasses import dataclass, field
from typing import Dict, Iterator, List, Optional, Tuple

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, model_validator

from gpmesh.utils.spatial_hash import decode_key, encode_key


class ContinuityParams(BaseModel):
    model_config = ConfigDict(frozen=True)

    w1: float = Field(0.5, ge=0.0, le=1.0)
    w2: float = Field(0.5, ge=0.0, le=1.0)
    neighborhood: int = Field(4, ge=2)

    @model_validator(mode="after")
    def _check_weights(self):
        if abs(self.w1 + self.w2 - 1.0) > 1e-9:
            raise ValueError("w1 + w2 must equal 1")
        return self


class CellIndex(BaseModel):
    model_config = ConfigDict(frozen=True)

    ix: int
    iy: int
    iz: int
    voxel_size: float = Field(1.0, gt=0.0)

    @property
    def key(self) -> int:
        return encode_key(self.ix, self.iy, self.iz)

    @classmethod
    def from_key(cls, key: int, voxel_size: float = 1.0) -> "CellIndex":
        ix, iy, iz = decode_key(key)
        return cls(ix=ix, iy=iy, iz=iz, voxel_size=voxel_size)

    @property
    def min_corner(self) -> np.ndarray:
        return np.array([self.ix, self.iy, self.iz], dtype=np.float64) * self.voxel_size

    @property
    def center(self) -> np.ndarray:
        return self.min_corner + 0.5 * self.voxel_size


def layer_axes(axis: int) -> Tuple[int, int]:
    """The two location axes of the layer that predicts coordinate `axis`."""
    return tuple(a for a in range(3) if a != axis)


@dataclass
class AxisLayer:
    """g x g test grid of one cell, predicting coordinate `axis` over the other two."""

    axis: int
    grid_g: int
    mean: np.ndarray = field(init=False)
    variance: np.ndarray = field(init=False)
    weight_sum: np.ndarray = field(init=False)
    weighted_value_sum: np.ndarray = field(init=False)
    valid: np.ndarray = field(init=False)
    active: bool = False

    def __post_init__(self):
        self.reset()

    def reset(self):
        g = self.grid_g
        self.mean = np.full((g, g), np.nan)
        self.variance = np.full((g, g), np.inf)
        self.weight_sum = np.zeros((g, g))
        self.weighted_value_sum = np.zeros((g, g))
        self.valid = np.zeros((g, g), dtype=bool)
        self.active = False

    @property
    def fused(self) -> np.ndarray:
        with np.errstate(invalid="ignore", divide="ignore"):
            return np.where(self.weight_sum > 0, self.weighted_value_sum / self.weight_sum, np.nan)


@dataclass
class GPCell:
    key: int
    voxel_size: float
    grid_g: int
    training: np.ndarray = field(default_factory=lambda: np.zeros((0, 3)))
    layers: List[AxisLayer] = field(default_factory=list)
    update_count: int = 0
    last_update: int = -1
    pinned: bool = False
    reconstructable: bool = True

    def __post_init__(self):
        if not self.layers:
            self.layers = [AxisLayer(axis=a, grid_g=self.grid_g) for a in range(3)]

    @property
    def index(self) -> CellIndex:
        return CellIndex.from_key(self.key, self.voxel_size)

    @property
    def min_corner(self) -> np.ndarray:
        return self.index.min_corner

    @property
    def spacing(self) -> float:
        return self.voxel_size / (self.grid_g - 1)

    def grid_locations(self, axis: int) -> Tuple[np.ndarray, np.ndarray]:
        """Coordinates of the test grid along the layer's two location axes."""
        a0, a1 = layer_axes(axis)
        steps = np.arange(self.grid_g) * self.spacing
        corner = self.min_corner
        return corner[a0] + steps, corner[a1] + steps

    def layer_vertices(self, axis: int) -> np.ndarray:
        """(g, g, 3) vertex positions built from the fused predictions."""
        a0, a1 = layer_axes(axis)
        u, v = self.grid_locations(axis)
        verts = np.empty((self.grid_g, self.grid_g, 3))
        verts[:, :, a0] = u[:, None]
        verts[:, :, a1] = v[None, :]
        verts[:, :, axis] = self.layers[axis].fused
        return verts

    @property
    def valid_vertex_count(self) -> int:
        return int(sum(layer.valid.sum() for layer in self.layers if layer.active))

    def clear(self):
        """Drop training data and predictions; the cell keeps its key."""
        self.training = np.zeros((0, 3))
        for layer in self.layers:
            layer.reset()
        self.pinned = False


class MeshMap:
    """Hash map from encoded cell key to GPCell."""

    def __init__(self, voxel_size: float = 1.0, grid_g: int = 4):
        if not voxel_size > 0:
            raise ValueError(f"voxel size must be positive, got {voxel_size}")
        if grid_g < 2:
            raise ValueError(f"grid_g must be at least 2, got {grid_g}")
        self.voxel_size = voxel_size
        self.grid_g = grid_g
        self.cells: Dict[int, GPCell] = {}

    def __len__(self) -> int:
        return len(self.cells)

    def __contains__(self, key: int) -> bool:
        return key in self.cells

    def get(self, key: int) -> Optional[GPCell]:
        return self.cells.get(key)

    def get_or_create(self, key: int) -> GPCell:
        cell = self.cells.get(key)
        if cell is None:
            cell = GPCell(key=key, voxel_size=self.voxel_size, grid_g=self.grid_g)
            self.cells[key] = cell
        return cell

    def sorted_keys(self) -> List[int]:
        return sorted(self.cells)

    def iter_sorted(self) -> Iterator[GPCell]:
        for key in self.sorted_keys():
            yield self.cells[key]

    @property
    def is_empty(self) -> bool:
        return not self.cells
