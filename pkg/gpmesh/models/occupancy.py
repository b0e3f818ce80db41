# occupancy.py - Log-odds voxels for fine dynamic removal
from dataclasses import dataclass
from enum import Enum
from typing import Dict, List

from scipy.special import expit


class Observation(str, Enum):
    HIT = "hit"
    MISS = "miss"


@dataclass
class OccupancyVoxel:
    log_odds: float = 0.0
    last_update: int = -1

    @property
    def probability(self) -> float:
        return float(expit(self.log_odds))


class OccupancyGrid:
    """Hash map from encoded voxel key to OccupancyVoxel."""

    def __init__(self, voxel_size: float = 1.0):
        if not voxel_size > 0:
            raise ValueError(f"voxel size must be positive, got {voxel_size}")
        self.voxel_size = voxel_size
        self.voxels: Dict[int, OccupancyVoxel] = {}

    def __len__(self) -> int:
        return len(self.voxels)

    def __contains__(self, key: int) -> bool:
        return key in self.voxels

    def get_or_create(self, key: int) -> OccupancyVoxel:
        voxel = self.voxels.get(key)
        if voxel is None:
            voxel = OccupancyVoxel()
            self.voxels[key] = voxel
        return voxel

    def sorted_keys(self) -> List[int]:
        return sorted(self.voxels)
