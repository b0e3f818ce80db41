# spatial_hash.py - Integer keys for sparse voxel grids
#
# Three signed 21-bit cell coordinates are packed into one non-negative
# 63-bit integer: key = (ix + 2^20) << 42 | (iy + 2^20) << 21 | (iz + 2^20).
# Ascending keys sort cells lexicographically by (ix, iy, iz).
import numpy as np

BITS = 21
OFFSET = 1 << (BITS - 1)
MASK = (1 << BITS) - 1
INDEX_MIN = -OFFSET
INDEX_MAX = OFFSET - 1


def _check_range(ijk: np.ndarray):
    if ijk.size and (ijk.min() < INDEX_MIN or ijk.max() > INDEX_MAX):
        raise ValueError(f"cell index outside the encodable range [{INDEX_MIN}, {INDEX_MAX}]")


def encode_key(ix: int, iy: int, iz: int) -> int:
    for i in (ix, iy, iz):
        if not INDEX_MIN <= i <= INDEX_MAX:
            raise ValueError(f"cell index {i} outside the encodable range")
    return ((ix + OFFSET) << (2 * BITS)) | ((iy + OFFSET) << BITS) | (iz + OFFSET)


def decode_key(key: int):
    key = int(key)
    if not 0 <= key < (1 << (3 * BITS)):
        raise ValueError(f"key {key} is not a valid cell key")
    return (((key >> (2 * BITS)) & MASK) - OFFSET,
            ((key >> BITS) & MASK) - OFFSET,
            (key & MASK) - OFFSET)


def encode_keys(ijk: np.ndarray) -> np.ndarray:
    """Vectorised encode_key over an (N, 3) integer array."""
    ijk = np.asarray(ijk, dtype=np.int64).reshape(-1, 3)
    _check_range(ijk)
    shifted = ijk + OFFSET
    return (shifted[:, 0] << (2 * BITS)) | (shifted[:, 1] << BITS) | shifted[:, 2]


def decode_keys(keys: np.ndarray) -> np.ndarray:
    keys = np.asarray(keys, dtype=np.int64).reshape(-1)
    out = np.empty((keys.shape[0], 3), dtype=np.int64)
    out[:, 0] = ((keys >> (2 * BITS)) & MASK) - OFFSET
    out[:, 1] = ((keys >> BITS) & MASK) - OFFSET
    out[:, 2] = (keys & MASK) - OFFSET
    return out


def voxel_coords(points: np.ndarray, voxel_size: float) -> np.ndarray:
    """floor(p / voxel_size) per axis."""
    if not voxel_size > 0:
        raise ValueError(f"voxel size must be positive, got {voxel_size}")
    return np.floor(np.asarray(points, dtype=np.float64).reshape(-1, 3) / voxel_size).astype(np.int64)


def point_keys(points: np.ndarray, voxel_size: float) -> np.ndarray:
    return encode_keys(voxel_coords(points, voxel_size))


def key_centers(keys: np.ndarray, voxel_size: float) -> np.ndarray:
    return (decode_keys(keys).astype(np.float64) + 0.5) * voxel_size


NEIGHBOR_OFFSETS = np.array([(dx, dy, dz) for dx in (-1, 0, 1) for dy in (-1, 0, 1) for dz in (-1, 0, 1)],
                            dtype=np.int64)
