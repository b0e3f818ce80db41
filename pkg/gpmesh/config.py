import json
import logging
import os
from enum import Enum
from typing import List, Optional, Sequence, Tuple

from dotenv import load_dotenv
from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_validator, model_validator

from gpmesh.errors import ConfigError
from gpmesh.models.geometry import PoseFormat, ScanFormat
from gpmesh.utils.validators import validate_threshold_table

load_dotenv()

logger = logging.getLogger(__name__)


class Settings:
    # Config
    DEFAULT_CONFIG_PATH = os.getenv("GPMESH_CONFIG", "")

    # Logging
    LOG_LEVEL = os.getenv("GPMESH_LOG_LEVEL", "INFO").upper()

    # Outputs
    OUTPUT_DIR = os.getenv("GPMESH_OUTPUT_DIR", "./outputs")

    # Per-cell GP work is split across this many threads
    WORKERS = int(os.getenv("GPMESH_WORKERS", "1"))

settings = Settings()


# ============= Enums =============

class PoseSource(str, Enum):
    POSE_FILE = "pose_file"
    CONSTANT_VELOCITY = "constant_velocity"


class FusionRule(str, Enum):
    INVERSE_VARIANCE = "inverse_variance"
    LITERAL = "literal"


class AxisSelection(str, Enum):
    ALL = "all"
    DOMINANT = "dominant"


class _Section(BaseModel):
    model_config = ConfigDict(extra="forbid")


# ============= Sections =============

class IOConfig(_Section):
    scans: List[str] = []
    scan_dir: Optional[str] = None
    scan_format: ScanFormat = ScanFormat.BIN_XYZI
    poses: Optional[str] = None
    pose_format: PoseFormat = PoseFormat.KITTI_3X4
    pose_source: PoseSource = PoseSource.POSE_FILE
    output_dir: Optional[str] = None
    mesh_out: str = "mesh.ply"
    trajectory_out: str = "trajectory.txt"
    trajectory_format: PoseFormat = PoseFormat.KITTI_3X4
    report_out: str = "report.txt"
    binary_ply: bool = True
    ground_truth_poses: Optional[str] = None
    ground_truth_mesh: Optional[str] = None
    # Directory of per-scan dynamic flags (<scan stem>.npy) for the ghost metric.
    ground_truth_labels: Optional[str] = None


# Rows are (m_bound, translation_m, rotation_rad); the first row with m > bound
# wins and the last row is the catch-all.
DEFAULT_KEYFRAME_TABLE = [(20.0, 0.0, 0.0), (10.0, 0.3, 0.1), (5.0, 0.5, 0.3), (0.0, 1.0, 0.5)]
# Rows are (m_bound, voxel_m).
DEFAULT_DOWNSAMPLE_TABLE = [(20.0, 0.05), (10.0, 0.10), (5.0, 0.30), (0.0, 0.50)]


class KeyframeConfig(_Section):
    window_size: int = Field(5, ge=1, le=100)
    scan_rate_hz: float = Field(10.0, gt=0.0)
    alpha: float = Field(0.95, ge=0.0, le=1.0)
    beta: float = Field(0.05, ge=0.0, le=1.0)
    threshold_table: List[Tuple[float, float, float]] = DEFAULT_KEYFRAME_TABLE
    downsample_table: List[Tuple[float, float]] = DEFAULT_DOWNSAMPLE_TABLE
    adaptive_keyframe: bool = True
    fixed_translation_m: float = Field(0.5, ge=0.0)
    fixed_rotation_rad: float = Field(0.3, ge=0.0)
    adaptive_downsample: bool = True
    fixed_downsample_m: float = Field(0.1, gt=0.0)

    @field_validator("threshold_table")
    @classmethod
    def _check_threshold_table(cls, rows):
        return validate_threshold_table(rows, 3, "threshold_table")

    @field_validator("downsample_table")
    @classmethod
    def _check_downsample_table(cls, rows):
        validate_threshold_table(rows, 2, "downsample_table")
        if any(r[1] <= 0 for r in rows):
            raise ValueError("downsample sizes must be positive")
        return rows

    @model_validator(mode="after")
    def _check_smoothing(self):
        if abs(self.alpha + self.beta - 1.0) > 1e-9:
            raise ValueError("alpha + beta must equal 1")
        return self


class CoarseConfig(_Section):
    enabled: bool = True
    range_image_rows: int = Field(64, ge=1, le=4096)
    range_image_cols: int = Field(900, ge=1, le=16384)
    fov_up_deg: float = Field(2.0, ge=-90.0, le=90.0)
    fov_down_deg: float = Field(-24.8, ge=-90.0, le=90.0)
    r_th_m: float = Field(1.0, gt=0.0)

    @model_validator(mode="after")
    def _check_fov(self):
        if not self.fov_up_deg > self.fov_down_deg:
            raise ValueError("fov_up_deg must exceed fov_down_deg")
        return self


class MesherConfig(_Section):
    voxel_size_m: float = Field(1.0, gt=0.0)
    grid_g: int = Field(4, ge=2, le=64)
    kernel_sigma_f: float = Field(1.0, gt=0.0)
    kernel_length_scale_m: Optional[float] = Field(None, gt=0.0)
    sigma_in_sq: float = Field(1e-2, gt=0.0)
    sigma_match_sq: float = Field(0.05, gt=0.0)
    sigma_update_sq: float = Field(0.1, gt=0.0)
    w1: float = Field(0.5, ge=0.0, le=1.0)
    w2: float = Field(0.5, ge=0.0, le=1.0)
    c_th: float = Field(0.2, ge=0.0)
    neighborhood_k: int = Field(4, ge=2, le=64)
    continuity_enabled: bool = True
    continuity_exclude_above: bool = True
    fusion_rule: FusionRule = FusionRule.INVERSE_VARIANCE
    axis_selection: AxisSelection = AxisSelection.ALL
    min_axis_alignment: float = Field(0.3, ge=0.0, le=1.0)
    max_training_points: int = Field(200, ge=1)
    min_training_points: int = Field(4, ge=1)
    workers: int = Field(default_factory=lambda: settings.WORKERS, ge=1)

    @model_validator(mode="after")
    def _check_weights(self):
        if abs(self.w1 + self.w2 - 1.0) > 1e-9:
            raise ValueError("w1 + w2 must equal 1")
        return self

    @property
    def length_scale(self) -> float:
        return self.kernel_length_scale_m or self.voxel_size_m / 2.0


class RegistrationConfig(_Section):
    enabled: bool = True
    huber_delta_m: float = Field(0.1, gt=0.0)
    max_outer: int = Field(10, ge=1)
    max_lm_iters: int = Field(20, ge=1)
    min_inliers: int = Field(50, ge=6)
    lambda_init: float = Field(1e-4, gt=0.0)
    max_association_m: float = Field(1.0, gt=0.0)


class FineConfig(_Section):
    enabled: bool = True
    p_hit: float = Field(0.7, gt=0.5, lt=1.0)
    p_miss: float = Field(0.4, gt=0.0, lt=0.5)
    p_occ: float = Field(0.8, gt=0.0, lt=1.0)
    p_free: float = Field(0.3, gt=0.0, lt=1.0)
    occupancy_voxel_size_m: Optional[float] = Field(None, gt=0.0)
    logodds_clamp: float = Field(10.0, gt=0.0)
    max_range_m: float = Field(80.0, gt=0.0)

    @model_validator(mode="after")
    def _check_thresholds(self):
        if not self.p_free < self.p_occ:
            raise ValueError("p_free must be below p_occ")
        return self


class EvaluationConfig(_Section):
    delta_m: float = Field(0.1, gt=0.0)
    sample_density: float = Field(400.0, gt=0.0)
    max_time_diff_s: float = Field(0.05, gt=0.0)
    # Score recall only against ground truth within delta of a return.
    crop_to_observed: bool = True


class PipelineConfig(_Section):
    io: IOConfig = Field(default_factory=IOConfig)
    keyframe: KeyframeConfig = Field(default_factory=KeyframeConfig)
    coarse: CoarseConfig = Field(default_factory=CoarseConfig)
    mesher: MesherConfig = Field(default_factory=MesherConfig)
    registration: RegistrationConfig = Field(default_factory=RegistrationConfig)
    fine: FineConfig = Field(default_factory=FineConfig)
    evaluation: EvaluationConfig = Field(default_factory=EvaluationConfig)
    seed: int = 0
    max_failure_ratio: float = Field(0.1, ge=0.0, le=1.0)

    @property
    def occupancy_voxel_size(self) -> float:
        return self.fine.occupancy_voxel_size_m or self.mesher.voxel_size_m


# ============= Loading =============

def parse_override(item: str) -> Tuple[List[str], object]:
    """Split `section.key=value`; the value is JSON when it parses, else a string."""
    if "=" not in item:
        raise ConfigError(f"override '{item}' is not of the form key=value")
    key, raw = item.split("=", 1)
    path = [p for p in key.strip().split(".") if p]
    if not path:
        raise ConfigError(f"override '{item}' has an empty key")
    try:
        value = json.loads(raw)
    except json.JSONDecodeError:
        value = raw
    return path, value


def apply_overrides(raw: dict, overrides: Sequence[str]) -> dict:
    for item in overrides:
        path, value = parse_override(item)
        node = raw
        for part in path[:-1]:
            child = node.setdefault(part, {})
            if not isinstance(child, dict):
                raise ConfigError(f"override '{item}': '{part}' is not a section")
            node = child
        node[path[-1]] = value
    return raw


def load_pipeline_config(path: Optional[str] = None, overrides: Sequence[str] = ()) -> PipelineConfig:
    """Read a JSON config (falling back to $GPMESH_CONFIG) and apply `--set` overrides."""
    path = path or settings.DEFAULT_CONFIG_PATH or None
    raw: dict = {}
    if path:
        try:
            with open(path, "r", encoding="utf-8") as f:
                raw = json.load(f)
        except OSError as e:
            raise ConfigError(f"cannot read config {path}: {e}")
        except json.JSONDecodeError as e:
            raise ConfigError(f"config {path} is not valid JSON: {e}")
        if not isinstance(raw, dict):
            raise ConfigError(f"config {path} must hold a JSON object")
        logger.info(f"Loaded pipeline config from {path}")
    raw = apply_overrides(raw, overrides)
    try:
        return PipelineConfig.model_validate(raw)
    except ValidationError as e:
        raise ConfigError(f"invalid pipeline config: {e}")
