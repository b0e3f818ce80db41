# report.py - Evaluation results and the run report
from typing import Dict, List, Optional

from pydantic import BaseModel, ConfigDict, Field, model_validator

from gpmesh.models.geometry import PoseSE3


class MeshScores(BaseModel):
    """Precision, recall and F1 in percent at distance threshold `delta`."""

    delta: float
    precision: float = Field(0.0, ge=0.0, le=100.0)
    recall: float = Field(0.0, ge=0.0, le=100.0)
    f1: float = Field(0.0, ge=0.0, le=100.0)
    accuracy_mean: float = 0.0
    completion_mean: float = 0.0
    candidate_points: int = 0
    reference_points: int = 0

    @model_validator(mode="after")
    def _check_f1(self):
        total = self.precision + self.recall
        expected = 2.0 * self.precision * self.recall / total if total > 0 else 0.0
        if abs(self.f1 - expected) > 1e-6:
            raise ValueError("f1 must be the harmonic mean of precision and recall")
        return self


class ApeResult(BaseModel):
    model_config = ConfigDict(arbitrary_types_allowed=True)

    mean: float = 0.0
    rmse: float = 0.0
    matched: int = 0
    errors: List[float] = []
    alignment: PoseSE3 = Field(default_factory=PoseSE3.identity)


class StageTimings(BaseModel):
    """Accumulated wall time per pipeline stage in milliseconds."""

    totals_ms: Dict[str, float] = {}
    calls: Dict[str, int] = {}

    def add(self, stage: str, elapsed_ms: float):
        self.totals_ms[stage] = self.totals_ms.get(stage, 0.0) + elapsed_ms
        self.calls[stage] = self.calls.get(stage, 0) + 1

    def mean_ms(self, stage: str) -> float:
        calls = self.calls.get(stage, 0)
        return self.totals_ms.get(stage, 0.0) / calls if calls else 0.0


class EvalReport(BaseModel):
    scans: int = 0
    keyframes: int = 0
    failed_scans: int = 0
    coarse_removed_points: int = 0
    cleared_cells: int = 0
    map_cells: int = 0
    mesh_vertices: int = 0
    mesh_faces: int = 0
    precision: Optional[float] = None
    recall: Optional[float] = None
    f1: Optional[float] = None
    ape_mean: Optional[float] = None
    ape_rmse: Optional[float] = None
    ghost_fraction: Optional[float] = None
    timings: StageTimings = Field(default_factory=StageTimings)

    def to_text(self) -> str:
        """`key: value` lines; stage timings as `time_<stage>_ms`."""
        lines = []
        for name, value in self.model_dump(exclude={"timings"}).items():
            if value is None:
                continue
            lines.append(f"{name}: {value:.6f}" if isinstance(value, float) else f"{name}: {value}")
        for stage in sorted(self.timings.totals_ms):
            lines.append(f"time_{stage}_ms: {self.timings.totals_ms[stage]:.3f}")
            lines.append(f"time_{stage}_mean_ms: {self.timings.mean_ms(stage):.3f}")
        return "\n".join(lines) + "\n"
