# registration.py - Point-to-mesh associations and solver outcome
import numpy as np
from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator


def _vector3(value) -> np.ndarray:
    v = np.array(value, dtype=np.float64).reshape(-1)
    if v.shape != (3,) or not np.all(np.isfinite(v)):
        raise ValueError("expected a finite 3-vector")
    v.setflags(write=False)
    return v


class Association(BaseModel):
    """Query point v_p, its nearest mesh vertex v_q and the smooth normal n_q there."""

    model_config = ConfigDict(arbitrary_types_allowed=True, frozen=True)

    v_p: np.ndarray
    v_q: np.ndarray
    n_q: np.ndarray

    @field_validator("v_p", "v_q", mode="before")
    @classmethod
    def _check_point(cls, value):
        return _vector3(value)

    @field_validator("n_q", mode="before")
    @classmethod
    def _check_normal(cls, value):
        n = _vector3(value)
        if abs(np.linalg.norm(n) - 1.0) > 1e-9:
            raise ValueError("n_q must be a unit vector")
        return n


class SolverReport(BaseModel):
    iterations: int = Field(0, ge=0)
    outer_rounds: int = Field(0, ge=0)
    initial_cost: float = 0.0
    final_cost: float = 0.0
    converged: bool = False
    inlier_count: int = Field(0, ge=0)

    @model_validator(mode="after")
    def _check_costs(self):
        if self.converged and self.final_cost > self.initial_cost:
            raise ValueError("a converged solve cannot end above its initial cost")
        return self
