# validators.py - Part of utils module
import math
from typing import Sequence


def validate_probability(p: float, name: str = "probability") -> float:
    if not 0.0 < p < 1.0:
        raise ValueError(f"{name} must lie in (0, 1), got {p}")
    return p


def validate_positive(value: float, name: str) -> float:
    if not (value > 0.0 and math.isfinite(value)):
        raise ValueError(f"{name} must be a positive finite number, got {value}")
    return value


def validate_threshold_table(rows: Sequence[Sequence[float]], width: int, name: str):
    """Check an adaptive threshold table.

    Rows are (m_bound, value...) sorted by strictly decreasing bound. The
    values may only grow down the table so the lookup stays monotone
    non-increasing in the spaciousness m.
    """
    if not rows:
        raise ValueError(f"{name} must have at least one row")
    for row in rows:
        if len(row) != width:
            raise ValueError(f"{name} rows must have {width} entries, got {list(row)}")
        if any(not math.isfinite(v) or v < 0 for v in row[1:]):
            raise ValueError(f"{name} values must be finite and non-negative: {list(row)}")
    for upper, lower in zip(rows, rows[1:]):
        if not lower[0] < upper[0]:
            raise ValueError(f"{name} bounds must be strictly decreasing")
        if any(lo < up for up, lo in zip(upper[1:], lower[1:])):
            raise ValueError(f"{name} values must not shrink as the bound decreases")
    return rows
