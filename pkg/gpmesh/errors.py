# errors.py - Exception hierarchy shared by services and the CLI
from typing import Optional


class GPMeshError(Exception):
    """Base error. `exit_code` is what the CLI returns when this escapes a command."""

    exit_code = 2

    def __init__(self, detail: str):
        super().__init__(detail)
        self.detail = detail


class ConfigError(GPMeshError, ValueError):
    exit_code = 1


class DataError(GPMeshError, ValueError):
    exit_code = 2


class ScanFormatError(DataError):
    def __init__(self, path: str, offset: int, reason: str):
        super().__init__(f"{path}: malformed scan at byte offset {offset}: {reason}")
        self.path = path
        self.offset = offset


class EmptyScanError(DataError):
    def __init__(self, path: str):
        super().__init__(f"{path}: scan contains no points")
        self.path = path


class PoseFormatError(DataError):
    def __init__(self, path: str, line_no: int, reason: str):
        super().__init__(f"{path}:{line_no}: {reason}")
        self.path = path
        self.line_no = line_no


class GeometryMismatchError(DataError):
    pass


class GPConditioningError(DataError):
    def __init__(self, condition: float, key: Optional[int] = None):
        where = f" in cell {key}" if key is not None else ""
        super().__init__(f"kernel matrix condition number {condition:.3e} too large{where}")
        self.condition = condition
        self.key = key


class ExcessFailuresError(GPMeshError):
    exit_code = 3

    def __init__(self, failed: int, total: int):
        super().__init__(f"{failed} of {total} scans failed")
        self.failed = failed
        self.total = total
