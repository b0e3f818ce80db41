# __init__.py - Models package initialization
from .geometry import Frame, ScanFormat, PoseFormat, PoseSE3, PointCloud, Mesh
from .keyframe import SpaciousnessState, Keyframe, SlidingWindow
from .range_image import RangeGeometry, RangeImage
from .mesh_map import ContinuityParams, CellIndex, AxisLayer, GPCell, MeshMap
from .registration import Association, SolverReport
from .occupancy import Observation, OccupancyVoxel, OccupancyGrid
from .report import MeshScores, ApeResult, StageTimings, EvalReport
from .scene import (
    Rectangle, Box, TrajectoryKind, TrajectoryScript, SensorModel, SceneScript, SyntheticScene
)

__all__ = [
    # Geometry
    "Frame", "ScanFormat", "PoseFormat", "PoseSE3", "PointCloud", "Mesh",

    # Keyframes and range images
    "SpaciousnessState", "Keyframe", "SlidingWindow", "RangeGeometry", "RangeImage",

    # Mesh map
    "ContinuityParams", "CellIndex", "AxisLayer", "GPCell", "MeshMap",

    # Registration
    "Association", "SolverReport",

    # Occupancy
    "Observation", "OccupancyVoxel", "OccupancyGrid",

    # Reports
    "MeshScores", "ApeResult", "StageTimings", "EvalReport",

    # Synthetic scenes
    "Rectangle", "Box", "TrajectoryKind", "TrajectoryScript", "SensorModel", "SceneScript",
    "SyntheticScene",
]
