import numpy as np
import pytest

from gpmesh.config import PipelineConfig
from gpmesh.models.geometry import Frame, PointCloud
from gpmesh.models.scene import Rectangle, SceneScript, SensorModel, TrajectoryScript


@pytest.fixture
def rng():
    return np.random.default_rng(42)


@pytest.fixture
def small_sensor():
    return SensorModel(rows=16, cols=180, fov_up_deg=15.0, fov_down_deg=-25.0)


def plane_cloud(z: float = 0.3, n: int = 10, lo: float = 0.05, hi: float = 0.95) -> PointCloud:
    """n x n grid on the plane z = const inside the unit cell."""
    xs = np.linspace(lo, hi, n)
    grid = np.array([(x, y, z) for x in xs for y in xs])
    return PointCloud(points=grid, frame=Frame.WORLD)


def separated_walls_script(sensor: SensorModel, num_scans: int = 1) -> SceneScript:
    """Floor plus four walls that never share a 1 m cell, so every cell holds a single plane."""
    rects = [
        Rectangle(origin=(-8.0, -8.0, 0.4), edge_u=(16.0, 0, 0), edge_v=(0, 16.0, 0)),
        Rectangle(origin=(4.6, -3.0, 1.2), edge_u=(0, 5.0, 0), edge_v=(0, 0, 1.6)),
        Rectangle(origin=(-3.0, 3.4, 1.2), edge_u=(6.0, 0, 0), edge_v=(0, 0, 1.6)),
        Rectangle(origin=(-4.4, -2.0, 1.2), edge_u=(0, 4.0, 0), edge_v=(0, 0, 1.6)),
        Rectangle(origin=(-2.5, -3.6, 1.2), edge_u=(5.0, 0, 0), edge_v=(0, 0, 1.6)),
    ]
    return SceneScript(rectangles=rects, sensor=sensor, num_scans=num_scans,
                       trajectory=TrajectoryScript(start=(0.3, -0.2, 1.7)))


@pytest.fixture
def fast_config(tmp_path):
    """Pipeline config sized for the small synthetic sensor."""
    return PipelineConfig.model_validate({
        "io": {"output_dir": str(tmp_path / "out")},
        "coarse": {"range_image_rows": 16, "range_image_cols": 180, "fov_up_deg": 15.0, "fov_down_deg": -25.0},
        "fine": {"max_range_m": 80.0},
    })
