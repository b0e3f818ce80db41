"""
Scan-order continuity scores and the outlier filter built on them.
"""

import numpy as np
import pytest

from gpmesh.models.geometry import PointCloud
from gpmesh.models.mesh_map import ContinuityParams
from gpmesh.services.continuity_service import continuity_filter, continuity_scores


def plane_rows(nx: int = 20, ny: int = 20) -> np.ndarray:
    """Row-major grid on a plane below the sensor, as a scan would order it."""
    xs = np.linspace(2.0, 4.0, nx)
    ys = np.linspace(-1.0, 1.0, ny)
    return np.array([(x, y, -1.5) for x in xs for y in ys])


class TestScores:
    def test_symmetric_neighbours_have_zero_direction_term(self):
        d = 0.1
        cloud = PointCloud(points=[[1.0, d, 0.0], [1.0, 0.0, 0.0], [1.0, -d, 0.0]])
        scores = continuity_scores(cloud, ContinuityParams(w1=1.0, w2=0.0, neighborhood=2))
        assert scores[1] == pytest.approx(0.0, abs=1e-12)

    def test_hand_computed_values(self):
        cloud = PointCloud(points=[[1.0, 0.0, 0.0], [2.0, 0.0, 0.0], [1.0, 0.0, 0.0]])
        assert continuity_scores(cloud, ContinuityParams(w1=1.0, w2=0.0, neighborhood=2))[1] == pytest.approx(0.5)
        assert continuity_scores(cloud, ContinuityParams(w1=0.0, w2=1.0, neighborhood=2))[1] == pytest.approx(0.5)
        assert continuity_scores(cloud, ContinuityParams(neighborhood=2))[1] == pytest.approx(0.5)

    def test_identical_points(self):
        cloud = PointCloud(points=np.tile([3.0, 1.0, -1.0], (10, 1)))
        np.testing.assert_allclose(continuity_scores(cloud, ContinuityParams()), 0.0, atol=1e-12)

    def test_origin_point_scores_zero(self):
        cloud = PointCloud(points=[[1.0, 0, 0], [0.0, 0, 0], [1.0, 0.1, 0]])
        assert continuity_scores(cloud, ContinuityParams(neighborhood=2))[1] == 0.0

    def test_single_point(self):
        np.testing.assert_array_equal(continuity_scores(PointCloud(points=[[1.0, 0, 0]]), ContinuityParams()), [0.0])

    def test_plane_interior_is_smooth(self):
        cloud = PointCloud(points=plane_rows())
        scores = continuity_scores(cloud, ContinuityParams()).reshape(20, 20)
        assert np.all(scores[:, 2:-2] < 0.2)


class TestFilter:
    def test_isolated_outlier_removed(self):
        points = plane_rows()
        outlier = np.array([3.0, 0.0, 3.5])
        points = np.insert(points, 210, outlier, axis=0)
        cloud = PointCloud(points=points)
        scores = continuity_scores(cloud, ContinuityParams())
        kept = continuity_filter(cloud, scores, 0.2)
        assert not np.any(np.all(np.isclose(kept.points, outlier), axis=1))
        assert scores[210] > np.percentile(np.delete(scores, 210), 95)

    def test_infinite_threshold_keeps_everything(self):
        cloud = PointCloud(points=plane_rows())
        scores = continuity_scores(cloud, ContinuityParams())
        np.testing.assert_array_equal(continuity_filter(cloud, scores, np.inf).points, cloud.points)

    def test_origin_points_always_dropped(self):
        cloud = PointCloud(points=[[1.0, 0, 0], [0.0, 0, 0], [1.0, 0.1, 0]])
        kept = continuity_filter(cloud, np.zeros(3), np.inf)
        assert len(kept) == 2

    def test_reversed_direction_keeps_high_scores(self):
        cloud = PointCloud(points=[[1.0, 0, 0], [2.0, 0, 0], [3.0, 0, 0]])
        kept = continuity_filter(cloud, np.array([0.1, 0.5, 0.9]), 0.4, exclude_above=False)
        np.testing.assert_array_equal(kept.points, [[2.0, 0, 0], [3.0, 0, 0]])

    def test_score_count_must_match(self):
        with pytest.raises(ValueError):
            continuity_filter(PointCloud(points=[[1.0, 0, 0]]), np.zeros(2), 0.2)
