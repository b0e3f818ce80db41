"""
Scan, trajectory and mesh file handling.
"""

import numpy as np
import pytest
from plyfile import PlyData
from pypcd4 import Encoding
from pypcd4 import PointCloud as PcdCloud

from gpmesh.errors import EmptyScanError, PoseFormatError, ScanFormatError
from gpmesh.models.geometry import Mesh, PointCloud, PoseFormat, PoseSE3, ScanFormat
from gpmesh.services.ingest_service import (
    read_labels,
    read_mesh_ply,
    read_poses,
    read_scan,
    sample_mesh_surface,
    write_mesh_ply,
    write_scan_bin,
    write_trajectory,
)


def grid_mesh(nx: int, ny: int) -> Mesh:
    xs, ys = np.meshgrid(np.arange(nx, dtype=np.float64), np.arange(ny, dtype=np.float64), indexing="ij")
    vertices = np.stack([xs.ravel() * 0.25, ys.ravel() * 0.5, np.sin(xs.ravel()) * 0.125], axis=1)
    faces = []
    for i in range(nx - 1):
        for j in range(ny - 1):
            a, b, c, d = i * ny + j, (i + 1) * ny + j, (i + 1) * ny + j + 1, i * ny + j + 1
            faces += [(a, b, c), (a, c, d)]
    return Mesh(vertices=vertices.astype(np.float32).astype(np.float64), faces=faces)


class TestBinScans:
    def test_single_record(self, tmp_path):
        path = tmp_path / "one.bin"
        path.write_bytes(np.array([1.0, 2.0, 3.0, 0.5], dtype="<f4").tobytes())
        cloud = read_scan(str(path))
        np.testing.assert_array_equal(cloud.points, [[1.0, 2.0, 3.0]])

    def test_empty_file(self, tmp_path):
        path = tmp_path / "empty.bin"
        path.write_bytes(b"")
        with pytest.raises(EmptyScanError):
            read_scan(str(path))

    def test_partial_record_reports_offset(self, tmp_path):
        path = tmp_path / "partial.bin"
        path.write_bytes(b"\x00" * 20)
        with pytest.raises(ScanFormatError) as exc:
            read_scan(str(path))
        assert exc.value.offset == 16

    def test_non_finite_row(self, tmp_path):
        path = tmp_path / "nan.bin"
        records = np.zeros((3, 4), dtype="<f4")
        records[2, 1] = np.nan
        path.write_bytes(records.tobytes())
        with pytest.raises(ScanFormatError) as exc:
            read_scan(str(path))
        assert exc.value.offset == 32

    def test_round_trip_keeps_order(self, tmp_path, rng):
        points = (rng.random((100, 3)) * 40.0 - 20.0).astype(np.float32).astype(np.float64)
        path = str(tmp_path / "scan.bin")
        write_scan_bin(PointCloud(points=points), path)
        np.testing.assert_array_equal(read_scan(path).points, points)


class TestTextScans:
    def test_pcd_ascii_with_extra_fields(self, tmp_path):
        path = tmp_path / "scan.pcd"
        path.write_text(
            "# .PCD v0.7\nVERSION 0.7\nFIELDS x y z intensity\nSIZE 4 4 4 4\nTYPE F F F F\n"
            "COUNT 1 1 1 1\nWIDTH 3\nHEIGHT 1\nVIEWPOINT 0 0 0 1 0 0 0\nPOINTS 3\nDATA ascii\n"
            "1 2 3 9\nnan nan nan 0\n4 5 6 7\n"
        )
        cloud = read_scan(str(path), ScanFormat.PCD_ASCII)
        np.testing.assert_array_equal(cloud.points, [[1, 2, 3], [4, 5, 6]])

    def test_ply_point_cloud(self, tmp_path):
        path = tmp_path / "scan.ply"
        path.write_text("ply\nformat ascii 1.0\nelement vertex 2\nproperty float x\nproperty float y\n"
                        "property float z\nend_header\n1 0 0\n0 2 0\n")
        cloud = read_scan(str(path), ScanFormat.PLY)
        np.testing.assert_array_equal(cloud.points, [[1, 0, 0], [0, 2, 0]])

    def test_binary_compressed_pcd(self, tmp_path, rng):
        points = rng.random((50, 3)).astype(np.float32)
        path = str(tmp_path / "scan.pcd")
        PcdCloud.from_xyz_points(points).save(path, encoding=Encoding.BINARY_COMPRESSED)
        cloud = read_scan(path, ScanFormat.PCD_ASCII)
        np.testing.assert_array_equal(cloud.points, points.astype(np.float64))

    def test_pcd_without_z(self, tmp_path):
        path = tmp_path / "flat.pcd"
        path.write_text(
            "VERSION 0.7\nFIELDS x y\nSIZE 4 4\nTYPE F F\nCOUNT 1 1\nWIDTH 1\nHEIGHT 1\n"
            "VIEWPOINT 0 0 0 1 0 0 0\nPOINTS 1\nDATA ascii\n1 2\n"
        )
        with pytest.raises(ScanFormatError):
            read_scan(str(path), ScanFormat.PCD_ASCII)

    def test_not_a_ply(self, tmp_path):
        path = tmp_path / "scan.ply"
        path.write_text("hello\n")
        with pytest.raises(ScanFormatError):
            read_scan(str(path), ScanFormat.PLY)

    def test_labels(self, tmp_path):
        path = str(tmp_path / "000000.npy")
        np.save(path, np.array([True, False, True]))
        np.testing.assert_array_equal(read_labels(path, 3), [True, False, True])

    def test_label_count_mismatch(self, tmp_path):
        path = str(tmp_path / "000000.npy")
        np.save(path, np.zeros(4, dtype=bool))
        with pytest.raises(ScanFormatError):
            read_labels(path, 3)

    def test_missing_labels(self, tmp_path):
        with pytest.raises(ScanFormatError):
            read_labels(str(tmp_path / "absent.npy"), 3)


class TestTrajectories:
    def test_kitti_identity(self, tmp_path):
        path = tmp_path / "poses.txt"
        path.write_text("1 0 0 0 0 1 0 0 0 0 1 0\n")
        [(stamp, pose)] = read_poses(str(path))
        assert stamp == 0.0
        assert pose.is_close(PoseSE3.identity(), atol=0.0)

    def test_kitti_timestamps_follow_scan_rate(self, tmp_path):
        path = tmp_path / "poses.txt"
        path.write_text("1 0 0 0 0 1 0 0 0 0 1 0\n" * 3)
        stamps = [t for t, _ in read_poses(str(path), scan_rate_hz=20.0)]
        np.testing.assert_allclose(stamps, [0.0, 0.05, 0.1])

    def test_tum_with_header(self, tmp_path):
        path = tmp_path / "poses.tum"
        path.write_text("# timestamp tx ty tz qx qy qz qw\n1.5 1 2 3 0 0 0 1\n")
        [(stamp, pose)] = read_poses(str(path), PoseFormat.TUM)
        assert stamp == 1.5
        np.testing.assert_array_equal(pose.rotation, np.eye(3))
        np.testing.assert_array_equal(pose.translation, [1, 2, 3])

    def test_non_orthonormal_rotation_names_line(self, tmp_path):
        path = tmp_path / "poses.txt"
        path.write_text("1 0 0 0 0 1 0 0 0 0 1 0\n1.1 0 0 0 0 1 0 0 0 0 1 0\n")
        with pytest.raises(PoseFormatError) as exc:
            read_poses(str(path))
        assert exc.value.line_no == 2

    def test_wrong_column_count(self, tmp_path):
        path = tmp_path / "poses.txt"
        path.write_text("1 0 0 0 0 1 0 0 0 0 1\n")
        with pytest.raises(PoseFormatError):
            read_poses(str(path))

    def test_empty_trajectory_writes_empty_file(self, tmp_path):
        path = tmp_path / "out.txt"
        write_trajectory([], str(path))
        assert path.read_text() == ""

    def test_identity_kitti_line(self, tmp_path):
        path = tmp_path / "out.txt"
        write_trajectory([(0.0, PoseSE3.identity())], str(path))
        assert path.read_text() == "1 0 0 0 0 1 0 0 0 0 1 0\n"

    @pytest.mark.parametrize("fmt", [PoseFormat.KITTI_3X4, PoseFormat.TUM])
    def test_round_trip(self, tmp_path, rng, fmt):
        trajectory = [
            (i * 0.1, PoseSE3.from_rotvec(rng.normal(size=3), rng.normal(size=3) * 10.0))
            for i in range(50)
        ]
        path = str(tmp_path / "traj.txt")
        write_trajectory(trajectory, path, fmt)
        loaded = read_poses(path, fmt, scan_rate_hz=10.0)
        assert len(loaded) == len(trajectory)
        for (t0, p0), (t1, p1) in zip(trajectory, loaded):
            assert abs(t0 - t1) < 1e-9
            np.testing.assert_allclose(p1.rotation, p0.rotation, atol=1e-9)
            np.testing.assert_allclose(p1.translation, p0.translation, atol=1e-9)


class TestMeshFiles:
    def test_empty_mesh(self, tmp_path):
        path = tmp_path / "empty.ply"
        write_mesh_ply(Mesh(), str(path))
        assert b"element vertex 0" in path.read_bytes()
        mesh = read_mesh_ply(str(path))
        assert mesh.vertices.shape == (0, 3) and mesh.faces.shape == (0, 3)

    def test_unit_triangle(self, tmp_path):
        mesh = Mesh(vertices=[[0, 0, 0], [1, 0, 0], [0, 1, 0]], faces=[[0, 1, 2]])
        path = str(tmp_path / "tri.ply")
        write_mesh_ply(mesh, path)
        loaded = read_mesh_ply(path)
        np.testing.assert_array_equal(loaded.vertices, mesh.vertices)
        np.testing.assert_array_equal(loaded.faces, mesh.faces)

    def test_large_binary_round_trip(self, tmp_path):
        mesh = grid_mesh(51, 101)
        assert mesh.faces.shape[0] == 10000
        path = str(tmp_path / "grid.ply")
        write_mesh_ply(mesh, path)
        loaded = read_mesh_ply(path)
        np.testing.assert_array_equal(loaded.vertices, mesh.vertices)
        np.testing.assert_array_equal(loaded.faces, mesh.faces)

    def test_ascii_round_trip(self, tmp_path):
        mesh = grid_mesh(6, 7)
        path = str(tmp_path / "grid_ascii.ply")
        write_mesh_ply(mesh, path, binary=False)
        loaded = read_mesh_ply(path)
        np.testing.assert_array_equal(loaded.vertices.astype(np.float32), mesh.vertices.astype(np.float32))
        np.testing.assert_array_equal(loaded.faces, mesh.faces)

    def test_quad_faces_rejected(self, tmp_path):
        path = tmp_path / "quad.ply"
        path.write_text("ply\nformat ascii 1.0\nelement vertex 4\nproperty float x\nproperty float y\n"
                        "property float z\nelement face 1\nproperty list uchar int vertex_indices\n"
                        "end_header\n0 0 0\n1 0 0\n1 1 0\n0 1 0\n4 0 1 2 3\n")
        with pytest.raises(ScanFormatError):
            read_mesh_ply(str(path))

    def test_truncated_binary_body(self, tmp_path):
        path = tmp_path / "grid.ply"
        write_mesh_ply(grid_mesh(6, 7), str(path))
        data = path.read_bytes()
        path.write_bytes(data[:-20])
        with pytest.raises(ScanFormatError):
            read_mesh_ply(str(path))

    def test_header_is_standard(self, tmp_path):
        path = tmp_path / "tri.ply"
        write_mesh_ply(Mesh(vertices=[[0, 0, 0], [1, 0, 0], [0, 1, 0]], faces=[[0, 1, 2]]), str(path))
        ply = PlyData.read(str(path))
        assert ply.byte_order == "<" and not ply.text
        assert [p.name for p in ply["vertex"].properties] == ["x", "y", "z"]
        assert ply["face"].count == 1

    def test_unwritable_path(self, tmp_path):
        blocker = tmp_path / "file.txt"
        blocker.write_text("x")
        with pytest.raises(OSError):
            write_mesh_ply(Mesh(), str(blocker / "mesh.ply"))


class TestSurfaceSampling:
    def test_points_lie_on_the_triangle_plane(self):
        mesh = Mesh(vertices=[[0, 0, 0], [1, 0, 1], [0, 1, 0]], faces=[[0, 1, 2]])
        cloud = sample_mesh_surface(mesh, density=500.0, seed=3)
        normal = np.array([-1.0, 0.0, 1.0]) / np.sqrt(2.0)
        assert len(cloud) > 0
        np.testing.assert_allclose(cloud.points @ normal, 0.0, atol=1e-12)

    def test_count_tracks_area(self):
        mesh = Mesh(vertices=[[0, 0, 0], [2, 0, 0], [0, 1, 0]], faces=[[0, 1, 2]])
        cloud = sample_mesh_surface(mesh, density=100.0, seed=0)
        assert 50 <= len(cloud) <= 150

    def test_equal_area_faces_get_equal_shares(self):
        mesh = Mesh(vertices=[[0, 0, 0], [1, 0, 0], [0, 1, 0], [0, 0, 5], [1, 0, 5], [0, 1, 5]],
                    faces=[[0, 1, 2], [3, 4, 5]])
        cloud = sample_mesh_surface(mesh, density=10000.0, seed=7)
        low = int(np.sum(cloud.points[:, 2] < 2.5))
        high = len(cloud) - low
        assert abs(low - high) <= 0.1 * max(low, high)

    def test_empty_mesh(self):
        assert sample_mesh_surface(Mesh(), density=10.0).is_empty

    def test_density_must_be_positive(self):
        with pytest.raises(ValueError):
            sample_mesh_surface(Mesh(), density=0.0)
