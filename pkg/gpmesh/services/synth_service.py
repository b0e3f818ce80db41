# services/synth_service.py - Ray-cast LiDAR simulator over scripted scenes
import json
import logging
import os
from typing import Dict, List, Optional, Tuple

import numpy as np

from gpmesh.models.geometry import Frame, Mesh, PointCloud, PoseFormat
from gpmesh.models.scene import (
    Box, Rectangle, SceneScript, SensorModel, SyntheticScene, TrajectoryKind, TrajectoryScript,
)
from gpmesh.services.ingest_service import write_mesh_ply, write_scan_bin, write_trajectory
from gpmesh.utils.atomic_io import atomic_open, ensure_parent_dir

logger = logging.getLogger(__name__)

RAY_EPS = 1e-9
# Downsample voxel written into simulated-scene configs.
DESK_DOWNSAMPLE_M = 0.1

# Corner order of the six faces of a box built from (lo, hi); outward winding.
_BOX_FACES = np.array([
    [0, 2, 1], [0, 3, 2], [4, 5, 6], [4, 6, 7],
    [0, 1, 5], [0, 5, 4], [2, 3, 7], [2, 7, 6],
    [1, 2, 6], [1, 6, 5], [0, 4, 7], [0, 7, 3],
], dtype=np.int64)


# ============= Rays =============

def sensor_directions(sensor: SensorModel) -> np.ndarray:
    """Unit beam directions in the sensor frame, row-major (row 0 = top beam)."""
    up, down = np.radians(sensor.fov_up_deg), np.radians(sensor.fov_down_deg)
    elevation = up - (np.arange(sensor.rows) + 0.5) * (up - down) / sensor.rows
    azimuth = np.pi - (np.arange(sensor.cols) + 0.5) * 2.0 * np.pi / sensor.cols
    el, az = np.meshgrid(elevation, azimuth, indexing="ij")
    dirs = np.stack([np.cos(el) * np.cos(az), np.cos(el) * np.sin(az), np.sin(el)], axis=-1)
    return dirs.reshape(-1, 3)


def intersect_rectangle(origin: np.ndarray, dirs: np.ndarray, rect: Rectangle) -> np.ndarray:
    o, u, v = np.array(rect.origin), np.array(rect.edge_u), np.array(rect.edge_v)
    normal = np.cross(u, v)
    denom = dirs @ normal
    with np.errstate(divide="ignore", invalid="ignore"):
        t = ((o - origin) @ normal) / denom
    hit = origin + t[:, None] * dirs
    a = (hit - o) @ u / (u @ u)
    b = (hit - o) @ v / (v @ v)
    ok = (np.abs(denom) > RAY_EPS) & (t > RAY_EPS) & (a >= 0) & (a <= 1) & (b >= 0) & (b <= 1)
    return np.where(ok, t, np.inf)


def intersect_box(origin: np.ndarray, dirs: np.ndarray, lo: np.ndarray, hi: np.ndarray) -> np.ndarray:
    """Slab test; rays starting inside the box hit its far side."""
    parallel = np.abs(dirs) < 1e-15
    safe = np.where(parallel, 1.0, dirs)
    t1 = (lo - origin) / safe
    t2 = (hi - origin) / safe
    near = np.minimum(t1, t2)
    far = np.maximum(t1, t2)
    inside_slab = (origin >= lo) & (origin <= hi)
    near = np.where(parallel, np.where(inside_slab, -np.inf, np.inf), near)
    far = np.where(parallel, np.where(inside_slab, np.inf, -np.inf), far)
    t_near = near.max(axis=1)
    t_far = far.min(axis=1)
    ok = (t_far >= t_near) & (t_far > RAY_EPS)
    t = np.where(t_near > RAY_EPS, t_near, t_far)
    return np.where(ok, t, np.inf)


def cast_rays(origin: np.ndarray, dirs: np.ndarray, script: SceneScript, time: float) -> Tuple[np.ndarray, np.ndarray]:
    """Nearest hit distance per ray and whether it belongs to a moving box."""
    best = np.full(dirs.shape[0], np.inf)
    dynamic = np.zeros(dirs.shape[0], dtype=bool)
    for rect in script.rectangles:
        t = intersect_rectangle(origin, dirs, rect)
        closer = t < best
        best[closer] = t[closer]
        dynamic[closer] = False
    for box in script.boxes:
        t = intersect_box(origin, dirs, *box.bounds_at(time))
        closer = t < best
        best[closer] = t[closer]
        dynamic[closer] = box.moving
    return best, dynamic


# ============= Scenes =============

def static_mesh(script: SceneScript) -> Mesh:
    """Triangles of every static primitive."""
    vertices: List[np.ndarray] = []
    faces: List[np.ndarray] = []
    base = 0
    for rect in script.rectangles:
        vertices.append(rect.corners())
        faces.append(np.array([[0, 1, 2], [0, 2, 3]]) + base)
        base += 4
    for box in script.boxes:
        if box.moving:
            continue
        lo, hi = box.bounds_at(0.0)
        corners = np.array([[x, y, z] for z in (lo[2], hi[2]) for (x, y) in
                            ((lo[0], lo[1]), (hi[0], lo[1]), (hi[0], hi[1]), (lo[0], hi[1]))])
        vertices.append(corners)
        faces.append(_BOX_FACES + base)
        base += 8
    if not faces:
        return Mesh()
    return Mesh(vertices=np.vstack(vertices), faces=np.vstack(faces))


def synth_scene(script: SceneScript, seed: int = 0) -> SyntheticScene:
    rng = np.random.default_rng(seed)
    sensor = script.sensor
    dirs = sensor_directions(sensor)
    trajectory = []
    scans = []
    labels = []
    for k in range(script.num_scans):
        t = k / sensor.rate_hz
        pose = script.trajectory.pose_at(t)
        ranges, dynamic = cast_rays(pose.translation, dirs @ pose.rotation.T, script, t)
        hit = np.isfinite(ranges) & (ranges <= sensor.max_range) & (ranges >= sensor.min_range)
        r = ranges[hit]
        if sensor.range_noise_std > 0:
            r = np.maximum(r + rng.normal(0.0, sensor.range_noise_std, r.shape[0]), sensor.min_range)
        trajectory.append((t, pose))
        scans.append(PointCloud(points=dirs[hit] * r[:, None], timestamp=t, frame=Frame.SENSOR))
        labels.append(dynamic[hit])
    logger.info(f"Synthesised {len(scans)} scans, {sum(len(s) for s in scans)} points")
    return SyntheticScene(script=script, seed=seed, mesh=static_mesh(script), trajectory=trajectory,
                          scans=scans, labels=labels)


# ============= Presets =============

def _rect(origin, u, v) -> Rectangle:
    return Rectangle(origin=origin, edge_u=u, edge_v=v)


def _room(x: float, y: float, floor: float, ceiling: float) -> List[Rectangle]:
    h = ceiling - floor
    return [
        _rect((-x, -y, floor), (2 * x, 0, 0), (0, 2 * y, 0)),
        _rect((-x, -y, ceiling), (2 * x, 0, 0), (0, 2 * y, 0)),
        _rect((-x, -y, floor), (0, 2 * y, 0), (0, 0, h)),
        _rect((x, -y, floor), (0, 2 * y, 0), (0, 0, h)),
        _rect((-x, -y, floor), (2 * x, 0, 0), (0, 0, h)),
        _rect((-x, y, floor), (2 * x, 0, 0), (0, 0, h)),
    ]


def _ground(half: float, z: float = 0.4) -> Rectangle:
    return _rect((-half, -half, z), (2 * half, 0, 0), (0, 2 * half, 0))


_FIELD_BOXES = [
    Box(center=(3.3, 1.7, 1.1), size=(1.2, 1.4, 1.4)),
    Box(center=(-2.6, 3.9, 1.35), size=(1.6, 0.9, 1.9)),
    Box(center=(-4.3, -2.2, 0.9), size=(0.9, 1.7, 1.0)),
    Box(center=(1.4, -4.6, 1.6), size=(2.3, 1.1, 2.4)),
    Box(center=(6.7, -1.9, 1.25), size=(1.1, 1.1, 1.7)),
    Box(center=(-7.1, 0.6, 1.5), size=(1.3, 2.1, 2.2)),
]


def _preset_scripts(sensor: SensorModel) -> Dict[str, SceneScript]:
    linear_room = TrajectoryScript(start=(0.3, -1.1, 1.7), velocity=(0.1, 0.05, 0.0))
    corridor_boxes = [Box(center=(2.3 + 4.0 * i, 1.35 if i % 2 else -1.35, 1.85), size=(0.5, 0.5, 2.9))
                      for i in range(15)]
    return {
        "plane": SceneScript(rectangles=[_ground(30.0)], sensor=sensor, num_scans=1,
                             trajectory=TrajectoryScript(start=(0.2, 0.3, 1.7))),
        "static_room": SceneScript(rectangles=_room(4.6, 3.4, 0.4, 3.3), sensor=sensor, num_scans=20,
                                   trajectory=linear_room),
        "room_with_moving_cube": SceneScript(
            rectangles=_room(4.6, 3.4, 0.4, 3.3),
            boxes=[Box(center=(-2.2, 1.3, 0.85), size=(0.8, 0.8, 0.8), velocity=(0.5, 0.0, 0.0))],
            sensor=sensor, num_scans=50, trajectory=linear_room),
        "corridor": SceneScript(
            rectangles=[
                _rect((-5.5, -1.6, 0.4), (70.0, 0, 0), (0, 3.2, 0)),
                _rect((-5.5, -1.6, 3.3), (70.0, 0, 0), (0, 3.2, 0)),
                _rect((-5.5, -1.6, 0.4), (70.0, 0, 0), (0, 0, 2.9)),
                _rect((-5.5, 1.6, 0.4), (70.0, 0, 0), (0, 0, 2.9)),
                _rect((-5.5, -1.6, 0.4), (0, 3.2, 0), (0, 0, 2.9)),
                _rect((64.5, -1.6, 0.4), (0, 3.2, 0), (0, 0, 2.9)),
            ],
            boxes=corridor_boxes, sensor=sensor, num_scans=50,
            trajectory=TrajectoryScript(start=(0.3, 0.1, 1.7), velocity=(1.0, 0.0, 0.0))),
        "plane_and_boxes": SceneScript(rectangles=[_ground(20.6)], boxes=list(_FIELD_BOXES), sensor=sensor,
                                       num_scans=20,
                                       trajectory=TrajectoryScript(start=(0.2, -0.3, 1.7), velocity=(0.2, 0.1, 0.0))),
        "loop": SceneScript(rectangles=[_ground(20.6)], boxes=list(_FIELD_BOXES), sensor=sensor, num_scans=200,
                            trajectory=TrajectoryScript(kind=TrajectoryKind.CIRCLE, center=(0.1, 0.2, 1.7),
                                                        radius=1.5, angular_speed=2.0 * np.pi / 20.0)),
    }


PRESETS = tuple(_preset_scripts(SensorModel()).keys())


def preset(name: str, num_scans: Optional[int] = None, sensor: Optional[SensorModel] = None) -> SceneScript:
    scripts = _preset_scripts(sensor or SensorModel())
    if name not in scripts:
        raise ValueError(f"unknown scene preset '{name}'; choose from {', '.join(PRESETS)}")
    script = scripts[name]
    if num_scans is not None:
        script = script.model_copy(update={"num_scans": num_scans})
    return script


# ============= Output =============

def write_scene(scene: SyntheticScene, out_dir: str) -> str:
    """Write scans, poses, labels, ground-truth mesh and a matching run config; returns the config path."""
    scan_dir = os.path.join(out_dir, "scans")
    label_dir = os.path.join(out_dir, "labels")
    os.makedirs(scan_dir, exist_ok=True)
    os.makedirs(label_dir, exist_ok=True)
    scan_paths = []
    for k, (cloud, label) in enumerate(zip(scene.scans, scene.labels)):
        path = os.path.join(scan_dir, f"{k:06d}.bin")
        write_scan_bin(cloud, path)
        np.save(os.path.join(label_dir, f"{k:06d}.npy"), label)
        scan_paths.append(path)
    poses_path = os.path.join(out_dir, "poses.txt")
    mesh_path = os.path.join(out_dir, "ground_truth.ply")
    write_trajectory(scene.trajectory, poses_path, PoseFormat.KITTI_3X4)
    write_mesh_ply(scene.mesh, mesh_path)
    sensor = scene.script.sensor
    config = {
        "seed": scene.seed,
        "io": {
            "scans": scan_paths,
            "poses": poses_path,
            "ground_truth_poses": poses_path,
            "ground_truth_mesh": mesh_path,
            "ground_truth_labels": label_dir,
            "output_dir": os.path.join(out_dir, "run"),
        },
        # Desk-scale scenes: every scan is a keyframe, fixed downsample voxel.
        "keyframe": {
            "scan_rate_hz": sensor.rate_hz,
            "adaptive_keyframe": False,
            "fixed_translation_m": 0.0,
            "fixed_rotation_rad": 0.0,
            "adaptive_downsample": False,
            "fixed_downsample_m": DESK_DOWNSAMPLE_M,
        },
        "coarse": {
            "range_image_rows": sensor.rows,
            "range_image_cols": sensor.cols,
            "fov_up_deg": sensor.fov_up_deg,
            "fov_down_deg": sensor.fov_down_deg,
        },
        "fine": {"max_range_m": sensor.max_range},
    }
    config_path = os.path.join(out_dir, "config.json")
    ensure_parent_dir(config_path)
    with atomic_open(config_path, "w") as f:
        json.dump(config, f, indent=2)
    logger.info(f"Wrote {len(scan_paths)} scans and config to {out_dir}")
    return config_path
