# services/pipeline_service.py - Scan-by-scan mapping pipeline and batch runner
import glob
import json
import logging
import os
import time
from contextlib import contextmanager
from typing import List, Optional, Tuple

from scipy.linalg import LinAlgError

from gpmesh.config import PipelineConfig, PoseSource, settings
from gpmesh.errors import ConfigError, DataError, ExcessFailuresError, GPMeshError
from gpmesh.models.geometry import Frame, Mesh, PointCloud, PoseSE3, ScanFormat
from gpmesh.models.keyframe import Keyframe, SlidingWindow, SpaciousnessState
from gpmesh.models.mesh_map import ContinuityParams, MeshMap
from gpmesh.models.occupancy import OccupancyGrid
from gpmesh.models.range_image import RangeGeometry
from gpmesh.models.report import EvalReport, StageTimings
from gpmesh.services import (
    coarse_removal_service, continuity_service, evaluation_service, ingest_service, keyframe_service,
    mesher_service, occupancy_service, registration_service,
)
from gpmesh.utils.atomic_io import atomic_open, ensure_parent_dir

logger = logging.getLogger(__name__)

Trajectory = List[Tuple[float, PoseSE3]]

_SCAN_SUFFIXES = {ScanFormat.BIN_XYZI: ".bin", ScanFormat.PLY: ".ply", ScanFormat.PCD_ASCII: ".pcd"}


class MappingPipeline:
    """Streaming mapper: feed scans in time order with `process_scan`, read the mesh at any time."""

    def __init__(self, config: Optional[PipelineConfig] = None):
        self.config = config or PipelineConfig()
        cfg = self.config
        self.state = SpaciousnessState(alpha=cfg.keyframe.alpha, beta=cfg.keyframe.beta)
        self.window = SlidingWindow(cfg.keyframe.window_size)
        self.mesh_map = MeshMap(cfg.mesher.voxel_size_m, cfg.mesher.grid_g)
        self.grid = OccupancyGrid(cfg.occupancy_voxel_size)
        self.geometry = RangeGeometry.from_degrees(cfg.coarse.range_image_rows, cfg.coarse.range_image_cols,
                                                   cfg.coarse.fov_up_deg, cfg.coarse.fov_down_deg)
        self.continuity = ContinuityParams(w1=cfg.mesher.w1, w2=cfg.mesher.w2,
                                           neighborhood=cfg.mesher.neighborhood_k)
        self.timings = StageTimings()
        self.trajectory: Trajectory = []
        self.scan_index = 0
        self.keyframes = 0
        self.coarse_removed = 0
        self.cleared_cells = 0
        self._last_kf_pose: Optional[PoseSE3] = None
        self._prev_aggregate: Optional[PointCloud] = None
        self._prev_aggregate_pose: Optional[PoseSE3] = None
        self._last_refined: Optional[PoseSE3] = None
        self._last_odom: Optional[PoseSE3] = None

    @contextmanager
    def timed(self, stage: str):
        start = time.perf_counter()
        try:
            yield
        finally:
            self.timings.add(stage, (time.perf_counter() - start) * 1000.0)

    # ============= Per-scan flow =============

    def _motion_prior(self) -> PoseSE3:
        published = [pose for _, pose in self.trajectory[-2:]]
        if not published:
            return PoseSE3.identity()
        if len(published) == 1:
            return published[0]
        return registration_service.constant_velocity_prior(published[0], published[1])

    def _track(self, cloud: PointCloud) -> PoseSE3:
        """Constant-velocity mode: register every scan against the map to get its odometry pose."""
        prior = self._motion_prior()
        cfg = self.config
        if not cfg.registration.enabled or self.mesh_map.is_empty:
            return prior
        size = self._downsample_size()
        with self.timed("registration"):
            pose, report = registration_service.solve_pose(
                prior, self.mesh_map, keyframe_service.voxel_downsample(cloud, size), cfg.registration)
        logger.debug(f"Scan {self.scan_index}: tracking converged={report.converged} "
                     f"inliers={report.inlier_count}")
        return pose

    def _downsample_size(self) -> float:
        kf = self.config.keyframe
        if kf.adaptive_downsample:
            return keyframe_service.downsample_size(self.state.m, kf.downsample_table)
        return kf.fixed_downsample_m

    def _thresholds(self) -> Tuple[float, float]:
        kf = self.config.keyframe
        if kf.adaptive_keyframe:
            return keyframe_service.keyframe_thresholds(self.state.m, kf.threshold_table)
        return kf.fixed_translation_m, kf.fixed_rotation_rad

    def process_scan(self, cloud: PointCloud, odom_pose: Optional[PoseSE3] = None,
                     timestamp: Optional[float] = None) -> PoseSE3:
        """Run one scan through the pipeline and return its published pose."""
        cfg = self.config
        stamp = cloud.timestamp if timestamp is None else timestamp
        index = self.scan_index
        self.scan_index += 1
        tracking = cfg.io.pose_source == PoseSource.CONSTANT_VELOCITY
        if not tracking and odom_pose is None:
            raise ConfigError("pose_file mode needs an odometry pose for every scan")

        with self.timed("keyframe"):
            self.state = keyframe_service.spaciousness_update(self.state, cloud)
        if tracking:
            odom_pose = self._track(cloud)
        with self.timed("keyframe"):
            is_keyframe = self._last_kf_pose is None or keyframe_service.should_select(
                self._last_kf_pose, odom_pose, self._thresholds())

        if not is_keyframe:
            published = odom_pose if tracking else registration_service.fuse_pose(
                odom_pose, self._last_refined, self._last_odom)
            self.trajectory.append((stamp, published))
            return published

        self.keyframes += 1
        static = cloud
        if cfg.coarse.enabled and self._prev_aggregate is not None:
            with self.timed("coarse"):
                t_rel = odom_pose.inverse() @ self._prev_aggregate_pose
                static, removed = coarse_removal_service.coarse_remove(
                    cloud, self._prev_aggregate, t_rel, self.geometry, cfg.coarse.r_th_m)
            self.coarse_removed += removed

        with self.timed("aggregation"):
            self.window.push(Keyframe(cloud=static, pose=odom_pose, timestamp=stamp))
            aggregate = keyframe_service.aggregate_window(self.window)
        with self.timed("downsample"):
            sampled = keyframe_service.voxel_downsample(aggregate, self._downsample_size())
        if cfg.mesher.continuity_enabled:
            with self.timed("continuity"):
                scores = continuity_service.continuity_scores(sampled, self.continuity)
                sampled = continuity_service.continuity_filter(sampled, scores, cfg.mesher.c_th,
                                                               cfg.mesher.continuity_exclude_above)

        refined = odom_pose
        if not tracking:
            prior = registration_service.fuse_pose(odom_pose, self._last_refined, self._last_odom)
            refined = prior
            if cfg.registration.enabled and not self.mesh_map.is_empty:
                with self.timed("registration"):
                    refined, report = registration_service.solve_pose(prior, self.mesh_map, sampled,
                                                                      cfg.registration)
                logger.debug(f"Scan {index}: registration converged={report.converged} "
                             f"cost {report.initial_cost:.4f} -> {report.final_cost:.4f}")

        with self.timed("meshing"):
            mesher_service.update_cells(sampled.transformed(refined, Frame.WORLD), self.mesh_map, cfg.mesher,
                                        scan_index=index)

        if cfg.fine.enabled:
            with self.timed("fine"):
                self._fine_removal(cloud, refined, index)

        self._prev_aggregate = aggregate
        self._prev_aggregate_pose = odom_pose
        self._last_kf_pose = odom_pose
        self._last_refined = refined
        self._last_odom = odom_pose
        self.trajectory.append((stamp, refined))
        return refined

    def _fine_removal(self, cloud: PointCloud, pose: PoseSE3, index: int):
        cfg = self.config
        scan_world = cloud.transformed(pose, Frame.WORLD)
        occupied = occupancy_service.mark_occupied(self.mesh_map, scan_world, self.grid.voxel_size)
        free = occupancy_service.mark_free(self.grid, occupied, cloud, pose, self.geometry, cfg.fine.max_range_m)
        occupancy_service.update_grid(self.grid, occupied, free, cfg.fine, index)
        before = sum(1 for c in self.mesh_map.cells.values() if c.training.shape[0])
        occupancy_service.cull_dynamic(self.mesh_map, self.grid, cfg.fine.p_occ, cfg.fine.p_free)
        self.cleared_cells += before - sum(1 for c in self.mesh_map.cells.values() if c.training.shape[0])

    def mesh(self, pinned_only: bool = False) -> Mesh:
        return mesher_service.extract_global_mesh(self.mesh_map, pinned_only)


# ============= Batch runner =============

def _scan_paths(config: PipelineConfig) -> List[str]:
    io = config.io
    if io.scans:
        return list(io.scans)
    if io.scan_dir:
        return sorted(glob.glob(os.path.join(io.scan_dir, "*" + _SCAN_SUFFIXES[io.scan_format])))
    raise ConfigError("no input scans: set io.scans or io.scan_dir")


def _output_path(config: PipelineConfig, name: str) -> str:
    return os.path.join(config.io.output_dir or settings.OUTPUT_DIR, name)


def write_report(report: EvalReport, path: str):
    ensure_parent_dir(path)
    with atomic_open(path, "w") as f:
        f.write(report.to_text())
    json_path = os.path.splitext(path)[0] + ".json"
    with atomic_open(json_path, "w") as f:
        json.dump(report.model_dump(), f, indent=2, sort_keys=True)


def _record_observation(config: PipelineConfig, path: str, cloud: PointCloud, pose: PoseSE3,
                        observed: Optional[evaluation_service.ObservedRegion],
                        dynamic: Optional[evaluation_service.ObservedRegion]):
    world = pose.apply(cloud.points)
    if observed is not None:
        observed.add(world)
    if dynamic is None:
        return
    stem = os.path.splitext(os.path.basename(path))[0]
    try:
        labels = ingest_service.read_labels(os.path.join(config.io.ground_truth_labels, stem + ".npy"), len(cloud))
    except DataError as e:
        logger.warning(f"No dynamic labels for {path}: {e}")
        return
    dynamic.add(world[labels])


def _evaluate(config: PipelineConfig, mesh: Mesh, trajectory: Trajectory, report: EvalReport,
              observed: Optional[evaluation_service.ObservedRegion] = None,
              dynamic: Optional[evaluation_service.ObservedRegion] = None):
    io = config.io
    ev = config.evaluation
    if io.ground_truth_mesh:
        gt_mesh = ingest_service.read_mesh_ply(io.ground_truth_mesh)
        candidate = ingest_service.sample_mesh_surface(mesh, ev.sample_density, config.seed)
        reference = ingest_service.sample_mesh_surface(gt_mesh, ev.sample_density, config.seed + 1)
        visible = None
        if observed is not None:
            visible = evaluation_service.crop_to_observed(reference, observed.centers(), ev.delta_m)
            logger.info(f"Recall scored on {len(visible)} of {len(reference)} ground-truth samples")
        scores = evaluation_service.eval_mesh(candidate, reference, ev.delta_m, visible)
        report.precision, report.recall, report.f1 = scores.precision, scores.recall, scores.f1
        if dynamic is not None:
            report.ghost_fraction = evaluation_service.ghost_fraction(candidate, dynamic.centers(), reference,
                                                                      ev.delta_m)
    if io.ground_truth_poses:
        gt = ingest_service.read_poses(io.ground_truth_poses, io.pose_format, config.keyframe.scan_rate_hz)
        ape = evaluation_service.eval_ape(trajectory, gt, ev.max_time_diff_s)
        report.ape_mean, report.ape_rmse = ape.mean, ape.rmse


def run_pipeline(config: PipelineConfig, write_outputs: bool = True) -> Tuple[Mesh, Trajectory, EvalReport]:
    """Map every configured scan, then write mesh, trajectory and report."""
    io = config.io
    paths = _scan_paths(config)
    odometry: Optional[Trajectory] = None
    if io.pose_source == PoseSource.POSE_FILE:
        if not io.poses:
            raise ConfigError("pose_source 'pose_file' requires io.poses")
        odometry = ingest_service.read_poses(io.poses, io.pose_format, config.keyframe.scan_rate_hz)
        if len(odometry) < len(paths):
            raise DataError(f"{len(paths)} scans but only {len(odometry)} poses in {io.poses}")

    pipeline = MappingPipeline(config)
    scored = bool(io.ground_truth_mesh)
    observed_voxel = config.evaluation.delta_m / 2.0
    observed = (evaluation_service.ObservedRegion(observed_voxel)
                if scored and config.evaluation.crop_to_observed else None)
    dynamic = evaluation_service.ObservedRegion(observed_voxel) if scored and io.ground_truth_labels else None
    started = time.perf_counter()
    failed = 0
    for k, path in enumerate(paths):
        stamp = odometry[k][0] if odometry else k / config.keyframe.scan_rate_hz
        try:
            with pipeline.timed("read"):
                cloud = ingest_service.read_scan(path, io.scan_format, timestamp=stamp)
            published = pipeline.process_scan(cloud, odometry[k][1] if odometry else None, stamp)
            if observed is not None or dynamic is not None:
                with pipeline.timed("observed"):
                    _record_observation(config, path, cloud, published, observed, dynamic)
        except ConfigError:
            raise
        except (GPMeshError, ValueError, LinAlgError) as e:
            failed += 1
            pipeline.scan_index = k + 1
            logger.warning(f"Scan {k} ({path}) skipped: {e}")
    if paths and failed / len(paths) > config.max_failure_ratio:
        raise ExcessFailuresError(failed, len(paths))

    with pipeline.timed("extraction"):
        mesh = pipeline.mesh()
    pipeline.timings.add("total", (time.perf_counter() - started) * 1000.0)
    report = EvalReport(scans=len(paths), keyframes=pipeline.keyframes, failed_scans=failed,
                        coarse_removed_points=pipeline.coarse_removed, cleared_cells=pipeline.cleared_cells,
                        map_cells=len(pipeline.mesh_map), mesh_vertices=mesh.vertices.shape[0],
                        mesh_faces=mesh.faces.shape[0], timings=pipeline.timings)
    _evaluate(config, mesh, pipeline.trajectory, report, observed, dynamic)

    if write_outputs:
        ingest_service.write_mesh_ply(mesh, _output_path(config, io.mesh_out), io.binary_ply)
        ingest_service.write_trajectory(pipeline.trajectory, _output_path(config, io.trajectory_out),
                                        io.trajectory_format)
        write_report(report, _output_path(config, io.report_out))
    for stage in sorted(report.timings.totals_ms):
        logger.info(f"{stage}: {report.timings.totals_ms[stage]:.1f} ms total, "
                    f"{report.timings.mean_ms(stage):.2f} ms/call")
    logger.info(f"Mapped {len(paths)} scans ({pipeline.keyframes} keyframes, {failed} failed): "
                f"{mesh.faces.shape[0]} faces")
    return mesh, pipeline.trajectory, report
