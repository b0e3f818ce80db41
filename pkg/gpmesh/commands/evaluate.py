# commands/evaluate.py - `eval-mesh` and `eval-ape` subcommands
import argparse

from gpmesh.models.geometry import PoseFormat
from gpmesh.services import evaluation_service, ingest_service


def register(subparsers):
    mesh = subparsers.add_parser("eval-mesh", help="Precision / recall / F1 of a mesh against ground truth")
    mesh.add_argument("--mesh", required=True, help="Candidate mesh (PLY)")
    mesh.add_argument("--gt", required=True, help="Ground-truth mesh (PLY)")
    mesh.add_argument("--delta", type=float, default=0.1, help="Match distance in meters")
    mesh.add_argument("--density", type=float, default=1000.0, help="Surface samples per square meter")
    mesh.add_argument("--seed", type=int, default=0)
    mesh.set_defaults(handler=eval_mesh_command)

    ape = subparsers.add_parser("eval-ape", help="Absolute pose error of a trajectory")
    ape.add_argument("--estimate", required=True)
    ape.add_argument("--ground-truth", required=True)
    ape.add_argument("--format", choices=[f.value for f in PoseFormat], default=PoseFormat.KITTI_3X4.value)
    ape.add_argument("--scan-rate", type=float, default=10.0, help="Timestamps for kitti_3x4 files")
    ape.add_argument("--max-dt", type=float, default=0.05, help="Timestamp association window (s)")
    ape.set_defaults(handler=eval_ape_command)


def eval_mesh_command(args: argparse.Namespace) -> int:
    candidate = ingest_service.read_mesh_ply(args.mesh)
    reference = ingest_service.read_mesh_ply(args.gt)
    scores = evaluation_service.eval_mesh(
        ingest_service.sample_mesh_surface(candidate, args.density, args.seed),
        ingest_service.sample_mesh_surface(reference, args.density, args.seed + 1),
        args.delta,
    )
    print(f"precision: {scores.precision:.4f}")
    print(f"recall: {scores.recall:.4f}")
    print(f"f1: {scores.f1:.4f}")
    print(f"accuracy_mean: {scores.accuracy_mean:.6f}")
    print(f"completion_mean: {scores.completion_mean:.6f}")
    return 0


def eval_ape_command(args: argparse.Namespace) -> int:
    estimate = ingest_service.read_poses(args.estimate, args.format, args.scan_rate)
    reference = ingest_service.read_poses(args.ground_truth, args.format, args.scan_rate)
    result = evaluation_service.eval_ape(estimate, reference, args.max_dt)
    print(f"matched: {result.matched}")
    print(f"ape_mean: {result.mean:.6f}")
    print(f"ape_rmse: {result.rmse:.6f}")
    return 0
