# commands/synth.py - `synth` subcommand: write a simulated dataset
import argparse

from gpmesh.models.scene import SensorModel
from gpmesh.services import synth_service


def register(subparsers):
    parser = subparsers.add_parser("synth", help="Simulate LiDAR scans of a scripted scene")
    parser.add_argument("--preset", required=True, choices=synth_service.PRESETS)
    parser.add_argument("--out", required=True, help="Output directory")
    parser.add_argument("--scans", type=int, help="Number of scans (default: preset's)")
    parser.add_argument("--seed", type=int, default=0)
    parser.add_argument("--rows", type=int, default=32, help="Sensor beams")
    parser.add_argument("--cols", type=int, default=512, help="Samples per revolution")
    parser.add_argument("--noise", type=float, default=0.0, help="Range noise std-dev (m)")
    parser.set_defaults(handler=synth_command)


def synth_command(args: argparse.Namespace) -> int:
    sensor = SensorModel(rows=args.rows, cols=args.cols, range_noise_std=args.noise)
    script = synth_service.preset(args.preset, args.scans, sensor)
    scene = synth_service.synth_scene(script, args.seed)
    config_path = synth_service.write_scene(scene, args.out)
    print(f"config: {config_path}")
    print(f"scans: {len(scene.scans)}")
    print(f"dynamic_fraction: {scene.dynamic_fraction:.6f}")
    return 0
