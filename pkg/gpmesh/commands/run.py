# commands/run.py - `run` subcommand: map a scan sequence
import argparse
import logging

from gpmesh.config import load_pipeline_config
from gpmesh.services import pipeline_service

logger = logging.getLogger(__name__)


def register(subparsers):
    parser = subparsers.add_parser("run", help="Build a mesh map and trajectory from scans")
    parser.add_argument("--config", help="JSON pipeline config (default: $GPMESH_CONFIG)")
    parser.add_argument("--set", dest="overrides", action="append", default=[], metavar="KEY=VALUE",
                        help="Override a config key, e.g. --set mesher.voxel_size_m=0.5")
    parser.add_argument("--output-dir", help="Shortcut for --set io.output_dir=DIR")
    parser.set_defaults(handler=run_command)


def run_command(args: argparse.Namespace) -> int:
    """Load the config, run the pipeline and print the report."""
    overrides = list(args.overrides)
    if args.output_dir:
        overrides.append(f"io.output_dir={args.output_dir}")
    config = load_pipeline_config(args.config, overrides)
    _, trajectory, report = pipeline_service.run_pipeline(config)
    logger.info(f"Published {len(trajectory)} poses")
    print(report.to_text(), end="")
    return 0
