import argparse
import logging
import sys
from typing import List, Optional

from gpmesh import __version__
from gpmesh.commands import evaluate, run, synth
from gpmesh.config import settings
from gpmesh.errors import GPMeshError

logger = logging.getLogger("gpmesh")

EXIT_USAGE = 1


class CliParser(argparse.ArgumentParser):
    """ArgumentParser whose usage errors exit with status 1."""

    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def build_parser() -> CliParser:
    parser = CliParser(prog="gpmesh", description="Mesh-based LiDAR mapping with GP surfaces")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("--log-level", default=settings.LOG_LEVEL,
                        choices=["DEBUG", "INFO", "WARNING", "ERROR"])
    subparsers = parser.add_subparsers(dest="command", required=True)
    run.register(subparsers)
    evaluate.register(subparsers)
    synth.register(subparsers)
    return parser


def main(argv: Optional[List[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=args.log_level, format="%(asctime)s %(levelname)s %(name)s: %(message)s")
    try:
        return args.handler(args)
    except GPMeshError as e:
        logger.error(e.detail)
        return e.exit_code
    except OSError as e:
        logger.error(f"I/O error: {e}")
        return 2
