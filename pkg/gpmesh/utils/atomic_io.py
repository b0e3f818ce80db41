# atomic_io.py - Write-to-temp-then-rename helpers for output files
import os
import tempfile
from contextlib import contextmanager


def ensure_parent_dir(path: str):
    parent = os.path.dirname(os.path.abspath(path))
    os.makedirs(parent, exist_ok=True)


@contextmanager
def atomic_open(path: str, mode: str = "wb"):
    """Open a temporary sibling of `path`; it replaces `path` only if the block succeeds."""
    parent = os.path.dirname(os.path.abspath(path))
    fd, tmp_path = tempfile.mkstemp(prefix=".tmp_", dir=parent)
    try:
        with os.fdopen(fd, mode) as f:
            yield f
        os.replace(tmp_path, path)
    except BaseException:
        # Clean up if error
        if os.path.exists(tmp_path):
            os.remove(tmp_path)
        raise
