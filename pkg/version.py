"""Version tracking for entropic-time schedules"""
import subprocess
from typing import Dict

# Manual version - bump this for releases
__version__ = "0.3.0"


def get_git_version() -> str:
    """Short commit hash with a -dirty suffix for uncommitted changes"""
    try:
        commit = subprocess.check_output(
            ['git', 'rev-parse', '--short', 'HEAD'],
            stderr=subprocess.DEVNULL
        ).decode().strip()
        dirty = subprocess.call(
            ['git', 'diff', '--quiet'],
            stderr=subprocess.DEVNULL
        ) != 0
        return f"{commit}{'-dirty' if dirty else ''}"
    except Exception:
        return "unknown"


def version_info() -> Dict[str, str]:
    """Stamp written into every output sidecar"""
    return {"version": __version__, "build": get_git_version()}


VERSION = __version__
VERSION_FULL = f"{__version__}+{get_git_version()}"
