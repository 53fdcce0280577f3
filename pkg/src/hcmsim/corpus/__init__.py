"""Shipped trajectories, move programs and the default pulse calibration."""

from importlib import resources
from pathlib import Path


def path(name: str) -> Path:
    """Filesystem path of a corpus file such as ``"scm_eenw.csv"``."""
    p = Path(str(resources.files(__name__) / name))
    if not p.exists():
        raise FileNotFoundError(f"no corpus file {name!r}")
    return p


def names() -> list[str]:
    return sorted(p.name for p in Path(str(resources.files(__name__))).iterdir()
                  if p.suffix in (".csv", ".json"))
