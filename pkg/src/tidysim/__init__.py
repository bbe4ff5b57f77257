"""Personalized tidy-up: learn where each user keeps things, then put them there."""

from importlib import resources
from pathlib import Path

__version__ = "0.1.0"


def data_path(*parts: str) -> Path:
    """Path of a bundled data file, e.g. ``data_path("scenarios", "drawer.yaml")``."""
    return Path(str(resources.files(__name__).joinpath("data", *parts)))
