from importlib import resources
from pathlib import Path


def example_path() -> Path:
    """Bundled example: outcome ``y`` and design columns ``x1, x2, x3`` (n = 120)."""
    return Path(str(resources.files(__name__).joinpath("example.csv")))
