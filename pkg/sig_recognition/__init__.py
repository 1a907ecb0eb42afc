from pathlib import Path
from importlib.metadata import version, PackageNotFoundError

from .log import setup_logging

setup_logging()

__all__ = [
    "__version__",
]

try:
    __version__ = version(Path(__file__).parent.name.replace("_", "-"))
except PackageNotFoundError:
    __version__ = "0.0.0"
