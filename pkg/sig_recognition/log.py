"""Logging functions"""
import logging
from typing import Union

LOG_FORMAT = "%(asctime)s - %(levelname)s - %(name)s: %(message)s"


def setup_logging(level: Union[int, str] = logging.INFO):
    """Logger setup.

    Args:
        level: Root log level, either a `logging` constant or its name (e.g. "DEBUG").
    """
    if isinstance(level, str):
        level = logging.getLevelName(level.upper())
        if not isinstance(level, int):
            level = logging.INFO

    logger = logging.getLogger()
    logging.basicConfig(
        format=LOG_FORMAT,
        level=level,
        force=True,
    )
    return logger
