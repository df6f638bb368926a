import logging
import os

from .config import Config
from .config import get_config
from .distributions import PixelDistribution
from .distributions import get_distribution
from .frames import FrameSet
from .frames import RawFrame
from .hookspec import hookimpl
from .manifest import RunManifest

__all__ = [
    "Config",
    "get_config",
    "FrameSet",
    "hookimpl",
    "PixelDistribution",
    "get_distribution",
    "RawFrame",
    "RunManifest",
]

loglevelmap: dict[str, int] = {
    "CRITICAL": logging.CRITICAL,
    "FATAL": logging.FATAL,
    "ERROR": logging.ERROR,
    "WARN": logging.WARNING,
    "WARNING": logging.WARNING,
    "INFO": logging.INFO,
    "DEBUG": logging.DEBUG,
    "NOTSET": logging.NOTSET,
}


def log_level_from_env() -> int:
    """Level of the ``darkproxy`` logger requested by the environment.

    ``DARKPROXY_DEBUG`` wins, then ``DARKPROXY_LOG_LEVEL``, then ``PNNP_LOG``.  Levels are given
    by name or number; a boolean such as ``PNNP_LOG=on`` means debug (on) or warning (off).
    Unrecognized values are ignored.

    """
    if os.getenv("DARKPROXY_DEBUG", "no").lower() in ("yes", "true", "1", "on"):
        return logging.DEBUG
    for var in ("DARKPROXY_LOG_LEVEL", "PNNP_LOG"):
        value = os.getenv(var, "").strip()
        if value.isdigit():
            return int(value)
        if value.upper() in loglevelmap:
            return loglevelmap[value.upper()]
        if value.lower() in ("yes", "true", "on"):
            return logging.DEBUG
        if value.lower() in ("no", "false", "off"):
            return logging.WARNING
    return logging.NOTSET


logging.getLogger("darkproxy").setLevel(log_level_from_env())
