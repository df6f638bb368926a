"""Run configuration.

Settings come from up to three YAML scopes (``site``, ``global``, ``local``, merged in that
order), then from the command line.  Once a command has applied its options the effective
configuration is exported to ``DARKPROXY_CFG64`` so that worker processes and child commands
see exactly the same values; a ``Config`` created while that variable is set reads it instead
of the scope files.
"""

import argparse
import copy
import logging
import os
import sys
from typing import Any
from typing import Callable

import yaml

from .schemas import config_schema
from .util import collections
from .util import safe_loads
from .util.serialize import deserialize
from .util.serialize import digest
from .util.serialize import serialize

ENV_EXPORT = "DARKPROXY_CFG64"
SCOPES = ("site", "global", "local")

logger = logging.getLogger("darkproxy.config")


class Config:
    def __init__(self, export: bool = False) -> None:
        self.data: dict[str, Any]
        if exported := os.getenv(ENV_EXPORT):
            self.data = self.validate(deserialize(exported))
        else:
            merged: dict[str, Any] = {}
            for scope in SCOPES:
                if fd := read_scope(scope):
                    collections.merge(merged, fd)  # type: ignore
            self.data = self.validate(merged)
        if export:
            self.export()

    def __getitem__(self, key: str) -> Any:
        return self.data[key]

    def get(self, key: str, default: Any = None) -> Any:
        return self.data.get(key, default)

    def validate(self, data: dict[str, Any]) -> dict[str, Any]:
        return config_schema.validate(data)

    def set_main_options(self, args: argparse.Namespace) -> None:
        """Apply the global command-line options on top of the configuration scopes.

        ``--config FILE`` is merged first, then every ``-c path:value`` override, then
        ``--threads``.  Stage-specific flags are applied by the subcommands themselves.  Nothing
        is changed unless the combined result validates.

        """
        layers: list[dict[str, Any]] = []
        if file := getattr(args, "config_file", None):
            if not os.path.exists(file):
                raise FileNotFoundError(f"{file}: configuration file not found")
            layers.append(read_config_file(file) or {})
        for mod in getattr(args, "config_mods", None) or []:
            components = process_config_path(mod)
            if len(components) < 2:
                raise ValueError(f"expected path:value, got {mod!r}")
            layers.append(nest(components[:-1], safe_loads(components[-1])))
        if threads := getattr(args, "threads", None):
            layers.append({"threads": threads})
        self.update(*layers)
        if self.data.get("debug"):
            logging.getLogger("darkproxy").setLevel(logging.DEBUG)

    def set(self, path: str, value: Any) -> None:
        """Set one value, addressed by a colon separated path.

        >>> config = Config()
        >>> config.set("train:steps_per_iso", 200)

        """
        self.update(nest(path.split(":"), value))

    def update(self, *layers: dict[str, Any]) -> None:
        candidate = copy.deepcopy(self.data)
        for layer in layers:
            collections.merge(candidate, layer)  # type: ignore
        self.data = self.validate(candidate)
        self.export()

    def digest(self) -> str:
        return digest(self.data)

    def export(self) -> str:
        s = serialize(self.data)
        os.environ[ENV_EXPORT] = s
        return s


def nest(path: list[str], value: Any) -> dict[str, Any]:
    """``nest(["a", "b"], 1) == {"a": {"b": 1}}``"""
    for component in reversed(path):
        value = {component: value}
    return value


def _site_filename() -> str:
    if var := os.getenv("DARKPROXY_SITE_CONFIG"):
        return var
    return os.path.join(sys.prefix, "etc/darkproxy/config.yaml")


def _global_filename() -> str:
    if var := os.getenv("DARKPROXY_GLOBAL_CONFIG"):
        return var
    if var := os.getenv("XDG_CONFIG_HOME"):
        file = os.path.join(var, "darkproxy/config.yaml")
        if os.path.exists(file):
            return file
    return os.path.expanduser("~/.config/darkproxy.yaml")


def _local_filename() -> str:
    return os.path.abspath("./darkproxy.yaml")


_scope_filenames: dict[str, Callable[[], str]] = {
    "site": _site_filename,
    "global": _global_filename,
    "local": _local_filename,
}


def get_scope_filename(scope: str) -> str:
    try:
        return _scope_filenames[scope]()
    except KeyError:
        raise ValueError(f"Could not determine filename for scope {scope!r}") from None


def read_scope(scope: str) -> dict[str, Any] | None:
    file = get_scope_filename(scope)
    fd = read_config_file(file)
    if fd:
        logger.debug(f"read {scope} configuration from {file}")
    return fd


def read_config_file(file: str) -> dict[str, Any] | None:
    """Load configuration settings from ``file``; a missing or empty file gives ``None``.

    The settings may sit under a top-level ``darkproxy:`` key.
    """
    if not os.path.exists(file):
        return None
    with open(file) as fh:
        fd = yaml.safe_load(fh)
    if fd is None:
        return None
    if not isinstance(fd, dict):
        raise ValueError(f"{file}: expected mapping at top level")
    return fd.get("darkproxy", fd)


def process_config_path(path: str) -> list[str]:
    """Split ``a:b:value`` on colons, keeping a trailing ``[...]`` or ``{...}`` literal whole"""
    if path.startswith(":"):
        raise ValueError(f"Illegal leading ':' in path {path}")
    result: list[str] = []
    while path:
        front, _, path = path.partition(":")
        result.append(front)
        if path.startswith(("{", "[")):
            result.append(path)
            break
    return result


_config: Config | None = None


def get_config(export: bool = False) -> Config:
    global _config
    if _config is None:
        _config = Config(export=export)
    elif export:
        _config.export()
    return _config


def reset() -> None:
    global _config
    _config = None
    os.environ.pop(ENV_EXPORT, None)
