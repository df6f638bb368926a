import argparse
import logging
import os
from typing import Any

from .. import version as _v
from ..config import Config
from ..frames import FrameSet
from ..frames import read_frame_set_manifest
from ..manifest import RunManifest
from ..manifest import write_manifest

logger = logging.getLogger("darkproxy.command")


def output_dir(args: argparse.Namespace) -> str:
    out = args.out or os.path.abspath(args.command)
    os.makedirs(out, exist_ok=True)
    return out


def start_manifest(config: Config, args: argparse.Namespace, **seeds: int) -> RunManifest:
    return RunManifest(
        command=args.command,
        config_digest=config.digest(),
        seeds={"seed": int(args.seed), **seeds},
        version=_v.get_version(),
    )


def finish(manifest: RunManifest, out: str) -> str:
    path = write_manifest(manifest, out)
    logger.info(f"{manifest.command}: wrote {len(manifest.outputs)} files to {out}")
    return path


def read_dark_sets(path: str) -> list[FrameSet]:
    kind, entries = read_frame_set_manifest(path)
    if kind != "dark":
        raise ValueError(f"{path}: expected a dark frame manifest, got {kind!r}")
    return [e.frame_set for e in entries]


def read_flat_sets(path: str) -> dict[int, list[tuple[float, FrameSet]]]:
    kind, entries = read_frame_set_manifest(path)
    if kind != "flat":
        raise ValueError(f"{path}: expected a flat frame manifest, got {kind!r}")
    levels: dict[int, list[tuple[float, FrameSet]]] = {}
    for e in entries:
        levels.setdefault(e.iso, []).append((e.irradiance, e.frame_set))
    return levels


def flag_or_config(value: Any, section: dict[str, Any], key: str) -> Any:
    """Explicit flags win over the configuration"""
    return section.get(key) if value is None else value
