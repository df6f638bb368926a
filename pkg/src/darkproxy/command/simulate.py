import argparse
import logging
import os
from typing import Any

import numpy as np
import yaml

from .. import rng
from ..config import Config
from ..decouple import PixelNoiseSamples
from ..decouple import save_pools
from ..frames import FrameSet
from ..frames import write_frame_set
from ..frames import write_frame_set_manifest
from ..sensor import build_sensor
from ..sensor import capture_dark_frame
from ..sensor import capture_flat_frame
from ..sensor import sample_true_pixel
from ..sensor import save_sensor
from .common import finish
from .common import flag_or_config
from .common import output_dir
from .common import start_manifest

description = "Build a virtual sensor and capture dark frames, flat frames and truth pools"

logger = logging.getLogger("darkproxy.command.simulate")


def setup_parser(parser: argparse.ArgumentParser) -> None:
    parser.add_argument(
        "--spec", default=None, metavar="path", help="Sensor specification (yaml) [default: built-in]"
    )
    parser.add_argument("--darks", type=int, default=None, metavar="N", help="Dark frames per ISO")
    parser.add_argument(
        "--truth-samples", type=int, default=None, metavar="N", help="Samples per truth pool"
    )


def read_spec(path: str | None, config: Config) -> dict[str, Any] | None:
    if path is None:
        return config["simulate"].get("sensor")
    with open(path) as fh:
        spec = yaml.safe_load(fh)
    if not isinstance(spec, dict):
        raise ValueError(f"{path}: expected mapping at top level")
    return spec.get("sensor", spec)


def execute(config: Config, args: argparse.Namespace) -> int:
    section = config["simulate"]
    out = output_dir(args)
    seed = args.seed
    manifest = start_manifest(config, args)
    if args.spec:
        manifest.add_input("spec", args.spec)

    sensor = build_sensor(read_spec(args.spec, config), seed)
    save_sensor(sensor, os.path.join(out, "sensor"))
    darks_per_iso = flag_or_config(args.darks, section, "darks_per_iso")
    truth_samples = flag_or_config(args.truth_samples, section, "truth_samples")

    dark_entries = []
    darks_dir = os.path.join(out, "darks")
    os.makedirs(darks_dir, exist_ok=True)
    for iso in sensor.isos:
        frames = [
            capture_dark_frame(sensor, iso, rng.derive_seed(seed, "dark", iso, i))
            for i in range(darks_per_iso)
        ]
        paths = write_frame_set(frames, darks_dir, f"iso{iso}")
        dark_entries.append((FrameSet(iso=iso, frames=tuple(frames)), 0.0, paths))
    write_frame_set_manifest(dark_entries, os.path.join(out, "darks.yaml"), kind="dark")

    flat_entries = []
    flats_dir = os.path.join(out, "flats")
    os.makedirs(flats_dir, exist_ok=True)
    for iso in sensor.isos:
        for j, irradiance in enumerate(section["flat_levels"]):
            frames = [
                capture_flat_frame(sensor, iso, irradiance, rng.derive_seed(seed, "flat", iso, j, i))
                for i in range(section["flats_per_level"])
            ]
            paths = write_frame_set(frames, flats_dir, f"iso{iso}_level{j}")
            flat_entries.append((FrameSet(iso=iso, frames=tuple(frames)), irradiance, paths))
    write_frame_set_manifest(flat_entries, os.path.join(out, "flats.yaml"), kind="flat")

    truth_seed = rng.derive_seed(seed, "truth")
    pixel: dict[int, PixelNoiseSamples] = {}
    for iso in sensor.isos:
        samples = sample_true_pixel(sensor, iso, truth_samples, truth_seed)
        pixel[iso] = PixelNoiseSamples(iso=iso, samples=samples)
    save_pools(pixel, os.path.join(out, "truth", "pixel"))

    # fresh captures, never seen by calibration, as the reference for synthesized dark frames
    per_frame = sensor.height * sensor.width
    count = max(1, -(-truth_samples // per_frame))
    dark: dict[int, PixelNoiseSamples] = {}
    for iso in sensor.isos:
        values = [
            capture_dark_frame(sensor, iso, rng.derive_seed(seed, "truth-dark", iso, i)).as_float()
            - sensor.black_level
            for i in range(count)
        ]
        dark[iso] = PixelNoiseSamples(iso=iso, samples=np.stack(values))
    save_pools(dark, os.path.join(out, "truth", "dark"))

    manifest.seeds["truth"] = truth_seed
    finish(manifest, out)
    return 0
