import argparse
import logging
import os

import yaml

from .. import decouple as pnd
from ..config import Config
from ..synth import load_profile
from .common import finish
from .common import flag_or_config
from .common import output_dir
from .common import read_dark_sets
from .common import start_manifest

description = "Strip frame-wise and band-wise noise and pool the pixel-wise remainder"

logger = logging.getLogger("darkproxy.command.decouple")


def setup_parser(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--darks", required=True, metavar="manifest", help="Dark frame manifest")
    parser.add_argument("--profile", required=True, metavar="dir", help="Calibration profile")
    parser.add_argument(
        "--min-occupancy",
        type=int,
        default=None,
        metavar="N",
        help="Samples per quantization cell below which reconstruction dithers uniformly",
    )
    parser.add_argument(
        "--no-dither",
        dest="dither",
        action="store_false",
        default=True,
        help="Keep the quantized pixel-wise samples as they are",
    )


def execute(config: Config, args: argparse.Namespace) -> int:
    out = output_dir(args)
    manifest = start_manifest(config, args)
    manifest.add_input("darks", args.darks)
    manifest.add_input("profile", args.profile)

    profile = load_profile(args.profile)
    dark_sets = read_dark_sets(args.darks)
    pools, trace = pnd.decouple(
        dark_sets,
        profile.frame,
        profile.band,
        args.seed,
        quant_step=1.0,
        min_occupancy=flag_or_config(args.min_occupancy, config["decouple"], "min_occupancy"),
        dither=args.dither,
        threads=config["threads"],
        trace=True,
    )
    for iso in sorted(trace):
        stages = ", ".join(f"{k}={trace[iso][k]:.4f}" for k in pnd.STAGES)
        logger.info(f"ISO {iso}: std {stages}")
    pnd.save_pools(pools, os.path.join(out, "pools"))
    with open(os.path.join(out, "trace.yaml"), "w") as fh:
        record = {int(iso): {k: float(v) for k, v in t.items()} for iso, t in trace.items()}
        yaml.safe_dump(record, fh, default_flow_style=False, sort_keys=True)
    finish(manifest, out)
    return 0
