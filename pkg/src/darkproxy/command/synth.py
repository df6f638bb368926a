import argparse
import logging
import os

import numpy as np
import yaml

from .. import proxy
from .. import rng
from ..config import Config
from ..decouple import PixelNoiseSamples
from ..decouple import save_pools
from ..frames import read_frame
from ..frames import write_frame
from ..synth import COMPONENTS
from ..synth import load_profile
from ..synth import synth_dark_frame
from ..synth import synth_pair
from .common import finish
from .common import flag_or_config
from .common import output_dir
from .common import start_manifest

description = "Synthesize noisy raw frames and noise pools from a trained proxy"

logger = logging.getLogger("darkproxy.command.synth")


def setup_parser(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--model", required=True, metavar="dir", help="Trained proxy checkpoint")
    parser.add_argument("--profile", required=True, metavar="dir", help="Calibration profile")
    parser.add_argument("--clean", default=None, metavar="frame", help="Clean (bright) raw frame")
    parser.add_argument("--iso", type=int, default=None, metavar="N", help="ISO of the noisy frame")
    parser.add_argument(
        "--ratio", type=float, default=None, metavar="r", help="Exposure ratio clean/noisy"
    )
    parser.add_argument(
        "--samples",
        type=int,
        default=None,
        metavar="N",
        help="Write proxy pixel-noise and synthesized dark-frame pools of N samples per ISO",
    )
    parser.add_argument(
        "--components",
        default=None,
        metavar="list",
        help=f"Comma-separated noise components [default: {','.join(COMPONENTS)}]",
    )
    parser.add_argument(
        "--no-perturb",
        dest="perturb",
        action="store_false",
        default=None,
        help="Use the calibrated parameters without perturbing them",
    )


def execute(config: Config, args: argparse.Namespace) -> int:
    section = config["synth"]
    samples = flag_or_config(args.samples, section, "samples")
    perturb = flag_or_config(args.perturb, section, "perturb")
    components = None if args.components is None else args.components.split(",")
    pair_args = (args.clean, args.iso, args.ratio)
    if any(a is not None for a in pair_args) and not all(a is not None for a in pair_args):
        raise ValueError("--clean, --iso and --ratio must be given together")
    if args.clean is None and not samples:
        raise ValueError("nothing to synthesize: give --clean/--iso/--ratio and/or --samples")

    out = output_dir(args)
    manifest = start_manifest(config, args)
    manifest.add_input("model", args.model)
    manifest.add_input("profile", args.profile)
    model = proxy.load_model(args.model)
    profile = load_profile(args.profile)

    if args.clean is not None:
        manifest.add_input("clean", args.clean)
        clean = read_frame(args.clean)
        noisy, clean = synth_pair(
            clean,
            args.ratio,
            args.iso,
            model,
            profile,
            rng.derive_seed(args.seed, "pair"),
            perturb=perturb,
            components=components,
        )
        pairs = os.path.join(out, "pairs")
        os.makedirs(pairs, exist_ok=True)
        write_frame(noisy, os.path.join(pairs, "noisy.pnnf"))
        write_frame(clean, os.path.join(pairs, "clean.pnnf"))
        record = {
            "pairs": [
                {
                    "noisy": "pairs/noisy.pnnf",
                    "clean": "pairs/clean.pnnf",
                    "iso": int(args.iso),
                    "ratio": float(args.ratio),
                }
            ]
        }
        with open(os.path.join(out, "pairs.yaml"), "w") as fh:
            yaml.safe_dump(record, fh, default_flow_style=False, sort_keys=True)

    if samples:
        pixel: dict[int, PixelNoiseSamples] = {}
        dark: dict[int, PixelNoiseSamples] = {}
        h, w = profile.shape
        count = max(1, -(-samples // (h * w)))
        for iso in model.isos:
            values = proxy.sample(model, samples, iso, rng.derive_seed(args.seed, "pixel"))
            pixel[iso] = PixelNoiseSamples(iso=iso, samples=values)
            frames = [
                synth_dark_frame(
                    model,
                    profile,
                    iso,
                    rng.derive_seed(args.seed, "dark", iso, i),
                    perturb=perturb,
                    components=components,
                ).as_float()
                - profile.black_level
                for i in range(count)
            ]
            dark[iso] = PixelNoiseSamples(iso=iso, samples=np.stack(frames))
        save_pools(pixel, os.path.join(out, "pixel"))
        save_pools(dark, os.path.join(out, "dark"))

    finish(manifest, out)
    return 0
