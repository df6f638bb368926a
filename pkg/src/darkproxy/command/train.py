import argparse
import logging
import os

from ..config import Config
from ..decouple import load_pools
from ..proxy import init_model
from ..proxy import save_model
from ..synth import load_profile
from ..train import TrainConfig
from ..train import train
from ..train import write_train_log
from .common import finish
from .common import output_dir
from .common import start_manifest

description = "Train the pixel-wise noise proxy on decoupled sample pools"

logger = logging.getLogger("darkproxy.command.train")


def setup_parser(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--pools", required=True, metavar="dir", help="Pixel-wise noise pools")
    parser.add_argument(
        "--profile", required=True, metavar="dir", help="Calibration profile (initial gain table)"
    )
    parser.add_argument("--steps", type=int, default=None, metavar="N", help="Steps per ISO")
    parser.add_argument("--patch", type=int, default=None, metavar="N", help="Patch side length")
    parser.add_argument("--queries", type=int, default=None, metavar="N", help="Queries per step")
    parser.add_argument(
        "--width", type=int, default=16, metavar="N", help="Hidden width [default: %(default)s]"
    )
    parser.add_argument(
        "--blocks", type=int, default=2, metavar="N", help="Residual blocks [default: %(default)s]"
    )


def execute(config: Config, args: argparse.Namespace) -> int:
    out = output_dir(args)
    manifest = start_manifest(config, args)
    manifest.add_input("pools", args.pools)
    manifest.add_input("profile", args.profile)

    section = dict(config["train"])
    overrides = (("steps", "steps_per_iso"), ("patch", "patch"), ("queries", "queries_per_step"))
    for flag, key in overrides:
        if (value := getattr(args, flag)) is not None:
            section[key] = value
    cfg = TrainConfig.from_config(section, seed=args.seed)

    pools = load_pools(args.pools)
    profile = load_profile(args.profile)
    isos = sorted(pools)
    missing = [iso for iso in isos if iso not in profile.gain]
    if missing:
        raise ValueError(f"calibration profile has no system gain for ISO {missing}")
    model = init_model(isos, profile.gain, args.seed, width=args.width, blocks=args.blocks)
    logger.info(f"training {model.parameter_count} parameters on ISOs {isos}")
    trained, log = train(model, pools, cfg)
    trained.lineage = {"config_digest": config.digest(), "seed": int(args.seed)}
    save_model(trained, os.path.join(out, "model"))
    write_train_log(log, os.path.join(out, "train_log.csv"))
    finish(manifest, out)
    return 0
