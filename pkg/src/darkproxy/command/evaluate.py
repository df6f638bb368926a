import argparse
import logging
import os

from ..config import Config
from ..decouple import load_pools
from ..metrics import baseline_reports
from ..metrics import compare
from ..metrics import emit_report
from .common import finish
from .common import flag_or_config
from .common import output_dir
from .common import start_manifest

name = "eval"
description = "Compare two sets of sample pools ISO by ISO (KLD, Q-Q R^2)"

logger = logging.getLogger("darkproxy.command.eval")


def setup_parser(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--a", required=True, metavar="dir", help="Pools under test")
    parser.add_argument("--b", required=True, metavar="dir", help="Reference pools")
    parser.add_argument(
        "--bin-width", type=float, default=None, metavar="w", help="Histogram bin width for KLD"
    )
    parser.add_argument(
        "--quantiles", type=int, default=None, metavar="N", help="Number of Q-Q quantiles"
    )
    parser.add_argument(
        "--baselines",
        action="store_true",
        default=False,
        help="Also score Gaussian and Tukey-lambda fits to the reference pools",
    )


def execute(config: Config, args: argparse.Namespace) -> int:
    section = config["eval"]
    bin_width = flag_or_config(args.bin_width, section, "bin_width")
    n_quantiles = flag_or_config(args.quantiles, section, "n_quantiles")
    out = output_dir(args)
    manifest = start_manifest(config, args)
    manifest.add_input("a", args.a)
    manifest.add_input("b", args.b)

    pools_a = load_pools(args.a)
    pools_b = load_pools(args.b)
    common = sorted(set(pools_a) & set(pools_b))
    if not common:
        raise ValueError(f"{args.a} and {args.b} have no ISO in common")
    for iso in common:
        report = compare(
            pools_a[iso].samples, pools_b[iso].samples, bin_width=bin_width, n_quantiles=n_quantiles
        )
        directory = os.path.join(out, f"iso_{iso}")
        emit_report(report, directory)
        logger.info(f"ISO {iso}: KLD={report.kld:.5f} Q-Q R^2={report.qq_r2}")
        if args.baselines:
            reports = baseline_reports(
                pools_b[iso].samples,
                seed=args.seed,
                n_quantiles=n_quantiles,
                bin_width=bin_width,
            )
            for family, r in reports.items():
                emit_report(r, os.path.join(directory, f"baseline_{family}"))
                logger.info(f"ISO {iso}: {family} baseline KLD={r.kld:.5f} Q-Q R^2={r.qq_r2}")
    finish(manifest, out)
    return 0
