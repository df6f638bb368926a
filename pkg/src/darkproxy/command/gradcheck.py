import argparse
import logging
import os

import yaml

from .. import rng
from ..config import Config
from ..decouple import load_pools
from ..loss import SortedSamples
from ..loss import query_scale
from ..loss import sample_queries
from ..proxy import init_model
from ..train import grad_check
from .common import finish
from .common import flag_or_config
from .common import output_dir
from .common import start_manifest

description = "Check reverse-mode proxy gradients against central finite differences"

logger = logging.getLogger("darkproxy.command.gradcheck")


def setup_parser(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--size", type=int, default=None, metavar="N", help="Field side length")
    parser.add_argument("--queries", type=int, default=None, metavar="N", help="Loss queries")
    parser.add_argument("--eps", type=float, default=None, help="Finite-difference step")
    parser.add_argument("--tolerance", type=float, default=None, help="Relative tolerance")
    parser.add_argument("--atol", type=float, default=None, help="Absolute tolerance")
    parser.add_argument(
        "--pools",
        default=None,
        metavar="dir",
        help="Draw the target batch from these pools [default: standard-normal target]",
    )
    parser.add_argument("--iso", type=int, default=None, metavar="N", help="ISO to check")
    parser.add_argument(
        "--width", type=int, default=16, metavar="N", help="Hidden width [default: %(default)s]"
    )
    parser.add_argument(
        "--blocks", type=int, default=2, metavar="N", help="Residual blocks [default: %(default)s]"
    )


def execute(config: Config, args: argparse.Namespace) -> int:
    section = config["gradcheck"]
    size = flag_or_config(args.size, section, "size")
    count = flag_or_config(args.queries, section, "queries")
    eps = flag_or_config(args.eps, section, "eps")
    tolerance = flag_or_config(args.tolerance, section, "tolerance")
    atol = flag_or_config(args.atol, section, "atol")
    out = output_dir(args)
    manifest = start_manifest(config, args)

    batch = rng.stream(args.seed, "gradcheck", "target")
    if args.pools:
        manifest.add_input("pools", args.pools)
        pools = load_pools(args.pools)
        iso = args.iso or sorted(pools)[0]
        if iso not in pools:
            raise ValueError(f"{args.pools} has no pool for ISO {iso}")
        pool = pools[iso].samples
        target = SortedSamples.from_samples(pool[batch.integers(0, pool.size, size * size)])
    else:
        iso = args.iso or 1600
        target = SortedSamples.from_samples(batch.standard_normal(size * size))
    queries = sample_queries(
        count, rng.derive_seed(args.seed, "gradcheck", "queries"), scale=query_scale(target)
    )
    model = init_model([iso], {iso: 1.0}, args.seed, width=args.width, blocks=args.blocks)
    result = grad_check(
        model,
        target,
        queries,
        eps=eps,
        iso=iso,
        size=size,
        seed=rng.derive_seed(args.seed, "inputs"),
        rtol=tolerance,
        atol=atol,
    )
    passed = result.passed
    record = {
        "iso": int(iso),
        "size": int(size),
        "queries": int(count),
        "parameters": model.parameter_count,
        "max_rel_error": float(result.max_rel_error),
        "max_abs_error": float(result.max_abs_error),
        "failures": int(result.failures),
        "atol": float(atol),
        "worst": result.worst,
        "checked": int(result.checked),
        "skipped": int(result.skipped),
        "tolerance": float(tolerance),
        "passed": bool(passed),
    }
    with open(os.path.join(out, "gradcheck.yaml"), "w") as fh:
        yaml.safe_dump(record, fh, default_flow_style=False, sort_keys=True)
    finish(manifest, out)
    if not passed:
        logger.error(
            f"{result.failures} gradients outside atol={atol:g}, rtol={tolerance:g} "
            f"(worst {result.worst})"
        )
        return 2
    return 0
