"""
Overview
--------

`darkproxy` calibrates a raw sensor's signal-independent noise from dark frames, trains a small
per-pixel noise proxy on the decoupled pixel-wise noise, and synthesizes realistic low-light raw
frames from it.  A virtual sensor with known ground truth stands in for real captures.

A typical pipeline::

   darkproxy simulate --seed 7 --out sim
   darkproxy calibrate --darks sim/darks.yaml --flats sim/flats.yaml --out cal
   darkproxy decouple --darks sim/darks.yaml --profile cal/profile --out dec
   darkproxy train --pools dec/pools --profile cal/profile --steps 200 --patch 256 --out trn
   darkproxy synth --model trn/model --profile cal/profile --samples 1000000 --out syn
   darkproxy eval --a syn/pixel --b sim/truth/pixel --out ev

Configuration
-------------

Defaults for every stage can be changed by providing a yaml configuration file, e.g.

.. code-block:: yaml

   darkproxy:
     threads: 1
     simulate:
       darks_per_iso: 5
       flat_levels: [200.0, 800.0, 3200.0]
     train:
       steps_per_iso: 1000
       patch: 1024
       queries_per_step: 1000000
     eval:
       n_quantiles: 1000

Configurations are read from:

1. Local configuration: ./darkproxy.yaml
2. Global configuration [1]: ~/.config/darkproxy.yaml
3. Site configuration [2]: sys.prefix/etc/darkproxy/config.yaml

[1] The global configuration will be read from the DARKPROXY_GLOBAL_CONFIG environment variable,
    if set
[2] The site configuration will be read from the DARKPROXY_SITE_CONFIG environment variable, if set

``--config FILE`` is merged on top, then ``-c path:value`` overrides, then stage flags.

Exit status is 0 on success, 1 on a usage error and 2 on a data or validation error.

"""

import argparse
import logging
import sys
from types import ModuleType
from typing import NoReturn

from schema import SchemaError

from ..config import Config
from . import calibrate
from . import config
from . import decouple
from . import evaluate
from . import gradcheck
from . import simulate
from . import synth
from . import train

logger = logging.getLogger("darkproxy.command")

_commands: dict[str, ModuleType] = {}


class Parser(argparse.ArgumentParser):
    def error(self, message: str) -> NoReturn:
        self.print_help(sys.stderr)
        self.exit(1, f"{self.prog}: error: {message}\n")


def main(argv: list[str] | None = None) -> int:
    parser = make_parser()
    args = parser.parse_args(sys.argv[1:] if argv is None else argv)
    if args.info:
        print(__doc__)
        return 0
    if args.command is None:
        parser.print_help(sys.stderr)
        return 1

    module = _commands[args.command]
    try:
        cfg = Config()
        cfg.set_main_options(args)
        return module.execute(cfg, args) or 0  # ty: ignore[unresolved-attribute]
    except (ValueError, KeyError, OSError, SchemaError) as e:
        logger.error(f"{args.command}: {e}")
        return 2


def make_parser() -> argparse.ArgumentParser:
    from .. import version as _v

    parser = Parser(prog="darkproxy", formatter_class=argparse.RawDescriptionHelpFormatter)
    parser.add_argument("--info", action="store_true", help="Show additional information and exit.")
    parser.add_argument(
        "-c",
        dest="config_mods",
        action="append",
        metavar="path",
        help="colon-separated path to config that should be set, e.g. 'train:patch:256'",
    )
    parser.add_argument(
        "--version",
        action="version",
        version=_v.version,
        help="Show darkproxy version and exit",
    )
    subparsers = parser.add_subparsers(dest="command", parser_class=Parser)
    for module in (simulate, calibrate, decouple, train, synth, evaluate, gradcheck, config):
        add_command(subparsers, module)
    return parser


def add_shared_arguments(parser: argparse.ArgumentParser) -> None:
    parser.add_argument(
        "--seed", type=int, default=0, help="Root seed of every random stream [default: %(default)s]"
    )
    parser.add_argument(
        "--out", default=None, metavar="dir", help="Output directory [default: ./<command>]"
    )
    parser.add_argument(
        "--config", dest="config_file", default=None, metavar="path", help="Read configuration file"
    )
    parser.add_argument(
        "--threads", type=int, default=None, metavar="N", help="Cap on worker threads"
    )


def add_command(subparsers: argparse._SubParsersAction, module: ModuleType) -> None:
    name = getattr(module, "name", None) or module.__name__.split(".")[-1].lower()
    description = getattr(module, "description", None)
    parser = subparsers.add_parser(name, help=description, description=description)
    if getattr(module, "shared_arguments", True):
        add_shared_arguments(parser)
    module.setup_parser(parser)  # ty: ignore[unresolved-attribute]
    _commands[name] = module
