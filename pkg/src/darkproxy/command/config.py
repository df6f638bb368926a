import argparse
import sys

import yaml

from ..config import Config

description = "Show the effective configuration"
shared_arguments = False


def setup_parser(parser: argparse.ArgumentParser) -> None:
    parser.add_argument(
        "--config", dest="config_file", default=None, metavar="path", help="Read configuration file"
    )
    parent = parser.add_subparsers(dest="subcommand", required=True)
    parent.add_parser("show", help="Print the merged and validated configuration as yaml")


def execute(config: Config, args: argparse.Namespace) -> int:
    if args.subcommand == "show":
        yaml.safe_dump(config.data, sys.stdout, default_flow_style=False)
    return 0
