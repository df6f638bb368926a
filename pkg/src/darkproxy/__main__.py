import logging
import sys

from . import command


def main(argv: list[str] | None = None) -> int:
    logger = logging.getLogger("darkproxy")
    if not logger.handlers:
        sh = logging.StreamHandler(sys.stderr)
        fmt = logging.Formatter("%(levelname)s: %(module)s::%(funcName)s: %(message)s")
        sh.setFormatter(fmt)
        logger.addHandler(sh)
    argv = sys.argv[1:] if argv is None else argv
    return command.main(argv)


if __name__ == "__main__":
    sys.exit(main())
