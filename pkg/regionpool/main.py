from dotenv import load_dotenv

load_dotenv()

import argparse
import logging
import sys

from pydantic import ValidationError

from regionpool.commands import fit_commands, pooling_commands, regional_commands, simulate_commands
from regionpool.domain.errors import EXIT_USAGE, ConfigurationError, RegionPoolError
from regionpool.utils.settings import resolve_config

logger = logging.getLogger("regionpool")

LOG_FORMAT = "%(asctime)s %(levelname)s %(name)s: %(message)s"


class _Parser(argparse.ArgumentParser):
    # usage errors share the ingestion exit code
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


# -------------------- ARGUMENTS --------------------
def _common_parent() -> argparse.ArgumentParser:
    p = _Parser(add_help=False)
    p.add_argument("--config", help="KEY=VALUE configuration file")
    p.add_argument("--out-dir", dest="out_dir", default=".")
    p.add_argument("--loi")
    p.add_argument("--method", choices=("im", "holm", "bh", "all"))
    p.add_argument("--alpha", type=float)
    p.add_argument("--bootstrap", choices=("ms", "biv"))
    p.add_argument("--B", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--statistic", choices=("ed", "ls"))
    p.add_argument("--ms-families", dest="ms_families")
    p.add_argument("--biv-families", dest="biv_families")
    p.add_argument("--pool")
    p.add_argument("--jobs", type=int)
    p.add_argument("--hessian", choices=("numeric", "analytic"))
    p.add_argument("--log-level", dest="log_level")
    return p


def _panel_parent() -> argparse.ArgumentParser:
    p = _Parser(add_help=False)
    p.add_argument("--panel", required=True, help="CSV with year,location_id,maximum,covariate")
    p.add_argument("--coords", help="CSV with location_id,x,y")
    return p


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="regionpool", description="Homogeneity tests and pooling of block-maxima series")
    subparsers = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)
    common, panel = _common_parent(), _panel_parent()

    # -------------------- COMMANDS --------------------
    fit_commands.register(subparsers, [common, panel])
    pooling_commands.register(subparsers, [common, panel])
    regional_commands.register(subparsers, [common, panel])
    simulate_commands.register(subparsers, [common])
    return parser


# -------------------- ENTRY POINT --------------------
def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = resolve_config(vars(args), config_file=args.config)
    except ConfigurationError as e:
        logging.basicConfig(level=logging.INFO, format=LOG_FORMAT)
        logger.error(e.detail)
        return e.exit_code
    logging.basicConfig(level=cfg.log_level, format=LOG_FORMAT)

    logger.info("regionpool %s started", args.command)
    try:
        code = args.handler(args, cfg)
    except RegionPoolError as e:
        logger.error("%s: %s", type(e).__name__, e.detail)
        return e.exit_code
    except ValidationError as e:
        logger.error("invalid arguments: %s", e.errors()[0]["msg"])
        return EXIT_USAGE
    logger.info("regionpool %s finished", args.command)
    return code


if __name__ == "__main__":
    sys.exit(main())
