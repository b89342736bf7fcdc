"""Argument parsing, logging setup and exit-code mapping for the ``blendnet`` command."""
from __future__ import annotations

import argparse
import logging
import sys

from ..config import ConfigError
from . import commands
from .commands import UsageError

EXIT_OK, EXIT_USAGE, EXIT_RUNTIME, EXIT_SELFTEST = 0, 1, 2, 3

log = logging.getLogger("blendnet")


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


def _u64(text):
    try:
        value = int(text, 0)
    except ValueError:
        raise argparse.ArgumentTypeError(f"not an integer: {text!r}") from None
    if not 0 <= value < 2 ** 64:
        raise argparse.ArgumentTypeError(f"seed must fit in 64 unsigned bits, got {value}")
    return value


def build_parser():
    common = _Parser(add_help=False)
    common.add_argument("--config", help="INI run configuration (defaults apply when omitted)")
    common.add_argument("--seed", type=_u64, help="override the configured seed")
    common.add_argument("--out", help="output directory")
    common.add_argument("--force", action="store_true", help="allow writing into a non-empty output directory")
    common.add_argument("-v", "--verbose", action="store_true")

    parser = _Parser(prog="blendnet", description="Attention-blended feature-pyramid video detector.")
    sub = parser.add_subparsers(dest="command", metavar="COMMAND", parser_class=_Parser)
    sub.required = True

    p = sub.add_parser("gen", parents=[common], help="generate the synthetic train/test dataset")
    p.set_defaults(func=commands.cmd_gen)

    p = sub.add_parser("train", parents=[common], help="train a detector")
    p.add_argument("--data", help="dataset directory holding train/ and test/ (overrides [data])")
    p.add_argument("--checkpoint", help="warm-start weights")
    p.set_defaults(func=commands.cmd_train)

    p = sub.add_parser("eval", parents=[common], help="evaluate a checkpoint on a dataset split")
    p.add_argument("--data", help="dataset directory holding train/ and test/ (overrides [data])")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--split", choices=("train", "test"), default="test")
    p.add_argument("--t-test", type=int, dest="t_test", help="temporal support at test time")
    p.set_defaults(func=commands.cmd_eval)

    p = sub.add_parser("ablate", parents=[common], help="train and evaluate a grid of settings")
    p.add_argument("--data", help="dataset directory holding train/ and test/ (overrides [data])")
    p.add_argument("--axes", default="", help=f"comma-separated subset of {', '.join(commands.AXES)}")
    p.add_argument("--values", action="append", default=[], metavar="AXIS=V1,V2",
                   help="explicit values for one axis (repeatable)")
    p.set_defaults(func=commands.cmd_ablate)

    p = sub.add_parser("visualize", parents=[common], help="write temporal attention maps for one frame")
    p.add_argument("--data", help="dataset directory holding train/ and test/ (overrides [data])")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--split", choices=("train", "test"), default="test")
    p.add_argument("--clip", required=True, help="clip id")
    p.add_argument("--t", type=int, required=True, help="centre frame index")
    p.add_argument("--t-test", type=int, dest="t_test", help="temporal support (default: T_test)")
    p.set_defaults(func=commands.cmd_visualize)

    p = sub.add_parser("selftest", parents=[common], help="run the built-in oracle and gradient checks")
    p.set_defaults(func=commands.cmd_selftest)
    return parser


def main(argv=None):
    try:
        args = build_parser().parse_args(argv)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.INFO, format="%(message)s",
                        stream=sys.stderr, force=True)
    try:
        ok = args.func(args)
    except (UsageError, ConfigError) as exc:
        log.error("error: %s", exc)
        return EXIT_USAGE
    except KeyboardInterrupt:
        log.error("interrupted")
        return EXIT_RUNTIME
    except Exception as exc:
        log.error("error: %s", exc)
        log.debug("traceback", exc_info=True)
        return EXIT_RUNTIME
    if ok is False:
        return EXIT_SELFTEST
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
