"""
Module to use the lab as a cli script
"""

import sys
import logging
import argparse
import platform
import tempfile

from typing import List, NoReturn, Optional

from . import Ok, Err, version_info, __version__
from ._experiments import experiments, configure, run, run_all
from .testing import run_tests

LOG_FORMAT = "%(levelname)s %(name)s: %(message)s"


def _parser(prog: str) -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog, description="Quantum Brownian motion master equation lab"
        )
    parser.add_argument(
        "--version", "-v", action="store_true", help="Prints the version info and exits"
        )
    parser.add_argument(
        "--log-level",
        default="WARNING",
        choices=["DEBUG", "INFO", "WARNING", "ERROR"],
        help="Logging threshold for messages on stderr",
        )

    sub = parser.add_subparsers(dest="command", metavar="command")

    sub.add_parser("list", help="Lists the named experiments")

    validate = sub.add_parser("validate", help="Runs the self test suite")
    validate.add_argument("--match", "-m", help="Only runs tests whose name contains this")
    validate.add_argument(
        "--full", action="store_true", help="Also runs every experiment with its defaults"
        )

    for exp in experiments():
        p = sub.add_parser(exp.name, help=exp.summary)
        p.add_argument("--config", "-c", help="INI file of config values")
        p.add_argument(
            "--set",
            "-s",
            action="append",
            default=[],
            metavar="SECTION.KEY=VALUE",
            help="Overrides one config value, repeatable",
            )
        p.add_argument("--out", "-o", default=".", help="Output directory")

    return parser


def _validate(match: Optional[str], full: bool) -> int:
    failures = run_tests(match)

    if full:
        with tempfile.TemporaryDirectory(prefix="qbm-validate-") as tmp:
            failures += run_all(tmp, __version__)

    return 1 if failures else 0


def _run(name: str, config: Optional[str], overrides: List[str], out: str) -> int:
    if Err.is_instance(cfg := configure(name, config, overrides, out)):
        print(f"Err: {Err.unwrap(cfg)}", file=sys.stderr)
        return 1

    if Err.is_instance(res := run(Ok.unwrap(cfg), __version__)):
        print(f"Err: {Err.unwrap(res)}", file=sys.stderr)
        return 1

    manifest = Ok.unwrap(res)
    for i in manifest.checks:
        op = "<=" if i.bound == "max" else ">="
        status = "ok  " if i.passed else "FAIL"
        print(f"{status} {i.name}: {i.value:.6g} {op} {i.tolerance:.3g}  {i.detail}".rstrip())

    print(f"{name}: {len(manifest.checks) - len(manifest.failed)}/{len(manifest.checks)} "
          f"checks passed, outputs in {Ok.unwrap(cfg).output_dir}")

    return 0 if manifest.passed else 1


def main(args: List[str]) -> int:
    """
    Runs main cli user interface
    """

    parser = _parser(args[0])
    parsed = parser.parse_args(args[1:])

    if parsed.version:
        pyver = f"{platform.python_implementation()} {platform.python_version()}"
        print(f"qbm_lab {version_info.as_pep440_str()} @ {__file__}\n{pyver} @ {sys.executable}")
        return 0

    logging.basicConfig(level=parsed.log_level, format=LOG_FORMAT, stream=sys.stderr)

    if parsed.command is None:
        parser.print_usage(sys.stderr)
        return 2

    if parsed.command == "list":
        for exp in experiments():
            print(f"{exp.name:<24}{exp.summary}")
        return 0

    if parsed.command == "validate":
        return _validate(parsed.match, parsed.full)

    return _run(parsed.command, parsed.config, parsed.set, parsed.out)


def cli() -> NoReturn:
    """
    Console script entry point
    """
    sys.exit(main(sys.argv))


if __name__ == "__main__":
    cli()
