"""Command line front end: ``invforge generate | verify | explain``.

Exit codes: 0 certified, 1 no invariant found (or certificate rejected),
2 numeric invariant found but exact recovery failed, 3 input error.
"""

from __future__ import annotations

import argparse
import logging
import os
import sys
from fractions import Fraction
from typing import Optional, Sequence

from .certify import CertificateError, explain, parse_certificate, serialize_certificate, verify
from .model import ModelError, parse_system
from .pipeline import CERTIFIED, NOT_FOUND, RunConfig, generate
from .poly import PolySyntaxError, PolynomialError, format_poly
from .sosgen import INDUCTIVE, PER_LOCATION

EXIT_CERTIFIED = 0
EXIT_NOT_FOUND = 1
EXIT_RECOVERY_FAILED = 2
EXIT_INPUT_ERROR = 3

SEED_ENV = "INVFORGE_SEED"

log = logging.getLogger("invforge")


class InputError(Exception):
    pass


def _sweep(text: str) -> tuple:
    try:
        a, b = text.split("..")
        lo, hi = int(a), int(b)
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected A..B, got {text!r}") from None
    if lo < 1 or hi < lo:
        raise argparse.ArgumentTypeError(f"bad degree range {text!r}")
    return lo, hi


def _positive_int(text: str) -> int:
    v = int(text)
    if v < 1:
        raise argparse.ArgumentTypeError("must be a positive integer")
    return v


def _positive_float(text: str) -> float:
    v = float(text)
    if not v > 0:
        raise argparse.ArgumentTypeError("must be positive")
    return v


def _positive_fraction(text: str) -> Fraction:
    try:
        v = Fraction(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"not a rational number: {text!r}") from None
    if v <= 0:
        raise argparse.ArgumentTypeError("must be positive")
    return v


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="invforge", description=__doc__.splitlines()[0])
    ap.add_argument("--log-level", default="WARNING", choices=["DEBUG", "INFO", "WARNING", "ERROR"])
    sub = ap.add_subparsers(dest="command", required=True)

    g = sub.add_parser("generate", help="search for an invariant and write an exact certificate")
    g.add_argument("system", help="hybrid system file")
    g.add_argument("-d", "--degree", type=_positive_int, default=2, help="degree bound of the invariant")
    g.add_argument("-D", "--denom-bound", type=_positive_int, default=1000, help="bound on the common denominator")
    g.add_argument("-e", "--sos-degree", type=_positive_int, default=None, help="SOS half-degree e (default from the system)")
    g.add_argument("--tolerance", type=_positive_float, default=1e-2, help="rounding tolerance tau")
    g.add_argument("--mode", choices=[PER_LOCATION, INDUCTIVE], default=PER_LOCATION)
    g.add_argument("--sweep", type=_sweep, default=None, metavar="A..B", help="try degrees A..B in turn")
    g.add_argument("--eps-min", type=_positive_fraction, default=Fraction(1, 1000), help="lower bound on margins")
    g.add_argument("--out", default=None, metavar="FILE", help="certificate output path")
    g.add_argument("--log-level", default=argparse.SUPPRESS, choices=["DEBUG", "INFO", "WARNING", "ERROR"])

    v = sub.add_parser("verify", help="check a certificate exactly against a system")
    v.add_argument("system")
    v.add_argument("certificate")
    v.add_argument("--log-level", default=argparse.SUPPRESS, choices=["DEBUG", "INFO", "WARNING", "ERROR"])

    x = sub.add_parser("explain", help="print a readable summary of a certificate")
    x.add_argument("certificate")
    x.add_argument("--log-level", default=argparse.SUPPRESS, choices=["DEBUG", "INFO", "WARNING", "ERROR"])
    return ap


def _read(path: str) -> str:
    try:
        with open(path, encoding="utf-8") as fh:
            return fh.read()
    except OSError as err:
        raise InputError(f"cannot read {path}: {err.strerror}") from None


def _load_system(path: str):
    try:
        return parse_system(_read(path))
    except (ModelError, PolySyntaxError, PolynomialError) as err:
        raise InputError(f"{path}: {err}") from None


def _load_certificate(path: str):
    try:
        return parse_certificate(_read(path))
    except CertificateError as err:
        raise InputError(f"{path}: {err}") from None


def cmd_generate(args, out=sys.stdout) -> int:
    system = _load_system(args.system)
    config = RunConfig(
        degree=args.degree,
        denom_bound=args.denom_bound,
        half_degree=args.sos_degree,
        tolerance=args.tolerance,
        mode=args.mode,
        sweep=args.sweep,
        eps_min=args.eps_min,
    )
    result = generate(system, config)
    for m in result.messages:
        log.info("%s", m)
    if result.status == NOT_FOUND:
        top = args.sweep[1] if args.sweep else args.degree
        print(f"no polynomial invariant of degree <= {top} found", file=out)
        return EXIT_NOT_FOUND
    if result.status != CERTIFIED:
        print(f"numeric invariant of degree {result.degree} found, but exact recovery failed", file=out)
        if result.messages:
            print(result.messages[-1], file=out)
        return EXIT_RECOVERY_FAILED

    text = serialize_certificate(result.certificate)
    # the exact checker has the last word, on the very text we are about to write
    report = verify(system, parse_certificate(text))
    if not report.certified:
        print("internal error: serialized certificate does not verify", file=out)
        print(report.summary(), file=out)
        return EXIT_RECOVERY_FAILED
    path = args.out or os.path.splitext(args.system)[0] + ".cert"
    try:
        with open(path, "w", encoding="utf-8") as fh:
            fh.write(text)
    except OSError as err:
        raise InputError(f"cannot write {path}: {err.strerror}") from None
    print(f"certified invariant of degree {result.degree} (2e={2 * result.half_degree})", file=out)
    for loc, p in result.certificate.invariants.items():
        print(f"{loc}: {format_poly(p)} >= 0", file=out)
    print(f"certificate written to {path}", file=out)
    return EXIT_CERTIFIED


def cmd_verify(args, out=sys.stdout) -> int:
    system = _load_system(args.system)
    cert = _load_certificate(args.certificate)
    if tuple(cert.variables) != tuple(system.variables):
        raise InputError(
            f"certificate variables ({' '.join(cert.variables)}) do not match the system ({' '.join(system.variables)})"
        )
    report = verify(system, cert)
    print(report.summary(), file=out)
    return EXIT_CERTIFIED if report.certified else EXIT_NOT_FOUND


def cmd_explain(args, out=sys.stdout) -> int:
    cert = _load_certificate(args.certificate)
    print(explain(cert), file=out)
    return EXIT_CERTIFIED


COMMANDS = {"generate": cmd_generate, "verify": cmd_verify, "explain": cmd_explain}


def _check_seed() -> Optional[int]:
    # reserved: the pipeline is deterministic, only randomized tests use it
    raw = os.environ.get(SEED_ENV)
    if raw is None or raw == "":
        return None
    try:
        return int(raw)
    except ValueError:
        raise InputError(f"{SEED_ENV} must be an integer, got {raw!r}") from None


def main(argv: Optional[Sequence[str]] = None, out=None) -> int:
    out = out or sys.stdout
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        # argparse exits 2 on usage errors; that code means something else here
        return EXIT_INPUT_ERROR if exc.code else EXIT_CERTIFIED
    logging.basicConfig(level=getattr(logging, args.log_level), format="%(levelname)s %(name)s: %(message)s")
    try:
        _check_seed()
        return COMMANDS[args.command](args, out)
    except InputError as err:
        print(f"error: {err}", file=sys.stderr)
        return EXIT_INPUT_ERROR


if __name__ == "__main__":
    sys.exit(main())
