"""Command line verifier around the report pipelines.

Exit codes: 0 when the report verdict is "verified", 2 when it is
"falsified" or "refused", 1 for usage or file errors.
"""

from __future__ import annotations

import argparse
import json
import os
import sys

from .errors import QcatError
from .states import QuantumState
from .pipelines import (
    ReportDocument,
    pipeline_lemma1,
    pipeline_obs1,
    pipeline_obs3,
    pipeline_schmidt,
    pipeline_theorem,
)

EXIT_VERIFIED = 0
EXIT_USAGE = 1
EXIT_NOT_VERIFIED = 2


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"{self.prog}: error: {message}", file=sys.stderr)
        raise SystemExit(EXIT_USAGE)


def _add_common(sub: argparse.ArgumentParser) -> None:
    sub.add_argument("--out", help="write the report to this path (atomic)")
    sub.add_argument(
        "--format", choices=("json", "text"), default="json", help="report format"
    )
    sub.add_argument(
        "--corrupt-epsilon", type=float, default=0.0, help=argparse.SUPPRESS
    )


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(
        prog="qcatalyst",
        description="verify catalytic mixing, separation and containment claims",
    )
    subs = parser.add_subparsers(dest="command", required=True)

    p = subs.add_parser(
        "theorem",
        help="separation between catalytic and bounded-message protocols",
        parents=[],
    )
    p.add_argument("--n", type=int, required=True, help="separation parameter")
    _add_common(p)

    p = subs.add_parser("lemma1", help="exact catalytic mixing of n copies")
    p.add_argument("--rho", help="state JSON file for the entangled input")
    p.add_argument("--sigma", help="state JSON file for the product state")
    p.add_argument("--n", type=int, default=2, help="number of output copies")
    p.add_argument(
        "--mode",
        choices=("auto", "explicit-flags", "support-measurement"),
        default="auto",
    )
    _add_common(p)

    p = subs.add_parser(
        "obs1", help="simulate a catalytic protocol with one quantum message"
    )
    p.add_argument("--n", type=int, default=2, help="number of output copies")
    p.add_argument(
        "--product-rho",
        action="store_true",
        help="replace the entangled input by a product state",
    )
    _add_common(p)

    p = subs.add_parser(
        "obs3", help="classical-bit task: one broadcast bit vs no communication"
    )
    p.add_argument("--seeds", type=int, default=10, help="random catalysts to try")
    _add_common(p)

    p = subs.add_parser("schmidt", help="Schmidt analysis of a stored state")
    p.add_argument("--input", required=True, help="state JSON file")
    p.add_argument(
        "--cut",
        help='JSON object assigning registers to sides, e.g. {"R": "left"}',
    )
    _add_common(p)

    return parser


def _load_state(path: str) -> QuantumState:
    with open(path, "r", encoding="utf-8") as fh:
        data = json.load(fh)
    return QuantumState.from_json(data)


def _render(report: ReportDocument, fmt: str) -> str:
    if fmt == "text":
        return report.to_text()
    return json.dumps(report.to_json(), indent=2, sort_keys=True) + "\n"


def _emit(report: ReportDocument, args) -> int:
    payload = _render(report, args.format)
    if args.out:
        tmp = f"{args.out}.tmp{os.getpid()}"
        with open(tmp, "w", encoding="utf-8") as fh:
            fh.write(payload)
        os.replace(tmp, args.out)
    else:
        sys.stdout.write(payload)
    if report.verdict == "verified":
        return EXIT_VERIFIED
    return EXIT_NOT_VERIFIED


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        if args.command == "theorem":
            report = pipeline_theorem(args.n, corruption=args.corrupt_epsilon)
        elif args.command == "lemma1":
            rho = _load_state(args.rho) if args.rho else None
            sigma = _load_state(args.sigma) if args.sigma else None
            if (rho is None) != (sigma is None):
                parser.error("provide both --rho and --sigma, or neither")
            report = pipeline_lemma1(
                rho, sigma, args.n, args.mode, corruption=args.corrupt_epsilon
            )
        elif args.command == "obs1":
            report = pipeline_obs1(
                args.n, args.product_rho, corruption=args.corrupt_epsilon
            )
        elif args.command == "obs3":
            report = pipeline_obs3(args.seeds, corruption=args.corrupt_epsilon)
        else:
            state = _load_state(args.input)
            cut = json.loads(args.cut) if args.cut else None
            report = pipeline_schmidt(state, cut)
    except (OSError, json.JSONDecodeError) as exc:
        print(f"qcatalyst: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except QcatError as exc:
        # inputs that parse but are not valid states / protocols
        print(f"qcatalyst: refused: {exc}", file=sys.stderr)
        return EXIT_NOT_VERIFIED
    return _emit(report, args)


if __name__ == "__main__":
    sys.exit(main())
