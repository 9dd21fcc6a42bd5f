"""CLI: deap-convert --in DIR --vaq map.csv --out deap.eegp [--subjects 1,2]."""

from __future__ import annotations

import argparse
import sys

from .convert import ConvertError, convert


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(
        prog="deap-convert",
        description="Convert DEAP preprocessed archives (s01..s32.dat) into "
                    "one EEGP dataset file")
    p.add_argument("--in", dest="input_dir", required=True,
                   help="directory holding sNN.dat archives")
    p.add_argument("--vaq", required=True,
                   help="CSV with columns video_id,quadrant (Q1..Q4)")
    p.add_argument("--out", required=True, help="output .eegp path")
    p.add_argument("--subjects", default=None,
                   help="comma-separated subject numbers (default: all 32)")
    p.add_argument("--force-vaq", action="store_true",
                   help="accept a quadrant distribution other than 8/12/10/10")
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return 1 if exc.code else 0
    subjects = None
    if args.subjects:
        try:
            subjects = [int(s) for s in args.subjects.split(",") if s.strip()]
        except ValueError:
            print(f"deap-convert: bad --subjects {args.subjects!r}", file=sys.stderr)
            return 1
    try:
        n = convert(args.input_dir, args.vaq, args.out, subjects=subjects,
                    force_vaq=args.force_vaq)
    except ConvertError as exc:
        print(f"deap-convert: {exc}", file=sys.stderr)
        return exc.exit_code
    except OSError as exc:
        print(f"deap-convert: {exc}", file=sys.stderr)
        return 2
    print(f"wrote {n} trials to {args.out}")
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
