"""Command line wrapper: ``plots <kind> --manifest PATH --out PATH``."""

from __future__ import annotations

import argparse
import sys

from .render import FigureKind, FigureRequest, SchemaError, render


def _build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(
        prog="plots", description="render figures from fbheat run artifacts"
    )
    ap.add_argument("kind", choices=[k.value for k in FigureKind])
    ap.add_argument(
        "--manifest",
        action="append",
        default=[],
        help="run directory or manifest.json (repeatable)",
    )
    ap.add_argument("--out", required=True, help="output image path")
    ap.add_argument("--oracle", default=None, help="linear-oracle JSON")
    ap.add_argument(
        "--report", action="append", default=[], help="stats report JSON (repeatable)"
    )
    ap.add_argument("--title", default=None)
    ap.add_argument("--dpi", type=int, default=130)
    return ap


def run(argv) -> int:
    args = _build_parser().parse_args(argv)
    req = FigureRequest(
        kind=FigureKind(args.kind),
        manifests=tuple(args.manifest),
        out=args.out,
        oracle=args.oracle,
        reports=tuple(args.report),
        title=args.title,
        dpi=args.dpi,
    )
    try:
        render(req)
    except SchemaError as exc:
        print(f"schema error: {exc}", file=sys.stderr)
        return 2
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    return 0


def main() -> None:
    sys.exit(run(sys.argv[1:]))


if __name__ == "__main__":
    main()
