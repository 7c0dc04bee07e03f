"""Command line: ``wsnsim run`` and ``wsnsim sweep``."""
from __future__ import annotations

import argparse
import logging
import sys
from dataclasses import replace
from pathlib import Path
from typing import List, Optional

from .core import SimError
from .runner import AXES, SweepSpec, run_once, run_sweep, write_csv
from .scenario import PROTOCOL_NAMES, ScenarioError, load_scenario


def _points(text: str) -> tuple:
    try:
        return tuple(float(x) for x in text.split(",") if x.strip())
    except ValueError:
        raise argparse.ArgumentTypeError(f"bad point list {text!r}") from None


def _parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="wsnsim", description=__doc__)
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="cmd", required=True)

    run = sub.add_parser("run", help="one simulation, one CSV row")
    run.add_argument("--scenario", required=True, type=Path)
    run.add_argument("--seed", type=int)
    run.add_argument("--protocol", choices=PROTOCOL_NAMES)
    run.add_argument("--trace", type=Path, help="write a per-event trace here")
    run.add_argument("--out", required=True, type=Path)

    sw = sub.add_parser("sweep", help="all protocols over one axis, many seeds")
    sw.add_argument("--scenario", required=True, type=Path)
    sw.add_argument("--axis", required=True, choices=tuple(AXES))
    sw.add_argument("--points", required=True, type=_points)
    sw.add_argument("--seeds", type=int, default=20)
    sw.add_argument("--protocols", default=",".join(PROTOCOL_NAMES))
    sw.add_argument("--workers", type=int, default=1)
    sw.add_argument("--out", required=True, type=Path)
    return ap


def _run(args) -> None:
    scn = load_scenario(args.scenario)
    if args.seed is not None:
        scn = replace(scn, seed=args.seed)
    if args.protocol:
        scn = replace(scn, protocol=args.protocol)
    if args.trace:
        with open(args.trace, "w") as tr:
            row = run_once(scn, trace=tr).row
    else:
        row = run_once(scn).row
    with open(args.out, "w", newline="") as f:
        write_csv([row], f)


def _sweep(args) -> int:
    base = load_scenario(args.scenario)
    protocols = tuple(p.strip() for p in args.protocols.split(",") if p.strip())
    spec = SweepSpec(args.axis, args.points, args.seeds, protocols)
    rows = run_sweep(spec, base, workers=args.workers)
    with open(args.out, "w", newline="") as f:
        write_csv(rows, f)
    failed = [r for r in rows if r["status"] != "ok"]
    if failed:
        print(f"wsnsim: {len(failed)} of {len(rows)} runs failed; see status column",
              file=sys.stderr)
        return 3
    return 0


def main(argv: Optional[List[str]] = None) -> int:
    args = _parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        if args.cmd == "run":
            _run(args)
            return 0
        return _sweep(args)
    except (ScenarioError, SimError) as exc:
        print(f"wsnsim: {exc}", file=sys.stderr)
        return 2
    except OSError as exc:
        print(f"wsnsim: {exc.filename or ''}: {exc.strerror}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
