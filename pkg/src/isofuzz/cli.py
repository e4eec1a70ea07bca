"""Command line: ``isofuzz fuzz|reproduce|corpus``.

Exit status is 0 for a clean run, 1 when violations were found (or a
reproduction confirmed one) and 2 for usage or configuration errors.
"""
from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

from . import corpus
from .campaign import CampaignError, CampaignSpec, ReportError, reproduce, run_campaign
from .config import ConfigError

EXIT_CLEAN, EXIT_VIOLATION, EXIT_USAGE = 0, 1, 2


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _positive(text: str) -> int:
    v = int(text, 0)
    if v < 1:
        raise argparse.ArgumentTypeError("must be at least 1")
    return v


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="isofuzz", description="relational isolation fuzzer for a simulated CPU")
    p.add_argument("-v", "--verbose", action="count", default=0,
                   help="-v for progress, -vv to log every measured trace")
    sub = p.add_subparsers(dest="cmd", required=True, parser_class=_Parser)

    f = sub.add_parser("fuzz", help="run a campaign")
    f.add_argument("--template", required=True, type=Path)
    f.add_argument("--config", required=True, type=Path)
    f.add_argument("--programs", type=_positive, default=100)
    f.add_argument("--inputs", type=_positive, default=10, help="input classes per program")
    f.add_argument("--variants", type=_positive, default=5, help="inputs per class")
    f.add_argument("--seed", type=lambda s: int(s, 0), default=0)
    f.add_argument("--stop-on-first", action="store_true")
    f.add_argument("--out", type=Path, required=True)

    r = sub.add_parser("reproduce", help="re-run a stored violation")
    r.add_argument("report", type=Path)
    r.add_argument("--config", type=Path, help="replace the stored config")

    c = sub.add_parser("corpus", help="shipped scenarios")
    csub = c.add_subparsers(dest="action", required=True, parser_class=_Parser)
    csub.add_parser("list")
    e = csub.add_parser("emit")
    e.add_argument("dir", type=Path)
    return p


def _fuzz(args) -> int:
    spec = CampaignSpec(args.template, args.config, args.programs, args.inputs, args.variants,
                        args.seed, args.stop_on_first, args.out)
    res = run_campaign(spec)
    print(f"programs={res.programs} measurements={res.measurements} "
          f"violations={len(res.violations)} discarded={res.discarded} "
          f"rate={res.measurements_per_second:.0f}/s")
    for path in res.report_paths:
        print(f"report: {path}")
    return EXIT_VIOLATION if res.violations else EXIT_CLEAN


def _reproduce(args) -> int:
    rep = reproduce(args.report, args.config)
    print(rep.message)
    return EXIT_VIOLATION if rep.persists else EXIT_CLEAN


def _corpus(args) -> int:
    if args.action == "list":
        for s in corpus.scenario_corpus():
            bugs = ",".join(s.config.executor.bugs.enabled) or "-"
            expect = "leaks" if s.expect_leak else "quiet"
            print(f"{s.name:40s} {s.template_name:4s} {expect:5s} {bugs}")
        return EXIT_CLEAN
    paths = corpus.emit(args.dir)
    print(f"wrote {len(paths)} files to {args.dir}")
    return EXIT_CLEAN


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    level = (logging.WARNING, logging.INFO, logging.DEBUG)[min(args.verbose, 2)]
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s")
    try:
        return {"fuzz": _fuzz, "reproduce": _reproduce, "corpus": _corpus}[args.cmd](args)
    except (CampaignError, ConfigError, ReportError, OSError) as exc:
        print(f"isofuzz: error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
