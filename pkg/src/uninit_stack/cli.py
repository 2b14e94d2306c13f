"""Command-line entry point: ``uninit-stack analyze|facts|corpus``."""

from __future__ import annotations

import argparse
import json
import os
import sys
from typing import List, Optional

from .corpus import ManifestError, format_matrix, run_corpus
from .driver import CONFIG_ENV, INPUT_KINDS, PROGRAM_FILE, RunConfig, analyze_path, guess_kind, load_program
from .facts import EDB_RELATIONS, FactError, emit_facts
from .il import ILError, pretty_print
from .plugins import PLUGIN_NAMES, AllocatorSpecError
from .pipeline import prepare, solve
from .pointsto import DERIVED
from .report import to_json, to_text


def _defaults() -> dict:
    path = os.environ.get(CONFIG_ENV)
    if not path:
        return {}
    with open(path) as fh:
        return json.load(fh)


def _common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--input-kind", choices=INPUT_KINDS, default=None,
                   help="default: facts for directories, x86mini for .asm/.s, il otherwise")
    p.add_argument("--word-size", type=int, choices=(4, 8), default=None)


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="uninit-stack",
                                 description="Detect reads of uninitialized stack variables in lifted code.")
    sub = ap.add_subparsers(dest="cmd", required=True)

    a = sub.add_parser("analyze", help="analyze one program")
    a.add_argument("input")
    _common(a)
    a.add_argument("--format", choices=("text", "json"), default="text")
    a.add_argument("--dump-facts", metavar="DIR")
    a.add_argument("--from-facts", action="store_true", help="same as --input-kind facts")
    for name in PLUGIN_NAMES:
        a.add_argument(f"--no-plugin-{name}", action="store_true")
    a.add_argument("--max-rounds", type=int, default=100)
    a.add_argument("--path-budget", type=int, default=10_000)
    a.add_argument("--workers", type=int, default=1)
    a.add_argument("--allocators", metavar="FILE")
    a.add_argument("--strict-externals", action="store_true",
                   help="pointer arguments to unknown callees do not initialize their pointees")

    f = sub.add_parser("facts", help="dump the fact database")
    f.add_argument("input")
    f.add_argument("-o", "--out", required=True)
    f.add_argument("--idb", action="store_true", help="also write derived relations")
    _common(f)

    c = sub.add_parser("corpus", help="run a paired vulnerable/patched corpus")
    c.add_argument("dir")
    c.add_argument("--jobs", type=int, default=1)
    c.add_argument("--workers", type=int, default=1)
    return ap


def cmd_analyze(args) -> int:
    cfg = RunConfig(**{k: v for k, v in _defaults().items() if k in RunConfig.__dataclass_fields__})
    cfg.input = args.input
    cfg.input_kind = "facts" if args.from_facts else (args.input_kind or guess_kind(args.input))
    cfg.word_size = args.word_size
    cfg.format = args.format
    cfg.dump_facts = args.dump_facts
    cfg.dump_idb = True
    cfg.disabled_plugins = tuple(n for n in PLUGIN_NAMES if getattr(args, f"no_plugin_{n}"))
    cfg.max_rounds = args.max_rounds
    cfg.path_budget = args.path_budget
    cfg.workers = args.workers
    cfg.allocators = args.allocators or cfg.allocators
    cfg.external_initializes = not args.strict_externals
    _, report = analyze_path(cfg)
    sys.stdout.write(to_json(report) if cfg.format == "json" else to_text(report))
    return 1 if report["groups"] else 0


def cmd_facts(args) -> int:
    kind = args.input_kind or guess_kind(args.input)
    program = load_program(args.input, kind, args.word_size)
    prep = prepare(program)
    if args.idb:
        _, idb = solve(prep)
        emit_facts(idb, args.out, list(EDB_RELATIONS) + list(DERIVED))
    else:
        emit_facts(prep.edb, args.out, EDB_RELATIONS)
    with open(os.path.join(args.out, PROGRAM_FILE), "w") as fh:
        fh.write(pretty_print(program))
    print(f"wrote {len(EDB_RELATIONS) + (len(DERIVED) if args.idb else 0)} relations to {args.out}")
    return 0


def cmd_corpus(args) -> int:
    if not os.path.isdir(args.dir):
        raise ManifestError(f"{args.dir}: not a directory")
    results = run_corpus(args.dir, RunConfig(workers=args.workers), args.jobs)
    if not results:
        print(f"warning: no cases in {args.dir}", file=sys.stderr)
        return 0
    sys.stdout.write(format_matrix(results))
    return 0 if all(r.passed for r in results) else 1


def main(argv: Optional[List[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return {"analyze": cmd_analyze, "facts": cmd_facts, "corpus": cmd_corpus}[args.cmd](args)
    except (ILError, FactError, ManifestError, AllocatorSpecError, ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
