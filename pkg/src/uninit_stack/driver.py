"""Input loading and the end-to-end analysis run used by the CLI and the corpus runner."""

from __future__ import annotations

import os
from dataclasses import dataclass, field
from pathlib import Path
from typing import List, Optional, Tuple

from .engine import DEFAULT_BOUND
from .facts import EDB_RELATIONS, emit_facts, load_facts
from .il import Program, parse_il, pretty_print
from .interproc import AnalysisConfig, KnowledgeBase, monitor_loop
from .pipeline import Prepared, prepare
from .plugins import DEFAULT_ALLOCATORS, PLUGIN_NAMES, default_plugins, load_allocator_specs
from .pointsto import DERIVED
from .report import build_report
from .x86 import lift_x86_mini

INPUT_KINDS = ("il", "x86mini", "facts")
PROGRAM_FILE = "program.il"
CONFIG_ENV = "UNINIT_STACK_CONFIG"


@dataclass
class RunConfig:
    input: str = ""
    input_kind: str = "il"
    word_size: Optional[int] = None
    disabled_plugins: Tuple[str, ...] = ()
    format: str = "text"
    dump_facts: Optional[str] = None
    dump_idb: bool = False
    max_rounds: int = 100
    path_budget: int = 10_000
    workers: int = 1
    allocators: Optional[str] = None
    external_initializes: bool = True
    bound: int = DEFAULT_BOUND

    def validate(self) -> None:
        if self.input_kind not in INPUT_KINDS:
            raise ValueError(f"unknown input kind {self.input_kind!r}")
        if self.max_rounds < 1 or self.path_budget < 1 or self.workers < 1:
            raise ValueError("budgets and worker count must be positive")
        unknown = set(self.disabled_plugins) - set(PLUGIN_NAMES)
        if unknown:
            raise ValueError(f"unknown plugin(s): {', '.join(sorted(unknown))}")
        if self.format not in ("text", "json"):
            raise ValueError(f"unknown format {self.format!r}")

    def analysis(self) -> AnalysisConfig:
        return AnalysisConfig(self.max_rounds, self.external_initializes, self.workers, self.bound)


def guess_kind(path: str) -> str:
    if os.path.isdir(path):
        return "facts"
    return "x86mini" if path.endswith((".asm", ".s")) else "il"


def load_program(path: str, kind: str, word_size: Optional[int] = None) -> Program:
    if kind == "facts":
        path = os.path.join(path, PROGRAM_FILE)
        kind = "il"
    text = Path(path).read_text()
    if word_size is not None and not text.lstrip().startswith(".word"):
        text = f".word {word_size}\n" + text
    return lift_x86_mini(text) if kind == "x86mini" else parse_il(text)


def run(program: Program, config: RunConfig, edb=None) -> KnowledgeBase:
    prep: Prepared = prepare(program)
    specs = load_allocator_specs(config.allocators) if config.allocators else DEFAULT_ALLOCATORS
    kb = KnowledgeBase(prep, config.analysis(), edb)
    return monitor_loop(kb, default_plugins(config.disabled_plugins, specs, config.path_budget))


def analyze_path(config: RunConfig) -> Tuple[KnowledgeBase, dict]:
    config.validate()
    program = load_program(config.input, config.input_kind, config.word_size)
    edb = load_facts(config.input, EDB_RELATIONS) if config.input_kind == "facts" else None
    kb = run(program, config, edb)
    if config.dump_facts:
        dump(kb, program, config.dump_facts, config.dump_idb)
    return kb, build_report(kb, os.path.basename(os.path.normpath(config.input)))


def dump(kb: KnowledgeBase, program: Program, directory: str, idb: bool = True) -> List[Path]:
    """EDB (and optionally the derived relations) plus the program text needed to re-run."""
    rels = list(EDB_RELATIONS) + (list(DERIVED) if idb else [])
    written = emit_facts(kb.idb if idb else kb.prep.edb, directory, rels)
    p = Path(directory) / PROGRAM_FILE
    p.write_text(pretty_print(program))
    return written + [p]
