"""Front half of the analysis: normalize, SSA, EDB extraction, points-to."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Dict, List, Optional

from .engine import DEFAULT_BOUND, Engine
from .facts import Extraction, FactBase, extract_edb
from .il import Program
from .pointsto import make_engine
from .spd import normalize
from .ssa import SSAFunction, to_ssa


@dataclass
class Prepared:
    program: Program
    ssa: Dict[str, SSAFunction]
    extraction: Extraction

    @property
    def edb(self) -> FactBase:
        return self.extraction.facts

    @property
    def diagnostics(self) -> List[str]:
        return [f"{f.name}: {d}" for f in self.program.functions.values() for d in f.diagnostics]


def prepare(program: Program) -> Prepared:
    funcs = {name: normalize(f) for name, f in program.functions.items()}
    norm = Program(funcs, program.entry_function, program.word_size)
    ssa = {name: to_ssa(f) for name, f in funcs.items()}
    return Prepared(norm, ssa, extract_edb(norm, ssa))


def solve(prep: Prepared, bound: int = DEFAULT_BOUND, edb: Optional[FactBase] = None):
    """Run points-to; returns the engine (kept for incremental additions) and its fixpoint."""
    engine: Engine = make_engine(bound)
    idb = engine.evaluate(edb if edb is not None else prep.edb)
    return engine, idb
