"""Extensional database: fact schema, extraction from SSA functions, fact-file I/O."""

from __future__ import annotations

import os
import re
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, Iterable, List, Optional, Set, Tuple

from .cfg import CFG
from .il import (
    Assign, BinOp, Call, Const, Function, Lea, Load, MemRef, Pop, Program, Push, Reg,
    Store, Temp,
)
from .ssa import SSAFunction, SSAName

Term = object  # str atom or int
Tuple_ = Tuple[Term, ...]

SCHEMAS: Dict[str, Tuple[str, ...]] = {
    "StackPointer": ("V", "Addr", "SPD"),
    "Assign": ("V1", "V2", "Addr"),
    "Load": ("V1", "V2", "Disp", "Addr", "Ctx"),
    "Store": ("V1", "Disp", "V2", "Addr", "Ctx"),
    "Param": ("V1", "Arg", "Addr", "Caller", "V2", "CalleeAddr", "Callee"),
    "TranslateSPD": ("Arg", "Callee", "SPD2"),
    "BinOp": ("Op", "Res", "V1", "V2", "Addr", "Ctx"),
    "Constant": ("V", "Value", "Addr"),
    "Phi": ("V", "PhiReg", "Addr", "Ctx"),
    "CanReach": ("Addr", "Addr2", "Ctx"),
    # additions: statement ownership and direct stack-slot identities
    "Instr": ("Addr", "Ctx"),
    "StackSlot": ("V", "SPD", "Ctx"),
    # derived
    "VPtsTo": ("V", "SPD", "Addr", "Ctx"),
    "PointerPtsTo": ("SPD", "Disp", "SPD2", "Ctx"),
    "IndirectDef": ("V", "SPD", "Disp", "Addr", "Ctx"),
    "IndirectUse": ("V", "SPD", "Disp", "Addr", "Ctx"),
    "SlotHolds": ("SPD", "SPD2", "Ctx"),
    "StoreAt": ("Addr", "SPD", "Ctx"),
    "LoadAt": ("Addr", "SPD", "Ctx"),
}
EDB_RELATIONS = ("StackPointer", "Assign", "Load", "Store", "Param", "TranslateSPD", "BinOp",
                 "Constant", "Phi", "CanReach", "Instr", "StackSlot")
CONTROL_FLOW_RELATIONS = ("CanReach", "Instr")


class FactError(Exception):
    pass


class FactBase:
    """Set-semantics relation store with per-tuple provenance."""

    def __init__(self, relations: Optional[Dict[str, Iterable[Tuple_]]] = None, source: str = "extracted"):
        self.relations: Dict[str, Set[Tuple_]] = {}
        self.provenance: Dict[Tuple[str, Tuple_], str] = {}
        for rel, tuples in (relations or {}).items():
            self.relations.setdefault(rel, set())
            for t in tuples:
                self.add(rel, t, source)

    def add(self, rel: str, t: Tuple_, source: str = "extracted") -> bool:
        t = tuple(t)
        schema = SCHEMAS.get(rel)
        if schema is not None and len(t) != len(schema):
            raise FactError(f"{rel} expects {len(schema)} terms, got {len(t)}: {t!r}")
        s = self.relations.setdefault(rel, set())
        if t in s:
            return False
        s.add(t)
        self.provenance[(rel, t)] = source
        return True

    def get(self, rel: str) -> Set[Tuple_]:
        return self.relations.get(rel, set())

    def __contains__(self, item) -> bool:
        rel, t = item
        return tuple(t) in self.relations.get(rel, ())

    def __len__(self) -> int:
        return sum(len(v) for v in self.relations.values())

    def __eq__(self, other) -> bool:
        if not isinstance(other, FactBase):
            return NotImplemented
        names = {k for k, v in self.relations.items() if v} | {k for k, v in other.relations.items() if v}
        return all(self.get(n) == other.get(n) for n in names)

    def counts(self) -> Dict[str, int]:
        return {k: len(v) for k, v in sorted(self.relations.items())}

    def copy(self) -> "FactBase":
        fb = FactBase()
        fb.relations = {k: set(v) for k, v in self.relations.items()}
        fb.provenance = dict(self.provenance)
        return fb

    def merge(self, other: "FactBase") -> "FactBase":
        out = self.copy()
        for rel, ts in other.relations.items():
            out.relations.setdefault(rel, set())
            for t in ts:
                out.add(rel, t, other.provenance.get((rel, t), "extracted"))
        return out

    def restrict(self, names: Iterable[str]) -> "FactBase":
        fb = FactBase()
        for n in names:
            for t in self.get(n):
                fb.add(n, t, self.provenance.get((n, t), "extracted"))
            fb.relations.setdefault(n, set())
        return fb


# -- atom naming ---------------------------------------------------------------

def _disp_text(d: int) -> str:
    if d == 0:
        return ""
    mag = abs(d)
    body = str(mag) if mag < 10 else hex(mag)
    return ("+" if d > 0 else "-") + body


def slot_atom(sp_name: SSAName, disp: int) -> str:
    """Name of a stack-pointer-relative memory expression, e.g. ``[esp_17]``."""
    return f"[{sp_name}{_disp_text(disp)}]"


def const_atom(v: int) -> str:
    return f"#{v}"


# -- calls ---------------------------------------------------------------------

@dataclass
class CallSite:
    caller: str
    addr: int
    callee: str
    block: str
    external: bool
    actuals: List[Tuple[int, str]] = field(default_factory=list)   # (arg index, caller atom)
    ret: Optional[str] = None                                          # return-register SSA atom


def stack_param_count(f: Function) -> int:
    """Highest stack-argument slot touched directly by ``f``."""
    word = f.arch.word
    sp = f.arch.sp
    n = 0
    for s in f.statements():
        if isinstance(s, (Load, Store, Lea)) and s.base.name == sp and s.addr in f.spd_at:
            spd = f.spd_at[s.addr] + s.disp
            if spd >= word:
                n = max(n, spd // word)
    return n


def _pushed_words(f: Function, block, call: Call) -> int:
    start = f.spd_at.get(block.first_addr)
    here = f.spd_at.get(call.addr)
    if start is None or here is None:
        return 0
    return max(0, (start - here) // f.arch.word)


# -- extraction ------------------------------------------------------------------

@dataclass
class Extraction:
    facts: FactBase
    calls: List[CallSite]
    coverage: Dict[str, int]


def compute_canreach(f: Function) -> Set[Tuple[int, int, str]]:
    """CanReach(later, earlier, ctx) over reachable instructions of ``f``."""
    cfg: CFG = f.cfg()
    live = [b for b in f.blocks.values() if b.id not in f.dead]
    strict: Dict[str, Set[str]] = {}
    for b in live:
        seen: Set[str] = set()
        work = list(cfg.succs[b.id])
        while work:
            x = work.pop()
            if x in seen:
                continue
            seen.add(x)
            work.extend(cfg.succs[x])
        strict[b.id] = seen
    out = set()
    for b in live:
        addrs = [s.addr for s in b.stmts]
        for i, early in enumerate(addrs):
            for late in addrs[i:]:
                out.add((late, early, f.name))
            for c in strict[b.id]:
                for s in f.blocks[c].stmts:
                    out.add((s.addr, early, f.name))
    return out


def extract_edb(program: Program, ssa_funcs: Dict[str, SSAFunction]) -> Extraction:
    """Produce the EDB for every function of an SSA-converted, spd-normalized program."""
    fb = FactBase({r: () for r in EDB_RELATIONS})
    calls: List[CallSite] = []
    coverage = {"statements": 0, "with_facts": 0}
    params = {name: stack_param_count(f) for name, f in program.functions.items()}
    for name, f in program.functions.items():
        _extract_function(program, f, ssa_funcs[name], fb, calls, coverage, params)
        for t in compute_canreach(f):
            fb.add("CanReach", t)
    return Extraction(fb, calls, coverage)


def _extract_function(program, f, ssa, fb, calls, coverage, params):
    arch = f.arch
    sp = arch.sp
    word = arch.word
    ctx = f.name

    def use(addr, e):
        if isinstance(e, Const):
            return const_atom(e.value)
        return str(ssa.use(addr, e.name))

    def d(addr, e):
        return str(ssa.defn(addr, e.name))

    for b in f.blocks.values():
        if b.id in f.dead:
            continue
        for phi in ssa.phis.get(b.id, []):
            for src in sorted(set(phi.sources.values())):
                fb.add("Phi", (str(phi.dst), str(src), phi.addr, ctx))
        for s in b.stmts:
            a = s.addr
            fb.add("Instr", (a, ctx))
            coverage["statements"] += 1
            before = len(fb)
            spd = f.spd_at.get(a)
            if spd is None:
                continue
            if isinstance(s, Lea):
                if s.base.name == sp:
                    fb.add("StackPointer", (d(a, s.dst), a, spd + s.disp))
                else:
                    c = const_atom(s.disp)
                    fb.add("BinOp", ("add", d(a, s.dst), use(a, s.base), c, a, ctx))
                    fb.add("Constant", (c, s.disp, a))
            elif isinstance(s, Assign):
                if s.dst.name == sp:
                    pass
                elif isinstance(s.src, (Reg, Temp)):
                    if s.src.name == sp:
                        fb.add("StackPointer", (d(a, s.dst), a, spd))
                    else:
                        fb.add("Assign", (d(a, s.dst), use(a, s.src), a))
            elif isinstance(s, Load):
                if s.base.name == sp:
                    slot = slot_atom(ssa.use(a, sp), s.disp)
                    fb.add("StackSlot", (slot, spd + s.disp, ctx))
                    fb.add("Assign", (d(a, s.dst), slot, a))
                else:
                    fb.add("Load", (d(a, s.dst), use(a, s.base), s.disp, a, ctx))
            elif isinstance(s, Store):
                if s.base.name == sp:
                    slot = slot_atom(ssa.use(a, sp), s.disp)
                    fb.add("StackSlot", (slot, spd + s.disp, ctx))
                    if isinstance(s.src, (Reg, Temp)):
                        if s.src.name == sp:
                            fb.add("StackPointer", (slot, a, spd))
                        else:
                            fb.add("Assign", (slot, use(a, s.src), a))
                else:
                    fb.add("Store", (use(a, s.base), s.disp, use(a, s.src), a, ctx))
            elif isinstance(s, BinOp):
                if s.dst.name == sp:
                    pass
                elif (isinstance(s.lhs, Reg) and s.lhs.name == sp and isinstance(s.rhs, Const)
                      and s.op in ("add", "sub")):
                    delta = s.rhs.value if s.op == "add" else -s.rhs.value
                    fb.add("StackPointer", (d(a, s.dst), a, spd + delta))
                else:
                    fb.add("BinOp", (s.op, d(a, s.dst), use(a, s.lhs), use(a, s.rhs), a, ctx))
                    for opnd in (s.lhs, s.rhs):
                        if isinstance(opnd, Const):
                            fb.add("Constant", (const_atom(opnd.value), opnd.value, a))
            elif isinstance(s, Push):
                slot = slot_atom(ssa.defn(a, sp), 0)
                fb.add("StackSlot", (slot, spd - word, ctx))
                if isinstance(s.src, (Reg, Temp)):
                    if s.src.name == sp:
                        fb.add("StackPointer", (slot, a, spd))
                    else:
                        fb.add("Assign", (slot, use(a, s.src), a))
            elif isinstance(s, Pop):
                slot = slot_atom(ssa.use(a, sp), 0)
                fb.add("StackSlot", (slot, spd, ctx))
                fb.add("Assign", (d(a, s.dst), slot, a))
            elif isinstance(s, Call):
                _extract_call(program, f, ssa, b, s, fb, calls, params)
            if len(fb) > before:
                coverage["with_facts"] += 1


def _extract_call(program, f, ssa, block, s: Call, fb, calls, params):
    arch = f.arch
    word = arch.word
    a = s.addr
    spd = f.spd_at[a]
    external = program.is_external(s.target)
    site = CallSite(f.name, a, s.target, block.id, external,
                    ret=str(ssa.defn(a, arch.ret)))
    if s.args:
        actuals = [(i, (const_atom(e.value) if isinstance(e, Const) else str(ssa.use(a, e.name))))
                   for i, e in enumerate(s.args, 1)]
        formals = {i: (e.name if isinstance(e, (Reg, Temp)) else None) for i, e in enumerate(s.args, 1)}
    else:
        n = _pushed_words(f, block, s)
        if not external:
            n = max(n, params[s.target])
        sp_name = ssa.use(a, arch.sp)
        actuals = []
        for i in range(1, n + 1):
            slot = slot_atom(sp_name, word * (i - 1))
            fb.add("StackSlot", (slot, spd + word * (i - 1), f.name))
            actuals.append((i, slot))
        formals = {i: None for i in range(1, n + 1)}
    site.actuals = actuals
    calls.append(site)
    if external:
        return
    callee = program.functions[s.target]
    entry = callee.entry_addr
    callee_sp = SSAName(callee.arch.sp, callee.ssa_base.get(callee.arch.sp, 0))
    for i, actual in actuals:
        if formals[i] is None:
            formal = slot_atom(callee_sp, word * i)
            fb.add("StackSlot", (formal, word * i, callee.name))
        else:
            formal = str(SSAName(formals[i], callee.ssa_base.get(formals[i], 0)))
        fb.add("Param", (actual, i, a, f.name, formal, entry, callee.name))
        fb.add("TranslateSPD", (i, callee.name, word * i))


# -- fact files ------------------------------------------------------------------

_INT_RE = re.compile(r"^-?\d+$")
_FILE_TO_REL = {name.lower(): name for name in SCHEMAS}


def _term_text(t) -> str:
    if isinstance(t, int):
        return str(t)
    s = str(t)
    if "\t" in s or "\n" in s:
        raise FactError(f"atom contains a tab or newline: {s!r}")
    return s


def _sort_key(t: Tuple_):
    return tuple((0, x, "") if isinstance(x, int) else (1, 0, x) for x in t)


def emit_facts(fb: FactBase, directory, relations: Optional[Iterable[str]] = None) -> List[Path]:
    """Write one ``<relation>.facts`` file (lower-cased name) per relation."""
    out = Path(directory)
    out.mkdir(parents=True, exist_ok=True)
    written = []
    names = sorted(relations if relations is not None else fb.relations)
    for rel in names:
        path = out / f"{rel.lower()}.facts"
        rows = sorted(fb.get(rel), key=_sort_key)
        with open(path, "w") as fh:
            for t in rows:
                fh.write("\t".join(_term_text(x) for x in t) + "\n")
        written.append(path)
    return written


def load_facts(directory, relations: Optional[Iterable[str]] = None) -> FactBase:
    d = Path(directory)
    fb = FactBase()
    wanted = None if relations is None else {r.lower() for r in relations}
    for path in sorted(d.glob("*.facts")):
        stem = path.stem
        if wanted is not None and stem not in wanted:
            continue
        rel = _FILE_TO_REL.get(stem, stem)
        fb.relations.setdefault(rel, set())
        arity = len(SCHEMAS[rel]) if rel in SCHEMAS else None
        with open(path) as fh:
            for lineno, line in enumerate(fh, 1):
                line = line.rstrip("\n")
                if not line:
                    continue
                parts = line.split("\t")
                if arity is not None and len(parts) != arity:
                    raise FactError(f"{path.name}:{lineno}: arity mismatch, expected {arity} got {len(parts)}")
                if any(p == "" for p in parts):
                    raise FactError(f"{path.name}:{lineno}: malformed line")
                fb.add(rel, tuple(int(p) if _INT_RE.match(p) else p for p in parts))
    return fb


def fact_files_exist(directory) -> bool:
    return os.path.isdir(directory) and any(Path(directory).glob("*.facts"))
