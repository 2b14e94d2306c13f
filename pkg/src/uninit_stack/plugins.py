"""Knowledge-base plugins: constant-branch path feasibility, error-handler
suppression and heap-allocator enrichment."""

from __future__ import annotations

import re
from collections import deque
from dataclasses import dataclass
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple, Union

from .cfg import CFG
from .facts import FactBase
from .il import Assign, BinOp, Call, CondJump, Const, Function, Reg, Temp
from .interproc import KnowledgeBase, StackWarning
from .pointsto import HEAP_BASE, HEAP_STRIDE
from .safezones import SafeZone
from .ssa import SSAFunction, SSAName

FEASIBLE, INFEASIBLE, UNKNOWN = "feasible", "infeasible", "unknown"

_CMP = {
    "eq": lambda a, b: a == b, "ne": lambda a, b: a != b,
    "lt": lambda a, b: a < b, "le": lambda a, b: a <= b,
    "gt": lambda a, b: a > b, "ge": lambda a, b: a >= b,
}
_FLIP = {"eq": "eq", "ne": "ne", "lt": "gt", "le": "ge", "gt": "lt", "ge": "le"}
_ARITH = {
    "add": lambda a, b: a + b, "sub": lambda a, b: a - b, "mul": lambda a, b: a * b,
    "and": lambda a, b: a & b, "or": lambda a, b: a | b, "xor": lambda a, b: a ^ b,
}


@dataclass(frozen=True)
class PathConstraint:
    branch_addr: int
    op: str
    name: SSAName
    const: int
    taken: bool

    def holds(self, v: int) -> bool:
        return _CMP[self.op](v, self.const) == self.taken


def _satisfiable(cons: Sequence[PathConstraint]) -> bool:
    # comparisons against constants carve the integers into intervals whose
    # boundaries sit at the constants, so probing around them is exhaustive
    k = len(cons) + 1
    probes = {0}
    for c in cons:
        probes.update(range(c.const - k, c.const + k + 1))
    return any(all(c.holds(v) for c in cons) for v in probes)


def _enumerate_paths(cfg: CFG, target, banned, max_len: int, budget: int):
    """Yield entry->target block paths avoiding ``banned`` edges; returns early
    (yielding None) once ``budget`` paths were produced."""
    count = 0
    stack = [(cfg.entry, (cfg.entry,))]
    while stack:
        node, path = stack.pop()
        if node == target:
            count += 1
            yield path
            if count >= budget:
                yield None
                return
            continue
        if len(path) >= max_len:
            continue
        for s in reversed(cfg.succs[node]):
            if (node, s) not in banned:
                stack.append((s, path + (s,)))


def _eval_path(f: Function, ssa: SSAFunction, path) -> str:
    env: Dict[SSAName, int] = {}
    alias: Dict[SSAName, SSAName] = {}
    cons: Dict[SSAName, List[PathConstraint]] = {}
    opaque = False

    def res(n: SSAName) -> SSAName:
        while n in alias:
            n = alias[n]
        return n

    def operand(addr, e) -> Union[int, SSAName]:
        if isinstance(e, Const):
            return e.value
        n = res(ssa.use(addr, e.name))
        return env.get(n, n)

    for i, bid in enumerate(path):
        if i:
            for phi in ssa.phis.get(bid, []):
                src = phi.sources.get(path[i - 1])
                if src is not None:
                    alias[phi.dst] = res(src)
        blk = f.blocks[bid]
        for s in blk.stmts:
            if isinstance(s, Assign):
                d = ssa.defn(s.addr, s.dst.name)
                v = operand(s.addr, s.src)
                if isinstance(v, int):
                    env[d] = v
                else:
                    alias[d] = v
            elif isinstance(s, BinOp) and s.op in _ARITH:
                a, b = operand(s.addr, s.lhs), operand(s.addr, s.rhs)
                if isinstance(a, int) and isinstance(b, int):
                    env[ssa.defn(s.addr, s.dst.name)] = _ARITH[s.op](a, b)
            elif isinstance(s, CondJump) and i + 1 < len(path):
                nxt = path[i + 1]
                succs = blk.succs
                if len(succs) < 2 or succs[0] == succs[1]:
                    continue
                taken = nxt == s.target
                a, b = operand(s.addr, s.cond.lhs), operand(s.addr, s.cond.rhs)
                op = s.cond.op
                if isinstance(a, int) and isinstance(b, int):
                    if _CMP[op](a, b) != taken:
                        return INFEASIBLE
                    continue
                if isinstance(a, int):
                    a, b, op = b, a, _FLIP[op]
                if not isinstance(b, int):
                    opaque = True
                    continue
                c = PathConstraint(s.addr, op, a, b, taken)
                lst = cons.setdefault(a, [])
                lst.append(c)
                if not _satisfiable(lst):
                    return INFEASIBLE
    return UNKNOWN if (opaque or cons) else FEASIBLE


def path_feasible(f: Function, ssa: SSAFunction, use_block, zone: Optional[SafeZone],
                  budget: int = 10_000, max_len: int = 64) -> str:
    """Classify the unsafe paths to ``use_block``: infeasible only when every one of
    them contradicts its own constant branch conditions. Calls are skipped."""
    cfg = f.cfg()
    banned = zone.edges if zone else set()
    seen_unknown = False
    any_path = False
    for p in _enumerate_paths(cfg, use_block, banned, max_len, budget):
        if p is None:
            return UNKNOWN
        any_path = True
        r = _eval_path(f, ssa, p)
        if r == FEASIBLE:
            return FEASIBLE
        if r == UNKNOWN:
            seen_unknown = True
    if not any_path:
        return UNKNOWN
    return UNKNOWN if seen_unknown else INFEASIBLE


# -- error handler ------------------------------------------------------------------------

def _def_sites(f: Function, ssa: SSAFunction):
    sites = {}
    for s in f.statements():
        for n in ssa.def_ver.get(s.addr, {}).values():
            sites[n] = s
    return sites


def _from_call_return(name: SSAName, sites, ssa: SSAFunction, depth: int = 8) -> Optional[int]:
    """Address of the call whose return value flows (by copies) into ``name``."""
    for _ in range(depth):
        s = sites.get(name)
        if s is None:
            return None
        if isinstance(s, Call):
            return s.addr
        if isinstance(s, Assign) and isinstance(s.src, (Reg, Temp)):
            name = ssa.use(s.addr, s.src.name)
            continue
        return None
    return None


def exit_distance(f: Function, start) -> Optional[int]:
    """Blocks on the shortest path from ``start`` to a returning block, both ends included."""
    exits = set(f.exit_blocks)
    dist = {start: 1}
    q = deque([start])
    while q:
        b = q.popleft()
        if b in exits:
            return dist[b]
        for s in f.blocks[b].succs:
            if s not in dist:
                dist[s] = dist[b] + 1
                q.append(s)
    return None


def error_handler_filter(f: Function, ssa: SSAFunction, warning: StackWarning, threshold: int = 3) -> Optional[str]:
    """Reason to suppress ``warning`` when its path passes a check of a call's return
    value whose other side exits within fewer than ``threshold`` blocks."""
    path = warning.witness_path
    sites = _def_sites(f, ssa)
    for a, b in zip(path, path[1:]):
        last = f.blocks[a].last
        if not isinstance(last, CondJump):
            continue
        others = [s for s in f.blocks[a].succs if s != b]
        if not others:
            continue
        call = None
        for e in (last.cond.lhs, last.cond.rhs):
            if isinstance(e, (Reg, Temp)):
                call = call or _from_call_return(ssa.use(last.addr, e.name), sites, ssa)
        if call is None:
            continue
        d = exit_distance(f, others[0])
        if d is not None and d < threshold:
            return f"return value of call at {call:#x} checked at {last.addr:#x}; error side exits in {d} block(s)"
    return None


# -- heap ----------------------------------------------------------------------------------

_NAME = re.compile(r"^[A-Za-z_.$@?][\w.$@?]*$")


class AllocatorSpecError(ValueError):
    pass


@dataclass(frozen=True)
class AllocatorSpec:
    name: str
    size_arg: int
    initializes: bool


DEFAULT_ALLOCATORS = (
    AllocatorSpec("malloc", 1, False),
    AllocatorSpec("calloc", 2, True),
)


def parse_allocator_specs(text: str) -> List[AllocatorSpec]:
    out, names = [], set()
    for n, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].rstrip()
        if not line.strip():
            continue
        parts = line.split("\t")
        if len(parts) != 3:
            raise AllocatorSpecError(f"line {n}: expected name<TAB>size_arg<TAB>init|noinit")
        name, size, init = (p.strip() for p in parts)
        if not _NAME.match(name):
            raise AllocatorSpecError(f"line {n}: invalid allocator name {name!r}")
        if name in names:
            raise AllocatorSpecError(f"line {n}: duplicate allocator {name!r}")
        if not size.isdigit() or int(size) < 1:
            raise AllocatorSpecError(f"line {n}: size argument index must be a positive integer")
        if init not in ("init", "noinit"):
            raise AllocatorSpecError(f"line {n}: expected init or noinit, got {init!r}")
        names.add(name)
        out.append(AllocatorSpec(name, int(size), init == "init"))
    return out


def load_allocator_specs(path) -> List[AllocatorSpec]:
    return parse_allocator_specs(Path(path).read_text())


@dataclass(frozen=True)
class HeapToken:
    token: int
    site: int
    ctx: str
    allocator: str
    initializes: bool


@dataclass
class HeapEnrichment:
    facts: FactBase
    tokens: List[HeapToken]


def enrich_heap(prep, specs: Sequence[AllocatorSpec] = DEFAULT_ALLOCATORS) -> HeapEnrichment:
    """Bind the return register of every allocator call to a fresh heap token."""
    by_name = {s.name: s for s in specs}
    low = min((v for f in prep.program.functions.values() for v in f.spd_at.values()), default=0)
    if low <= HEAP_BASE:
        raise ValueError(f"stack delta {low} collides with the heap token range")
    fb = FactBase()
    tokens = []
    sites = sorted((c for c in prep.extraction.calls if c.callee in by_name), key=lambda c: (c.caller, c.addr))
    for k, cs in enumerate(sites):
        spec = by_name[cs.callee]
        tok = HEAP_BASE - k * HEAP_STRIDE
        tokens.append(HeapToken(tok, cs.addr, cs.caller, spec.name, spec.initializes))
        fb.add("StackPointer", (cs.ret, cs.addr, tok), "plugin:heap")
    return HeapEnrichment(fb, tokens)


# -- plugin objects --------------------------------------------------------------------------

class HeapPlugin:
    name = "heap"

    def __init__(self, specs: Sequence[AllocatorSpec] = DEFAULT_ALLOCATORS):
        self.specs = list(specs)

    def facts(self, kb: KnowledgeBase) -> FactBase:
        return enrich_heap(kb.prep, self.specs).facts

    def safe_tokens(self, kb: KnowledgeBase):
        return {t.token for t in enrich_heap(kb.prep, self.specs).tokens if t.initializes}

    def claimed_externals(self, kb: KnowledgeBase):
        return {s.name for s in self.specs}


class PathFeasibilityPlugin:
    name = "path"

    def __init__(self, budget: int = 10_000, max_len: int = 64):
        self.budget = budget
        self.max_len = max_len

    def filter(self, kb: KnowledgeBase, w: StackWarning) -> Optional[str]:
        st = kb.result.states[w.use_ctx]
        block = w.witness_path[-1] if w.witness_path else None
        if block is None:
            return None
        r = path_feasible(st.func, kb.prep.ssa[w.use_ctx], block, st.zones.get(w.canonical),
                          self.budget, self.max_len)
        return "every unsafe path has contradictory branch conditions" if r == INFEASIBLE else None


class ErrorHandlerPlugin:
    name = "errorhandler"

    def __init__(self, threshold: int = 3):
        self.threshold = threshold

    def filter(self, kb: KnowledgeBase, w: StackWarning) -> Optional[str]:
        st = kb.result.states[w.use_ctx]
        return error_handler_filter(st.func, kb.prep.ssa[w.use_ctx], w, self.threshold)


PLUGIN_NAMES = ("heap", "path", "errorhandler")


def default_plugins(disabled: Sequence[str] = (), specs: Sequence[AllocatorSpec] = DEFAULT_ALLOCATORS,
                    path_budget: int = 10_000) -> list:
    out = []
    if "heap" not in disabled:
        out.append(HeapPlugin(specs))
    if "path" not in disabled:
        out.append(PathFeasibilityPlugin(path_budget))
    if "errorhandler" not in disabled:
        out.append(ErrorHandlerPlugin())
    return out
