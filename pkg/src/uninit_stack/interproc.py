"""Interprocedural safe-zone propagation, warnings, origins and grouping.

Every stack access is mapped to a variable in one of three spaces:

* frame: a location in the function's own frame, keyed ``(offset, 0)`` with the
  field folded into the offset so that ``[esp-0x18]`` and ``[p+8]`` with
  ``p = esp-0x20`` name the same slot;
* arg: a location reached through a pointer parameter, keyed ``(spd, fld)``
  in the callee's parameter-relative view (``(4, 4)`` for ``[p+4]`` with ``p``
  the first parameter);
* heap: a location inside an allocation token, keyed ``(token, fld)``.

Arg-space uses are resolved by walking call edges back to the frame that owns
the storage.
"""

from __future__ import annotations

import hashlib
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Dict, Iterable, List, Optional, Sequence, Set, Tuple

from .cfg import CFG, sort_key
from .engine import DEFAULT_BOUND
from .facts import CallSite, FactBase
from .il import Call, Function, Load, Pop, Push, Store
from .pipeline import Prepared, solve
from .pointsto import HEAP_BASE
from .safezones import (
    AccessSet, AccessVerdict, SafeZone, StackVar, classify_accesses, compute_safe_zones,
)
from .ssa import DomInfo, compute_dominators


@dataclass
class AnalysisConfig:
    max_rounds: int = 100
    external_initializes: bool = True
    workers: int = 1
    bound: int = DEFAULT_BOUND


class AnalysisError(Exception):
    pass


def var_space(spd: int, word: int) -> str:
    if spd <= HEAP_BASE:
        return "heap"
    if spd >= word:
        return "arg"
    if spd < 0:
        return "frame"
    return "retaddr"


def canonical(spd: int, fld: int, word: int) -> Optional[StackVar]:
    """Variable key for an access at pointee ``spd`` plus field ``fld``."""
    space = var_space(spd, word)
    if space == "frame":
        return StackVar(spd + fld, 0) if spd + fld < 0 else None
    if space == "retaddr":
        return None
    return StackVar(spd, fld)


@dataclass(frozen=True)
class UseInfo:
    func: str
    addr: int
    block: str
    pos: int
    view: StackVar        # as accessed: (pointee spd, field) or (slot spd, 0)
    var: StackVar         # canonical key
    kind: str             # "direct" | "indirect"


@dataclass
class CallEdge:
    caller: str
    call_addr: int
    callee: str
    block: str
    pos: int
    fallthrough_block: Optional[str]
    external: bool
    arg_map: List[Tuple[int, str, int]]           # (arg index, caller atom, callee spd)
    targets: Dict[int, Tuple[int, ...]]           # arg index -> caller spds the actual may point to


@dataclass
class FunctionState:
    func: Function
    cfg: CFG
    dom: DomInfo
    accesses: AccessSet
    uses: Dict[Tuple[int, int, str, int], UseInfo]
    zones: Dict[StackVar, SafeZone] = field(default_factory=dict)
    verdicts: List[AccessVerdict] = field(default_factory=list)

    @property
    def name(self) -> str:
        return self.func.name

    def recompute(self) -> None:
        self.zones = compute_safe_zones(self.cfg, self.accesses, self.dom)
        self.verdicts = classify_accesses(self.cfg, self.accesses, self.zones)

    def unsafe_at(self, var: StackVar, block: str, pos: int) -> Optional[List[str]]:
        """Witness path if ``var`` may be undefined just before statement ``pos`` of ``block``."""
        if block in self.dom.unreachable:
            return None
        first = self.accesses.first_def.get((var, block))
        if first is not None and first < pos:
            return None
        zone = self.zones.get(var)
        return self.cfg.shortest_path(block, zone.edges if zone else set())

    def exits_covered(self, var: StackVar) -> bool:
        zone = self.zones.get(var)
        exits = [b for b in self.func.exit_blocks if b not in self.dom.unreachable]
        return bool(zone) and bool(exits) and all(b in zone.blocks for b in exits)


@dataclass
class StackWarning:
    var: StackVar
    use_addr: int
    use_ctx: str
    origin: Tuple[str, int]
    group_hash: str
    witness_path: Tuple[str, ...]
    canonical: StackVar
    kind: str
    origins: Tuple[Tuple[str, int], ...] = ()
    status: str = "raw"
    annotations: List[str] = field(default_factory=list)

    @property
    def filtered(self) -> bool:
        return self.status != "raw"

    def key(self):
        return (self.use_ctx, self.use_addr, self.var, self.canonical)


Warning = StackWarning


def group_hash(origin: Tuple[str, int]) -> str:
    fn, spd = origin
    return hashlib.sha1(f"{fn}:{spd}".encode()).hexdigest()[:16]


@dataclass
class AnalysisResult:
    states: Dict[str, FunctionState]
    call_edges: List[CallEdge]
    warnings: List[StackWarning]
    rounds: List[Dict[str, int]]
    converged: bool
    diagnostics: List[str] = field(default_factory=list)

    def zones(self, func: str) -> Dict[StackVar, SafeZone]:
        return self.states[func].zones


# -- access sets --------------------------------------------------------------------

def _indirect_index(idb: FactBase):
    defs: Dict[Tuple[str, int], Set[Tuple[int, int]]] = {}
    uses: Dict[Tuple[str, int], Set[Tuple[int, int]]] = {}
    for _, spd, disp, addr, ctx in idb.get("IndirectDef"):
        defs.setdefault((ctx, addr), set()).add((spd, disp))
    for _, spd, disp, addr, ctx in idb.get("IndirectUse"):
        uses.setdefault((ctx, addr), set()).add((spd, disp))
    return defs, uses


def build_accesses(f: Function, idb: FactBase, index=None):
    """AccessSet plus per-use details for one normalized function."""
    arch = f.arch
    word = arch.word
    sp = arch.sp
    ind_defs, ind_uses = index or _indirect_index(idb)
    acc = AccessSet()
    uses: Dict[Tuple[int, int, str, int], UseInfo] = {}

    def use(view: StackVar, var: StackVar, block, addr, pos, kind):
        acc.add_use(var, block, addr, pos)
        uses[(var.spd, var.fld, block, addr)] = UseInfo(f.name, addr, block, pos, view, var, kind)

    for b in f.blocks.values():
        if b.id in f.dead:
            continue
        for pos, s in enumerate(b.stmts):
            spd = f.spd_at.get(s.addr)
            if spd is None:
                continue
            if isinstance(s, Store) and s.base.name == sp:
                if spd + s.disp < 0:
                    acc.add_def(StackVar(spd + s.disp, 0), b.id, pos)
            elif isinstance(s, Push):
                acc.add_def(StackVar(spd - word, 0), b.id, pos)
            elif isinstance(s, Load) and s.base.name == sp:
                if spd + s.disp < 0:
                    v = StackVar(spd + s.disp, 0)
                    use(v, v, b.id, s.addr, pos, "direct")
            elif isinstance(s, Pop):
                if spd < 0:
                    v = StackVar(spd, 0)
                    use(v, v, b.id, s.addr, pos, "direct")
            elif isinstance(s, Store):
                tgts = ind_defs.get((f.name, s.addr), set())
                # only a unique target is a must-definition
                if len(tgts) == 1:
                    (p, d), = tgts
                    v = canonical(p, d, word)
                    if v is not None:
                        acc.add_def(v, b.id, pos)
            elif isinstance(s, Load):
                for p, d in sorted(ind_uses.get((f.name, s.addr), ())):
                    v = canonical(p, d, word)
                    if v is not None:
                        use(StackVar(p, d), v, b.id, s.addr, pos, "indirect")
    return acc, uses


def build_call_edges(prep: Prepared, idb: FactBase) -> List[CallEdge]:
    pts: Dict[Tuple[str, str], Set[int]] = {}
    for v, spd, _, ctx in idb.get("VPtsTo"):
        pts.setdefault((ctx, v), set()).add(spd)
    edges = []
    for cs in sorted(prep.extraction.calls, key=lambda c: (c.caller, c.addr)):
        f = prep.program.functions[cs.caller]
        blk = f.blocks[cs.block]
        pos = next(i for i, s in enumerate(blk.stmts) if s.addr == cs.addr)
        fall = blk.succs[0] if blk.succs else None
        word = f.arch.word
        arg_map = [(i, atom, word * i) for i, atom in cs.actuals]
        tg = {i: tuple(sorted(pts.get((cs.caller, atom), ()))) for i, atom in cs.actuals}
        edges.append(CallEdge(cs.caller, cs.addr, cs.callee, cs.block, pos, fall, cs.external, arg_map, tg))
    return edges


# -- propagation ---------------------------------------------------------------------

def propagate_callee_safety(states: Dict[str, FunctionState], call_edges: Sequence[CallEdge],
                            external_initializes: bool = True,
                            skip: Callable[[str], bool] = lambda name: False) -> Set[str]:
    """Mark call fall-through edges safe for caller variables the callee defines on
    every path to its exits. Returns the callers whose access sets changed."""
    changed: Set[str] = set()
    for e in call_edges:
        if e.fallthrough_block is None or e.caller not in states:
            continue
        caller = states[e.caller]
        word = caller.func.arch.word
        if e.external:
            if not external_initializes or skip(e.callee):
                continue
            for i, _, _ in e.arg_map:
                tg = e.targets.get(i, ())
                if len(tg) != 1:
                    continue
                s = tg[0]
                for v in caller.accesses.variables():
                    if _covers_external(s, v, word):
                        if caller.accesses.add_safe_edge(v, e.block, e.fallthrough_block):
                            changed.add(e.caller)
            continue
        callee = states.get(e.callee)
        if callee is None:
            continue
        for i, _, callee_spd in e.arg_map:
            tg = e.targets.get(i, ())
            if len(tg) != 1:
                continue
            s = tg[0]
            for v in callee.accesses.variables():
                if v.spd != callee_spd or not callee.exits_covered(v):
                    continue
                cv = canonical(s, v.fld, word)
                if cv is None:
                    continue
                if caller.accesses.add_safe_edge(cv, e.block, e.fallthrough_block):
                    changed.add(e.caller)
    return changed


def _covers_external(s: int, v: StackVar, word: int) -> bool:
    space = var_space(s, word)
    if space == "frame":
        return v.fld == 0 and s <= v.spd < 0
    if space in ("arg", "heap"):
        return v.spd == s
    return False


def _map(workers: int, fn, items):
    items = list(items)
    if workers <= 1 or len(items) < 2:
        return [fn(x) for x in items]
    with ThreadPoolExecutor(max_workers=workers) as ex:
        return list(ex.map(fn, items))


def analyze_to_fixpoint(prep: Prepared, idb: FactBase, config: Optional[AnalysisConfig] = None,
                        safe_tokens: Iterable[int] = (), skip_external: Callable[[str], bool] = lambda n: False
                        ) -> AnalysisResult:
    """Alternate zone computation and callee-safety propagation until zones stop growing."""
    config = config or AnalysisConfig()
    index = _indirect_index(idb)
    names = sorted(prep.program.functions)

    def init(name):
        f = prep.program.functions[name]
        cfg = f.cfg()
        acc, uses = build_accesses(f, idb, index)
        st = FunctionState(f, cfg, compute_dominators(cfg), acc, uses)
        st.recompute()
        return st

    states = dict(zip(names, _map(config.workers, init, names)))
    edges = build_call_edges(prep, idb)
    rounds = [_round_stats(states)]
    converged = False
    for _ in range(config.max_rounds):
        changed = propagate_callee_safety(states, edges, config.external_initializes, skip_external)
        if not changed:
            converged = True
            break
        _map(config.workers, lambda n: states[n].recompute(), sorted(changed))
        rounds.append(_round_stats(states))
    diags = [] if converged else [f"no fixpoint after {config.max_rounds} rounds"]
    warnings = _make_warnings(states, edges, set(safe_tokens))
    return AnalysisResult(states, edges, warnings, rounds, converged, diags)


def _round_stats(states) -> Dict[str, int]:
    return {
        "zone_blocks": sum(len(z.blocks) for st in states.values() for z in st.zones.values()),
        "safe_edges": sum(len(st.accesses.safe_edges) for st in states.values()),
        "unsafe_uses": sum(1 for st in states.values() for v in st.verdicts if v.status == "unsafe"),
    }


# -- warnings ------------------------------------------------------------------------

def _arg_origins(states, edges, fname: str, var: StackVar, safe_tokens, seen) -> Set[Tuple[str, int]]:
    if (fname, var) in seen:
        return set()
    seen = seen | {(fname, var)}
    word = states[fname].func.arch.word
    if var.spd % word:
        return set()
    idx = var.spd // word
    out: Set[Tuple[str, int]] = set()
    for e in edges:
        if e.callee != fname or e.external or e.caller not in states:
            continue
        caller = states[e.caller]
        for s in e.targets.get(idx, ()):
            cv = canonical(s, var.fld, word)
            if cv is None or caller.unsafe_at(cv, e.block, e.pos) is None:
                continue
            space = var_space(cv.spd, word)
            if space == "frame":
                out.add((e.caller, cv.spd))
            elif space == "heap":
                if cv.spd not in safe_tokens:
                    out.add((e.caller, cv.spd))
            else:
                out |= _arg_origins(states, edges, e.caller, cv, safe_tokens, seen)
    return out


def _make_warnings(states, edges, safe_tokens) -> List[StackWarning]:
    out = []
    for name in sorted(states):
        st = states[name]
        word = st.func.arch.word
        for v in st.verdicts:
            if v.status != "unsafe" or v.dead_code:
                continue
            info = st.uses[v.access]
            space = var_space(info.var.spd, word)
            if space == "heap" and info.var.spd in safe_tokens:
                continue
            if space == "arg":
                origins = sorted(_arg_origins(states, edges, name, info.var, safe_tokens, frozenset()))
                if not origins:
                    continue
            else:
                origins = [(name, info.var.spd)]
            origin = origins[0]
            out.append(StackWarning(info.view, info.addr, name, origin, group_hash(origin),
                                    tuple(v.witness_path or ()), info.var, info.kind, tuple(origins)))
    out.sort(key=lambda w: (w.use_ctx, w.use_addr, w.var, w.canonical))
    return out


def track_origin(w: StackWarning) -> Tuple[str, int]:
    return w.origin


@dataclass
class WarningGroup:
    group_hash: str
    origin: Tuple[str, int]
    members: List[StackWarning]

    @property
    def spd(self) -> int:
        return self.origin[1]

    @property
    def fields(self) -> List[int]:
        return sorted({m.var.fld for m in self.members})


def group_warnings(warnings: Iterable[StackWarning], include_filtered: bool = False) -> List[WarningGroup]:
    groups: Dict[str, WarningGroup] = {}
    for w in warnings:
        if w.filtered and not include_filtered:
            continue
        g = groups.setdefault(w.group_hash, WarningGroup(w.group_hash, w.origin, []))
        g.members.append(w)
    for g in groups.values():
        g.members.sort(key=lambda w: w.key())
    return sorted(groups.values(), key=lambda g: (g.origin, g.group_hash))


# -- knowledge base and monitor ----------------------------------------------------------

class KnowledgeBase:
    """EDB, points-to IDB, zones and warnings, changed only through this object."""

    def __init__(self, prep: Prepared, config: Optional[AnalysisConfig] = None, edb: Optional[FactBase] = None):
        self.prep = prep
        self.config = config or AnalysisConfig()
        self.engine, self.idb = solve(prep, self.config.bound, edb)
        self.safe_tokens: Set[int] = set()
        self.skip_external: Set[str] = set()
        self.result: Optional[AnalysisResult] = None
        self.plugin_errors: List[str] = []
        self.events: List[str] = []

    @property
    def capped(self) -> int:
        return self.engine.stats.capped

    def add_facts(self, delta: FactBase) -> int:
        new = self.engine.add(delta)
        if len(new):
            self.idb = self.engine.snapshot()
            self.events.append(f"facts +{len(new)}")
        return len(new)

    def analyze(self) -> AnalysisResult:
        self.result = analyze_to_fixpoint(self.prep, self.idb, self.config, self.safe_tokens,
                                          lambda n: n in self.skip_external)
        self.events.append(f"analysis {len(self.result.warnings)} warnings")
        return self.result

    @property
    def warnings(self) -> List[StackWarning]:
        return self.result.warnings if self.result else []


def monitor_loop(kb: KnowledgeBase, plugins: Sequence = ()) -> KnowledgeBase:
    """Run plugins until neither facts nor warning filters change the base.

    Fact plugins expose ``facts(kb) -> FactBase`` and may expose
    ``safe_tokens(kb)`` and ``claimed_externals(kb)``; filter plugins expose
    ``filter(kb, warning) -> reason or None``. A plugin that raises is dropped.
    """
    active = list(plugins)
    kb.analyze()
    workers = kb.config.workers

    def guarded(call):
        def run(p):
            try:
                return call(p)
            except Exception as exc:       # isolate the plugin, keep the base intact
                return exc
        return run

    for _ in range(kb.config.max_rounds):
        fact_plugins = [p for p in active if hasattr(p, "facts")]
        outs = _map(workers, guarded(lambda p: p.facts(kb)), fact_plugins)
        changed = False
        for p, out in zip(fact_plugins, outs):
            if isinstance(out, Exception):
                kb.plugin_errors.append(f"{p.name}: {out}")
                active.remove(p)
                continue
            if hasattr(p, "safe_tokens"):
                toks = set(p.safe_tokens(kb)) - kb.safe_tokens
                if toks:
                    kb.safe_tokens |= toks
                    changed = True
            if hasattr(p, "claimed_externals"):
                names = set(p.claimed_externals(kb)) - kb.skip_external
                if names:
                    kb.skip_external |= names
                    changed = True
            if out is not None and kb.add_facts(out):
                changed = True
        if not changed:
            break
        kb.analyze()

    filters = [p for p in active if hasattr(p, "filter")]
    for p in filters:
        pending = [w for w in kb.warnings if not w.filtered]
        outs = _map(workers, guarded(lambda w: p.filter(kb, w)), pending)
        errs = [o for o in outs if isinstance(o, Exception)]
        if errs:
            kb.plugin_errors.append(f"{p.name}: {errs[0]}")
            continue
        for w, reason in zip(pending, outs):
            if reason:
                w.status = f"filtered:{p.name}"
                w.annotations.append(reason)
    return kb
