"""Stack points-to analysis as a Datalog program over the extracted EDB.

The rule text below is the whole analysis; :func:`run_pointsto` only feeds it
to the engine. Relation shapes are listed in :data:`uninit_stack.facts.SCHEMAS`.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Dict, List, Optional, Set, Tuple

from .engine import DEFAULT_BOUND, Engine, RuleSet, parse_rules
from .facts import FactBase

POINTSTO_RULES = r"""
% stack pointer seeds
VPtsTo(V, SPD, Addr, Ctx) :- StackPointer(V, Addr, SPD), Instr(Addr, Ctx).

% copies
VPtsTo(V1, SPD, Addr, Ctx) :- Assign(V1, V2, Addr), Instr(Addr, Ctx), VPtsTo(V2, SPD, _, Ctx).

% loads through a stored pointer; the pointer must be live at the load
VPtsTo(V1, SPD2, Addr, Ctx) :- Load(V1, V2, Disp, Addr, Ctx), VPtsTo(V2, SPD, Addr2, Ctx),
    CanReach(Addr, Addr2, Ctx), PointerPtsTo(SPD, Disp, SPD2, Ctx).

% a pointer stored into a stack location
PointerPtsTo(SPD, Disp, SPD2, Ctx) :- Store(V1, Disp, V2, Addr, Ctx), VPtsTo(V1, SPD, _, Ctx),
    VPtsTo(V2, SPD2, _, Ctx).

% derived pointers: pointer +/- constant, both operand orders for add
VPtsTo(Res, SPD+Value, Addr, Ctx) :- BinOp("add", Res, V1, V2, Addr, Ctx), VPtsTo(V1, SPD, _, Ctx),
    Constant(V2, Value, Addr).
VPtsTo(Res, SPD+Value, Addr, Ctx) :- BinOp("add", Res, V2, V1, Addr, Ctx), VPtsTo(V1, SPD, _, Ctx),
    Constant(V2, Value, Addr).
VPtsTo(Res, SPD-Value, Addr, Ctx) :- BinOp("sub", Res, V1, V2, Addr, Ctx), VPtsTo(V1, SPD, _, Ctx),
    Constant(V2, Value, Addr).

% pointer parameters get a parameter-relative delta in the callee
VPtsTo(V2, SPD2, CalleeAddr, Callee) :- Param(V1, Arg, Addr, Caller, V2, CalleeAddr, Callee),
    TranslateSPD(Arg, Callee, SPD2), VPtsTo(V1, _, _, Caller).

% phi merge
VPtsTo(V1, SPD, Addr, Ctx) :- Phi(V1, PhiReg, Addr, Ctx), VPtsTo(PhiReg, SPD, _, Ctx).

% indirect stack accesses
IndirectDef(V1, SPD, Disp, Addr, Ctx) :- Store(V1, Disp, V2, Addr, Ctx), VPtsTo(V1, SPD, _, Ctx).
IndirectUse(V2, SPD, Disp, Addr, Ctx) :- Load(V1, V2, Disp, Addr, Ctx), VPtsTo(V2, SPD, _, Ctx).

% slot contents keyed by absolute delta, so that atoms naming the same
% location under different stack-pointer versions (or through an alias) agree
SlotHolds(S, X, Ctx) :- StackSlot(Slot, S, Ctx), VPtsTo(Slot, X, _, Ctx).
StoreAt(Addr, SPD+Disp, Ctx) :- Store(V1, Disp, V2, Addr, Ctx), VPtsTo(V1, SPD, _, Ctx).
SlotHolds(S, X, Ctx) :- StoreAt(Addr, S, Ctx), Store(V1, Disp, V2, Addr, Ctx), VPtsTo(V2, X, _, Ctx).
VPtsTo(V1, X, Addr, Ctx) :- Assign(V1, Slot, Addr), StackSlot(Slot, S, Ctx), SlotHolds(S, X, Ctx),
    Instr(Addr, Ctx).
LoadAt(Addr, SPD+Disp, Ctx) :- Load(V1, V2, Disp, Addr, Ctx), VPtsTo(V2, SPD, _, Ctx).
VPtsTo(V1, X, Addr, Ctx) :- LoadAt(Addr, S, Ctx), Load(V1, V2, Disp, Addr, Ctx), SlotHolds(S, X, Ctx).
"""

DERIVED = ("VPtsTo", "PointerPtsTo", "IndirectDef", "IndirectUse", "SlotHolds", "StoreAt", "LoadAt")

# heap tokens live far below any real frame offset (see plugins.enrich_heap)
HEAP_BASE = -(2 ** 19)
HEAP_STRIDE = 0x1000


def pointsto_rules() -> RuleSet:
    return parse_rules(POINTSTO_RULES)


@dataclass(frozen=True, order=True)
class VPtsToFact:
    v: str
    spd: int
    addr: int
    ctx: str


@dataclass(frozen=True, order=True)
class PointerPtsToFact:
    spd: int
    disp: int
    spd2: int
    ctx: str


@dataclass(frozen=True, order=True)
class IndirectAccess:
    kind: str        # "def" or "use"
    v: str
    spd: int
    disp: int
    addr: int
    ctx: str

    @property
    def var(self) -> Tuple[int, int]:
        return (self.spd, self.disp)


def make_engine(bound: int = DEFAULT_BOUND) -> Engine:
    return Engine(pointsto_rules(), bound)


def run_pointsto(edb: FactBase, bound: int = DEFAULT_BOUND, engine: Optional[Engine] = None) -> FactBase:
    """Fixpoint of the points-to rules over ``edb`` (EDB included)."""
    engine = engine or make_engine(bound)
    return engine.evaluate(edb)


def vptsto(fb: FactBase, ctx: Optional[str] = None) -> List[VPtsToFact]:
    return sorted(VPtsToFact(*t) for t in fb.get("VPtsTo") if ctx is None or t[3] == ctx)


def pointer_ptsto(fb: FactBase, ctx: Optional[str] = None) -> List[PointerPtsToFact]:
    return sorted(PointerPtsToFact(*t) for t in fb.get("PointerPtsTo") if ctx is None or t[3] == ctx)


def query_indirect(fb: FactBase, ctx: str) -> List[IndirectAccess]:
    out = [IndirectAccess("def", *t) for t in fb.get("IndirectDef") if t[4] == ctx]
    out += [IndirectAccess("use", *t) for t in fb.get("IndirectUse") if t[4] == ctx]
    return sorted(out, key=lambda a: (a.addr, a.kind, a.spd, a.disp, a.v))


def targets(fb: FactBase, v: str, ctx: str) -> Set[int]:
    """Every spd that ``v`` may point to in ``ctx``."""
    return {t[1] for t in fb.get("VPtsTo") if t[0] == v and t[3] == ctx}


def points_to_map(fb: FactBase) -> Dict[Tuple[str, str], Set[int]]:
    """(ctx, v) -> spd set, the flow-insensitive projection of VPtsTo."""
    out: Dict[Tuple[str, str], Set[int]] = {}
    for v, spd, _, ctx in fb.get("VPtsTo"):
        out.setdefault((ctx, v), set()).add(spd)
    return out
