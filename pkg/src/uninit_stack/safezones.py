"""Per-variable safe zones and access classification.

A zone starts from the blocks that define the variable and every block they
dominate, then grows with blocks whose incoming edges are all safe. Growth is
computed as a greatest fixpoint so that a loop entered only through defining
blocks is covered even when no single definition dominates it.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Dict, Iterable, List, NamedTuple, Optional, Set, Tuple

from .cfg import CFG, Block, Edge, sort_key
from .ssa import DomInfo, compute_dominators


class StackVar(NamedTuple):
    spd: int
    fld: int

    def __str__(self):
        return f"({self.spd},{self.fld})"


@dataclass
class AccessSet:
    """Definitions and uses of stack variables inside one function.

    ``pos`` is the statement index within the block; it orders a use against
    a definition in the same block. ``safe_edges`` are extra edges known to
    define a variable (call fall-through edges after an initializing callee).
    """
    defs: Set[Tuple[int, int, Block]] = field(default_factory=set)
    uses: Set[Tuple[int, int, Block, int]] = field(default_factory=set)
    first_def: Dict[Tuple[StackVar, Block], int] = field(default_factory=dict)
    use_pos: Dict[Tuple[int, int, Block, int], int] = field(default_factory=dict)
    safe_edges: Set[Tuple[StackVar, Block, Block]] = field(default_factory=set)

    def add_def(self, var, block, pos: int = 0) -> None:
        var = StackVar(*var)
        self.defs.add((var.spd, var.fld, block))
        k = (var, block)
        if k not in self.first_def or pos < self.first_def[k]:
            self.first_def[k] = pos

    def add_use(self, var, block, addr: int, pos: Optional[int] = None) -> None:
        var = StackVar(*var)
        key = (var.spd, var.fld, block, addr)
        self.uses.add(key)
        self.use_pos[key] = addr if pos is None else pos

    def add_safe_edge(self, var, a, b) -> bool:
        e = (StackVar(*var), a, b)
        if e in self.safe_edges:
            return False
        self.safe_edges.add(e)
        return True

    def variables(self) -> List[StackVar]:
        vs = {StackVar(s, f) for s, f, _ in self.defs}
        vs |= {StackVar(s, f) for s, f, _, _ in self.uses}
        vs |= {v for v, _, _ in self.safe_edges}
        return sorted(vs)

    def def_blocks(self, var: StackVar) -> Set[Block]:
        return {b for s, f, b in self.defs if (s, f) == var}

    def copy(self) -> "AccessSet":
        return AccessSet(set(self.defs), set(self.uses), dict(self.first_def),
                         dict(self.use_pos), set(self.safe_edges))


@dataclass
class SafeZone:
    var: StackVar
    blocks: Set[Block]
    edges: Set[Edge]

    def dump(self) -> str:
        bs = ", ".join(str(b) for b in sorted(self.blocks, key=sort_key))
        es = ", ".join(f"{a}->{b}" for a, b in sorted(self.edges, key=lambda e: (sort_key(e[0]), sort_key(e[1]))))
        return f"var{self.var}: blocks {{{bs}}} edges {{{es}}}"


@dataclass(frozen=True)
class AccessVerdict:
    access: Tuple[int, int, Block, int]
    status: str                               # "safe" | "unsafe"
    witness_path: Optional[Tuple[Block, ...]] = None
    dead_code: bool = False

    @property
    def var(self) -> StackVar:
        return StackVar(self.access[0], self.access[1])


def compute_safe_zones(cfg: CFG, accesses: AccessSet, dom: Optional[DomInfo] = None) -> Dict[StackVar, SafeZone]:
    dom = dom or compute_dominators(cfg)
    reach = cfg.reachable()
    zones: Dict[StackVar, SafeZone] = {}
    for var in accesses.variables():
        defs = accesses.def_blocks(var) & reach
        extra = {(a, b) for v, a, b in accesses.safe_edges if v == var and a in reach}
        blocks: Set[Block] = set(defs)
        for d in defs:
            blocks |= dom.dominees.get(d, set())

        # greatest fixpoint: keep a block while all its reachable incoming edges
        # come from kept blocks or are externally safe
        cand = {b for b in reach if b != cfg.entry and any(p in reach for p in cfg.preds[b])} | blocks
        changed = True
        while changed:
            changed = False
            for b in sorted(cand - blocks, key=sort_key):
                for p in cfg.preds[b]:
                    if p in reach and p not in cand and (p, b) not in extra:
                        cand.discard(b)
                        changed = True
                        break
        blocks = cand
        edges = {(a, b) for a in blocks for b in cfg.succs[a]} | extra
        zones[var] = SafeZone(var, blocks, edges)
    return zones


def _defined_before(accesses: AccessSet, use) -> bool:
    spd, fld, block, _ = use
    first = accesses.first_def.get((StackVar(spd, fld), block))
    return first is not None and first < accesses.use_pos.get(use, use[3])


def classify_accesses(cfg: CFG, accesses: AccessSet, zones: Dict[StackVar, SafeZone]) -> List[AccessVerdict]:
    reach = cfg.reachable()
    out = []
    for use in sorted(accesses.uses, key=lambda u: (u[0], u[1], sort_key(u[2]), u[3])):
        spd, fld, block, _ = use
        var = StackVar(spd, fld)
        if block not in reach:
            out.append(AccessVerdict(use, "unsafe", (), dead_code=True))
            continue
        if _defined_before(accesses, use):
            out.append(AccessVerdict(use, "safe"))
            continue
        zone = zones.get(var)
        banned = zone.edges if zone else set()
        path = cfg.shortest_path(block, banned)
        if path is None:
            out.append(AccessVerdict(use, "safe"))
        else:
            out.append(AccessVerdict(use, "unsafe", tuple(path)))
    return out


def reaching_defs_oracle(cfg: CFG, accesses: AccessSet) -> Dict[Tuple[int, int, Block, int], str]:
    """All-paths (must) reaching definitions per variable, iterated to a greatest fixpoint."""
    reach = cfg.reachable()
    result = {}
    for var in accesses.variables():
        gen = accesses.def_blocks(var)
        extra = {(a, b) for v, a, b in accesses.safe_edges if v == var}
        out_ = {b: True for b in reach}
        in_ = {b: True for b in reach}
        changed = True
        while changed:
            changed = False
            for b in cfg.nodes:
                if b not in reach:
                    continue
                if b == cfg.entry:
                    i = False
                else:
                    i = all(out_[p] or (p, b) in extra for p in cfg.preds[b] if p in reach)
                o = i or b in gen
                if i != in_[b] or o != out_[b]:
                    in_[b], out_[b] = i, o
                    changed = True
        for use in accesses.uses:
            if StackVar(use[0], use[1]) != var:
                continue
            b = use[2]
            if b not in reach:
                result[use] = "unsafe"
            elif _defined_before(accesses, use) or in_[b]:
                result[use] = "safe"
            else:
                result[use] = "unsafe"
    return result


def witness_valid(cfg: CFG, verdict: AccessVerdict, zone: Optional[SafeZone]) -> bool:
    """An unsafe witness starts at entry, ends at the use block, follows CFG edges
    and never takes a safe edge of the variable."""
    p = verdict.witness_path
    if not p or p[0] != cfg.entry or p[-1] != verdict.access[2]:
        return False
    banned = zone.edges if zone else set()
    for a, b in zip(p, p[1:]):
        if b not in cfg.succs[a] or (a, b) in banned:
            return False
    return True


def dump_zones(zones: Dict[StackVar, SafeZone]) -> str:
    return "\n".join(zones[v].dump() for v in sorted(zones))


def seven_block_cfg() -> CFG:
    """Seven-block CFG used throughout the documentation and tests."""
    return CFG.from_edges(1, [(1, 2), (2, 3), (2, 4), (3, 6), (4, 5), (5, 7), (6, 7)])
