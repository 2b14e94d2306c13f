"""Dominators and register SSA (memory is deliberately left un-renamed).

Renaming records per-address version tables instead of rewriting statements;
:meth:`SSAFunction.name` turns a (address, register) pair into the SSA
name in effect there. Call sites get a snapshot of the live definitions
(the "collector" of the renaming pass).
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Dict, List, Optional, Set

from .cfg import CFG, sort_key
from .il import Call, Function, format_statement, stmt_defs, stmt_uses


@dataclass
class DomInfo:
    entry: object
    idom: Dict[object, object]
    dominees: Dict[object, Set[object]]
    frontier: Dict[object, Set[object]]
    unreachable: Set[object] = field(default_factory=set)

    def dominates(self, a, b) -> bool:
        return b in self.dominees.get(a, ())

    def children(self, b) -> List[object]:
        return sorted((c for c, p in self.idom.items() if p == b), key=sort_key)


def _as_cfg(g) -> CFG:
    return g if isinstance(g, CFG) else g.cfg()


def compute_dominators(g) -> DomInfo:
    """Cooper/Harvey/Kennedy iterative dominators plus dominance frontiers."""
    cfg = _as_cfg(g)
    order: List[object] = []
    seen = set()

    def dfs(b):
        # iterative post-order
        stack = [(b, iter(cfg.succs[b]))]
        seen.add(b)
        while stack:
            node, it = stack[-1]
            nxt = next((s for s in it if s not in seen), None)
            if nxt is None:
                order.append(node)
                stack.pop()
            else:
                seen.add(nxt)
                stack.append((nxt, iter(cfg.succs[nxt])))

    dfs(cfg.entry)
    rpo = list(reversed(order))
    index = {b: i for i, b in enumerate(rpo)}
    idom: Dict[object, object] = {cfg.entry: cfg.entry}

    def intersect(a, b):
        while a != b:
            while index[a] > index[b]:
                a = idom[a]
            while index[b] > index[a]:
                b = idom[b]
        return a

    changed = True
    while changed:
        changed = False
        for b in rpo[1:]:
            preds = [p for p in cfg.preds[b] if p in idom]
            new = preds[0]
            for p in preds[1:]:
                new = intersect(p, new)
            if idom.get(b) != new:
                idom[b] = new
                changed = True

    reach = set(rpo)
    frontier: Dict[object, Set[object]] = {b: set() for b in reach}
    for b in reach:
        preds = [p for p in cfg.preds[b] if p in reach]
        if len(preds) < 2:
            continue
        for p in preds:
            runner = p
            while runner != idom[b]:
                frontier[runner].add(b)
                runner = idom[runner]

    del idom[cfg.entry]
    dominees: Dict[object, Set[object]] = {b: {b} for b in reach}
    for b in reach:
        runner = b
        while runner in idom:
            runner = idom[runner]
            dominees[runner].add(b)
    return DomInfo(cfg.entry, idom, dominees, frontier, set(cfg.succs) - reach)


# -- SSA -----------------------------------------------------------------------

@dataclass(frozen=True, order=True)
class SSAName:
    base: str
    version: int

    def __str__(self):
        return self.base if self.version == 0 else f"{self.base}_{self.version}"


@dataclass
class PhiNode:
    dst: SSAName
    sources: Dict[str, SSAName]
    addr: int


@dataclass
class CallSiteLiveDefs:
    call_addr: int
    live: Dict[str, SSAName]


@dataclass
class SSAFunction:
    func: Function
    dom: DomInfo
    use_ver: Dict[int, Dict[str, SSAName]]
    def_ver: Dict[int, Dict[str, SSAName]]
    phis: Dict[str, List[PhiNode]]
    live_in: Dict[str, SSAName]
    live_defs: List[CallSiteLiveDefs]

    @property
    def name(self) -> str:
        return self.func.name

    def use(self, addr: int, reg: str) -> SSAName:
        return self.use_ver[addr][reg]

    def defn(self, addr: int, reg: str) -> SSAName:
        return self.def_ver[addr][reg]

    def definitions(self):
        """Every (SSAName, site) pair; site is an address, a phi, or 'entry'."""
        for n in self.live_in.values():
            yield n, "entry"
        for addr, d in self.def_ver.items():
            for n in d.values():
                yield n, addr
        for phis in self.phis.values():
            for p in phis:
                yield p.dst, p

    def dump(self) -> str:
        lines = [f"ssa {self.name}"]
        for b in self.func.blocks.values():
            if b.id in self.dom.unreachable:
                continue
            lines.append(f"{b.id}:")
            for p in self.phis.get(b.id, []):
                srcs = ", ".join(f"{k}: {v}" for k, v in sorted(p.sources.items(), key=lambda kv: sort_key(kv[0])))
                lines.append(f"  {p.dst} = phi({srcs})")
            for s in b.stmts:
                ann = ""
                uses = self.use_ver.get(s.addr, {})
                defs = self.def_ver.get(s.addr, {})
                if uses or defs:
                    ann = "    ; " + " ".join(f"{k}={v}" for k, v in sorted(uses.items()))
                    if defs:
                        ann += " -> " + " ".join(f"{v}" for _, v in sorted(defs.items()))
                lines.append(f"  {s.addr:#x} {format_statement(s)}{ann}")
        return "\n".join(lines)


def to_ssa(f: Function, dom: Optional[DomInfo] = None) -> SSAFunction:
    """Cytron-style SSA over registers with phis at iterated dominance frontiers."""
    dom = dom or compute_dominators(f)
    arch = f.arch
    reach = [bid for bid in f.blocks if bid not in dom.unreachable]

    regs: Set[str] = set()
    def_blocks: Dict[str, Set[str]] = {}
    for bid in reach:
        for s in f.blocks[bid].stmts:
            regs.update(stmt_uses(s, arch))
            for r in stmt_defs(s, arch):
                regs.add(r)
                def_blocks.setdefault(r, set()).add(bid)

    phi_regs: Dict[str, List[str]] = {bid: [] for bid in reach}
    for r in sorted(regs):
        work = list(def_blocks.get(r, ()))
        placed: Set[str] = set()
        while work:
            b = work.pop()
            for d in dom.frontier.get(b, ()):
                if d not in placed:
                    placed.add(d)
                    phi_regs[d].append(r)
                    if d not in def_blocks.get(r, ()):
                        work.append(d)

    counter = {r: f.ssa_base.get(r, 0) for r in regs}
    live_in = {r: SSAName(r, counter[r]) for r in sorted(regs)}
    stacks: Dict[str, List[SSAName]] = {r: [live_in[r]] for r in regs}
    use_ver: Dict[int, Dict[str, SSAName]] = {}
    def_ver: Dict[int, Dict[str, SSAName]] = {}
    phis: Dict[str, List[PhiNode]] = {
        bid: [PhiNode(SSAName(r, -1), {}, f.blocks[bid].first_addr) for r in sorted(phi_regs[bid])]
        for bid in reach
    }
    live_defs: List[CallSiteLiveDefs] = []
    pushed: Dict[str, List[str]] = {}

    def fresh(r: str) -> SSAName:
        counter[r] += 1
        n = SSAName(r, counter[r])
        stacks[r].append(n)
        return n

    # explicit stack instead of recursion: deep dominator trees are common in
    # generated programs
    todo = [("enter", f.entry)]
    while todo:
        action, bid = todo.pop()
        if action == "exit":
            for r in pushed.pop(bid):
                stacks[r].pop()
            continue
        mine: List[str] = []
        for p in phis[bid]:
            r = p.dst.base
            p.dst = fresh(r)
            mine.append(r)
        for s in f.blocks[bid].stmts:
            uses = {r: stacks[r][-1] for r in stmt_uses(s, arch)}
            if isinstance(s, Call):
                live_defs.append(CallSiteLiveDefs(s.addr, {r: stacks[r][-1] for r in sorted(regs)}))
            defs = {}
            for r in stmt_defs(s, arch):
                defs[r] = fresh(r)
                mine.append(r)
            if uses:
                use_ver[s.addr] = uses
            if defs:
                def_ver[s.addr] = defs
        for succ in f.blocks[bid].succs:
            for p in phis.get(succ, []):
                p.sources[bid] = stacks[p.dst.base][-1]
        pushed[bid] = mine
        todo.append(("exit", bid))
        for c in reversed(dom.children(bid)):
            todo.append(("enter", c))

    return SSAFunction(f, dom, use_ver, def_ver, {b: v for b, v in phis.items() if v}, live_in, live_defs)


def collect_live_defs(ssa: SSAFunction) -> List[CallSiteLiveDefs]:
    return list(ssa.live_defs)


def check_single_definition(ssa: SSAFunction) -> None:
    seen = set()
    for n, _ in ssa.definitions():
        if n in seen:
            raise AssertionError(f"{n} defined twice")
        seen.add(n)
