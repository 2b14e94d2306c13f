"""Bare control-flow graph used by the dominance and safe-zone passes."""

from __future__ import annotations

import re
from collections import deque
from dataclasses import dataclass, field
from typing import Dict, Hashable, Iterable, List, Optional, Set, Tuple

Block = Hashable
Edge = Tuple[Block, Block]


@dataclass
class CFG:
    entry: Block
    succs: Dict[Block, List[Block]]
    preds: Dict[Block, List[Block]] = field(default_factory=dict)

    def __post_init__(self):
        for b, ss in list(self.succs.items()):
            for s in ss:
                self.succs.setdefault(s, [])
        self.succs.setdefault(self.entry, [])
        preds: Dict[Block, List[Block]] = {b: [] for b in self.succs}
        for b in self.succs:
            for s in self.succs[b]:
                if b not in preds[s]:
                    preds[s].append(b)
        self.preds = preds

    @classmethod
    def from_edges(cls, entry, edges: Iterable[Edge], nodes: Iterable[Block] = ()) -> "CFG":
        succs: Dict[Block, List[Block]] = {n: [] for n in nodes}
        succs.setdefault(entry, [])
        for a, b in edges:
            succs.setdefault(a, [])
            succs.setdefault(b, [])
            if b not in succs[a]:
                succs[a].append(b)
        return cls(entry, succs)

    @property
    def nodes(self) -> List[Block]:
        return sorted(self.succs, key=sort_key)

    def edges(self) -> List[Edge]:
        return [(a, b) for a in self.nodes for b in self.succs[a]]

    def reachable(self, start: Optional[Block] = None, banned: Set[Edge] = frozenset()) -> Set[Block]:
        start = self.entry if start is None else start
        seen = {start}
        work = [start]
        while work:
            a = work.pop()
            for b in self.succs[a]:
                if (a, b) not in banned and b not in seen:
                    seen.add(b)
                    work.append(b)
        return seen

    def shortest_path(self, target: Block, banned: Set[Edge] = frozenset()) -> Optional[List[Block]]:
        """Shortest entry->target path avoiding ``banned`` edges; ties broken by the
        lexicographically smallest block sequence."""
        dist = _bfs(self.entry, lambda a: self.succs[a], banned, forward=True)
        if target not in dist:
            return None
        back = _bfs(target, lambda b: self.preds[b], banned, forward=False)
        path = [self.entry]
        cur = self.entry
        while cur != target:
            d = dist[cur]
            cands = [b for b in self.succs[cur]
                     if (cur, b) not in banned and dist.get(b) == d + 1
                     and back.get(b) == back[cur] - 1]
            cur = min(cands, key=sort_key)
            path.append(cur)
        return path


def _bfs(start, nbrs, banned, forward: bool) -> Dict[Block, int]:
    dist = {start: 0}
    q = deque([start])
    while q:
        a = q.popleft()
        for b in nbrs(a):
            edge = (a, b) if forward else (b, a)
            if edge in banned or b in dist:
                continue
            dist[b] = dist[a] + 1
            q.append(b)
    return dist


def sort_key(b):
    """Order blocks naturally: ints numerically, labels by embedded numbers."""
    if isinstance(b, int):
        return (0, b, "")
    parts = re.split(r"(\d+)", str(b))
    return (1, 0, tuple((int(p), "") if p.isdigit() else (0, p) for p in parts))
