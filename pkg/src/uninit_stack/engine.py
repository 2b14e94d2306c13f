"""Bottom-up Datalog evaluation.

Rules are positive Horn clauses over :class:`~uninit_stack.facts.FactBase`
relations. Heads may carry ``X+Y`` / ``X-Y`` arithmetic over body-bound
integers; results whose magnitude exceeds ``bound`` are dropped and counted
in :attr:`EvalStats.capped` instead of being derived.
"""

from __future__ import annotations

import re
import threading
import time
from dataclasses import dataclass, field
from typing import Dict, Iterable, Iterator, List, Optional, Sequence, Set, Tuple, Union

from .facts import FactBase

DEFAULT_BOUND = 2 ** 20


class DatalogError(Exception):
    pass


class UnsafeRuleError(DatalogError):
    pass


class ArityError(DatalogError):
    pass


@dataclass(frozen=True)
class Var:
    name: str

    def __str__(self):
        return self.name


@dataclass(frozen=True)
class Arith:
    op: str                  # '+' or '-'
    left: "Term"
    right: "Term"

    def __str__(self):
        return f"{self.left}{self.op}{self.right}"


Term = Union[Var, Arith, int, str]


@dataclass(frozen=True)
class Literal:
    pred: str
    args: Tuple[Term, ...]

    def __str__(self):
        return f"{self.pred}({', '.join(_fmt(a) for a in self.args)})"


def _fmt(t) -> str:
    if isinstance(t, str):
        return '"' + t.replace('"', '\\"') + '"'
    return str(t)


@dataclass(frozen=True)
class Rule:
    head: Literal
    body: Tuple[Literal, ...]
    name: str = ""

    def __str__(self):
        return f"{self.head} :- {', '.join(map(str, self.body))}."


def _vars(t) -> Iterator[str]:
    if isinstance(t, Var):
        yield t.name
    elif isinstance(t, Arith):
        yield from _vars(t.left)
        yield from _vars(t.right)


class RuleSet:
    def __init__(self, rules: Iterable[Rule]):
        self.rules: List[Rule] = list(rules)
        self.arity: Dict[str, int] = {}
        for r in self.rules:
            self._check(r)

    def _check(self, r: Rule) -> None:
        bound: Set[str] = set()
        for lit in r.body:
            for a in lit.args:
                if isinstance(a, Arith):
                    raise UnsafeRuleError(f"arithmetic in rule body: {r}")
                if isinstance(a, Var):
                    bound.add(a.name)
            self._arity(lit)
        for a in r.head.args:
            for v in _vars(a):
                if v.startswith("_"):
                    raise UnsafeRuleError(f"wildcard in rule head: {r}")
                if v not in bound:
                    raise UnsafeRuleError(f"head variable {v} not bound in body: {r}")
        self._arity(r.head)

    def _arity(self, lit: Literal) -> None:
        n = self.arity.setdefault(lit.pred, len(lit.args))
        if n != len(lit.args):
            raise ArityError(f"{lit.pred} used with arity {len(lit.args)} and {n}")

    @property
    def idb(self) -> Set[str]:
        return {r.head.pred for r in self.rules}

    def __iter__(self):
        return iter(self.rules)

    def __len__(self):
        return len(self.rules)

    def __str__(self):
        return "\n".join(map(str, self.rules))


# -- parsing ---------------------------------------------------------------------

_TOKEN = re.compile(r"""
    (?P<ws>\s+|%[^\n]*)
  | (?P<neck>:-|<-)
  | (?P<str>"(?:[^"\\]|\\.)*")
  | (?P<int>-?(?:0x[0-9A-Fa-f]+|\d+))
  | (?P<name>[A-Za-z_][A-Za-z0-9_]*)
  | (?P<punct>[(),.+\-])
""", re.VERBOSE)


def _tokenize(text: str):
    pos = 0
    out = []
    while pos < len(text):
        m = _TOKEN.match(text, pos)
        if not m:
            raise DatalogError(f"unexpected character {text[pos]!r} at offset {pos}")
        pos = m.end()
        kind = m.lastgroup
        if kind == "ws":
            continue
        out.append((kind, m.group()))
    return out


def parse_rules(text: str) -> RuleSet:
    """Parse ``head :- lit, lit.`` clauses; ``%`` starts a comment."""
    toks = _tokenize(text)
    i = 0
    fresh = [0]

    def peek():
        return toks[i] if i < len(toks) else (None, None)

    def take(kind=None, val=None):
        nonlocal i
        k, v = peek()
        if k is None or (kind and k != kind) or (val and v != val):
            raise DatalogError(f"expected {val or kind}, got {v!r}")
        i += 1
        return v

    def simple_term():
        k, v = peek()
        if k == "int":
            take()
            return int(v, 0) if not v.startswith("-") else -int(v[1:], 0)
        if k == "str":
            take()
            return bytes(v[1:-1], "utf-8").decode("unicode_escape")
        if k == "name":
            take()
            if v == "_":
                fresh[0] += 1
                return Var(f"_{fresh[0]}")
            if v[0].isupper() or v[0] == "_":
                return Var(v)
            return v
        raise DatalogError(f"expected a term, got {v!r}")

    def term():
        t = simple_term()
        while peek() in (("punct", "+"), ("punct", "-")) or (peek()[0] == "int" and peek()[1].startswith("-")):
            k, v = peek()
            if k == "int":
                # "X-4" tokenizes as name, int(-4)
                take()
                t = Arith("-", t, int(v[1:], 0))
                continue
            take()
            t = Arith(v, t, simple_term())
        return t

    def literal():
        pred = take("name")
        take("punct", "(")
        args = []
        if peek() != ("punct", ")"):
            args.append(term())
            while peek() == ("punct", ","):
                take()
                args.append(term())
        take("punct", ")")
        return Literal(pred, tuple(args))

    rules = []
    while i < len(toks):
        head = literal()
        body = []
        if peek()[0] == "neck":
            take()
            body.append(literal())
            while peek() == ("punct", ","):
                take()
                body.append(literal())
        take("punct", ".")
        rules.append(Rule(head, tuple(body)))
    return RuleSet(rules)


# -- evaluation ------------------------------------------------------------------

@dataclass
class EvalStats:
    iterations: int = 0
    derived: Dict[str, int] = field(default_factory=dict)
    totals: List[int] = field(default_factory=list)      # total tuple count after each iteration
    capped: int = 0
    seconds: float = 0.0


class _Rel:
    __slots__ = ("tuples", "idx")

    def __init__(self):
        self.tuples: Set[tuple] = set()
        self.idx: Dict[Tuple[int, ...], Dict[tuple, List[tuple]]] = {}

    def add(self, t: tuple) -> bool:
        if t in self.tuples:
            return False
        self.tuples.add(t)
        for pos, ix in self.idx.items():
            ix.setdefault(tuple(t[p] for p in pos), []).append(t)
        return True

    def lookup(self, pos: Tuple[int, ...], key: tuple):
        if not pos:
            return self.tuples
        ix = self.idx.get(pos)
        if ix is None:
            ix = {}
            for t in self.tuples:
                ix.setdefault(tuple(t[p] for p in pos), []).append(t)
            self.idx[pos] = ix
        return ix.get(key, ())


def _eval_head(args, env, bound) -> Optional[tuple]:
    out = []
    for a in args:
        v = _value(a, env)
        if isinstance(a, Arith) and abs(v) > bound:
            return None
        out.append(v)
    return tuple(out)


def _value(t, env):
    if isinstance(t, Var):
        return env[t.name]
    if isinstance(t, Arith):
        l, r = _value(t.left, env), _value(t.right, env)
        if not isinstance(l, int) or not isinstance(r, int):
            raise DatalogError(f"arithmetic on non-integer terms {l!r}, {r!r}")
        return l + r if t.op == "+" else l - r
    return t


class Engine:
    """Semi-naive evaluator that keeps its fixpoint so facts can be added incrementally."""

    def __init__(self, rules: RuleSet, bound: int = DEFAULT_BOUND):
        self.rules = rules
        self.bound = bound
        self.full: Dict[str, _Rel] = {}
        self.stats = EvalStats()
        self._lock = threading.Lock()
        self._plans = [self._plan(r) for r in rules]

    @staticmethod
    def _plan(rule: Rule):
        """Per body literal: which positions are constants/bound vars at join time."""
        plan = []
        seen: Set[str] = set()
        for lit in rule.body:
            keypos, keysrc, binds, checks = [], [], [], []
            local: Dict[str, int] = {}
            for p, a in enumerate(lit.args):
                if isinstance(a, Var):
                    if a.name in seen:
                        keypos.append(p)
                        keysrc.append(("var", a.name))
                    elif a.name in local:
                        checks.append((p, local[a.name]))
                    else:
                        local[a.name] = p
                        binds.append((a.name, p))
                else:
                    keypos.append(p)
                    keysrc.append(("const", a))
            seen.update(local)
            plan.append((lit.pred, tuple(keypos), tuple(keysrc), tuple(binds), tuple(checks)))
        return plan

    def _rel(self, store: Dict[str, _Rel], name: str) -> _Rel:
        r = store.get(name)
        if r is None:
            r = store[name] = _Rel()
        return r

    def _check_arity(self, rel: str, t: tuple) -> None:
        n = self.rules.arity.get(rel)
        if n is not None and n != len(t):
            raise ArityError(f"{rel} has arity {n} in rules but fact {t!r} has {len(t)}")

    def _join(self, plan, sources, env, k, out, head, rule_idx):
        if k == len(plan):
            t = _eval_head(head.args, env, self.bound)
            if t is None:
                self.stats.capped += 1
            else:
                out.append(t)
            return
        pred, keypos, keysrc, binds, checks = plan[k]
        key = tuple(env[v] if kind == "var" else v for kind, v in keysrc)
        for rel in sources[k]:
            if rel is None:
                continue
            for t in rel.lookup(keypos, key):
                if checks and any(t[a] != t[b] for a, b in checks):
                    continue
                for name, p in binds:
                    env[name] = t[p]
                self._join(plan, sources, env, k + 1, out, head, rule_idx)

    def _run(self, delta: Dict[str, _Rel]) -> FactBase:
        """Semi-naive loop from ``delta`` (already merged into nothing); returns all new tuples."""
        new_all = FactBase()
        started = time.perf_counter()
        while any(r.tuples for r in delta.values()):
            self.stats.iterations += 1
            produced: Dict[str, Set[tuple]] = {}
            for ri, rule in enumerate(self.rules):
                plan = self._plans[ri]
                for i, lit in enumerate(rule.body):
                    d = delta.get(lit.pred)
                    if d is None or not d.tuples:
                        continue
                    sources = []
                    for j, lj in enumerate(rule.body):
                        old = self.full.get(lj.pred)
                        if j < i:
                            sources.append((old,))
                        elif j == i:
                            sources.append((d,))
                        else:
                            sources.append((old, delta.get(lj.pred)))
                    out: List[tuple] = []
                    self._join(plan, sources, {}, 0, out, rule.head, ri)
                    if out:
                        produced.setdefault(rule.head.pred, set()).update(out)
            # merge delta into full, then build the next delta
            for name, d in delta.items():
                f = self._rel(self.full, name)
                for t in d.tuples:
                    if f.add(t):
                        new_all.add(name, t, "derived")
            nxt: Dict[str, _Rel] = {}
            for name, ts in produced.items():
                f = self.full.get(name)
                for t in ts:
                    if f is None or t not in f.tuples:
                        self._rel(nxt, name).add(t)
            for name, r in nxt.items():
                self.stats.derived[name] = self.stats.derived.get(name, 0) + len(r.tuples)
            delta = nxt
            self.stats.totals.append(sum(len(r.tuples) for r in self.full.values()))
        self.stats.seconds += time.perf_counter() - started
        return new_all

    def _seed(self, facts: FactBase) -> Dict[str, _Rel]:
        delta: Dict[str, _Rel] = {}
        for name, ts in facts.relations.items():
            f = self.full.get(name)
            for t in ts:
                self._check_arity(name, t)
                if f is None or t not in f.tuples:
                    self._rel(delta, name).add(t)
        return delta

    def evaluate(self, edb: FactBase) -> FactBase:
        with self._lock:
            self.full = {}
            self.stats = EvalStats()
            self._run(self._seed(edb))
            return self.snapshot(edb)

    def add(self, facts: FactBase) -> FactBase:
        """Add facts to an existing fixpoint; returns every tuple new to the base."""
        with self._lock:
            return self._run(self._seed(facts))

    def snapshot(self, provenance_from: Optional[FactBase] = None) -> FactBase:
        fb = FactBase()
        for name, r in self.full.items():
            fb.relations[name] = set(r.tuples)
        if provenance_from is not None:
            for name, ts in fb.relations.items():
                for t in ts:
                    fb.provenance[(name, t)] = provenance_from.provenance.get((name, t), "derived")
        return fb


def evaluate(rules: RuleSet, edb: FactBase, bound: int = DEFAULT_BOUND) -> FactBase:
    """Least fixpoint of ``rules`` over ``edb`` (EDB tuples included in the result)."""
    return Engine(rules, bound).evaluate(edb)


def incremental_add(engine: Engine, facts: FactBase) -> FactBase:
    return engine.add(facts)


# -- naive oracle ------------------------------------------------------------------

def _match(lit: Literal, t: tuple, env: dict) -> Optional[dict]:
    env = dict(env)
    for a, v in zip(lit.args, t):
        if isinstance(a, Var):
            if a.name in env:
                if env[a.name] != v:
                    return None
            else:
                env[a.name] = v
        elif a != v:
            return None
    return env


def evaluate_naive(rules: RuleSet, edb: FactBase, bound: int = DEFAULT_BOUND) -> FactBase:
    """Reference fixpoint: re-fire every rule over the whole database until stable."""
    db: Dict[str, Set[tuple]] = {k: set(v) for k, v in edb.relations.items()}
    for name, ts in db.items():
        n = rules.arity.get(name)
        for t in ts:
            if n is not None and n != len(t):
                raise ArityError(f"{name} has arity {n} in rules but fact {t!r} has {len(t)}")
    while True:
        new: Dict[str, Set[tuple]] = {}
        for rule in rules:
            envs = [{}]
            for lit in rule.body:
                # group the relation on the positions this literal already fixes
                fixed = {a.name for a in lit.args if isinstance(a, Var)} & set(envs[0])
                keyed = [i for i, a in enumerate(lit.args)
                         if not isinstance(a, Var) or a.name in fixed]
                groups: Dict[tuple, List[tuple]] = {}
                for t in db.get(lit.pred, ()):
                    if len(t) == len(lit.args):
                        groups.setdefault(tuple(t[i] for i in keyed), []).append(t)
                envs = [e2 for e in envs
                        for t in groups.get(tuple(_value(lit.args[i], e) for i in keyed), ())
                        for e2 in [_match(lit, t, e)] if e2 is not None]
                if not envs:
                    break
            for e in envs:
                t = _eval_head(rule.head.args, e, bound)
                if t is not None and t not in db.get(rule.head.pred, ()):
                    new.setdefault(rule.head.pred, set()).add(t)
        if not new:
            break
        for k, v in new.items():
            db.setdefault(k, set()).update(v)
    return FactBase(db, "derived")
