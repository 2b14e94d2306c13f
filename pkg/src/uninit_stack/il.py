"""Lifted intermediate language: expressions, statements, CFG and the textual IL format."""

from __future__ import annotations

import re
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Tuple, Union


class ILError(Exception):
    pass


class ILSyntaxError(ILError):
    def __init__(self, msg: str, line: int = 0, col: int = 0):
        super().__init__(f"{line}:{col}: {msg}" if line else msg)
        self.line = line
        self.col = col


@dataclass(frozen=True)
class Arch:
    word: int
    sp: str
    fp: str
    ret: str


ARCHES = {
    4: Arch(4, "esp", "ebp", "eax"),
    8: Arch(8, "rsp", "rbp", "rax"),
}


def arch_for(word_size: int) -> Arch:
    try:
        return ARCHES[word_size]
    except KeyError:
        raise ILError(f"unsupported word size {word_size}") from None


# -- expressions -----------------------------------------------------------

@dataclass(frozen=True)
class Reg:
    name: str

    def __str__(self):
        return self.name


@dataclass(frozen=True)
class Temp:
    id: int

    @property
    def name(self) -> str:
        return f"%{self.id}"

    def __str__(self):
        return self.name


@dataclass(frozen=True)
class Const:
    value: int

    def __str__(self):
        return str(self.value)


@dataclass(frozen=True)
class MemRef:
    base: Union[Reg, Temp]
    disp: int = 0

    def __post_init__(self):
        if not isinstance(self.base, (Reg, Temp)):
            raise ILError(f"memory base must be a register or temp, got {self.base!r}")

    def __str__(self):
        return f"[{self.base}{_disp(self.disp)}]"


Expr = Union[Reg, Temp, Const, MemRef]
Var = Union[Reg, Temp]


def _disp(d: int) -> str:
    if d == 0:
        return ""
    return f"+{d:#x}" if d > 0 else f"-{-d:#x}"


# -- statements ------------------------------------------------------------

COND_OPS = ("eq", "ne", "lt", "le", "gt", "ge")
BIN_OPS = ("add", "sub", "mul", "and", "or", "xor", "shl", "shr")


@dataclass(frozen=True)
class Cond:
    op: str
    lhs: Expr
    rhs: Expr

    def __str__(self):
        return f"{self.op} {self.lhs}, {self.rhs}"


@dataclass(frozen=True)
class Assign:
    addr: int
    dst: Var
    src: Expr


@dataclass(frozen=True)
class Load:
    addr: int
    dst: Var
    base: Var
    disp: int = 0


@dataclass(frozen=True)
class Store:
    addr: int
    base: Var
    disp: int
    src: Expr


@dataclass(frozen=True)
class BinOp:
    addr: int
    op: str
    dst: Var
    lhs: Expr
    rhs: Expr


@dataclass(frozen=True)
class Lea:
    addr: int
    dst: Var
    base: Var
    disp: int = 0


@dataclass(frozen=True)
class Push:
    addr: int
    src: Expr


@dataclass(frozen=True)
class Pop:
    addr: int
    dst: Var


@dataclass(frozen=True)
class Call:
    addr: int
    target: str
    args: Tuple[Expr, ...] = ()


@dataclass(frozen=True)
class Ret:
    addr: int


@dataclass(frozen=True)
class Jump:
    addr: int
    target: str


@dataclass(frozen=True)
class CondJump:
    addr: int
    cond: Cond
    target: str


@dataclass(frozen=True)
class Nop:
    addr: int


Statement = Union[Assign, Load, Store, BinOp, Lea, Push, Pop, Call, Ret, Jump, CondJump, Nop]
TERMINATORS = (Call, Ret, Jump, CondJump)


def _vars_of(e) -> List[str]:
    if isinstance(e, (Reg, Temp)):
        return [e.name]
    if isinstance(e, MemRef):
        return [e.base.name]
    return []


def stmt_uses(s: Statement, arch: Arch) -> List[str]:
    """Register names read by ``s`` (in operand order, may repeat)."""
    if isinstance(s, Assign):
        return _vars_of(s.src)
    if isinstance(s, (Load, Lea)):
        return [s.base.name]
    if isinstance(s, Store):
        return [s.base.name] + _vars_of(s.src)
    if isinstance(s, BinOp):
        return _vars_of(s.lhs) + _vars_of(s.rhs)
    if isinstance(s, Push):
        return [arch.sp] + _vars_of(s.src)
    if isinstance(s, Pop):
        return [arch.sp]
    if isinstance(s, Call):
        out = [arch.sp]
        for a in s.args:
            out += _vars_of(a)
        return out
    if isinstance(s, Ret):
        return [arch.sp]
    if isinstance(s, CondJump):
        return _vars_of(s.cond.lhs) + _vars_of(s.cond.rhs)
    return []


def stmt_defs(s: Statement, arch: Arch) -> List[str]:
    if isinstance(s, (Assign, Load, BinOp, Lea)):
        return [s.dst.name]
    if isinstance(s, Push):
        return [arch.sp]
    if isinstance(s, Pop):
        return [arch.sp, s.dst.name] if s.dst.name != arch.sp else [arch.sp]
    if isinstance(s, Call):
        return [arch.ret]
    return []


# -- CFG containers ----------------------------------------------------------

@dataclass
class BasicBlock:
    id: str
    stmts: List[Statement] = field(default_factory=list)
    succs: List[str] = field(default_factory=list)
    preds: List[str] = field(default_factory=list)

    @property
    def first_addr(self) -> int:
        return self.stmts[0].addr

    @property
    def last(self) -> Statement:
        return self.stmts[-1]


@dataclass
class Function:
    name: str
    entry: str
    blocks: Dict[str, BasicBlock]
    word_size: int = 4
    spd_at: Dict[int, int] = field(default_factory=dict)
    ssa_base: Dict[str, int] = field(default_factory=dict)
    dead: set = field(default_factory=set)
    diagnostics: List[str] = field(default_factory=list)

    @property
    def arch(self) -> Arch:
        return arch_for(self.word_size)

    @property
    def exit_blocks(self) -> List[str]:
        return [b.id for b in self.blocks.values() if isinstance(b.last, Ret)]

    @property
    def entry_addr(self) -> int:
        return self.blocks[self.entry].first_addr

    def statements(self):
        for b in self.blocks.values():
            yield from b.stmts

    def block_of(self) -> Dict[int, str]:
        return {s.addr: b.id for b in self.blocks.values() for s in b.stmts}

    def cfg(self):
        from .cfg import CFG
        return CFG(self.entry, {b.id: list(b.succs) for b in self.blocks.values()})

    def replace_statements(self, fn) -> "Function":
        """Copy of this function with each statement mapped through ``fn``."""
        blocks = {
            bid: BasicBlock(bid, [fn(s) for s in b.stmts], list(b.succs), list(b.preds))
            for bid, b in self.blocks.items()
        }
        return Function(self.name, self.entry, blocks, self.word_size, dict(self.spd_at),
                        dict(self.ssa_base), set(self.dead), list(self.diagnostics))


@dataclass
class Program:
    functions: Dict[str, Function]
    entry_function: Optional[str] = None
    word_size: int = 4

    @property
    def arch(self) -> Arch:
        return arch_for(self.word_size)

    def is_external(self, name: str) -> bool:
        return name not in self.functions

    def externals(self) -> List[str]:
        out = set()
        for f in self.functions.values():
            for s in f.statements():
                if isinstance(s, Call) and s.target not in self.functions:
                    out.add(s.target)
        return sorted(out)

    def statement_count(self) -> int:
        return sum(1 for f in self.functions.values() for _ in f.statements())


# -- CFG construction ----------------------------------------------------------

def build_function(name: str, labelled: List[Tuple[Optional[str], Statement]],
                   word_size: int = 4, ssa_base=None) -> Function:
    """Split a flat labelled statement list into basic blocks and wire the CFG.

    ``labelled`` holds ``(label or None, stmt)``; a label starts a new block and
    terminators end one. Blocks opened implicitly get ``<prev>.<n>`` ids.
    """
    if not labelled:
        raise ILError(f"function {name!r} has no statements")
    blocks: Dict[str, BasicBlock] = {}
    order: List[str] = []
    cur: Optional[BasicBlock] = None
    last_label = name
    counter = 0
    for label, s in labelled:
        if label is not None:
            if label in blocks:
                raise ILError(f"duplicate label {label!r} in {name!r}")
            cur = BasicBlock(label)
            blocks[label] = cur
            order.append(label)
            last_label, counter = label, 0
        elif cur is None or (cur.stmts and isinstance(cur.last, TERMINATORS)):
            counter += 1
            bid = last_label if cur is None else f"{last_label}.{counter}"
            while bid in blocks:
                counter += 1
                bid = f"{last_label}.{counter}"
            cur = BasicBlock(bid)
            blocks[bid] = cur
            order.append(bid)
        if cur.stmts and isinstance(cur.last, TERMINATORS):
            raise ILError(f"statement after terminator in block {cur.id!r}")
        if cur.stmts and s.addr <= cur.stmts[-1].addr:
            raise ILError(f"addresses not increasing in block {cur.id!r} at {s.addr:#x}")
        cur.stmts.append(s)

    for i, bid in enumerate(order):
        b = blocks[bid]
        if not b.stmts:
            raise ILError(f"empty block {bid!r} in {name!r}")
        nxt = order[i + 1] if i + 1 < len(order) else None
        last = b.last
        if isinstance(last, Ret):
            succ = []
        elif isinstance(last, Jump):
            succ = [last.target]
        elif isinstance(last, CondJump):
            succ = [last.target] + ([nxt] if nxt is not None else [])
        else:
            succ = [nxt] if nxt is not None else []
        if not isinstance(last, (Ret, Jump)) and nxt is None:
            raise ILError(f"control falls off the end of {name!r} in block {bid!r}")
        for t in succ:
            if t not in blocks:
                raise ILError(f"jump to unknown label {t!r} in {name!r}")
        seen = []
        for t in succ:
            if t not in seen:
                seen.append(t)
        b.succs = seen
    for b in blocks.values():
        for t in b.succs:
            blocks[t].preds.append(b.id)

    f = Function(name, order[0], blocks, word_size, ssa_base=dict(ssa_base or {}))
    f.dead = unreachable_blocks(f)
    return f


def unreachable_blocks(f: Function) -> set:
    seen = {f.entry}
    stack = [f.entry]
    while stack:
        for t in f.blocks[stack.pop()].succs:
            if t not in seen:
                seen.add(t)
                stack.append(t)
    return set(f.blocks) - seen


def check_unique_addrs(functions) -> None:
    seen = {}
    for f in functions:
        for s in f.statements():
            if s.addr in seen:
                raise ILError(f"duplicate address {s.addr:#x} in {seen[s.addr]!r} and {f.name!r}")
            seen[s.addr] = f.name


# -- textual IL ----------------------------------------------------------------

_NAME = r"[A-Za-z_][A-Za-z0-9_.$]*"
_INT = r"-?(?:0x[0-9A-Fa-f]+|\d+)"
_re_func = re.compile(rf"^func\s+({_NAME})\s*\{{\s*$")
_re_label = re.compile(rf"^({_NAME})\s*:(?!\S)")
_re_addr = re.compile(rf"^@\s*({_INT})\s+")
_re_mem = re.compile(rf"^\[\s*(%\d+|{_NAME})\s*(?:([+-])\s*(0x[0-9A-Fa-f]+|\d+))?\s*\]$")
_re_call = re.compile(rf"^call\s+({_NAME})\s*(?:\((.*)\))?$")
_re_assign = re.compile(rf"^(%\d+|{_NAME})\s*=\s*(.+)$")

KEYWORDS = {"nop", "ret", "jmp", "br", "push", "pop", "store", "call", "load", "lea", "func"} | set(BIN_OPS)


def _int(tok: str) -> int:
    return int(tok, 0) if not tok.startswith("-") else -int(tok[1:], 0)


def _parse_var(tok: str, ctx) -> Var:
    tok = tok.strip()
    if re.fullmatch(r"%\d+", tok):
        return Temp(int(tok[1:]))
    if re.fullmatch(_NAME, tok) and tok not in KEYWORDS:
        return Reg(tok)
    raise ILSyntaxError(f"expected register, got {tok!r}", *ctx)


def _parse_operand(tok: str, ctx) -> Expr:
    tok = tok.strip()
    if re.fullmatch(_INT, tok):
        return Const(_int(tok))
    if tok.startswith("["):
        return _parse_mem(tok, ctx)
    return _parse_var(tok, ctx)


def _parse_mem(tok: str, ctx) -> MemRef:
    m = _re_mem.match(tok.strip())
    if not m:
        raise ILSyntaxError(f"bad memory operand {tok!r}", *ctx)
    base = _parse_var(m.group(1), ctx)
    disp = 0
    if m.group(2):
        disp = int(m.group(3), 0) * (1 if m.group(2) == "+" else -1)
    return MemRef(base, disp)


def _split_top(text: str) -> List[str]:
    """Split on commas outside brackets."""
    parts, depth, cur = [], 0, ""
    for ch in text:
        if ch in "[(":
            depth += 1
        elif ch in "])":
            depth -= 1
        if ch == "," and depth == 0:
            parts.append(cur)
            cur = ""
        else:
            cur += ch
    parts.append(cur)
    return [p.strip() for p in parts]


def parse_statement(text: str, addr: int, ctx=(0, 0)) -> Statement:
    text = text.strip()
    head, _, rest = text.partition(" ")
    rest = rest.strip()
    if text == "nop":
        return Nop(addr)
    if text == "ret":
        return Ret(addr)
    if head == "jmp":
        return Jump(addr, rest)
    if head == "br":
        op, _, args = rest.partition(" ")
        parts = _split_top(args)
        if op not in COND_OPS or len(parts) != 3:
            raise ILSyntaxError(f"bad branch {text!r}", *ctx)
        return CondJump(addr, Cond(op, _parse_operand(parts[0], ctx), _parse_operand(parts[1], ctx)), parts[2])
    if head == "push":
        src = _parse_operand(rest, ctx)
        if isinstance(src, MemRef):
            raise ILSyntaxError("push of a memory operand is not supported", *ctx)
        return Push(addr, src)
    if head == "pop":
        return Pop(addr, _parse_var(rest, ctx))
    if head == "store":
        parts = _split_top(rest)
        if len(parts) != 2:
            raise ILSyntaxError(f"bad store {text!r}", *ctx)
        mem = _parse_mem(parts[0], ctx)
        src = _parse_operand(parts[1], ctx)
        if isinstance(src, MemRef):
            raise ILSyntaxError("memory-to-memory store", *ctx)
        return Store(addr, mem.base, mem.disp, src)
    if head == "call":
        m = _re_call.match(text)
        if not m:
            raise ILSyntaxError(f"bad call {text!r}", *ctx)
        args = ()
        if m.group(2) is not None and m.group(2).strip():
            args = tuple(_parse_operand(a, ctx) for a in _split_top(m.group(2)))
        return Call(addr, m.group(1), args)
    m = _re_assign.match(text)
    if m:
        dst = _parse_var(m.group(1), ctx)
        rhs = m.group(2).strip()
        rhead, _, rrest = rhs.partition(" ")
        if rhead == "load":
            mem = _parse_mem(rrest, ctx)
            return Load(addr, dst, mem.base, mem.disp)
        if rhead == "lea":
            mem = _parse_mem(rrest, ctx)
            return Lea(addr, dst, mem.base, mem.disp)
        if rhead in BIN_OPS:
            parts = _split_top(rrest)
            if len(parts) != 2:
                raise ILSyntaxError(f"bad binary operation {text!r}", *ctx)
            return BinOp(addr, rhead, dst, _parse_operand(parts[0], ctx), _parse_operand(parts[1], ctx))
        src = _parse_operand(rhs, ctx)
        if isinstance(src, MemRef):
            raise ILSyntaxError("use 'load' to read memory", *ctx)
        return Assign(addr, dst, src)
    raise ILSyntaxError(f"unknown statement {text!r}", *ctx)


def parse_il(text: str) -> Program:
    """Parse the textual IL into a :class:`Program` with CFGs built."""
    word_size = 4
    entry = None
    funcs: Dict[str, Function] = {}
    raw: List[Tuple[str, list, dict, int]] = []
    cur = None
    pinned = []

    for lineno, line in enumerate(text.splitlines(), 1):
        code = line.split("#", 1)[0]
        stripped = code.strip()
        if not stripped:
            continue
        col0 = len(code) - len(code.lstrip()) + 1
        if cur is None:
            if stripped.startswith(".word"):
                word_size = _int(stripped.split()[1])
                arch_for(word_size)
                continue
            if stripped.startswith(".entry"):
                entry = stripped.split()[1]
                continue
            m = _re_func.match(stripped)
            if not m:
                raise ILSyntaxError(f"expected 'func <name> {{', got {stripped!r}", lineno, col0)
            cur = (m.group(1), [], {}, lineno)
            continue
        if stripped == "}":
            raw.append(cur)
            cur = None
            continue
        if stripped.startswith(".ssa"):
            parts = stripped.split()
            if len(parts) != 3:
                raise ILSyntaxError("expected '.ssa <reg> <version>'", lineno, col0)
            cur[2][parts[1]] = _int(parts[2])
            continue
        pos = 0
        for chunk in code.split(";"):
            col = pos + len(chunk) - len(chunk.lstrip()) + 1
            pos += len(chunk) + 1
            chunk = chunk.strip()
            label = None
            while True:
                m = _re_label.match(chunk)
                if not m or m.group(1) in KEYWORDS:
                    break
                if label is not None:
                    cur[1].append((label, None, (lineno, col)))
                label = m.group(1)
                chunk = chunk[m.end():].strip()
            if not chunk:
                if label is not None:
                    cur[1].append((label, None, (lineno, col)))
                continue
            addr = None
            m = _re_addr.match(chunk)
            if m:
                addr = _int(m.group(1))
                chunk = chunk[m.end():]
                pinned.append(addr)
            cur[1].append((label, (addr, chunk), (lineno, col)))
    if cur is not None:
        raise ILSyntaxError(f"unterminated function {cur[0]!r}", cur[3], 1)

    pinned_set = set(pinned)
    if len(pinned_set) != len(pinned):
        raise ILError("duplicate pinned address")
    prev = 0x1000 - 1
    for name, items, ssa_base, lineno in raw:
        if name in funcs:
            raise ILSyntaxError(f"duplicate function name {name!r}", lineno, 1)
        labelled = []
        pending_label = None
        for label, body, ctx in items:
            if body is None:
                if pending_label is not None:
                    raise ILSyntaxError(f"empty block {pending_label!r}", *ctx)
                pending_label = label
                continue
            if label is not None and pending_label is not None:
                raise ILSyntaxError(f"empty block {pending_label!r}", *ctx)
            label = label or pending_label
            pending_label = None
            addr, chunk = body
            if addr is None:
                addr = prev + 1
                while addr in pinned_set:
                    addr += 1
            prev = addr
            labelled.append((label, parse_statement(chunk, addr, ctx)))
        if pending_label is not None:
            raise ILSyntaxError(f"empty block {pending_label!r}", lineno, 1)
        try:
            funcs[name] = build_function(name, labelled, word_size, ssa_base)
        except ILSyntaxError:
            raise
        except ILError as e:
            raise ILSyntaxError(str(e), lineno, 1) from None
    check_unique_addrs(funcs.values())
    if entry is None and funcs:
        entry = "main" if "main" in funcs else next(iter(funcs))
    return Program(funcs, entry, word_size)


def format_statement(s: Statement) -> str:
    if isinstance(s, Assign):
        return f"{s.dst} = {s.src}"
    if isinstance(s, Load):
        return f"{s.dst} = load {MemRef(s.base, s.disp)}"
    if isinstance(s, Lea):
        return f"{s.dst} = lea {MemRef(s.base, s.disp)}"
    if isinstance(s, Store):
        return f"store {MemRef(s.base, s.disp)}, {s.src}"
    if isinstance(s, BinOp):
        return f"{s.dst} = {s.op} {s.lhs}, {s.rhs}"
    if isinstance(s, Push):
        return f"push {s.src}"
    if isinstance(s, Pop):
        return f"pop {s.dst}"
    if isinstance(s, Call):
        if s.args:
            return f"call {s.target}({', '.join(map(str, s.args))})"
        return f"call {s.target}"
    if isinstance(s, Ret):
        return "ret"
    if isinstance(s, Jump):
        return f"jmp {s.target}"
    if isinstance(s, CondJump):
        return f"br {s.cond}, {s.target}"
    return "nop"


def pretty_print(p: Program) -> str:
    out = [f".word {p.word_size}"]
    if p.entry_function:
        out.append(f".entry {p.entry_function}")
    for f in p.functions.values():
        out.append("")
        out.append(f"func {f.name} {{")
        for reg, v in sorted(f.ssa_base.items()):
            out.append(f"  .ssa {reg} {v}")
        for b in f.blocks.values():
            out.append(f"{b.id}:")
            for s in b.stmts:
                out.append(f"  @{s.addr:#x} {format_statement(s)}")
        out.append("}")
    return "\n".join(out) + "\n"
