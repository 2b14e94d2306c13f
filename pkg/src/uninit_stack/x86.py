"""Lifter for a flat Intel-syntax listing using a small x86 mnemonic subset.

Listing format::

    foo:                          ; function marker
      0x8049000 mov eax, [esp+4]  ; optional literal address
    .L1:                          ; local label
      jz .L1

Jump targets may be local labels or literal addresses. ``.word 8`` switches
to the 64-bit register names; ``.ssa <reg> <n>`` inside a function records
that elided code already defined ``<reg>`` up to version ``n``.
"""

from __future__ import annotations

import re
from typing import List, Optional, Tuple

from .il import (
    Assign, BinOp, Call, Cond, CondJump, Const, ILError, ILSyntaxError, Jump, Lea,
    Load, MemRef, Nop, Pop, Program, Push, Reg, Ret, Store, arch_for, build_function,
    check_unique_addrs,
)

SUPPORTED = {"mov", "lea", "push", "pop", "add", "sub", "cmp", "test", "jmp", "call", "ret", "nop",
             "jz", "je", "jnz", "jne", "jl", "jle", "jg", "jge"}
JCC = {"jz": "eq", "je": "eq", "jnz": "ne", "jne": "ne", "jl": "lt", "jle": "le", "jg": "gt", "jge": "ge"}
SIZE_WORDS = {"byte", "word", "dword", "qword", "ptr"}

_re_addr = re.compile(r"^(0x[0-9A-Fa-f]+)\s*:?\s+")
_re_fmarker = re.compile(r"^([A-Za-z_][A-Za-z0-9_]*)\s*:$")
_re_local = re.compile(r"^(\.[A-Za-z0-9_]+)\s*:$")
_re_mem = re.compile(r"^\[\s*([a-z][a-z0-9]*)\s*(?:([+-])\s*(0x[0-9A-Fa-f]+|\d+))?\s*\]$")
_re_imm = re.compile(r"^-?(?:0x[0-9A-Fa-f]+|\d+)$")


def _operand(tok: str, ctx):
    words = [w for w in tok.split() if w.lower() not in SIZE_WORDS]
    tok = " ".join(words).strip()
    if _re_imm.match(tok):
        return Const(int(tok, 0) if not tok.startswith("-") else -int(tok[1:], 0))
    m = _re_mem.match(tok)
    if m:
        disp = 0
        if m.group(2):
            disp = int(m.group(3), 0) * (1 if m.group(2) == "+" else -1)
        return MemRef(Reg(m.group(1)), disp)
    if re.fullmatch(r"[a-z][a-z0-9]*", tok):
        return Reg(tok)
    raise ILSyntaxError(f"unparseable operand {tok!r}", *ctx)


def _lower(mn: str, ops: list, addr: int, pending, ctx):
    """Lower one instruction. Returns (statement, new pending comparison, jump target)."""
    def need(n):
        if len(ops) != n:
            raise ILSyntaxError(f"{mn} expects {n} operand(s)", *ctx)

    if mn == "mov":
        need(2)
        d, s = ops
        if isinstance(d, MemRef):
            if isinstance(s, MemRef):
                raise ILSyntaxError("memory-to-memory mov", *ctx)
            return Store(addr, d.base, d.disp, s), None, None
        if not isinstance(d, Reg):
            raise ILSyntaxError("mov destination must be register or memory", *ctx)
        if isinstance(s, MemRef):
            return Load(addr, d, s.base, s.disp), None, None
        return Assign(addr, d, s), None, None
    if mn == "lea":
        need(2)
        if not isinstance(ops[0], Reg) or not isinstance(ops[1], MemRef):
            raise ILSyntaxError("lea expects register, memory", *ctx)
        return Lea(addr, ops[0], ops[1].base, ops[1].disp), None, None
    if mn in ("add", "sub"):
        need(2)
        if not isinstance(ops[0], Reg) or isinstance(ops[1], MemRef):
            raise ILSyntaxError(f"{mn} expects register, register/immediate", *ctx)
        return BinOp(addr, mn, ops[0], ops[0], ops[1]), None, None
    if mn == "push":
        need(1)
        if isinstance(ops[0], MemRef):
            raise ILSyntaxError("push of memory operand unsupported", *ctx)
        return Push(addr, ops[0]), None, None
    if mn == "pop":
        need(1)
        if not isinstance(ops[0], Reg):
            raise ILSyntaxError("pop expects a register", *ctx)
        return Pop(addr, ops[0]), None, None
    if mn == "cmp":
        need(2)
        return Nop(addr), (ops[0], ops[1]), None
    if mn == "test":
        need(2)
        if ops[0] != ops[1]:
            raise ILSyntaxError("test is only supported with identical operands", *ctx)
        return Nop(addr), (ops[0], Const(0)), None
    if mn == "nop":
        return Nop(addr), pending, None
    if mn == "ret":
        return Ret(addr), None, None
    raise ILSyntaxError(f"unsupported mnemonic {mn!r}", *ctx)


def lift_x86_mini(text: str) -> Program:
    """Lift a mini-x86 listing into a :class:`Program` preserving literal addresses."""
    word_size = 4
    funcs: List[Tuple[str, list, dict]] = []
    cur = None
    prev = 0x1000 - 1
    for lineno, line in enumerate(text.splitlines(), 1):
        code = line.split(";", 1)[0].strip()
        if not code or code == "...":
            continue
        ctx = (lineno, 1)
        if code.startswith(".word"):
            word_size = int(code.split()[1], 0)
            arch_for(word_size)
            continue
        if code.startswith(".ssa"):
            if cur is None:
                raise ILSyntaxError(".ssa outside a function", *ctx)
            _, reg, n = code.split()
            cur[2][reg] = int(n, 0)
            continue
        m = _re_fmarker.match(code)
        if m:
            cur = (m.group(1), [], {})
            funcs.append(cur)
            continue
        if cur is None:
            raise ILSyntaxError("instruction before any function marker", *ctx)
        m = _re_local.match(code)
        if m:
            cur[1].append(("label", m.group(1).lstrip("."), ctx))
            continue
        addr = None
        m = _re_addr.match(code + " ")
        if m:
            addr = int(m.group(1), 16)
            code = code[m.end():].strip() if m.end() <= len(code) else ""
        addr = addr if addr is not None else prev + 1
        prev = addr
        mn, _, rest = code.partition(" ")
        mn = mn.lower()
        if mn not in SUPPORTED:
            raise ILSyntaxError(f"unsupported mnemonic {mn!r}", *ctx)
        cur[1].append(("insn", (addr, mn, rest.strip()), ctx))

    program_funcs = {}
    for name, items, ssa_base in funcs:
        if name in program_funcs:
            raise ILSyntaxError(f"duplicate function name {name!r}")
        labelled: List[Tuple[Optional[str], object]] = []
        # addresses used as jump targets get synthetic labels
        targets = set()
        for kind, val, ctx in items:
            if kind == "insn" and (val[1] == "jmp" or val[1] in JCC) and val[2].startswith("0x"):
                targets.add(int(val[2], 16))
        pending = None
        label = None
        callee_cleanup = False
        for kind, val, ctx in items:
            if kind == "label":
                label = val
                continue
            addr, mn, rest = val
            if addr in targets:
                if label is not None:
                    raise ILSyntaxError(f"address {addr:#x} is both labelled and an address jump target", *ctx)
                label = f"loc_{addr:x}"
            if mn == "jmp" or mn in JCC:
                tgt = rest
                if tgt.startswith("0x"):
                    tgt = f"loc_{int(tgt, 16):x}"
                else:
                    tgt = tgt.lstrip(".")
                if mn == "jmp":
                    stmt = Jump(addr, tgt)
                else:
                    if pending is None:
                        raise ILSyntaxError(f"{mn} without a preceding cmp/test", *ctx)
                    stmt = CondJump(addr, Cond(JCC[mn], pending[0], pending[1]), tgt)
                pending = None
            elif mn == "call":
                stmt = Call(addr, rest)
                pending = None
            else:
                ops = [] if not rest else [_operand(o, ctx) for o in _split_ops(rest)]
                if mn == "ret" and ops:
                    stmt, pending = Ret(addr), None
                    callee_cleanup = True
                else:
                    stmt, pending, _ = _lower(mn, ops, addr, pending, ctx)
            labelled.append((label, stmt))
            label = None
        try:
            f = build_function(name, labelled, word_size, ssa_base)
        except ILError as e:
            raise ILSyntaxError(str(e)) from None
        if callee_cleanup:
            f.diagnostics.append("callee-cleanup 'ret imm' treated as plain ret")
        program_funcs[name] = f
    check_unique_addrs(program_funcs.values())
    entry = "main" if "main" in program_funcs else (next(iter(program_funcs)) if program_funcs else None)
    return Program(program_funcs, entry, word_size)


def _split_ops(rest: str) -> List[str]:
    parts, depth, cur = [], 0, ""
    for ch in rest:
        if ch == "[":
            depth += 1
        elif ch == "]":
            depth -= 1
        if ch == "," and depth == 0:
            parts.append(cur.strip())
            cur = ""
        else:
            cur += ch
    if cur.strip():
        parts.append(cur.strip())
    return parts
