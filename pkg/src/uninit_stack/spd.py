"""Stack pointer delta (spd) tracking and frame-pointer rebasing."""

from __future__ import annotations

from collections import deque
from dataclasses import replace
from typing import Dict, Optional, Tuple

from .il import (
    Assign, BinOp, Call, Const, Function, ILError, Lea, Load, Pop, Push, Reg, Ret, Store,
    stmt_defs,
)


class SpdError(ILError):
    pass


State = Tuple[int, Optional[int]]   # (stack pointer spd, frame pointer spd or None)


def _step(s, state: State, arch, diags) -> State:
    sp, fp = state
    word = arch.word
    if isinstance(s, Push):
        return sp - word, fp
    if isinstance(s, Pop):
        fp = None if s.dst.name == arch.fp else fp
        if s.dst.name == arch.sp:
            raise SpdError(f"pop into stack pointer at {s.addr:#x}")
        return sp + word, fp
    if isinstance(s, Ret):
        if sp != 0:
            diags.append(f"unbalanced stack at ret {s.addr:#x} (spd {sp})")
        return state
    if isinstance(s, Call):
        return state
    defs = stmt_defs(s, arch)
    if arch.sp in defs:
        if isinstance(s, BinOp) and s.op in ("add", "sub") and getattr(s.lhs, "name", None) == arch.sp:
            if not isinstance(s.rhs, Const):
                raise SpdError(f"symbolic stack pointer modification at {s.addr:#x}")
            return (sp + s.rhs.value if s.op == "add" else sp - s.rhs.value), fp
        if isinstance(s, Assign) and getattr(s.src, "name", None) == arch.fp:
            if fp is None:
                raise SpdError(f"stack pointer restored from unknown frame pointer at {s.addr:#x}")
            return fp, fp
        if isinstance(s, Lea) and s.base.name in (arch.sp, arch.fp):
            base = sp if s.base.name == arch.sp else fp
            if base is None:
                raise SpdError(f"stack pointer derived from unknown frame pointer at {s.addr:#x}")
            return base + s.disp, fp
        raise SpdError(f"unsupported stack pointer modification at {s.addr:#x}")
    if arch.fp in defs:
        if isinstance(s, Assign) and getattr(s.src, "name", None) == arch.sp:
            return sp, sp
        if isinstance(s, Lea) and s.base.name == arch.sp:
            return sp, sp + s.disp
        if (isinstance(s, BinOp) and s.op in ("add", "sub") and getattr(s.lhs, "name", None) == arch.fp
                and isinstance(s.rhs, Const) and fp is not None):
            return sp, (fp + s.rhs.value if s.op == "add" else fp - s.rhs.value)
        return sp, None
    return state


def stack_states(f: Function) -> Tuple[Dict[int, int], Dict[int, Optional[int]], list]:
    """Forward propagation of (sp, fp) deltas; returns per-address maps before each statement."""
    arch = f.arch
    diags: list = []
    block_in: Dict[str, State] = {f.entry: (0, None)}
    spd_at: Dict[int, int] = {}
    fp_at: Dict[int, Optional[int]] = {}
    work = deque([f.entry])
    while work:
        bid = work.popleft()
        state = block_in[bid]
        for s in f.blocks[bid].stmts:
            spd_at[s.addr] = state[0]
            fp_at[s.addr] = state[1]
            state = _step(s, state, arch, diags)
        for t in f.blocks[bid].succs:
            old = block_in.get(t)
            if old is None:
                block_in[t] = state
                work.append(t)
                continue
            if old[0] != state[0]:
                raise SpdError(f"inconsistent stack height entering {t!r} in {f.name!r}: {old[0]} vs {state[0]}")
            if old[1] != state[1] and old[1] is not None:
                block_in[t] = (old[0], None)
                work.append(t)
    return spd_at, fp_at, diags


def compute_spd(f: Function) -> Function:
    """Return a copy of ``f`` with ``spd_at`` populated for every reachable statement."""
    spd_at, _, diags = stack_states(f)
    g = f.replace_statements(lambda s: s)
    g.spd_at = spd_at
    g.diagnostics += [d for d in diags if d not in g.diagnostics]
    return g


def rebase_frame_pointer(f: Function) -> Function:
    """Rewrite frame-pointer-relative memory operands to stack-pointer-relative ones."""
    arch = f.arch
    spd_at, fp_at, _ = stack_states(f)
    flagged = []

    def fix(s):
        if isinstance(s, (Load, Store, Lea)) and s.base.name == arch.fp:
            if s.addr not in spd_at:
                return s
            fp = fp_at.get(s.addr)
            if fp is None:
                flagged.append(f"frame-pointer access at {s.addr:#x} not rebased (unknown frame pointer)")
                return s
            disp = fp + s.disp - spd_at[s.addr]
            return replace(s, base=Reg(arch.sp), disp=disp)
        return s

    g = f.replace_statements(fix)
    g.spd_at = spd_at
    g.diagnostics += flagged
    return g


def normalize(f: Function) -> Function:
    return rebase_frame_pointer(compute_spd(f))
