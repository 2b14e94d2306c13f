import itertools
import random

import pytest
from hypothesis import given, settings, strategies as st

from uninit_stack import prepare
from uninit_stack.il import Assign, BinOp, CondJump, Const, Jump, Ret, parse_il
from uninit_stack.interproc import AnalysisConfig, KnowledgeBase, monitor_loop
from uninit_stack.plugins import (
    DEFAULT_ALLOCATORS, FEASIBLE, INFEASIBLE, UNKNOWN, AllocatorSpec, AllocatorSpecError,
    ErrorHandlerPlugin, HeapPlugin, PathFeasibilityPlugin, default_plugins, enrich_heap,
    error_handler_filter, exit_distance, load_allocator_specs, parse_allocator_specs,
    path_feasible,
)
from uninit_stack.pointsto import HEAP_BASE

from conftest import CORPUS


def kb_for(src, plugins=(), **cfg):
    kb = KnowledgeBase(prepare(parse_il(src)), AnalysisConfig(**cfg))
    return monitor_loop(kb, list(plugins))


def feasibility_of(src):
    kb = kb_for(src)
    [w] = kb.warnings
    st_ = kb.result.states[w.use_ctx]
    return path_feasible(st_.func, kb.prep.ssa[w.use_ctx], w.witness_path[-1], st_.zones.get(w.canonical))


GUARDED = """
func main {
entry:
  esp = sub esp, 8
  eax = %s
  br eq eax, 0, write
  jmp use
write:
  store [esp], 1
use:
  ecx = load [esp]
  esp = add esp, 8
  ret
}
"""


def test_constant_guard_makes_unsafe_path_infeasible():
    assert feasibility_of(GUARDED % "0") == INFEASIBLE


def test_constant_guard_other_way_is_feasible():
    assert feasibility_of(GUARDED % "1") == FEASIBLE


def test_input_dependent_guard_is_unknown():
    src = GUARDED.replace("  eax = %s\n", "")
    assert feasibility_of(src) == UNKNOWN


def test_unconditional_path_feasible():
    assert feasibility_of((CORPUS / "intra_uninit.vuln.il").read_text()) == FEASIBLE


def test_contradictory_input_checks_pruned():
    src = """
func main {
entry:
  esp = sub esp, 8
  eax = load [esp+12]
  br ne eax, 3, skip
  store [esp], 1
skip:
  br eq eax, 3, use
  jmp done
use:
  ecx = load [esp]
done:
  esp = add esp, 8
  ret
}
"""
    assert feasibility_of(src) == INFEASIBLE


def test_budget_exhaustion_is_unknown():
    kb = kb_for(GUARDED % "0")
    [w] = kb.warnings
    st_ = kb.result.states["main"]
    r = path_feasible(st_.func, kb.prep.ssa["main"], w.witness_path[-1], st_.zones.get(w.canonical), budget=0)
    assert r == UNKNOWN


def test_path_plugin_filters_only_infeasible():
    kb = kb_for(GUARDED % "0", [PathFeasibilityPlugin()])
    assert [w.status for w in kb.warnings] == ["filtered:path"]
    kb = kb_for(GUARDED.replace("  eax = %s\n", ""), [PathFeasibilityPlugin()])
    assert [w.status for w in kb.warnings] == ["raw"]


# -- exhaustive valuation soundness ---------------------------------------------------

INPUTS = ("eax", "ebx", "edx")


def random_guarded_program(rng):
    lines = ["func main {", "entry:", "  esp = sub esp, 8"]
    open_labels, n = [], 0
    placed_use = False
    for k in range(rng.randint(4, 12)):
        if open_labels and rng.random() < 0.35:
            lines.append(f"{open_labels.pop(0)}:")
        r = rng.random()
        reg = rng.choice(INPUTS)
        if r < 0.35:
            n += 1
            op = rng.choice(("eq", "ne", "lt", "le", "gt", "ge"))
            lines.append(f"  br {op} {reg}, {rng.randrange(5)}, L{n}")
            open_labels.append(f"L{n}")
        elif r < 0.55:
            lines.append("  store [esp], 1")
        elif r < 0.65:
            lines.append(f"  {reg} = {rng.randrange(5)}")
        elif r < 0.75:
            lines.append(f"  {reg} = add {reg}, {rng.randrange(1, 3)}")
        elif not placed_use and k > 1:
            lines.append("  edi = load [esp]")
            placed_use = True
        else:
            lines.append("  nop")
    if not placed_use:
        lines.append("  edi = load [esp]")
    for lab in open_labels:
        lines.append(f"{lab}:")
        lines.append("  nop")
    lines += ["  esp = add esp, 8", "  ret", "}"]
    return "\n".join(lines) + "\n"


_OPS = {"eq": lambda a, b: a == b, "ne": lambda a, b: a != b, "lt": lambda a, b: a < b,
        "le": lambda a, b: a <= b, "gt": lambda a, b: a > b, "ge": lambda a, b: a >= b}


def run_concrete(f, inputs, use_addr):
    """Edges taken before the first execution of ``use_addr`` (None if never reached)."""
    regs = dict(inputs)
    bid, edges = f.entry, []

    def val(e):
        return e.value if isinstance(e, Const) else regs.get(e.name, 0)

    for _ in range(200):
        blk = f.blocks[bid]
        for s in blk.stmts:
            if s.addr == use_addr:
                return edges
            if isinstance(s, Assign):
                regs[s.dst.name] = val(s.src)
            elif isinstance(s, BinOp) and s.op == "add":
                regs[s.dst.name] = val(s.lhs) + val(s.rhs)
        last = blk.last
        if isinstance(last, Ret):
            return None
        if isinstance(last, CondJump):
            hit = _OPS[last.cond.op](val(last.cond.lhs), val(last.cond.rhs))
            other = [s for s in blk.succs if s != last.target] or [last.target]
            nxt = last.target if hit else other[0]
        else:
            nxt = blk.succs[0]
        edges.append((bid, nxt))
        bid = nxt
    return None


def check_infeasible_is_sound(seed):
    """True when the program got an infeasible verdict (and it held up)."""
    src = random_guarded_program(random.Random(seed))
    kb = kb_for(src)
    if not kb.warnings:
        return False
    [w] = kb.warnings
    st_ = kb.result.states["main"]
    zone = st_.zones.get(w.canonical)
    verdict = path_feasible(st_.func, kb.prep.ssa["main"], w.witness_path[-1], zone)
    if verdict != INFEASIBLE:
        return False
    banned = zone.edges if zone else set()
    for vals in itertools.product(range(-3, 9), repeat=len(INPUTS)):
        taken = run_concrete(st_.func, zip(INPUTS, vals), w.use_addr)
        assert taken is None or any(e in banned for e in taken), (src, vals)
    return True


@settings(max_examples=150, deadline=None)
@given(st.integers(0, 2 ** 32 - 1))
def test_never_infeasible_when_a_valuation_reaches_the_use(seed):
    check_infeasible_is_sound(seed)


def test_infeasible_sweep_is_not_vacuous():
    checked = sum(check_infeasible_is_sound(seed) for seed in range(1000))
    assert checked >= 15


# -- error handler --------------------------------------------------------------------

def handler_src(extra_blocks):
    chain = ""
    for i in range(extra_blocks):
        chain += f"  jmp h{i}\nh{i}:\n  nop\n"
    return f"""
func get {{
entry:
  eax = load [esp+4]
  ecx = load [esp+8]
  br eq ecx, 0, fail
  store [eax], 1
  eax = 1
  ret
fail:
  eax = 0
  ret
}}

func main {{
entry:
  esp = sub esp, 8
  ebx = lea [esp]
  edx = load [esp+12]
  push edx
  push ebx
  call get
  esp = add esp, 8
  esi = eax
  br eq esi, 0, bail
  ecx = load [esp]
  jmp out
bail:
  nop
{chain}  jmp out
out:
  esp = add esp, 8
  ret
}}
"""


@pytest.mark.parametrize("extra,suppressed", [(0, True), (1, False), (2, False)])
def test_error_handler_threshold(extra, suppressed):
    kb = kb_for(handler_src(extra))
    [w] = kb.warnings
    f = kb.prep.program.functions["main"]
    assert exit_distance(f, "bail") == extra + 2
    reason = error_handler_filter(f, kb.prep.ssa["main"], w)
    assert (reason is not None) == suppressed


def test_error_handler_distance_one_suppressed():
    kb = kb_for((CORPUS / "error_handler.patched.il").read_text(), [ErrorHandlerPlugin()])
    [w] = kb.warnings
    assert w.status == "filtered:errorhandler"
    assert "exits in 1 block" in w.annotations[0]


def test_error_handler_ignores_unrelated_branches():
    kb = kb_for(GUARDED.replace("  eax = %s\n", ""), [ErrorHandlerPlugin()])
    assert [w.status for w in kb.warnings] == ["raw"]


# -- heap -------------------------------------------------------------------------------

def test_malloc_read_warns_with_heap_origin():
    kb = kb_for((CORPUS / "heap_malloc.vuln.il").read_text(), [HeapPlugin()])
    [w] = kb.warnings
    assert w.origin == ("main", HEAP_BASE)
    assert w.canonical.fld == 4


def test_calloc_read_is_quiet():
    kb = kb_for((CORPUS / "heap_malloc.patched.il").read_text(), [HeapPlugin()])
    assert not kb.warnings


def test_heap_partial_init():
    kb = kb_for((CORPUS / "heap_partial.vuln.il").read_text(), [HeapPlugin()])
    assert [(w.use_addr, w.canonical.fld) for w in kb.warnings] == [(0x1004, 4)]


def test_enrich_without_allocators_is_empty():
    prep = prepare(parse_il((CORPUS / "intra_uninit.vuln.il").read_text()))
    e = enrich_heap(prep)
    assert len(e.facts) == 0 and e.tokens == []


def test_heap_tokens_disjoint_from_program_deltas():
    prep = prepare(parse_il((CORPUS / "heap_malloc.vuln.il").read_text()))
    [tok] = enrich_heap(prep).tokens
    low = min(v for f in prep.program.functions.values() for v in f.spd_at.values())
    assert tok.token <= HEAP_BASE < low
    assert tok.allocator == "malloc" and not tok.initializes


def test_allocator_spec_parsing():
    specs = parse_allocator_specs("# custom\nxmalloc\t1\tnoinit\nxzalloc\t1\tinit\n")
    assert specs == [AllocatorSpec("xmalloc", 1, False), AllocatorSpec("xzalloc", 1, True)]
    assert [s.name for s in DEFAULT_ALLOCATORS] == ["malloc", "calloc"]


@pytest.mark.parametrize("text", [
    "malloc 1 noinit\n",
    "malloc\tone\tnoinit\n",
    "malloc\t1\tmaybe\n",
    "1bad\t1\tinit\n",
    "a\t1\tinit\na\t2\tinit\n",
])
def test_allocator_spec_errors(text):
    with pytest.raises(AllocatorSpecError):
        parse_allocator_specs(text)


def test_custom_allocator_from_file(tmp_path):
    p = tmp_path / "alloc.tsv"
    p.write_text("pool_get\t1\tnoinit\n")
    src = (CORPUS / "heap_malloc.vuln.il").read_text().replace("malloc", "pool_get")
    kb = kb_for(src, [HeapPlugin(load_allocator_specs(p))])
    assert len(kb.warnings) == 1


def test_default_plugins_respect_disabled():
    assert [p.name for p in default_plugins()] == ["heap", "path", "errorhandler"]
    assert [p.name for p in default_plugins(disabled=["path"])] == ["heap", "errorhandler"]
