import random

from hypothesis import given, settings, strategies as st

from uninit_stack import prepare
from uninit_stack.facts import FactBase
from uninit_stack.il import parse_il
from uninit_stack.pointsto import (
    HEAP_BASE, IndirectAccess, PointerPtsToFact, VPtsToFact, make_engine, points_to_map,
    pointer_ptsto, pointsto_rules, query_indirect, run_pointsto, targets, vptsto,
)
from uninit_stack.synth import SynthConfig, generate_program

from oracles import brute_force_pointsto


def test_rule_text_parses():
    rs = pointsto_rules()
    assert {"VPtsTo", "PointerPtsTo", "IndirectDef", "IndirectUse"} <= rs.idb


def test_worked_example(listing_prep):
    idb = run_pointsto(listing_prep.edb)
    assert VPtsToFact("[esp_17]", -0x30, 0x80490F4, "main") in vptsto(idb, "main")
    assert VPtsToFact("[esp+4]", 4, 0x8049000, "foo") in vptsto(idb, "foo")
    assert pointer_ptsto(idb, "foo") == [PointerPtsToFact(4, 4, 4, "foo")]
    defs = [a.var for a in query_indirect(idb, "foo") if a.kind == "def"]
    assert defs == [(4, 0), (4, 4)]
    store4 = [a for a in query_indirect(idb, "foo") if a.addr == 0x804900A]
    assert store4 == [IndirectAccess("def", "eax_1", 4, 4, 0x804900A, "foo")]


def test_parameter_delta_is_callee_relative(listing_prep):
    # the callee sees +4, never the caller's -0x30
    idb = run_pointsto(listing_prep.edb)
    assert targets(idb, "[esp+4]", "foo") == {4}
    assert targets(idb, "eax_1", "foo") == {4}
    assert -0x30 not in {v.spd for v in vptsto(idb, "foo")}


def test_rule6_needs_a_pointer_in_the_caller(listing_prep):
    edb = listing_prep.edb.copy()
    edb.relations["StackPointer"] = set()
    idb = run_pointsto(edb)
    assert not vptsto(idb, "foo")


TWO_CALLERS = """
func a {
  esp = sub esp, 16
  eax = lea [esp+4]
  push eax
  call g
  esp = add esp, 4
  esp = add esp, 16
  ret
}
func b {
  esp = sub esp, 32
  ecx = lea [esp+8]
  push ecx
  call g
  esp = add esp, 4
  esp = add esp, 32
  ret
}
func g {
  edx = load [esp+4]
  store [edx+8], 0
  ret
}
"""


def test_two_contexts_kept_apart():
    idb = run_pointsto(prepare(parse_il(TWO_CALLERS)).edb)
    pm = points_to_map(idb)
    assert pm[("a", "eax_1")] == {-12}
    assert pm[("b", "ecx_1")] == {-24}
    assert pm[("g", "edx_1")] == {4}
    assert [a.var for a in query_indirect(idb, "g")] == [(4, 8)]


def test_derived_pointer_arithmetic():
    src = """
func f {
  esp = sub esp, 16
  eax = lea [esp]
  ebx = add eax, 8
  ecx = add 4, ebx
  edx = sub ecx, 2
  esi = load [edx]
  ret
}
"""
    idb = run_pointsto(prepare(parse_il(src)).edb)
    pm = points_to_map(idb)
    assert pm[("f", "ebx_1")] == {-8}
    assert pm[("f", "ecx_1")] == {-4}
    assert pm[("f", "edx_1")] == {-6}
    [use] = query_indirect(idb, "f")
    assert use.kind == "use" and use.var == (-6, 0)


def test_pointer_through_memory():
    src = """
func f {
  esp = sub esp, 16
  eax = lea [esp+8]
  store [esp], eax
  ebx = load [esp]
  store [ebx], 1
  ret
}
"""
    idb = run_pointsto(prepare(parse_il(src)).edb)
    assert targets(idb, "ebx_1", "f") == {-8}
    assert [a.var for a in query_indirect(idb, "f") if a.kind == "def"] == [(-8, 0)]


def test_phi_merges_both_targets():
    src = """
func f {
entry:
  esp = sub esp, 16
  eax = lea [esp]
  br eq ecx, 0, join
  eax = lea [esp+8]
join:
  store [eax], 1
  ret
}
"""
    idb = run_pointsto(prepare(parse_il(src)).edb)
    assert {a.var for a in query_indirect(idb, "f")} == {(-16, 0), (-8, 0)}


def test_no_stack_pointers_no_facts():
    idb = run_pointsto(prepare(parse_il("func f {\n  eax = 1\n  ret\n}\n")).edb)
    assert not vptsto(idb) and not query_indirect(idb, "f")


def test_incremental_seed_matches_scratch(listing_prep):
    edb = listing_prep.edb
    extra = FactBase({"StackPointer": [("eax_1", 0x8049000, HEAP_BASE)]})
    eng = make_engine()
    eng.evaluate(edb)
    eng.add(extra)
    assert eng.snapshot() == run_pointsto(edb.merge(extra))


@settings(max_examples=15, deadline=None)
@given(st.integers(0, 10_000))
def test_monotone_under_extra_seeds(seed):
    prep = prepare(parse_il(generate_program(SynthConfig(functions=3, body=15, seed=seed))))
    base = run_pointsto(prep.edb)
    rng = random.Random(seed)
    regs = sorted({t[0] for t in prep.edb.get("Assign")})
    extra = FactBase()
    for v in rng.sample(regs, min(2, len(regs))):
        addr, ctx = sorted(prep.edb.get("Instr"))[0]
        extra.add("StackPointer", (v, addr, -rng.randrange(1, 16) * 4))
    bigger = run_pointsto(prep.edb.merge(extra))
    for rel, ts in base.relations.items():
        assert ts <= bigger.get(rel)


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 10_000))
def test_brute_force_contained_on_small_programs(seed):
    prep = prepare(parse_il(generate_program(SynthConfig(functions=2, body=10, branch_prob=0.2, seed=seed))))
    pm = points_to_map(run_pointsto(prep.edb))
    missing = {(c, v, s) for c, v, s in brute_force_pointsto(prep) if s not in pm.get((c, v), set())}
    assert not missing
