import random

import pytest
from hypothesis import given, settings, strategies as st

from uninit_stack.il import parse_il
from uninit_stack.spd import normalize
from uninit_stack.ssa import SSAName, check_single_definition, compute_dominators, to_ssa
from uninit_stack.synth import SynthConfig, generate_program

from oracles import brute_dominators, random_cfg

LOOP = """
func f {
entry:
  eax = 0
head:
  br ge eax, 10, out
  eax = add eax, 1
  jmp head
out:
  ret
}
"""


@settings(max_examples=80, deadline=None)
@given(st.integers(0, 2 ** 32 - 1))
def test_dominators_match_brute_force(seed):
    g = random_cfg(random.Random(seed))
    dom = compute_dominators(g)
    ref = brute_dominators(g)
    for b, doms in ref.items():
        assert {a for a in ref if dom.dominates(a, b)} == doms
    assert dom.unreachable == set(g.nodes) - set(ref)


def test_frontier_of_diamond():
    from uninit_stack.cfg import CFG
    g = CFG.from_edges(1, [(1, 2), (1, 3), (2, 4), (3, 4)])
    dom = compute_dominators(g)
    assert dom.frontier[2] == {4} and dom.frontier[3] == {4}
    assert dom.idom[4] == 1


def test_loop_gets_phi():
    f = normalize(parse_il(LOOP).functions["f"])
    ssa = to_ssa(f)
    phis = ssa.phis["head"]
    assert [p.dst.base for p in phis] == ["eax"]
    src = phis[0].sources
    assert src["entry"] == SSAName("eax", 1)
    assert src[f.blocks["head"].succs[1]] == SSAName("eax", 3)
    check_single_definition(ssa)


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 10_000))
def test_single_definition_on_random_programs(seed):
    p = parse_il(generate_program(SynthConfig(functions=3, body=25, branch_prob=0.3, seed=seed)))
    for f in p.functions.values():
        check_single_definition(to_ssa(normalize(f)))


def test_every_use_has_a_dominating_definition():
    f = normalize(parse_il(LOOP).functions["f"])
    ssa = to_ssa(f)
    site = {}
    for n, where in ssa.definitions():
        site[n] = where
    for addr, uses in ssa.use_ver.items():
        for n in uses.values():
            assert n in site


def test_listing_versions_continue_from_directive(listing_prep):
    main = listing_prep.ssa["main"]
    assert main.use(0x80490F0, "esp") == SSAName("esp", 16)
    assert str(main.defn(0x80490F4, "esp")) == "esp_17"
    foo = listing_prep.ssa["foo"]
    assert str(foo.use(0x8049000, "esp")) == "esp"
    assert str(foo.defn(0x8049000, "eax")) == "eax_1"


def test_call_site_collects_live_defs(listing_prep):
    [site] = listing_prep.ssa["main"].live_defs
    assert site.call_addr == 0x80490F5
    assert site.live["ebx"] == SSAName("ebx", 1)
    assert site.live["esp"] == SSAName("esp", 17)


def test_unreachable_blocks_skipped():
    src = "func f {\nentry:\n  jmp end\ndead:\n  eax = 1\nend:\n  ret\n}\n"
    ssa = to_ssa(normalize(parse_il(src).functions["f"]))
    assert "dead" in ssa.dom.unreachable
    assert "dead" not in ssa.dump()
