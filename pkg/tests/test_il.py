import pytest
from hypothesis import given, settings, strategies as st

from uninit_stack.il import (
    Assign, Call, CondJump, ILError, ILSyntaxError, Load, Push, Store, parse_il, pretty_print,
)
from uninit_stack.spd import SpdError, compute_spd, normalize, stack_states
from uninit_stack.synth import SynthConfig, generate_program
from uninit_stack.x86 import lift_x86_mini

DIAMOND = """
func main {
entry:
  esp = sub esp, 8
  br eq eax, 0, left
  store [esp], 1
  jmp join
left:
  store [esp], 2
join:
  ecx = load [esp]
  esp = add esp, 8
  ret
}
"""


def test_blocks_and_edges():
    f = parse_il(DIAMOND).functions["main"]
    assert f.entry == "entry"
    entry = f.blocks["entry"]
    assert isinstance(entry.last, CondJump)
    # taken target first, fall-through second
    assert entry.succs[0] == "left"
    assert len(entry.succs) == 2
    assert sorted(f.blocks["join"].preds) == sorted([entry.succs[1], "left"])
    assert f.exit_blocks == ["join"]


def test_addresses_sequential_and_pinned():
    p = parse_il("func f {\n  eax = 1\n  @0x2000 ecx = 2\n  edx = 3\n  ret\n}\n")
    addrs = [s.addr for s in p.functions["f"].statements()]
    assert addrs == [0x1000, 0x2000, 0x2001, 0x2002]


def test_semicolon_separated_statements():
    p = parse_il("func f {\n  eax = 1; ecx = add eax, 2; ret\n}\n")
    assert len(list(p.functions["f"].statements())) == 3


def test_pretty_print_round_trip():
    p = parse_il(DIAMOND)
    text = pretty_print(p)
    q = parse_il(text)
    assert pretty_print(q) == text
    for name in p.functions:
        assert list(p.functions[name].statements()) == list(q.functions[name].statements())


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 10_000))
def test_round_trip_random_programs(seed):
    p = parse_il(generate_program(SynthConfig(functions=3, body=12, seed=seed)))
    text = pretty_print(p)
    assert pretty_print(parse_il(text)) == text


@pytest.mark.parametrize("src,where", [
    ("func f {\n  eax = frob 1\n}\n", 2),
    ("func f {\n  eax = 1\n", 0),
    ("func f {\n  jmp nowhere\n}\n", 0),
])
def test_syntax_errors(src, where):
    with pytest.raises(ILError) as ei:
        parse_il(src)
    if where and isinstance(ei.value, ILSyntaxError):
        assert ei.value.line == where


def test_falling_off_function_end_rejected():
    with pytest.raises(ILError):
        parse_il("func f {\n  eax = 1\n}\n")


def test_x86_listing_lifts(listing_text):
    p = lift_x86_mini(listing_text)
    assert sorted(p.functions) == ["foo", "main"]
    foo = list(p.functions["foo"].statements())
    assert [s.addr for s in foo] == [0x8049000, 0x8049004, 0x804900A, 0x804900D]
    assert isinstance(foo[0], Load) and foo[0].disp == 4
    assert isinstance(foo[1], Store) and foo[1].src.value == 0xFF
    main = list(p.functions["main"].statements())
    assert isinstance(main[1], Push) and isinstance(main[2], Call)
    assert p.functions["main"].ssa_base == {"esp": 16}


def test_x86_conditional_needs_compare():
    with pytest.raises(ILError):
        lift_x86_mini("f:\n  jz .L\n.L:\n  ret\n")


def test_x86_cmp_jcc():
    p = lift_x86_mini("f:\n  cmp eax, 3\n  jle .L\n  mov ecx, 1\n.L:\n  ret\n")
    br = [s for s in p.functions["f"].statements() if isinstance(s, CondJump)][0]
    assert br.cond.op == "le" and br.cond.rhs.value == 3


def test_spd_push_pop_and_call(listing_prep):
    main = listing_prep.program.functions["main"]
    assert main.spd_at[0x80490F0] == 0
    assert main.spd_at[0x80490F4] == 0
    assert main.spd_at[0x80490F5] == -4
    assert main.spd_at[0x80490FD] == 0


def test_spd_join_conflict_is_error():
    src = """
func f {
entry:
  br eq eax, 0, other
  push eax
  jmp join
other:
  nop
join:
  ret
}
"""
    with pytest.raises(SpdError):
        compute_spd(parse_il(src).functions["f"])


def test_frame_pointer_rebased():
    src = """
func f {
  push ebp
  ebp = esp
  esp = sub esp, 8
  store [ebp-4], 1
  eax = load [ebp-8]
  esp = ebp
  pop ebp
  ret
}
"""
    f = normalize(parse_il(src).functions["f"])
    stmts = list(f.statements())
    st, ld = stmts[3], stmts[4]
    assert st.base.name == "esp" and f.spd_at[st.addr] + st.disp == -8
    assert ld.base.name == "esp" and f.spd_at[ld.addr] + ld.disp == -12
    assert f.spd_at[stmts[-1].addr] == 0


def test_unbalanced_return_is_diagnosed():
    f = compute_spd(parse_il("func f {\n  push eax\n  ret\n}\n").functions["f"])
    assert any("ret" in d for d in f.diagnostics)


def test_symbolic_stack_adjust_rejected():
    with pytest.raises(SpdError):
        stack_states(parse_il("func f {\n  esp = sub esp, eax\n  ret\n}\n").functions["f"])


def test_word_size_eight():
    p = parse_il(".word 8\nfunc f {\n  push rax\n  pop rcx\n  ret\n}\n")
    f = compute_spd(p.functions["f"])
    assert p.word_size == 8
    assert sorted(f.spd_at.values()) == [-8, 0, 0]
