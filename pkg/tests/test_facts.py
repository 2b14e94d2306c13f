import pytest

from uninit_stack import prepare
from uninit_stack.facts import (
    EDB_RELATIONS, FactBase, FactError, emit_facts, extract_edb, load_facts, slot_atom,
)
from uninit_stack.il import parse_il
from uninit_stack.ssa import SSAName

WORKED_PARAM = ("[esp_17]", 1, 0x80490F5, "main", "[esp+4]", 0x8049000, "foo")


def test_listing_param_and_translate(listing_prep):
    edb = listing_prep.edb
    assert edb.get("Param") == {WORKED_PARAM}
    assert edb.get("TranslateSPD") == {(1, "foo", 4)}


def test_listing_stack_pointer_and_slots(listing_prep):
    edb = listing_prep.edb
    assert edb.get("StackPointer") == {("ebx_1", 0x80490F0, -48)}
    assert ("[esp_17]", "ebx_1", 0x80490F4) in edb.get("Assign")
    assert ("eax_1", "[esp+4]", 0x8049000) in edb.get("Assign")
    assert edb.get("Store") == {("eax_1", 0, "#255", 0x8049004, "foo"),
                                ("eax_1", 4, "eax_1", 0x804900A, "foo")}
    assert edb.get("StackSlot") == {("[esp+4]", 4, "foo"), ("[esp_17]", -4, "main")}


def test_slot_atom_naming():
    assert slot_atom(SSAName("esp", 17), 0) == "[esp_17]"
    assert slot_atom(SSAName("esp", 0), 4) == "[esp+4]"
    assert slot_atom(SSAName("esp", 2), -48) == "[esp_2-0x30]"


def test_canreach_within_block_and_across():
    prep = prepare(parse_il("func f {\nentry:\n  eax = 1\n  jmp b\nb:\n  ret\n}\n"))
    cr = prep.edb.get("CanReach")
    assert (0x1000, 0x1000, "f") in cr
    assert (0x1002, 0x1000, "f") in cr
    assert (0x1000, 0x1002, "f") not in cr


def test_phi_and_binop_facts():
    src = """
func f {
entry:
  eax = lea [esp-8]
  br eq ecx, 0, skip
  eax = add eax, 4
skip:
  ebx = load [eax]
  ret
}
"""
    edb = prepare(parse_il(src)).edb
    assert ("add", "eax_2", "eax_1", "#4", 0x1002, "f") in edb.get("BinOp")
    assert ("#4", 4, 0x1002) in edb.get("Constant")
    phis = edb.get("Phi")
    assert {t[1] for t in phis} == {"eax_1", "eax_2"}
    assert ("ebx_1", "eax_3", 0, 0x1003, "f") in edb.get("Load")


def test_emit_load_round_trip(tmp_path, listing_prep):
    edb = listing_prep.edb
    emit_facts(edb, tmp_path)
    assert (tmp_path / "param.facts").read_text().count("\n") == 1
    back = load_facts(tmp_path)
    assert back == edb


def test_emitted_files_are_sorted(tmp_path, listing_prep):
    emit_facts(listing_prep.edb, tmp_path)
    lines = (tmp_path / "canreach.facts").read_text().splitlines()
    keys = [tuple(int(x) if x.lstrip("-").isdigit() else x for x in l.split("\t")) for l in lines]
    assert keys == sorted(keys, key=lambda t: tuple((0, x, "") if isinstance(x, int) else (1, 0, x) for x in t))


def test_arity_checked_on_add():
    with pytest.raises(FactError):
        FactBase().add("Param", ("a", 1))


def test_load_rejects_bad_arity(tmp_path):
    (tmp_path / "translatespd.facts").write_text("1\tfoo\n")
    with pytest.raises(FactError, match="arity"):
        load_facts(tmp_path)


def test_load_rejects_empty_field(tmp_path):
    (tmp_path / "translatespd.facts").write_text("1\t\t4\n")
    with pytest.raises(FactError, match="malformed"):
        load_facts(tmp_path)


def test_tab_in_atom_refused(tmp_path):
    fb = FactBase()
    fb.add("Instr", (1, "a\tb"))
    with pytest.raises(FactError):
        emit_facts(fb, tmp_path)


def test_empty_function_only_control_flow():
    edb = prepare(parse_il("func f {\n  ret\n}\n")).edb
    for rel in EDB_RELATIONS:
        if rel in ("CanReach", "Instr"):
            assert edb.get(rel)
        else:
            assert not edb.get(rel), rel


def test_factbase_merge_keeps_provenance():
    a = FactBase({"Instr": [(1, "f")]})
    b = FactBase({"Instr": [(2, "f")]}, source="plugin:heap")
    m = a.merge(b)
    assert len(m) == 2
    assert m.provenance[("Instr", (2, "f"))] == "plugin:heap"
    assert ("Instr", (1, "f")) in m
