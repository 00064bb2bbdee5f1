import pytest
from hypothesis import given, settings, strategies as st

from fwmon import thumb
from fwmon.symbols import builtin_map
from fwmon.thumb import (
    AssembleError, Call, EncodeError, HookProgram, Param, ReturnLastResult, SaveScratch, TailCall,
    assemble_stub, decode_bl, decode_bw, disassemble, disassemble_stub, encode_bl,
    encode_bw, hello_world_program,
)

capstone = pytest.importorskip("capstone")

# Frozen from a capstone run over the assembled stub; layout checked by hand against the
# pool/string offsets (pool 0x180014, string 0x180018).
HELLO_HEX = "10b50400034892f673fb20000cf746fb10bd00001800180068656c6c6f20776f726c6400"


def cs_thumb():
    md = capstone.Cs(capstone.CS_ARCH_ARM, capstone.CS_MODE_THUMB)
    return md


def cs_branch_target(code: bytes, pc: int):
    insns = list(cs_thumb().disasm(code, pc))
    assert len(insns) == 1
    return insns[0].mnemonic, int(insns[0].op_str.lstrip("#"), 16)


# -- encoders against fixed bytes ---------------------------------------------

def test_bl_printf_bytes():
    assert encode_bl(0x180006, 0x126F0).hex() == "92f673fb"


def test_bl_dma_rx_bytes():
    assert encode_bl(0x18000C, 0x8C69C).hex() == "0cf746fb"


def test_bw_redirect_bytes():
    assert encode_bw(0x4F7A4, 0x180004).hex() == "30f12ebc"


@pytest.mark.parametrize("pc,target,expect", [
    (0x1000, 0x1004, "00f000f8"),
    (0x1000, 0x1000, "fff7feff"),
])
def test_bl_small_offsets(pc, target, expect):
    assert encode_bl(pc, target).hex() == expect


def test_bl_range_limits():
    pc = 0x2000000
    encode_bl(pc, pc + 4 + 0xFFFFFE)
    encode_bl(pc, pc + 4 - 0x1000000)
    with pytest.raises(EncodeError):
        encode_bl(pc, pc + 0x1000004)
    with pytest.raises(EncodeError):
        encode_bl(pc, pc + 4 - 0x1000002)


def test_bl_rejects_odd_offsets():
    with pytest.raises(EncodeError):
        encode_bl(0x1000, 0x1003)


def test_simple_encodings():
    assert thumb.encode_push([4, thumb.LR]).hex() == "10b5"
    assert thumb.encode_pop([4, thumb.PC]).hex() == "10bd"
    assert thumb.encode_movs_reg(4, 0).hex() == "0400"
    assert thumb.encode_movs_imm(0, 7).hex() == "0720"
    assert thumb.encode_bx_lr().hex() == "7047"
    assert thumb.encode_nop().hex() == "00bf"
    assert thumb.encode_ldr_literal(0, 0x180004, 0x180014).hex() == "0348"


def test_ldr_literal_range():
    with pytest.raises(EncodeError):
        thumb.encode_ldr_literal(0, 0x1000, 0x1000)  # behind the PC
    with pytest.raises(EncodeError):
        thumb.encode_ldr_literal(0, 0x1000, 0x1006)  # not word aligned


# -- capstone oracle ----------------------------------------------------------

# keep pc above 16 MiB so every in-range offset gives a non-negative target
pcs = st.integers(min_value=0x800000, max_value=0x7FFFFFF).map(lambda x: x * 2)
offsets = st.integers(min_value=thumb.BL_MIN // 2, max_value=thumb.BL_MAX // 2).map(lambda x: x * 2)


@settings(max_examples=400, deadline=None)
@given(pc=pcs, off=offsets)
def test_bl_matches_capstone(pc, off):
    target = pc + 4 + off
    mnem, t = cs_branch_target(encode_bl(pc, target), pc)
    assert mnem == "bl"
    assert t == target


@settings(max_examples=400, deadline=None)
@given(pc=pcs, off=offsets)
def test_bw_matches_capstone(pc, off):
    target = pc + 4 + off
    mnem, t = cs_branch_target(encode_bw(pc, target), pc)
    assert mnem in ("b", "b.w")
    assert t == target


@settings(max_examples=300, deadline=None)
@given(pc=pcs, off=offsets)
def test_branch_round_trip(pc, off):
    target = pc + 4 + off
    assert decode_bl(encode_bl(pc, target), pc) == target
    assert decode_bw(encode_bw(pc, target), pc) == target


def test_decode_bl_rejects_bw():
    with pytest.raises(thumb.DecodeError):
        decode_bl(encode_bw(0x1000, 0x2000), 0x1000)


# -- stub assembly ------------------------------------------------------------

def test_hello_world_layout():
    stub = assemble_stub(hello_world_program(), 0x180000, builtin_map())
    blob = stub.to_bytes()
    assert blob.hex() == HELLO_HEX
    assert stub.total_size == 0x24
    assert blob[0x14:0x18] == (0x180018).to_bytes(4, "little")
    assert blob[0x18:] == b"hello world\x00"


def test_hello_world_capstone_sequence():
    stub = assemble_stub(hello_world_program(), 0x180000, builtin_map())
    insns = list(cs_thumb().disasm(stub.to_bytes()[:stub.code_size], 0x180000))
    got = [(i.address, i.mnemonic) for i in insns]
    assert [m for _, m in got] == ["push", "movs", "ldr", "bl", "movs", "bl", "pop"]
    assert insns[3].op_str == "#0x126f0"
    assert insns[5].op_str == "#0x8c69c"


def test_hello_world_disassembly():
    stub = assemble_stub(hello_world_program(), 0x180000, builtin_map())
    text = "\n".join(disassemble_stub(stub, builtin_map()))
    for piece in ("PUSH", "{R4,LR}", "MOVS            R4, R0", "LDR             R0, =0x180018",
                  "BL              0x126F0", "; printf", "; dma_rx", "POP             {R4,PC}",
                  "DCD", '"hello world"'):
        assert piece in text


def test_tail_call_is_bl_then_epilogue():
    syms = builtin_map()
    stub = assemble_stub(HookProgram([SaveScratch(), TailCall("dma_rx", (Param(0),))]), 0x180000, syms)
    ins = thumb.decode_all(stub.code, 0x180000)
    assert [i.mnemonic for i in ins] == ["PUSH", "MOVS", "BL", "POP"]
    assert ins[2].target == syms.lookup("dma_rx")


def test_return_without_save_uses_bx_lr():
    stub = assemble_stub(HookProgram([ReturnLastResult()]), 0x180000, builtin_map())
    assert stub.to_bytes()[:2] == thumb.encode_bx_lr()


@pytest.mark.parametrize("ops", [
    [],
    [SaveScratch(1), Call("printf", ("x",))],             # no terminator
    [Call("printf", ("x",)), ReturnLastResult()],         # call without saved LR
    [SaveScratch(1), Call("nope", ()), ReturnLastResult()],
])
def test_assemble_rejects(ops):
    with pytest.raises((AssembleError, Exception)):
        assemble_stub(HookProgram(ops), 0x180000, builtin_map())


def test_large_int_goes_to_pool():
    syms = builtin_map()
    prog = HookProgram([SaveScratch(1), Call("printf", (0x12345678,)), ReturnLastResult()])
    stub = assemble_stub(prog, 0x180000, syms)
    assert any(word == 0x12345678 for _, word in stub.literal_pool)


def test_disassemble_unknown_is_data():
    lines = disassemble(b"\xff\xff", 0x1000)
    assert len(lines) == 1 and "DCW" in lines[0]


def test_disassemble_count_zero():
    assert disassemble(b"\x00\xbf" * 4, 0, count=0) == []
