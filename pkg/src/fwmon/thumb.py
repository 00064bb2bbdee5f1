"""Thumb encoder/decoder for the instruction subset hook stubs use, plus the stub assembler.

Stubs are laid out the way a linker lays out a small Thumb function:
straight-line code, then a 4-aligned literal pool, then zero-terminated
strings. Calls into firmware are PC-relative BL instructions, so the output is
position dependent and never goes through an ARM/Thumb interworking veneer.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field
from typing import Optional, Union

from .symbols import FUNCTION, SymbolMap

REG_NAMES = [f"R{i}" for i in range(13)] + ["SP", "LR", "PC"]
SP, LR, PC = 13, 14, 15

BL_MIN = -(1 << 24)
BL_MAX = (1 << 24) - 2


class ThumbError(ValueError):
    pass


class EncodeError(ThumbError):
    pass


class DecodeError(ThumbError):
    pass


class AssembleError(ThumbError):
    pass


def _align4(x: int) -> int:
    return (x + 3) & ~3


def _hw(value: int) -> bytes:
    return struct.pack("<H", value)


# -- encoders -----------------------------------------------------------------

def _low(reg: int) -> int:
    if not 0 <= reg <= 7:
        raise EncodeError(f"{REG_NAMES[reg] if 0 <= reg < 16 else reg} is not a low register")
    return reg


def encode_push(regs) -> bytes:
    """PUSH {low regs[, LR]}."""
    regs = set(regs)
    lr = LR in regs
    regs.discard(LR)
    if not regs and not lr:
        raise EncodeError("empty register list")
    mask = 0
    for r in regs:
        mask |= 1 << _low(r)
    return _hw(0xB400 | (lr << 8) | mask)


def encode_pop(regs) -> bytes:
    """POP {low regs[, PC]}."""
    regs = set(regs)
    pc = PC in regs
    regs.discard(PC)
    if not regs and not pc:
        raise EncodeError("empty register list")
    mask = 0
    for r in regs:
        mask |= 1 << _low(r)
    return _hw(0xBC00 | (pc << 8) | mask)


def encode_movs_reg(rd: int, rm: int) -> bytes:
    # LSLS rd, rm, #0
    return _hw((_low(rm) << 3) | _low(rd))


def encode_mov_reg(rd: int, rm: int) -> bytes:
    if not (0 <= rd < 16 and 0 <= rm < 16):
        raise EncodeError("register out of range")
    return _hw(0x4600 | ((rd >> 3) << 7) | (rm << 3) | (rd & 7))


def encode_movs_imm(rd: int, imm: int) -> bytes:
    if not 0 <= imm <= 0xFF:
        raise EncodeError(f"MOVS immediate {imm:#x} exceeds 8 bits")
    return _hw(0x2000 | (_low(rd) << 8) | imm)


def encode_adds_imm(rd: int, imm: int) -> bytes:
    if not 0 <= imm <= 0xFF:
        raise EncodeError(f"ADDS immediate {imm:#x} exceeds 8 bits")
    return _hw(0x3000 | (_low(rd) << 8) | imm)


def encode_subs_imm(rd: int, imm: int) -> bytes:
    if not 0 <= imm <= 0xFF:
        raise EncodeError(f"SUBS immediate {imm:#x} exceeds 8 bits")
    return _hw(0x3800 | (_low(rd) << 8) | imm)


def encode_add_sp(imm: int) -> bytes:
    if imm % 4 or not 0 <= imm <= 508:
        raise EncodeError(f"ADD SP immediate {imm:#x} must be a multiple of 4 up to 0x1fc")
    return _hw(0xB000 | (imm >> 2))


def encode_sub_sp(imm: int) -> bytes:
    if imm % 4 or not 0 <= imm <= 508:
        raise EncodeError(f"SUB SP immediate {imm:#x} must be a multiple of 4 up to 0x1fc")
    return _hw(0xB080 | (imm >> 2))


def encode_ldr_literal(rt: int, pc: int, literal_addr: int) -> bytes:
    base = (pc + 4) & ~3
    delta = literal_addr - base
    if literal_addr & 3:
        raise EncodeError(f"literal {literal_addr:#x} is not word-aligned")
    if not 0 <= delta <= 1020:
        raise EncodeError(f"literal {literal_addr:#x} out of LDR range from {pc:#x}")
    return _hw(0x4800 | (_low(rt) << 8) | (delta >> 2))


def encode_bx_lr() -> bytes:
    return _hw(0x4770)


def encode_nop() -> bytes:
    return _hw(0xBF00)


def _branch_offset(pc: int, target: int) -> int:
    for name, value in (("pc", pc), ("target", target)):
        if not 0 <= value < 1 << 32:
            raise EncodeError(f"{name} {value:#x} outside 32-bit address space")
        if value & 1:
            raise EncodeError(f"{name} {value:#x} is not halfword-aligned")
    offset = target - (pc + 4)
    if not BL_MIN <= offset <= BL_MAX:
        raise EncodeError(f"branch from {pc:#x} to {target:#x} exceeds +/-16 MiB (offset {offset:#x})")
    return offset


def _encode_branch32(pc: int, target: int, link: bool) -> bytes:
    off = _branch_offset(pc, target)
    s = (off >> 24) & 1
    j1 = (~((off >> 23) ^ s)) & 1
    j2 = (~((off >> 22) ^ s)) & 1
    hw1 = 0xF000 | (s << 10) | ((off >> 12) & 0x3FF)
    hw2 = (0xD000 if link else 0x9000) | (j1 << 13) | (j2 << 11) | ((off >> 1) & 0x7FF)
    return struct.pack("<HH", hw1, hw2)


def encode_bl(pc: int, target: int) -> bytes:
    return _encode_branch32(pc, target, link=True)


def encode_bw(pc: int, target: int) -> bytes:
    return _encode_branch32(pc, target, link=False)


def _branch32_kind(hw1: int, hw2: int) -> Optional[str]:
    if hw1 & 0xF800 != 0xF000:
        return None
    if hw2 & 0xD000 == 0xD000:
        return "BL"
    if hw2 & 0xD000 == 0x9000:
        return "B_W"
    return None


def _branch32_target(hw1: int, hw2: int, pc: int) -> int:
    s = (hw1 >> 10) & 1
    i1 = (~((hw2 >> 13) ^ s)) & 1
    i2 = (~((hw2 >> 11) ^ s)) & 1
    off = (s << 24) | (i1 << 23) | (i2 << 22) | ((hw1 & 0x3FF) << 12) | ((hw2 & 0x7FF) << 1)
    if s:
        off -= 1 << 25
    return (pc + 4 + off) & 0xFFFFFFFF


def _decode_branch32(data: bytes, pc: int, kind: str) -> int:
    if len(data) < 4:
        raise DecodeError(f"need 4 bytes for {kind}, got {len(data)}")
    hw1, hw2 = struct.unpack("<HH", bytes(data[:4]))
    if _branch32_kind(hw1, hw2) != kind:
        raise DecodeError(f"{bytes(data[:4]).hex()} at {pc:#x} is not a {kind.replace('_', '.')} encoding")
    return _branch32_target(hw1, hw2, pc)


def decode_bl(data: bytes, pc: int) -> int:
    return _decode_branch32(data, pc, "BL")


def decode_bw(data: bytes, pc: int) -> int:
    return _decode_branch32(data, pc, "B_W")


def decode_branch(data: bytes, pc: int, kind: str) -> int:
    if kind not in ("BL", "B_W"):
        raise ValueError(f"unknown branch kind {kind!r}")
    return _decode_branch32(data, pc, kind)


def encode_branch(pc: int, target: int, kind: str) -> bytes:
    if kind == "BL":
        return encode_bl(pc, target)
    if kind == "B_W":
        return encode_bw(pc, target)
    raise ValueError(f"unknown branch kind {kind!r}")


# -- decoder ------------------------------------------------------------------

@dataclass(frozen=True)
class Instr:
    mnemonic: str
    address: int
    size: int
    raw: bytes
    rd: Optional[int] = None
    rm: Optional[int] = None
    imm: Optional[int] = None
    regs: tuple = ()
    target: Optional[int] = None

    def operands(self) -> str:
        m = self.mnemonic
        if m in ("PUSH", "POP"):
            return _reglist(self.regs)
        if m in ("MOVS", "MOV"):
            if self.rm is None:
                return f"{REG_NAMES[self.rd]}, #{self.imm:#x}" if self.imm > 9 else f"{REG_NAMES[self.rd]}, #{self.imm}"
            return f"{REG_NAMES[self.rd]}, {REG_NAMES[self.rm]}"
        if m == "LDR_LITERAL":
            return f"{REG_NAMES[self.rd]}, [PC, #0x{self.imm:X}]"
        if m in ("BL", "B_W"):
            return f"{self.target:#X}".replace("0X", "0x")
        if m == "BX_LR":
            return "LR"
        if m in ("ADD_IMM", "SUB_IMM"):
            if self.rd == SP:
                return f"SP, SP, #{self.imm:#x}"
            return f"{REG_NAMES[self.rd]}, #{self.imm:#x}"
        return ""

    def display_mnemonic(self) -> str:
        m = self.mnemonic
        if m == "LDR_LITERAL":
            return "LDR"
        if m == "B_W":
            return "B.W"
        if m == "BX_LR":
            return "BX"
        if m in ("ADD_IMM", "SUB_IMM"):
            op = "ADD" if m == "ADD_IMM" else "SUB"
            return op if self.rd == SP else op + "S"
        return m

    @property
    def literal_address(self) -> Optional[int]:
        if self.mnemonic != "LDR_LITERAL":
            return None
        return ((self.address + 4) & ~3) + self.imm


@dataclass(frozen=True)
class DataWord:
    """Bytes that do not decode under the supported subset."""
    address: int
    raw: bytes

    @property
    def size(self):
        return len(self.raw)


def _reglist(regs) -> str:
    regs = sorted(regs)
    parts = []
    i = 0
    while i < len(regs):
        j = i
        while j + 1 < len(regs) and regs[j + 1] == regs[j] + 1 and regs[j + 1] <= 7:
            j += 1
        if j - i >= 2:
            parts.append(f"{REG_NAMES[regs[i]]}-{REG_NAMES[regs[j]]}")
        else:
            parts.extend(REG_NAMES[r] for r in regs[i:j + 1])
        i = j + 1
    return "{" + ",".join(parts) + "}"


def decode(data: bytes, address: int) -> Instr:
    """Decode one instruction at the start of ``data`` located at ``address``."""
    if len(data) < 2:
        raise DecodeError(f"truncated instruction at {address:#x}")
    hw = data[0] | (data[1] << 8)
    raw2 = bytes(data[:2])

    if hw >> 11 in (0b11101, 0b11110, 0b11111):
        if len(data) < 4:
            raise DecodeError(f"truncated 32-bit instruction at {address:#x}")
        hw2 = data[2] | (data[3] << 8)
        kind = _branch32_kind(hw, hw2)
        if kind is None:
            raise DecodeError(f"unsupported 32-bit encoding {hw:04x} {hw2:04x} at {address:#x}")
        return Instr(kind, address, 4, bytes(data[:4]), target=_branch32_target(hw, hw2, address))

    if hw & 0xFE00 == 0xB400:
        regs = tuple(r for r in range(8) if hw >> r & 1) + ((LR,) if hw & 0x100 else ())
        if regs:
            return Instr("PUSH", address, 2, raw2, regs=regs)
    elif hw & 0xFE00 == 0xBC00:
        regs = tuple(r for r in range(8) if hw >> r & 1) + ((PC,) if hw & 0x100 else ())
        if regs:
            return Instr("POP", address, 2, raw2, regs=regs)
    elif hw & 0xFFC0 == 0x0000:
        return Instr("MOVS", address, 2, raw2, rd=hw & 7, rm=(hw >> 3) & 7)
    elif hw & 0xF800 == 0x2000:
        return Instr("MOVS", address, 2, raw2, rd=(hw >> 8) & 7, imm=hw & 0xFF)
    elif hw & 0xF800 == 0x3000:
        return Instr("ADD_IMM", address, 2, raw2, rd=(hw >> 8) & 7, imm=hw & 0xFF)
    elif hw & 0xF800 == 0x3800:
        return Instr("SUB_IMM", address, 2, raw2, rd=(hw >> 8) & 7, imm=hw & 0xFF)
    elif hw == 0x4770:
        return Instr("BX_LR", address, 2, raw2)
    elif hw & 0xFF00 == 0x4600:
        rd = ((hw >> 7) & 1) << 3 | (hw & 7)
        rm = (hw >> 3) & 0xF
        if rd != PC and rm != PC:
            return Instr("MOV", address, 2, raw2, rd=rd, rm=rm)
    elif hw & 0xF800 == 0x4800:
        return Instr("LDR_LITERAL", address, 2, raw2, rd=(hw >> 8) & 7, imm=(hw & 0xFF) << 2)
    elif hw & 0xFF80 == 0xB000:
        return Instr("ADD_IMM", address, 2, raw2, rd=SP, imm=(hw & 0x7F) << 2)
    elif hw & 0xFF80 == 0xB080:
        return Instr("SUB_IMM", address, 2, raw2, rd=SP, imm=(hw & 0x7F) << 2)
    elif hw == 0xBF00:
        return Instr("NOP", address, 2, raw2)
    raise DecodeError(f"unsupported encoding {hw:04x} at {address:#x}")


def decode_all(data: bytes, base: int, count: Optional[int] = None) -> list:
    """Linear sweep; undecodable halfwords become DataWord entries."""
    out = []
    off = 0
    while off + 2 <= len(data) and (count is None or len(out) < count):
        try:
            ins = decode(data[off:], base + off)
        except DecodeError:
            ins = DataWord(base + off, bytes(data[off:off + 2]))
        out.append(ins)
        off += ins.size
    if off < len(data) and (count is None or len(out) < count):
        out.append(DataWord(base + off, bytes(data[off:])))
    return out


# -- hook IR ------------------------------------------------------------------

@dataclass(frozen=True)
class Param:
    """Forward the hooked function's own k-th parameter."""
    index: int


@dataclass(frozen=True)
class SaveScratch:
    """Prologue: push callee-saved registers and LR, stash ``params`` incoming arguments."""
    params: int = 1


@dataclass(frozen=True)
class Call:
    symbol: str
    args: tuple = ()


@dataclass(frozen=True)
class TailCall:
    """Call then return its result (emitted as BL followed by the epilogue)."""
    symbol: str
    args: tuple = ()


@dataclass(frozen=True)
class ReturnLastResult:
    pass


Arg = Union[Param, str, int]


@dataclass(frozen=True)
class HookProgram:
    ops: tuple

    def __post_init__(self):
        object.__setattr__(self, "ops", tuple(self.ops))


def hello_world_program() -> HookProgram:
    """printf("hello world"); return dma_rx(di);"""
    return HookProgram((
        SaveScratch(),
        Call("printf", ("hello world",)),
        Call("dma_rx", (Param(0),)),
        ReturnLastResult(),
    ))


@dataclass
class EncodedStub:
    base: int
    code: bytes
    literal_pool: list = field(default_factory=list)   # (offset, word)
    strings: list = field(default_factory=list)        # (offset, text)
    total_size: int = 0
    calls: list = field(default_factory=list)          # (offset, target, symbol)

    @property
    def code_size(self) -> int:
        return len(self.code)

    @property
    def pool_offset(self) -> int:
        return _align4(self.base + len(self.code)) - self.base

    @property
    def end(self) -> int:
        return self.base + self.total_size

    def to_bytes(self) -> bytes:
        out = bytearray(self.total_size)
        out[:len(self.code)] = self.code
        for off, word in self.literal_pool:
            out[off:off + 4] = struct.pack("<I", word)
        for off, text in self.strings:
            raw = text.encode("latin-1") + b"\0"
            out[off:off + len(raw)] = raw
        return bytes(out)


def _saved_regs(params: int) -> list:
    n = max(params, 1)
    if n % 2 == 0 and n < 4:
        n += 1
    return list(range(4, 4 + n))


def _validate(prog: HookProgram) -> list:
    ops = list(prog.ops)
    if not ops:
        raise AssembleError("empty hook program")
    flat = []
    for i, op in enumerate(ops):
        last = i == len(ops) - 1
        if isinstance(op, SaveScratch):
            if i != 0:
                raise AssembleError("save_scratch must be the first op")
            if not 0 <= op.params <= 4:
                raise AssembleError("save_scratch params must be 0..4")
            flat.append(op)
        elif isinstance(op, Call):
            flat.append(op)
        elif isinstance(op, TailCall):
            flat.append(Call(op.symbol, op.args))
            flat.append(ReturnLastResult())
        elif isinstance(op, ReturnLastResult):
            flat.append(op)
        else:
            raise AssembleError(f"unknown hook op {op!r}")
        if isinstance(op, (TailCall, ReturnLastResult)) and not last:
            raise AssembleError("ops after return")
    if not isinstance(flat[-1], ReturnLastResult):
        raise AssembleError("hook program must end with return_last_result or tail_call")
    return flat


def assemble_stub(prog: HookProgram, base: int, syms: SymbolMap) -> EncodedStub:
    if base & 1:
        raise AssembleError(f"stub base {base:#x} is not halfword-aligned")
    ops = _validate(prog)

    # pass 1: instruction list with symbolic operands
    items = []
    pool_keys: list = []
    saved: list = []
    stashed = 0
    clobbered = False
    for op in ops:
        if isinstance(op, SaveScratch):
            saved = _saved_regs(op.params)
            stashed = op.params
            items.append(("push", saved + [LR]))
            for k in range(op.params):
                items.append(("movs", 4 + k, k))
        elif isinstance(op, Call):
            if not saved:
                raise AssembleError(f"call to {op.symbol} needs save_scratch to preserve LR")
            if len(op.args) > 4:
                raise AssembleError(f"call to {op.symbol}: {len(op.args)} args, at most 4 are register-passed")
            for slot, arg in enumerate(op.args):
                if isinstance(arg, Param):
                    k = arg.index
                    if not 0 <= k <= 3:
                        raise AssembleError(f"forwarded parameter {k} out of range")
                    if not clobbered and k == slot:
                        continue
                    if k < stashed:
                        items.append(("movs", slot, 4 + k))
                    else:
                        raise AssembleError(
                            f"parameter {k} is not preserved for slot {slot}; raise save_scratch params")
                elif isinstance(arg, str):
                    key = ("str", arg)
                    if key not in pool_keys:
                        pool_keys.append(key)
                    items.append(("ldr", slot, key))
                elif isinstance(arg, int):
                    value = arg & 0xFFFFFFFF
                    if value <= 0xFF:
                        items.append(("movs_imm", slot, value))
                    else:
                        key = ("int", value)
                        if key not in pool_keys:
                            pool_keys.append(key)
                        items.append(("ldr", slot, key))
                else:
                    raise AssembleError(f"unsupported argument {arg!r}")
            sym = syms[op.symbol]
            if sym.kind != FUNCTION:
                raise AssembleError(f"{op.symbol} is a {sym.kind}, not a function")
            items.append(("bl", sym))
            clobbered = True
        elif isinstance(op, ReturnLastResult):
            items.append(("pop", saved + [PC]) if saved else ("bx_lr",))

    code_size = sum(4 if it[0] == "bl" else 2 for it in items)
    pool_addr = _align4(base + code_size)
    str_addr = pool_addr + 4 * len(pool_keys)
    pool_words = {}
    strings = []
    for key in pool_keys:
        if key[0] == "str":
            pool_words[key] = str_addr
            strings.append((str_addr - base, key[1]))
            str_addr += len(key[1].encode("latin-1")) + 1
        else:
            pool_words[key] = key[1]
    literal_pool = [(pool_addr - base + 4 * i, pool_words[k]) for i, k in enumerate(pool_keys)]
    pool_addr_of = {k: pool_addr + 4 * i for i, k in enumerate(pool_keys)}

    # pass 2: encode at absolute addresses
    code = bytearray()
    calls = []
    for it in items:
        pc = base + len(code)
        kind = it[0]
        try:
            if kind == "push":
                code += encode_push(it[1])
            elif kind == "pop":
                code += encode_pop(it[1])
            elif kind == "movs":
                code += encode_movs_reg(it[1], it[2])
            elif kind == "movs_imm":
                code += encode_movs_imm(it[1], it[2])
            elif kind == "ldr":
                code += encode_ldr_literal(it[1], pc, pool_addr_of[it[2]])
            elif kind == "bl":
                code += encode_bl(pc, it[1].address)
                calls.append((pc - base, it[1].address, it[1].name))
            elif kind == "bx_lr":
                code += encode_bx_lr()
        except EncodeError as exc:
            raise AssembleError(str(exc)) from exc

    return EncodedStub(
        base=base,
        code=bytes(code),
        literal_pool=literal_pool,
        strings=strings,
        total_size=str_addr - base,
        calls=calls,
    )


# -- disassembly --------------------------------------------------------------

def _line(addr: int, mnem: str, ops: str, comment: str = "") -> str:
    text = f"{addr:08X}    {mnem:<15} {ops}"
    if comment:
        text = f"{text:<48} ; {comment}"
    return text.rstrip()


def _literal(ins, data, base):
    lit = ins.literal_address
    if lit is None or not (base <= lit and lit + 4 <= base + len(data)):
        return None
    off = lit - base
    return struct.unpack("<I", bytes(data[off:off + 4]))[0]


def _string_at(addr, data, base):
    if not base <= addr < base + len(data):
        return None
    off = addr - base
    end = bytes(data[off:]).find(b"\0")
    if end <= 0:
        return None
    return bytes(data[off:off + end]).decode("latin-1")


def format_instr(ins, syms=None, data=b"", base=0) -> str:
    if isinstance(ins, DataWord):
        if len(ins.raw) == 2:
            return _line(ins.address, "DCW", f"{struct.unpack('<H', ins.raw)[0]:#06x}")
        return _line(ins.address, "DCB", ", ".join(f"{b:#04x}" for b in ins.raw))
    ops = ins.operands()
    comment = ""
    if ins.target is not None and syms is not None:
        sym = syms.reverse_lookup(ins.target)
        if sym is not None:
            comment = sym.name
    word = _literal(ins, data, base)
    if word is not None:
        ops = f"{REG_NAMES[ins.rd]}, ={word:#x}"
        text = _string_at(word, data, base)
        if text is not None:
            comment = f'"{text}"'
    return _line(ins.address, ins.display_mnemonic(), ops, comment)


def disassemble(data: bytes, base: int, syms: Optional[SymbolMap] = None,
                count: Optional[int] = None) -> list:
    """One text line per instruction; unknown encodings become DCW lines."""
    return [format_instr(ins, syms, data, base) for ins in decode_all(data, base, count)]


def disassemble_stub(stub: EncodedStub, syms: Optional[SymbolMap] = None) -> list:
    """Render a stub with its code, alignment gap, pool and strings as separate blocks."""
    blob = stub.to_bytes()
    # annotate LDRs against the whole blob so pool words and strings resolve
    lines = [format_instr(ins, syms, blob, stub.base)
             for ins in decode_all(blob[:stub.code_size], stub.base)]
    if stub.literal_pool or stub.strings:
        if stub.pool_offset != stub.code_size:
            lines.append(_line(stub.base + stub.code_size, "ALIGN", "4"))
        names = {}
        for off, _ in stub.strings:
            names[stub.base + off] = f"str_{stub.base + off:X}"
        for off, word in stub.literal_pool:
            label = names.get(word, f"{word:#x}")
            lines.append(_line(stub.base + off, "DCD", label))
        for off, text in stub.strings:
            lines.append(_line(stub.base + off, "DCB", f'"{text}",0'))
    return lines
