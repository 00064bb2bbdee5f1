"""Interpreter for generated hook code.

Only the instruction subset the assembler emits is executable. Branches to an
address registered in the trap table are not followed; the registered native
handler runs instead with r0-r3 as arguments and its result lands in r0.
"""

from __future__ import annotations

import logging
import struct
from dataclasses import dataclass, field
from typing import Callable, Mapping, Optional

from . import thumb
from .image import FirmwareImage, MemoryAccessError
from .thumb import LR, PC, REG_NAMES, SP

log = logging.getLogger(__name__)

# return address handed to the stub; lies outside every mapped region
SENTINEL_LR = 0xFFFFFFF1
STACK_TOP = 0xFFFF0000
DEFAULT_STACK_SIZE = 1024
DEFAULT_FUEL = 10_000

Handler = Callable[[tuple], Optional[int]]


class InterpError(RuntimeError):
    pass


class FuelExhausted(InterpError):
    def __init__(self, executed: int, pc: int):
        super().__init__(f"fuel exhausted after {executed} instructions (pc={pc:#x})")
        self.executed = executed
        self.pc = pc


class StackFault(InterpError):
    pass


class UndecodableInstruction(InterpError):
    pass


class UnmappedBranch(InterpError):
    pass


@dataclass
class TrapTable:
    entries: dict = field(default_factory=dict)  # address -> handler tag

    def register(self, address: int, tag: str) -> None:
        self.entries[address & ~1] = tag

    def get(self, address: int) -> Optional[str]:
        return self.entries.get(address & ~1)

    def __contains__(self, address):
        return (address & ~1) in self.entries

    def __len__(self):
        return len(self.entries)


@dataclass
class CpuState:
    regs: list = field(default_factory=lambda: [0] * 16)
    n: bool = False
    z: bool = False
    c: bool = False
    v: bool = False
    stack_size: int = DEFAULT_STACK_SIZE
    stack: bytearray = field(default=None, repr=False)
    halted: bool = False

    def __post_init__(self):
        if self.stack is None:
            self.stack = bytearray(self.stack_size)
        if self.regs[SP] == 0:
            self.regs[SP] = STACK_TOP

    @property
    def stack_base(self) -> int:
        return STACK_TOP - len(self.stack)

    @property
    def sp(self):
        return self.regs[SP]

    @property
    def lr(self):
        return self.regs[LR]

    @property
    def pc(self):
        return self.regs[PC]


@dataclass
class StepRecord:
    address: int
    text: str
    deltas: dict = field(default_factory=dict)  # register name -> (old, new)
    trap: Optional[str] = None

    def __str__(self):
        line = f"{self.address:08x}  {self.text}"
        if self.trap:
            line += f"  -> trap {self.trap}"
        return line


def _stack_read(cpu: CpuState, addr: int) -> int:
    if not cpu.stack_base <= addr <= STACK_TOP - 4:
        raise StackFault(f"stack underflow reading {addr:#x}")
    off = addr - cpu.stack_base
    return struct.unpack_from("<I", cpu.stack, off)[0]


def _stack_write(cpu: CpuState, addr: int, value: int) -> None:
    if not cpu.stack_base <= addr <= STACK_TOP - 4:
        raise StackFault(f"stack overflow writing {addr:#x}")
    struct.pack_into("<I", cpu.stack, addr - cpu.stack_base, value & 0xFFFFFFFF)


def _read_word(cpu: CpuState, image: FirmwareImage, addr: int) -> int:
    if cpu.stack_base <= addr < STACK_TOP:
        return _stack_read(cpu, addr)
    try:
        return image.read_u32(addr)
    except MemoryAccessError as exc:
        raise InterpError(str(exc)) from exc


def _fetch(image: FirmwareImage, pc: int) -> thumb.Instr:
    try:
        head = image.read_bytes(pc, 2)
        if head[1] >> 3 in (0b11101, 0b11110, 0b11111):
            head = image.read_bytes(pc, 4)
        return thumb.decode(head, pc)
    except MemoryAccessError as exc:
        raise InterpError(f"instruction fetch at {pc:#x}: {exc}") from exc
    except thumb.DecodeError as exc:
        raise UndecodableInstruction(str(exc)) from exc


def _add_flags(cpu: CpuState, a: int, b: int, carry_in: int = 0) -> int:
    full = a + b + carry_in
    result = full & 0xFFFFFFFF
    cpu.n = bool(result >> 31)
    cpu.z = result == 0
    cpu.c = full > 0xFFFFFFFF
    sa, sb, sr = a >> 31, b >> 31, result >> 31
    cpu.v = sa == sb and sr != sa
    return result


def _invoke_trap(tag: str, cpu: CpuState, env: Mapping[str, Handler]) -> None:
    try:
        handler = env[tag]
    except KeyError:
        raise InterpError(f"no native handler for trap {tag!r}") from None
    result = handler(tuple(cpu.regs[0:4]))
    cpu.regs[0] = (result or 0) & 0xFFFFFFFF


def _set_pc(cpu: CpuState, value: int) -> None:
    if value & ~1 == SENTINEL_LR & ~1:
        cpu.halted = True
    cpu.regs[PC] = value & ~1


def step(cpu: CpuState, image: FirmwareImage, traps: TrapTable,
         env: Mapping[str, Handler]) -> StepRecord:
    """Execute one instruction at cpu.pc."""
    pc = cpu.pc
    if pc & 1:
        raise InterpError(f"pc {pc:#x} is not halfword-aligned")
    ins = _fetch(image, pc)
    before = list(cpu.regs)
    regs = cpu.regs
    next_pc = pc + ins.size
    trap = None
    m = ins.mnemonic

    if m == "PUSH":
        new_sp = regs[SP] - 4 * len(ins.regs)
        if new_sp < cpu.stack_base:
            raise StackFault(f"stack overflow at {pc:#x}")
        for i, r in enumerate(sorted(ins.regs)):
            _stack_write(cpu, new_sp + 4 * i, regs[r])
        regs[SP] = new_sp
        regs[PC] = next_pc
    elif m == "POP":
        sp = regs[SP]
        if sp + 4 * len(ins.regs) > STACK_TOP:
            raise StackFault(f"stack underflow at {pc:#x}")
        new_pc = next_pc
        for i, r in enumerate(sorted(ins.regs)):
            value = _stack_read(cpu, sp + 4 * i)
            if r == PC:
                new_pc = value
            else:
                regs[r] = value
        regs[SP] = sp + 4 * len(ins.regs)
        _set_pc(cpu, new_pc)
    elif m == "MOVS":
        value = regs[ins.rm] if ins.rm is not None else ins.imm
        regs[ins.rd] = value
        cpu.n = bool(value >> 31)
        cpu.z = value == 0
        regs[PC] = next_pc
    elif m == "MOV":
        regs[ins.rd] = regs[ins.rm]
        regs[PC] = next_pc
    elif m in ("ADD_IMM", "SUB_IMM"):
        if ins.rd == SP:
            delta = ins.imm if m == "ADD_IMM" else -ins.imm
            new_sp = regs[SP] + delta
            if not cpu.stack_base <= new_sp <= STACK_TOP:
                raise StackFault(f"sp adjustment to {new_sp:#x} leaves the stack at {pc:#x}")
            regs[SP] = new_sp
        elif m == "ADD_IMM":
            regs[ins.rd] = _add_flags(cpu, regs[ins.rd], ins.imm)
        else:
            regs[ins.rd] = _add_flags(cpu, regs[ins.rd], (~ins.imm) & 0xFFFFFFFF, 1)
        regs[PC] = next_pc
    elif m == "LDR_LITERAL":
        regs[ins.rd] = _read_word(cpu, image, ins.literal_address)
        regs[PC] = next_pc
    elif m == "BL":
        regs[LR] = next_pc | 1
        trap = traps.get(ins.target)
        if trap is not None:
            _invoke_trap(trap, cpu, env)
            regs[PC] = next_pc
        elif image.is_mapped(ins.target):
            regs[PC] = ins.target
        else:
            raise UnmappedBranch(f"BL at {pc:#x} to unmapped, untrapped {ins.target:#x}")
    elif m == "B_W":
        trap = traps.get(ins.target)
        if trap is not None:
            # tail branch into native code: handler runs, then return through LR
            _invoke_trap(trap, cpu, env)
            _set_pc(cpu, regs[LR])
        elif image.is_mapped(ins.target):
            regs[PC] = ins.target
        else:
            raise UnmappedBranch(f"B.W at {pc:#x} to unmapped, untrapped {ins.target:#x}")
    elif m == "BX_LR":
        _set_pc(cpu, regs[LR])
    elif m == "NOP":
        regs[PC] = next_pc
    else:  # pragma: no cover - decoder and interpreter share the subset
        raise UndecodableInstruction(f"{m} at {pc:#x} not executable")

    deltas = {
        REG_NAMES[i]: (old, new)
        for i, (old, new) in enumerate(zip(before, regs))
        if old != new and i != PC
    }
    text = f"{ins.display_mnemonic()} {ins.operands()}".strip()
    return StepRecord(pc, text, deltas, trap)


class Interpreter:
    def __init__(self, image: FirmwareImage, traps: TrapTable, env: Mapping[str, Handler],
                 fuel: int = DEFAULT_FUEL, stack_size: int = DEFAULT_STACK_SIZE, trace=None):
        self.image = image
        self.traps = traps
        self.env = env
        self.fuel = fuel
        self.stack_size = stack_size
        self.trace = trace  # list to append StepRecords to, or None

    def call(self, entry: int, args=()) -> int:
        if self.fuel <= 0:
            raise InterpError("fuel must be positive")
        if len(args) > 4:
            raise InterpError("at most 4 register arguments")
        cpu = CpuState(stack_size=self.stack_size)
        for i, a in enumerate(args):
            cpu.regs[i] = a & 0xFFFFFFFF
        cpu.regs[LR] = SENTINEL_LR
        cpu.regs[PC] = entry & ~1
        entry_sp = cpu.sp
        for _ in range(self.fuel):
            record = step(cpu, self.image, self.traps, self.env)
            if self.trace is not None:
                self.trace.append(record)
            log.debug("%s", record)
            if cpu.halted:
                if cpu.sp != entry_sp:
                    raise StackFault(f"unbalanced stack on return: sp={cpu.sp:#x}, entry sp={entry_sp:#x}")
                return cpu.regs[0]
        raise FuelExhausted(self.fuel, cpu.pc)


def call_stub(image: FirmwareImage, entry: int, args=(), traps: Optional[TrapTable] = None,
              env: Optional[Mapping[str, Handler]] = None, fuel: int = DEFAULT_FUEL,
              trace=None) -> int:
    """Run the code at ``entry`` until it returns to the caller; return r0."""
    return Interpreter(image, traps or TrapTable(), env or {}, fuel=fuel, trace=trace).call(entry, args)
