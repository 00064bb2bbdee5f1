"""Behavioral model of the BCM4339 receive pipeline.

Frames arrive over the air, pass (or fail) the D11 maccontrol filter, land in
the RX DMA ring and raise the external interrupt. Dispatch walks the FIQ
handler chain to ``wlc_bmac_recv``. In stock mode that is a native model of
the firmware function; in patched mode the interpreter executes whatever bytes
sit at the function entry, which after the monitor patch is a B.W into the
generated stub and from there a trap into :meth:`SimState.monitor_recv_trap`.
"""

from __future__ import annotations

import logging
import re
from collections import deque
from dataclasses import asdict, dataclass, field
from typing import Optional

from . import patcher
from .capture.radiotap import RadiotapDefaults, build_radiotap
from .dot11 import BROADCAST, CONTROL, MANAGEMENT, Dot11Frame, is_group, parse_mac, to_ethernet
from .image import FirmwareImage, MemoryAccessError
from .interp import DEFAULT_FUEL, Interpreter, TrapTable
from .patcher import MctlBits, PatchManifest
from .sdio import DATA_CHANNEL, HEADER_SIZE, MONITOR_CHANNEL, SdioFrame
from .stockfw import RX_COUNT_CELL
from .symbols import FIQ_CHAIN, SymbolMap, builtin_map
from .thumb import DecodeError, decode_all, decode_bl

log = logging.getLogger(__name__)

CONSOLE_SIZE = 16 * 1024
FIFO_COUNT = 4
RX_FIFO = 0
DEFAULT_HEADROOM = 32

# opaque handles standing in for firmware pointers
WLC_HW_HANDLE = 0x1F0000
SDIO_INFO_HANDLE = 0x1F8000
DI_HANDLE_BASE = 0x1E0000
PKT_HANDLE_BASE = 0x200000
PKT_HANDLE_SLOTS = 0x1000

NATIVE_TRAPS = ("printf", "dma_rx", "dngl_sendpkt", "wlc_bmac_mctrl")


class SimError(RuntimeError):
    pass


class BootError(SimError):
    pass


class HeadroomError(SimError):
    pass


@dataclass
class SimConfig:
    rxbnd: int = 8
    ring_capacity: int = 64
    headroom: int = DEFAULT_HEADROOM
    stock_data_channel: int = DATA_CHANNEL
    corrected_loop: bool = False
    # test hook: disable the per-call maccontrol re-assertion in the monitor handler
    reassert_mctrl: bool = True
    mctl: MctlBits = field(default_factory=MctlBits)
    sta_mac: str = "02:00:00:00:00:01"
    joined_bssid: str = "02:00:00:00:00:aa"
    count_cell: int = RX_COUNT_CELL
    fuel: int = DEFAULT_FUEL
    radiotap: RadiotapDefaults = field(default_factory=RadiotapDefaults)

    def __post_init__(self):
        if self.rxbnd <= 0:
            raise ValueError("rxbnd must be positive")
        if self.ring_capacity <= 0:
            raise ValueError("ring_capacity must be positive")
        if not 0 <= self.stock_data_channel <= 0xF or self.stock_data_channel == MONITOR_CHANNEL:
            raise ValueError("stock data channel must be a 4-bit value other than 0xF")


# -- D11 filter ---------------------------------------------------------------

def d11_accept(frame: Dot11Frame, maccontrol: int, sta_mac: bytes, joined_bssid: bytes,
               mctl: MctlBits = MctlBits()) -> bool:
    """Hardware receive filter. Rules are checked in order; the first match decides."""
    if not frame.fcs_ok:
        return bool(maccontrol & mctl.keepbadfcs)
    if frame.frame_type == CONTROL:
        return bool(maccontrol & mctl.keepcontrol)
    if frame.is_beacon_like and frame.bssid != joined_bssid:
        return bool(maccontrol & mctl.bcns_promisc)
    if frame.addr1 != sta_mac and not is_group(frame.addr1):
        return bool(maccontrol & mctl.promisc)
    return True


# -- buffers and rings --------------------------------------------------------

@dataclass
class RxHeader:
    channel: int
    fcs_ok: bool


@dataclass
class PacketBuffer:
    data: bytes
    headroom: int = DEFAULT_HEADROOM
    fifo: int = RX_FIFO
    frame: Optional[Dot11Frame] = None
    rxh: Optional[RxHeader] = None

    def prepend(self, header: bytes) -> None:
        if len(header) > self.headroom:
            raise HeadroomError(f"need {len(header)} bytes of headroom, have {self.headroom}")
        self.data = header + self.data
        self.headroom -= len(header)


class DmaRing:
    """RX descriptor ring. ``posted`` counts empty buffers the hardware may still fill."""

    def __init__(self, capacity: int):
        self.capacity = capacity
        self.posted = capacity
        self.queue: deque = deque()

    def push(self, frame) -> bool:
        if self.posted == 0:
            return False
        self.queue.append(frame)
        self.posted -= 1
        return True

    def pop(self):
        return self.queue.popleft() if self.queue else None

    def refill(self) -> None:
        self.posted = self.capacity - len(self.queue)

    def __len__(self):
        return len(self.queue)


@dataclass
class D11Core:
    maccontrol: int
    rx_ring: DmaRing
    sta_mac: bytes
    joined_bssid: bytes
    fifo_count: int = FIFO_COUNT


@dataclass
class Counters:
    frames_offered: int = 0
    frames_accepted: int = 0
    dropped_filter: int = 0
    dropped_overflow: int = 0
    dma_rx_calls: int = 0
    rxfill_calls: int = 0
    sendpkt_calls: int = 0
    mgmt_consumed: int = 0
    ctl_consumed: int = 0
    data_delivered: int = 0
    data_dropped: int = 0
    interrupts: int = 0
    dispatches: int = 0


class Console:
    """Firmware printf ring; oldest text is overwritten once full."""

    def __init__(self, size: int = CONSOLE_SIZE):
        self.buf: deque = deque(maxlen=size)

    def write(self, text: str) -> None:
        self.buf.extend(text)

    def dump(self) -> str:
        return "".join(self.buf)


_PRINTF_SPEC = re.compile(r"%([-0]?)(\d*)(l?)([diuxXscp%])")


def format_printf(fmt: str, args, read_string) -> str:
    """Subset of C printf over 32-bit register arguments."""
    args = list(args)

    def repl(m):
        flag, width, _, conv = m.groups()
        if conv == "%":
            return "%"
        value = args.pop(0) if args else 0
        if conv in "di":
            text = str(value - (1 << 32) if value & 0x80000000 else value)
        elif conv == "u":
            text = str(value)
        elif conv in "xX":
            text = format(value, conv)
        elif conv == "p":
            text = f"0x{value:x}"
        elif conv == "c":
            text = chr(value & 0xFF)
        else:
            text = read_string(value)
        w = int(width or 0)
        if flag == "-":
            return text.ljust(w)
        return text.rjust(w, "0" if flag == "0" and conv not in "sc" else " ")

    return _PRINTF_SPEC.sub(repl, fmt)


# -- simulator state ----------------------------------------------------------

class SimState:
    def __init__(self, memory: FirmwareImage, syms: SymbolMap, config: SimConfig, mode: str,
                 traps: TrapTable):
        self.memory = memory
        self.syms = syms
        self.config = config
        self.mode = mode
        self.traps = traps
        self.d11 = D11Core(0, DmaRing(config.ring_capacity), parse_mac(config.sta_mac),
                           parse_mac(config.joined_bssid))
        self.console = Console()
        self.host_queue: list = []
        self.counters = Counters()
        self.irq_pending = False
        self.mctrl_history: list = []
        self.dispatch_log: list = []
        self.dispatch_results: list = []
        self.trace: Optional[list] = None
        self._packets: dict = {}
        self._next_pkt = 0
        self.dma_rx_site = self._find_dma_rx_site()
        self.env = {
            "printf": self._trap_printf,
            "dma_rx": self._trap_dma_rx,
            "dngl_sendpkt": self._trap_sendpkt,
            "wlc_bmac_mctrl": self._trap_mctrl,
            "monitor_recv": self.monitor_recv_trap,
        }

    # register model

    def wlc_bmac_mctrl(self, mask: int, val: int) -> int:
        mask &= 0xFFFFFFFF
        old = self.d11.maccontrol
        self.d11.maccontrol = (old & ~mask & 0xFFFFFFFF) | (val & mask)
        self.mctrl_history.append({"mask": mask, "value": val & 0xFFFFFFFF, "result": self.d11.maccontrol})
        return self.d11.maccontrol

    @property
    def maccontrol(self) -> int:
        return self.d11.maccontrol

    # air side

    def inject_air_frame(self, frame: Dot11Frame) -> bool:
        c = self.counters
        c.frames_offered += 1
        if not d11_accept(frame, self.d11.maccontrol, self.d11.sta_mac, self.d11.joined_bssid, self.config.mctl):
            c.dropped_filter += 1
            return False
        if not self.d11.rx_ring.push(frame):
            c.dropped_overflow += 1
            return False
        c.frames_accepted += 1
        if not self.irq_pending:
            c.interrupts += 1
        self.irq_pending = True
        return True

    # firmware functions

    def dma_rx(self, fifo: int = RX_FIFO) -> Optional[PacketBuffer]:
        self.counters.dma_rx_calls += 1
        frame = self.d11.rx_ring.pop()
        if frame is None:
            return None
        return PacketBuffer(frame.to_bytes(), self.config.headroom, fifo, frame,
                            RxHeader(frame.channel, frame.fcs_ok))

    def dma_rxfill(self, fifo: int = RX_FIFO) -> None:
        self.counters.rxfill_calls += 1
        self.d11.rx_ring.refill()

    def dngl_sendpkt(self, buf: PacketBuffer, channel: int) -> None:
        if buf.headroom < HEADER_SIZE:
            raise HeadroomError(f"dngl_sendpkt needs {HEADER_SIZE} bytes of headroom, have {buf.headroom}")
        self.counters.sendpkt_calls += 1
        buf.headroom -= HEADER_SIZE
        self.host_queue.append(SdioFrame(channel & 0xF, bytes(buf.data)).pack())

    def wlc_recv(self, buf: PacketBuffer) -> None:
        """Stock frame processing: only valid data frames for this station reach the host."""
        frame = buf.frame
        c = self.counters
        if frame.frame_type == MANAGEMENT:
            c.mgmt_consumed += 1
        elif frame.frame_type == CONTROL:
            c.ctl_consumed += 1
        elif frame.fcs_ok and frame.addr1 in (self.d11.sta_mac, BROADCAST):
            buf.data = to_ethernet(frame)
            self.dngl_sendpkt(buf, self.config.stock_data_channel)
            c.data_delivered += 1
        else:
            c.data_dropped += 1

    def stock_wlc_bmac_recv(self, fifo: int = RX_FIFO, bound: int = 1) -> bool:
        limit = self.config.rxbnd if bound else None
        frames = []
        while True:
            buf = self._call_dma_rx(fifo)
            if buf is None:
                break
            frames.append(buf)
            if limit is not None and len(frames) >= limit:
                break
        self.dma_rxfill(fifo)
        for buf in frames:
            self.wlc_recv(buf)
        return limit is not None and len(frames) >= limit

    def monitor_recv_trap(self, args) -> int:
        """Replacement wlc_bmac_recv: forward raw frames to the host on channel 0xF."""
        _wlc_hw, fifo, _bound, cnt = (tuple(args) + (0, 0, 0, 0))[:4]
        fifo = fifo if 0 <= fifo < FIFO_COUNT else RX_FIFO
        bound_limit = self.config.rxbnd
        n = 0
        while True:
            p = self.dma_rx(fifo)
            if p is not None:
                p.prepend(build_radiotap(p.frame, self.config.radiotap))
                self.dngl_sendpkt(p, MONITOR_CHANNEL)
            elif self.config.corrected_loop:
                break
            n += 1
            if not n < bound_limit:
                break
        if cnt:
            try:
                self.memory.write_u32(cnt, self.memory.read_u32(cnt) + n)
            except MemoryAccessError as exc:
                raise SimError(f"count cell {cnt:#x}: {exc}") from exc
        self.dma_rxfill(fifo)
        if self.config.reassert_mctrl:
            combined = self.config.mctl.combined
            self.wlc_bmac_mctrl(combined, combined)
        return 0 if n < bound_limit else 1

    def consoledump(self) -> str:
        return self.console.dump()

    # interrupt path

    def dispatch_interrupt(self) -> int:
        self.irq_pending = False
        self.counters.dispatches += 1
        chain = [{"address": 0x0, "name": "fiq_vector"}]
        for name in FIQ_CHAIN:
            sym = self.syms.get(name)
            if sym is None:
                continue
            entry = {"address": sym.address, "name": name}
            if sym.kind == "data-word":
                try:
                    entry["value"] = self.memory.read_u32(sym.address)
                except MemoryAccessError:
                    pass
            chain.append(entry)
        self.dispatch_log.append(chain)

        if self.mode == "patched":
            args = (WLC_HW_HANDLE, RX_FIFO, 1, self.config.count_cell)
            result = self._interpreter().call(self.syms.lookup("wlc_bmac_recv"), args)
        else:
            result = int(self.stock_wlc_bmac_recv(RX_FIFO, 1))
        if len(self.d11.rx_ring):
            self.irq_pending = True
        self.dispatch_results.append({"return": result, "maccontrol": self.d11.maccontrol})
        return result

    def service(self) -> None:
        while self.irq_pending:
            self.dispatch_interrupt()

    def run(self, frames, batch: Optional[int] = None) -> None:
        """Inject frames, servicing the interrupt once ``batch`` frames are pending."""
        batch = batch or self.config.rxbnd
        for frame in frames:
            self.inject_air_frame(frame)
            if len(self.d11.rx_ring) >= batch:
                self.service()
        self.service()

    def report(self) -> dict:
        return {
            "mode": self.mode,
            "maccontrol": f"{self.d11.maccontrol:#010x}",
            "counters": asdict(self.counters),
            "host_frames": len(self.host_queue),
            "dispatch_chain": [
                {k: (f"{v:#x}" if k in ("address", "value") else v) for k, v in e.items()}
                for e in (self.dispatch_log[0] if self.dispatch_log else [])
            ],
            "dispatches": [
                {"return": d["return"], "maccontrol": f"{d['maccontrol']:#010x}"}
                for d in self.dispatch_results
            ],
            "maccontrol_history": [
                {k: f"{v:#010x}" for k, v in h.items()} for h in self.mctrl_history
            ],
        }

    # helpers

    def _interpreter(self) -> Interpreter:
        return Interpreter(self.memory, self.traps, self.env, fuel=self.config.fuel, trace=self.trace)

    def _find_dma_rx_site(self) -> Optional[int]:
        """The first BL in wlc_bmac_recv is its dma_rx call (possibly redirected by a patch)."""
        if "wlc_bmac_recv" not in self.syms:
            return None
        entry = self.syms.lookup("wlc_bmac_recv")
        try:
            data = self.memory.read_bytes(entry, patcher.HELLO_SEARCH_WINDOW)
        except MemoryAccessError:
            return None
        for ins in decode_all(data, entry, patcher.HELLO_SEARCH_WINDOW // 2):
            if getattr(ins, "mnemonic", None) == "BL":
                return ins.address
        return None

    def _call_dma_rx(self, fifo: int) -> Optional[PacketBuffer]:
        """dma_rx as called from the stock receive loop, honouring whatever the call site now targets."""
        if self.dma_rx_site is None:
            return self.dma_rx(fifo)
        try:
            target = decode_bl(self.memory.read_bytes(self.dma_rx_site, 4), self.dma_rx_site)
        except DecodeError as exc:
            raise SimError(f"dma_rx call site {self.dma_rx_site:#x} no longer holds a BL") from exc
        if target == self.syms.lookup("dma_rx"):
            return self.dma_rx(fifo)
        handle = self._interpreter().call(target, (DI_HANDLE_BASE + 0x100 * fifo,))
        return self._take_packet(handle)

    def _put_packet(self, buf: PacketBuffer) -> int:
        handle = PKT_HANDLE_BASE + 0x10 * (self._next_pkt % PKT_HANDLE_SLOTS)
        self._next_pkt += 1
        self._packets[handle] = buf
        return handle

    def _take_packet(self, handle: int) -> Optional[PacketBuffer]:
        if handle == 0:
            return None
        try:
            return self._packets.pop(handle)
        except KeyError:
            raise SimError(f"unknown packet handle {handle:#x}") from None

    def _read_string(self, addr: int) -> str:
        try:
            return self.memory.read_cstring(addr).decode("latin-1")
        except MemoryAccessError:
            return "(bad ptr)"

    def _trap_printf(self, args) -> int:
        text = format_printf(self._read_string(args[0]), args[1:], self._read_string)
        if not text.endswith("\n"):
            text += "\n"
        self.console.write(text)
        return len(text)

    def _trap_dma_rx(self, args) -> int:
        fifo = (args[0] - DI_HANDLE_BASE) // 0x100
        buf = self.dma_rx(fifo if 0 <= fifo < FIFO_COUNT else RX_FIFO)
        return 0 if buf is None else self._put_packet(buf)

    def _trap_sendpkt(self, args) -> int:
        buf = self._take_packet(args[1])
        if buf is not None:
            self.dngl_sendpkt(buf, args[2])
        return 0

    def _trap_mctrl(self, args) -> int:
        self.wlc_bmac_mctrl(args[1], args[2])
        return 0


def boot(image: FirmwareImage, manifest: Optional[PatchManifest] = None,
         syms: Optional[SymbolMap] = None, config: Optional[SimConfig] = None,
         force_stock: bool = False) -> SimState:
    """Bring the chip up from ``image``; coreinit programs maccontrol from the image's literal words."""
    syms = syms or builtin_map()
    config = config or SimConfig()
    if not image.has_region("ram"):
        raise BootError("image has no RAM region")
    traps = TrapTable()
    for tag in NATIVE_TRAPS:
        if tag in syms:
            traps.register(syms.lookup(tag), tag)
    mode = "stock"
    if manifest is not None:
        report = patcher.verify(image, manifest, syms)
        if not report.ok:
            raise BootError("manifest does not match image:\n" + "\n".join(str(e) for e in report.failures))
        for addr, tag in manifest.traps:
            traps.register(addr, tag)
        if "monitor_recv" in manifest.trap_tags() and not force_stock:
            mode = "patched"

    state = SimState(image.copy(), syms, config, mode, traps)
    try:
        mask = state.memory.read_u32(syms.lookup("coreinit_mctrl_mask_word"))
        value = state.memory.read_u32(syms.lookup("coreinit_mctrl_value_word"))
    except MemoryAccessError as exc:
        raise BootError(f"cannot read coreinit maccontrol words: {exc}") from exc
    state.wlc_bmac_mctrl(mask, value)
    log.info("booted in %s mode, maccontrol=%#010x", mode, state.maccontrol)
    return state
