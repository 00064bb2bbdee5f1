"""Synthetic stand-in for the stock BCM4339 RAM image.

The real RAM blob cannot be shipped, so this builds a 768 KiB image that holds
just the structures the patch sets and simulator touch:

* a short ``wlc_bmac_recv`` body containing a BL to ``dma_rx``;
* ``wlc_coreinit`` loading its maccontrol mask/value from the literal words
  at 0x1ab82c/0x1ab828 and calling ``wlc_bmac_mctrl``;
* the FIQ callback and handler-list pointer words.

Everything else is zero. The first 0xE00 bytes of RAM are left free for stubs.
"""

from __future__ import annotations

from .image import RAM_BASE, RAM_SIZE, FirmwareImage, MemoryRegion
from .symbols import SymbolMap, builtin_map
from .thumb import (
    LR, PC, encode_adds_imm, encode_bl, encode_ldr_literal, encode_movs_imm,
    encode_movs_reg, encode_pop, encode_push,
)

# brcmsmac d11.h
MCTL_PSM_RUN = 1 << 1
MCTL_IHR_EN = 1 << 10
MCTL_INFRA = 1 << 17
MCTL_WAKE = 1 << 26

STOCK_MCTRL_MASK = MCTL_IHR_EN | MCTL_INFRA | MCTL_PSM_RUN | MCTL_WAKE
STOCK_MCTRL_VALUE = STOCK_MCTRL_MASK

# RAM word the simulator hands to wlc_bmac_recv as its ``cnt`` out-parameter
RX_COUNT_CELL = RAM_BASE + RAM_SIZE - 4
HANDLER_LIST_NODE = 0x180E60


def _wlc_bmac_recv_body(entry: int, syms: SymbolMap) -> bytes:
    code = bytearray()
    code += encode_push([4, 5, 6, LR])
    code += encode_movs_reg(5, 0)
    code += encode_movs_reg(6, 2)
    code += encode_movs_imm(4, 0)
    code += encode_movs_reg(0, 5)
    code += encode_bl(entry + len(code), syms.lookup("dma_rx"))
    code += encode_adds_imm(4, 1)
    code += encode_movs_reg(0, 4)
    code += encode_pop([4, 5, 6, PC])
    return bytes(code)


def _wlc_coreinit_body(entry: int, syms: SymbolMap) -> bytes:
    code = bytearray()
    code += encode_push([4, LR])
    code += encode_movs_reg(4, 0)
    code += encode_ldr_literal(2, entry + len(code), syms.lookup("coreinit_mctrl_value_word"))
    code += encode_ldr_literal(1, entry + len(code), syms.lookup("coreinit_mctrl_mask_word"))
    code += encode_movs_reg(0, 4)
    code += encode_bl(entry + len(code), syms.lookup("wlc_bmac_mctrl"))
    code += encode_pop([4, PC])
    return bytes(code)


def build_stock_ram(syms: SymbolMap = None) -> bytes:
    syms = syms or builtin_map()
    image = FirmwareImage([MemoryRegion("ram", RAM_BASE, RAM_SIZE, True)])

    recv = syms.lookup("wlc_bmac_recv")
    image.write_bytes(recv, _wlc_bmac_recv_body(recv, syms))
    coreinit = syms.lookup("wlc_coreinit")
    image.write_bytes(coreinit, _wlc_coreinit_body(coreinit, syms))
    image.write_u32(syms.lookup("coreinit_mctrl_mask_word"), STOCK_MCTRL_MASK)
    image.write_u32(syms.lookup("coreinit_mctrl_value_word"), STOCK_MCTRL_VALUE)

    # Thumb function pointers carry bit 0
    image.write_u32(syms.lookup("callback_ref"), syms.lookup("callback_fn") | 1)
    image.write_u32(syms.lookup("handler_list_ref"), HANDLER_LIST_NODE)
    image.write_u32(HANDLER_LIST_NODE, syms.lookup("wlc_dpc_chain_0") | 1)
    image.write_u32(HANDLER_LIST_NODE + 4, 0)
    return bytes(image.region("ram").data)


def stock_image(syms: SymbolMap = None) -> FirmwareImage:
    image = FirmwareImage.default()
    image.write_bytes(RAM_BASE, build_stock_ram(syms))
    return image
