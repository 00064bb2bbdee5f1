"""Host-bound SDIO frame record.

Wire layout (4-byte header, little endian):
    length (u16, header + payload) | channel (u8, low nibble) | flags (u8, zero)
"""

from __future__ import annotations

import struct
from dataclasses import dataclass

HEADER_SIZE = 4
MONITOR_CHANNEL = 0xF
DATA_CHANNEL = 0x2


class SdioError(ValueError):
    pass


@dataclass(frozen=True)
class SdioFrame:
    channel: int
    payload: bytes
    flags: int = 0

    def __post_init__(self):
        if not 0 <= self.channel <= 0xF:
            raise SdioError(f"channel {self.channel:#x} does not fit in 4 bits")
        if self.flags:
            raise SdioError("reserved flags must be zero")
        if HEADER_SIZE + len(self.payload) > 0xFFFF:
            raise SdioError("frame too long for 16-bit length")

    @property
    def length(self) -> int:
        return HEADER_SIZE + len(self.payload)

    def pack(self) -> bytes:
        return struct.pack("<HBB", self.length, self.channel, self.flags) + self.payload

    @classmethod
    def unpack(cls, data: bytes) -> "SdioFrame":
        if len(data) < HEADER_SIZE:
            raise SdioError("truncated SDIO header")
        length, channel, flags = struct.unpack_from("<HBB", data)
        if length != len(data):
            raise SdioError(f"SDIO length {length} != frame size {len(data)}")
        if channel > 0xF or flags:
            raise SdioError(f"bad SDIO channel/flags {channel:#x}/{flags:#x}")
        if length == HEADER_SIZE:
            raise SdioError("zero-length SDIO payload")
        return cls(channel, bytes(data[HEADER_SIZE:]))
