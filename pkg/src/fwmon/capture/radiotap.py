"""Radiotap header with the flags and channel fields only.

Values other than the bad-FCS flag and the channel frequency come from a fixed
defaults table; the firmware has no per-frame PHY metadata to report.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from typing import Optional

from ..dot11 import Dot11Frame

PRESENT_TSFT = 1 << 0
PRESENT_FLAGS = 1 << 1
PRESENT_RATE = 1 << 2
PRESENT_CHANNEL = 1 << 3
PRESENT_EXT = 1 << 31

FLAG_FCS_AT_END = 0x10
FLAG_BADFCS = 0x40

CHAN_CCK = 0x0020
CHAN_OFDM = 0x0040
CHAN_2GHZ = 0x0080

# (alignment, size) for the fields that can precede channel
_FIELD_LAYOUT = {0: (8, 8), 1: (1, 1), 2: (1, 1), 3: (2, 4)}


class RadiotapError(ValueError):
    pass


@dataclass(frozen=True)
class RadiotapDefaults:
    flags: int = 0
    channel_flags: int = CHAN_2GHZ | CHAN_CCK


@dataclass(frozen=True)
class RadiotapHeader:
    length: int
    present: int
    flags: Optional[int] = None
    channel_freq: Optional[int] = None
    channel_flags: Optional[int] = None
    version: int = 0
    pad: int = 0

    @property
    def bad_fcs(self) -> bool:
        return bool(self.flags is not None and self.flags & FLAG_BADFCS)


def channel_to_freq(channel: int) -> int:
    if channel == 14:
        return 2484
    if 1 <= channel <= 13:
        return 2407 + 5 * channel
    raise RadiotapError(f"no 2.4 GHz frequency for channel {channel}")


def build_radiotap(frame: Dot11Frame, defaults: RadiotapDefaults = RadiotapDefaults()) -> bytes:
    flags = defaults.flags & ~FLAG_BADFCS
    if not frame.fcs_ok:
        flags |= FLAG_BADFCS
    present = PRESENT_FLAGS | PRESENT_CHANNEL
    # header(8) flags(1) pad(1) channel(2+2)
    body = struct.pack("<BxHH", flags, channel_to_freq(frame.channel), defaults.channel_flags)
    return struct.pack("<BBHI", 0, 0, 8 + len(body), present) + body


def parse_radiotap(data: bytes):
    """Return (RadiotapHeader, bytes following the header)."""
    if len(data) < 8:
        raise RadiotapError(f"truncated radiotap header ({len(data)} bytes)")
    version, pad, length, present = struct.unpack_from("<BBHI", data)
    if version != 0:
        raise RadiotapError(f"unsupported radiotap version {version}")
    if length < 8 or length > len(data):
        raise RadiotapError(f"radiotap length {length} inconsistent with {len(data)} available bytes")
    offset = 8
    word = present
    while word & PRESENT_EXT:
        if offset + 4 > length:
            raise RadiotapError("truncated present bitmap")
        word = struct.unpack_from("<I", data, offset)[0]
        offset += 4

    fields = {}
    for bit in range(4):
        if not present & (1 << bit):
            continue
        align, size = _FIELD_LAYOUT[bit]
        offset = (offset + align - 1) & ~(align - 1)
        if offset + size > length:
            raise RadiotapError(f"radiotap field {bit} runs past header length")
        fields[bit] = data[offset:offset + size]
        offset += size

    flags = fields[1][0] if 1 in fields else None
    freq = chflags = None
    if 3 in fields:
        freq, chflags = struct.unpack("<HH", fields[3])
    header = RadiotapHeader(length, present, flags, freq, chflags, version, pad)
    return header, bytes(data[length:])
