"""Addressable ROM/RAM model of the Wi-Fi chip firmware.

Reads and writes go through :class:`FirmwareImage`, which refuses any access
that is not fully contained in one mapped region. There is no zero-fill for
unmapped addresses.
"""

from __future__ import annotations

import os
import struct
from dataclasses import dataclass, field

ROM_BASE = 0x0
ROM_SIZE = 640 * 1024
RAM_BASE = 0x180000
RAM_SIZE = 768 * 1024


class MemoryAccessError(ValueError):
    """Access outside mapped memory, across a region boundary, or overlapping regions."""


class WriteProtectError(MemoryAccessError):
    pass


@dataclass
class MemoryRegion:
    name: str
    base: int
    size: int
    writable: bool
    data: bytearray = field(repr=False, default_factory=bytearray)

    def __post_init__(self):
        if not self.data:
            self.data = bytearray(self.size)
        if len(self.data) != self.size:
            raise ValueError(
                f"region {self.name}: data length {len(self.data):#x} != size {self.size:#x}"
            )

    @property
    def end(self) -> int:
        return self.base + self.size

    def contains(self, addr: int, length: int = 1) -> bool:
        if length == 0:
            return self.base <= addr < self.end
        return self.base <= addr and addr + length <= self.end

    def overlaps(self, other: "MemoryRegion") -> bool:
        return self.base < other.end and other.base < self.end

    def copy(self) -> "MemoryRegion":
        return MemoryRegion(self.name, self.base, self.size, self.writable, bytearray(self.data))


def load_region(path, name: str, base: int, writable: bool) -> MemoryRegion:
    """Build a region whose contents are exactly the bytes of ``path``."""
    with open(path, "rb") as fh:
        blob = fh.read()
    return MemoryRegion(name, base, len(blob), writable, bytearray(blob))


class FirmwareImage:
    """Ordered set of non-overlapping memory regions."""

    def __init__(self, regions=None):
        self.regions: list[MemoryRegion] = []
        for region in regions or ():
            self.add_region(region)

    @classmethod
    def default(cls) -> "FirmwareImage":
        """Zero-filled 640 KiB ROM at 0x0 and 768 KiB RAM at 0x180000."""
        return cls([
            MemoryRegion("rom", ROM_BASE, ROM_SIZE, False),
            MemoryRegion("ram", RAM_BASE, RAM_SIZE, True),
        ])

    @classmethod
    def from_files(cls, ram_path, rom_path=None) -> "FirmwareImage":
        if rom_path is None:
            rom = MemoryRegion("rom", ROM_BASE, ROM_SIZE, False)
        else:
            rom = load_region(rom_path, "rom", ROM_BASE, False)
        return cls([rom, load_region(ram_path, "ram", RAM_BASE, True)])

    def add_region(self, region: MemoryRegion) -> MemoryRegion:
        if region.base < 0 or region.end > 1 << 32:
            raise MemoryAccessError(f"region {region.name} outside 32-bit space")
        for other in self.regions:
            if other.name == region.name:
                raise MemoryAccessError(f"duplicate region name {region.name!r}")
            if other.overlaps(region):
                raise MemoryAccessError(
                    f"region {region.name} [{region.base:#x}, {region.end:#x}) overlaps "
                    f"{other.name} [{other.base:#x}, {other.end:#x})"
                )
        self.regions.append(region)
        self.regions.sort(key=lambda r: r.base)
        return region

    def region(self, name: str) -> MemoryRegion:
        for r in self.regions:
            if r.name == name:
                return r
        raise KeyError(f"unknown region {name!r}")

    def has_region(self, name: str) -> bool:
        return any(r.name == name for r in self.regions)

    def region_at(self, addr: int, length: int = 1) -> MemoryRegion:
        for r in self.regions:
            if r.contains(addr, length):
                return r
        raise MemoryAccessError(
            f"range [{addr:#x}, {addr + length:#x}) is not inside a single mapped region"
        )

    def is_mapped(self, addr: int) -> bool:
        return any(r.contains(addr) for r in self.regions)

    def read_bytes(self, addr: int, length: int) -> bytes:
        if length < 0:
            raise MemoryAccessError(f"negative length {length:#x}")
        r = self.region_at(addr, length)
        off = addr - r.base
        return bytes(r.data[off:off + length])

    def write_bytes(self, addr: int, data: bytes) -> "FirmwareImage":
        r = self.region_at(addr, len(data))
        if not r.writable:
            raise WriteProtectError(f"write to read-only region {r.name} at {addr:#x}")
        off = addr - r.base
        r.data[off:off + len(data)] = data
        return self

    def read_u32(self, addr: int) -> int:
        return struct.unpack("<I", self.read_bytes(addr, 4))[0]

    def write_u32(self, addr: int, value: int) -> "FirmwareImage":
        return self.write_bytes(addr, struct.pack("<I", value & 0xFFFFFFFF))

    def read_u16(self, addr: int) -> int:
        return struct.unpack("<H", self.read_bytes(addr, 2))[0]

    def read_cstring(self, addr: int, limit: int = 256) -> bytes:
        r = self.region_at(addr)
        off = addr - r.base
        chunk = r.data[off:off + limit]
        end = chunk.find(b"\0")
        return bytes(chunk if end < 0 else chunk[:end])

    def dump_region(self, name: str, path) -> None:
        r = self.region(name)
        with open(path, "wb") as fh:
            fh.write(r.data)

    def copy(self) -> "FirmwareImage":
        return FirmwareImage([r.copy() for r in self.regions])

    def diff(self, other: "FirmwareImage") -> list[tuple[int, int]]:
        """Return [start, end) address ranges where two same-layout images differ."""
        ranges = []
        for a, b in zip(self.regions, other.regions):
            if (a.base, a.size) != (b.base, b.size):
                raise MemoryAccessError("images have different layouts")
            start = None
            for i, (x, y) in enumerate(zip(a.data, b.data)):
                if x != y and start is None:
                    start = i
                elif x == y and start is not None:
                    ranges.append((a.base + start, a.base + i))
                    start = None
            if start is not None:
                ranges.append((a.base + start, a.end))
        return ranges

    def __eq__(self, other):
        if not isinstance(other, FirmwareImage):
            return NotImplemented
        return [(r.name, r.base, r.writable, r.data) for r in self.regions] == [
            (r.name, r.base, r.writable, r.data) for r in other.regions
        ]


def hexdump(data: bytes, base: int = 0) -> str:
    """Offset, 16 bytes per line, ASCII gutter."""
    lines = []
    for i in range(0, len(data), 16):
        chunk = data[i:i + 16]
        hexpart = " ".join(f"{b:02x}" for b in chunk)
        text = "".join(chr(b) if 0x20 <= b < 0x7F else "." for b in chunk)
        lines.append(f"{base + i:08x}  {hexpart:<47}  |{text}|")
    return "\n".join(lines)


def write_blob(path, data: bytes) -> None:
    tmp = f"{path}.tmp"
    with open(tmp, "wb") as fh:
        fh.write(data)
    os.replace(tmp, path)
