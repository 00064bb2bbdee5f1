"""Classic libpcap files (microsecond timestamps, version 2.4)."""

from __future__ import annotations

import struct
from dataclasses import dataclass, field

MAGIC = 0xA1B2C3D4
MAGIC_SWAPPED = 0xD4C3B2A1
VERSION = (2, 4)
DEFAULT_SNAPLEN = 65535
GLOBAL_HEADER_LEN = 24
RECORD_HEADER_LEN = 16

LINKTYPE_ETHERNET = 1
LINKTYPE_IEEE802_11_RADIOTAP = 127
LINKTYPES = (LINKTYPE_ETHERNET, LINKTYPE_IEEE802_11_RADIOTAP)


class PcapError(ValueError):
    pass


@dataclass(frozen=True)
class CaptureRecord:
    timestamp_us: int
    data: bytes


@dataclass
class Capture:
    linktype: int
    records: list = field(default_factory=list)
    snaplen: int = DEFAULT_SNAPLEN


def pcap_bytes(records, linktype: int, snaplen: int = DEFAULT_SNAPLEN) -> bytes:
    if linktype not in LINKTYPES:
        raise PcapError(f"unsupported linktype {linktype}")
    out = bytearray(struct.pack("<IHHiIII", MAGIC, *VERSION, 0, 0, snaplen, linktype))
    last = None
    for rec in records:
        if last is not None and rec.timestamp_us <= last:
            raise PcapError(f"timestamps must increase strictly ({rec.timestamp_us} after {last})")
        last = rec.timestamp_us
        if len(rec.data) > snaplen:
            raise PcapError(f"record of {len(rec.data)} bytes exceeds snaplen {snaplen}")
        sec, usec = divmod(rec.timestamp_us, 1_000_000)
        out += struct.pack("<IIII", sec, usec, len(rec.data), len(rec.data))
        out += rec.data
    return bytes(out)


def parse_pcap(data: bytes) -> Capture:
    if len(data) < GLOBAL_HEADER_LEN:
        raise PcapError("truncated pcap global header")
    magic = struct.unpack_from("<I", data)[0]
    if magic == MAGIC:
        endian = "<"
    elif magic == MAGIC_SWAPPED:
        endian = ">"
    else:
        raise PcapError(f"bad pcap magic {magic:#010x}")
    _, major, minor, _, _, snaplen, linktype = struct.unpack_from(endian + "IHHiIII", data)
    if (major, minor) != VERSION:
        raise PcapError(f"unsupported pcap version {major}.{minor}")
    records = []
    off = GLOBAL_HEADER_LEN
    while off < len(data):
        if off + RECORD_HEADER_LEN > len(data):
            raise PcapError(f"truncated record header at offset {off}")
        sec, usec, incl, _orig = struct.unpack_from(endian + "IIII", data, off)
        off += RECORD_HEADER_LEN
        if off + incl > len(data):
            raise PcapError(f"truncated record body at offset {off}")
        records.append(CaptureRecord(sec * 1_000_000 + usec, bytes(data[off:off + incl])))
        off += incl
    return Capture(linktype, records, snaplen)


def write_pcap(records, linktype: int, path, snaplen: int = DEFAULT_SNAPLEN) -> None:
    blob = pcap_bytes(records, linktype, snaplen)
    with open(path, "wb") as fh:
        fh.write(blob)


def read_pcap(path) -> Capture:
    with open(path, "rb") as fh:
        return parse_pcap(fh.read())
