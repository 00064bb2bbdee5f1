"""Minimal 802.11 frame model: addressing, type/subtype, serialization."""

from __future__ import annotations

import struct
from dataclasses import dataclass
from typing import Optional

BROADCAST = b"\xff" * 6

MANAGEMENT, CONTROL, DATA = "management", "control", "data"
TYPE_CODES = {MANAGEMENT: 0, CONTROL: 1, DATA: 2}
SUBTYPE_CODES = {
    (MANAGEMENT, "probe_response"): 5,
    (MANAGEMENT, "beacon"): 8,
    (CONTROL, "rts"): 11,
    (CONTROL, "cts"): 12,
    (CONTROL, "ack"): 13,
    (DATA, "data"): 0,
    (DATA, "qos_data"): 8,
}
_SUBTYPE_NAMES = {(TYPE_CODES[t], code): (t, s) for (t, s), code in SUBTYPE_CODES.items()}

FC_TODS = 0x01
FC_FROMDS = 0x02

LLC_SNAP = b"\xaa\xaa\x03\x00\x00\x00"


class FrameError(ValueError):
    pass


def parse_mac(text: str) -> bytes:
    parts = text.split(":")
    if len(parts) != 6:
        raise ValueError(f"bad MAC address {text!r}")
    return bytes(int(p, 16) for p in parts)


def mac_str(mac: bytes) -> str:
    return ":".join(f"{b:02x}" for b in mac)


def is_group(mac: bytes) -> bool:
    return bool(mac[0] & 1)


@dataclass(frozen=True)
class Dot11Frame:
    frame_type: str
    subtype: str
    addr1: bytes
    addr2: Optional[bytes] = None
    addr3: Optional[bytes] = None
    body: bytes = b""
    fcs_ok: bool = True
    channel: int = 6
    fc_flags: int = 0
    seq: int = 0

    def __post_init__(self):
        if (self.frame_type, self.subtype) not in SUBTYPE_CODES:
            raise FrameError(f"unsupported frame {self.frame_type}/{self.subtype}")
        if not 1 <= self.channel <= 14:
            raise FrameError(f"channel {self.channel} outside 1-14")
        for name in ("addr1", "addr2", "addr3"):
            v = getattr(self, name)
            if v is not None and len(v) != 6:
                raise FrameError(f"{name} must be 6 bytes")
        if self.frame_type != CONTROL and (self.addr2 is None or self.addr3 is None):
            raise FrameError(f"{self.frame_type} frames need addr2 and addr3")
        if self.subtype == "rts" and self.addr2 is None:
            raise FrameError("RTS needs addr2")

    @property
    def bssid(self) -> Optional[bytes]:
        # simplification: addr3 regardless of the DS bits
        return self.addr3

    @property
    def is_beacon_like(self) -> bool:
        return self.subtype in ("beacon", "probe_response")

    def to_bytes(self) -> bytes:
        fc0 = (SUBTYPE_CODES[(self.frame_type, self.subtype)] << 4) | (TYPE_CODES[self.frame_type] << 2)
        out = bytearray(struct.pack("<BBH", fc0, self.fc_flags, 0))
        out += self.addr1
        if self.frame_type == CONTROL:
            if self.subtype == "rts":
                out += self.addr2
        else:
            out += self.addr2 + self.addr3
            out += struct.pack("<H", (self.seq & 0xFFF) << 4)
            if self.subtype == "qos_data":
                out += b"\x00\x00"
            out += self.body
        return bytes(out)

    @classmethod
    def from_bytes(cls, data: bytes, channel: int = 6, fcs_ok: bool = True) -> "Dot11Frame":
        if len(data) < 10:
            raise FrameError("frame shorter than the minimal control header")
        fc0, flags = data[0], data[1]
        if fc0 & 3:
            raise FrameError(f"unsupported protocol version {fc0 & 3}")
        key = ((fc0 >> 2) & 3, fc0 >> 4)
        if key not in _SUBTYPE_NAMES:
            raise FrameError(f"unsupported type/subtype {key}")
        ftype, sub = _SUBTYPE_NAMES[key]
        addr1 = bytes(data[4:10])
        if ftype == CONTROL:
            if sub == "rts":
                if len(data) < 16:
                    raise FrameError("truncated RTS")
                return cls(ftype, sub, addr1, bytes(data[10:16]), fcs_ok=fcs_ok, channel=channel, fc_flags=flags)
            return cls(ftype, sub, addr1, fcs_ok=fcs_ok, channel=channel, fc_flags=flags)
        hdr = 26 if sub == "qos_data" else 24
        if len(data) < hdr:
            raise FrameError("truncated header")
        seq = struct.unpack_from("<H", data, 22)[0] >> 4
        return cls(ftype, sub, addr1, bytes(data[10:16]), bytes(data[16:22]), bytes(data[hdr:]),
                   fcs_ok=fcs_ok, channel=channel, fc_flags=flags, seq=seq)

    def to_json(self) -> dict:
        return {
            "type": self.frame_type,
            "subtype": self.subtype,
            "addr1": mac_str(self.addr1),
            "addr2": mac_str(self.addr2) if self.addr2 else None,
            "addr3": mac_str(self.addr3) if self.addr3 else None,
            "body": self.body.hex(),
            "fcs_ok": self.fcs_ok,
            "channel": self.channel,
            "fc_flags": self.fc_flags,
            "seq": self.seq,
        }

    @classmethod
    def from_json(cls, obj) -> "Dot11Frame":
        return cls(
            frame_type=obj["type"],
            subtype=obj["subtype"],
            addr1=parse_mac(obj["addr1"]),
            addr2=parse_mac(obj["addr2"]) if obj.get("addr2") else None,
            addr3=parse_mac(obj["addr3"]) if obj.get("addr3") else None,
            body=bytes.fromhex(obj.get("body", "")),
            fcs_ok=bool(obj.get("fcs_ok", True)),
            channel=int(obj.get("channel", 6)),
            fc_flags=int(obj.get("fc_flags", 0)),
            seq=int(obj.get("seq", 0)),
        )


def to_ethernet(frame: Dot11Frame) -> bytes:
    """802.11 data frame -> Ethernet II (dst=addr1, src=addr3), stripping LLC/SNAP."""
    if frame.frame_type != DATA:
        raise FrameError("only data frames convert to Ethernet")
    body = frame.body
    if body[:6] == LLC_SNAP and len(body) >= 8:
        return frame.addr1 + frame.addr3 + body[6:8] + body[8:]
    # no SNAP header: 802.3 length framing
    return frame.addr1 + frame.addr3 + struct.pack(">H", len(body)) + body
