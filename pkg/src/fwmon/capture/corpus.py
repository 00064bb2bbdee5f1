"""Deterministic over-the-air frame corpora."""

from __future__ import annotations

import json
import random
import struct
from dataclasses import dataclass, field

from ..dot11 import (
    BROADCAST, CONTROL, DATA, FC_FROMDS, LLC_SNAP, MANAGEMENT, Dot11Frame, parse_mac,
)

CLASSES = (
    "own_data",
    "foreign_data",
    "broadcast_data",
    "own_beacon",
    "foreign_beacon",
    "control",
    "bad_fcs",
)

DEFAULT_STA_MAC = "02:00:00:00:00:01"
DEFAULT_BSSID = "02:00:00:00:00:aa"
HOME_SSID = b"fwmon-home"


class CorpusError(ValueError):
    pass


@dataclass(frozen=True)
class CorpusSpec:
    seed: int = 0
    counts: dict = field(default_factory=lambda: {c: 0 for c in CLASSES})
    sta_mac: str = DEFAULT_STA_MAC
    joined_bssid: str = DEFAULT_BSSID
    channel: int = 6

    def __post_init__(self):
        unknown = set(self.counts) - set(CLASSES)
        if unknown:
            raise CorpusError(f"unknown frame classes {sorted(unknown)}")
        if any(int(v) < 0 for v in self.counts.values()):
            raise CorpusError("class counts must be >= 0")
        if not 0 <= self.seed < 1 << 64:
            raise CorpusError("seed must be a 64-bit unsigned value")
        parse_mac(self.sta_mac)
        parse_mac(self.joined_bssid)

    def count(self, cls: str) -> int:
        return int(self.counts.get(cls, 0))

    @property
    def total(self) -> int:
        return sum(self.count(c) for c in CLASSES)

    def to_json(self) -> dict:
        return {
            "seed": self.seed,
            "counts": {c: self.count(c) for c in CLASSES},
            "sta_mac": self.sta_mac,
            "joined_bssid": self.joined_bssid,
            "channel": self.channel,
        }

    @classmethod
    def from_json(cls, obj) -> "CorpusSpec":
        unknown = set(obj) - {"seed", "counts", "sta_mac", "joined_bssid", "channel"}
        if unknown:
            raise CorpusError(f"unknown corpus spec keys {sorted(unknown)}")
        return cls(
            seed=int(obj.get("seed", 0)),
            counts={k: int(v) for k, v in obj.get("counts", {}).items()},
            sta_mac=obj.get("sta_mac", DEFAULT_STA_MAC),
            joined_bssid=obj.get("joined_bssid", DEFAULT_BSSID),
            channel=int(obj.get("channel", 6)),
        )


def acceptance_spec(seed: int = 4339) -> CorpusSpec:
    """The 100-frame mixed corpus used by the acceptance runs."""
    return CorpusSpec(seed=seed, counts={
        "own_data": 20, "foreign_data": 20, "broadcast_data": 15, "own_beacon": 10,
        "foreign_beacon": 15, "control": 10, "bad_fcs": 10,
    })


def _random_mac(rng: random.Random, avoid) -> bytes:
    while True:
        mac = bytearray(rng.getrandbits(8) for _ in range(6))
        mac[0] = (mac[0] & 0xFC) | 0x02  # locally administered, unicast
        mac = bytes(mac)
        if mac not in avoid:
            return mac


def _data_body(rng: random.Random) -> bytes:
    payload = bytes(rng.getrandbits(8) for _ in range(rng.randint(20, 80)))
    return LLC_SNAP + b"\x08\x00" + payload


def _beacon_body(rng: random.Random, ssid: bytes, channel: int) -> bytes:
    tsf = rng.getrandbits(64)
    body = struct.pack("<QHH", tsf, 100, 0x0401)
    body += bytes([0, len(ssid)]) + ssid
    body += bytes([1, 4, 0x82, 0x84, 0x8B, 0x96])  # supported rates
    body += bytes([3, 1, channel])                  # DS parameter set
    return body


def gen_corpus_labeled(spec: CorpusSpec) -> list:
    """[(class, frame), ...] in a seeded shuffle of the per-class counts."""
    rng = random.Random(spec.seed)
    sta = parse_mac(spec.sta_mac)
    bssid = parse_mac(spec.joined_bssid)
    known = {sta, bssid, BROADCAST}
    foreign_bssids = [_random_mac(rng, known) for _ in range(3)]
    known.update(foreign_bssids)

    labels = [c for c in CLASSES for _ in range(spec.count(c))]
    rng.shuffle(labels)

    out = []
    for seq, label in enumerate(labels):
        ch = spec.channel
        if label in ("own_data", "bad_fcs"):
            sub = rng.choice(("data", "qos_data"))
            frame = Dot11Frame(DATA, sub, sta, bssid, _random_mac(rng, known), _data_body(rng),
                               fcs_ok=label != "bad_fcs", channel=ch, fc_flags=FC_FROMDS, seq=seq)
        elif label == "foreign_data":
            sub = rng.choice(("data", "qos_data"))
            frame = Dot11Frame(DATA, sub, _random_mac(rng, known), rng.choice(foreign_bssids),
                               _random_mac(rng, known), _data_body(rng), channel=ch, fc_flags=FC_FROMDS, seq=seq)
        elif label == "broadcast_data":
            frame = Dot11Frame(DATA, "data", BROADCAST, bssid, _random_mac(rng, known), _data_body(rng),
                               channel=ch, fc_flags=FC_FROMDS, seq=seq)
        elif label == "own_beacon":
            frame = Dot11Frame(MANAGEMENT, "beacon", BROADCAST, bssid, bssid,
                               _beacon_body(rng, HOME_SSID, ch), channel=ch, seq=seq)
        elif label == "foreign_beacon":
            other = rng.choice(foreign_bssids)
            ssid = f"net-{other[-2]:02x}{other[-1]:02x}".encode()
            frame = Dot11Frame(MANAGEMENT, "beacon", BROADCAST, other, other,
                               _beacon_body(rng, ssid, ch), channel=ch, seq=seq)
        else:
            sub = rng.choice(("ack", "cts", "rts"))
            addr2 = _random_mac(rng, known) if sub == "rts" else None
            frame = Dot11Frame(CONTROL, sub, _random_mac(rng, known), addr2, channel=ch)
        out.append((label, frame))
    return out


def gen_corpus(spec: CorpusSpec) -> list:
    return [f for _, f in gen_corpus_labeled(spec)]


def corpus_json(spec: CorpusSpec) -> dict:
    return {"spec": spec.to_json(), "frames": [f.to_json() for f in gen_corpus(spec)]}


def save_corpus(spec: CorpusSpec, path) -> None:
    with open(path, "w") as fh:
        json.dump(corpus_json(spec), fh, indent=1)
        fh.write("\n")


def load_corpus(path) -> list:
    """Frames from a corpus file, or generated from a bare corpus spec file."""
    with open(path) as fh:
        try:
            obj = json.load(fh)
        except json.JSONDecodeError as exc:
            raise CorpusError(f"{path}: {exc}") from exc
    if isinstance(obj, dict) and "frames" in obj:
        try:
            return [Dot11Frame.from_json(f) for f in obj["frames"]]
        except (KeyError, TypeError, ValueError) as exc:
            raise CorpusError(f"{path}: malformed frame entry: {exc}") from exc
    return gen_corpus(CorpusSpec.from_json(obj))


def load_spec(path) -> CorpusSpec:
    with open(path) as fh:
        return CorpusSpec.from_json(json.load(fh))

