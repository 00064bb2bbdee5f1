import struct

import pytest
from hypothesis import given, settings, strategies as st

from fwmon.capture import (
    CaptureRecord, CorpusSpec, PcapError, RadiotapError, acceptance_spec, build_radiotap,
    gen_corpus, gen_corpus_labeled, host_deliver, parse_radiotap, read_pcap, write_pcap,
)
from fwmon.capture.corpus import CorpusError, load_corpus, save_corpus
from fwmon.capture.pcap import parse_pcap, pcap_bytes
from fwmon.capture.radiotap import FLAG_BADFCS, channel_to_freq
from fwmon.dot11 import BROADCAST, CONTROL, DATA, MANAGEMENT, Dot11Frame, FrameError
from fwmon.sdio import SdioError, SdioFrame

macs = st.binary(min_size=6, max_size=6)
frames_st = st.builds(
    Dot11Frame,
    frame_type=st.just(DATA),
    subtype=st.sampled_from(["data", "qos_data"]),
    addr1=macs, addr2=macs, addr3=macs,
    body=st.binary(max_size=64),
    fcs_ok=st.booleans(),
    channel=st.integers(1, 14),
    seq=st.integers(0, 4095),
)


# -- radiotap -----------------------------------------------------------------

def test_radiotap_layout():
    f = Dot11Frame(DATA, "data", BROADCAST, BROADCAST, BROADCAST, channel=6)
    hdr = build_radiotap(f)
    assert len(hdr) == 14
    version, pad, length, present = struct.unpack_from("<BBHI", hdr)
    assert (version, pad, length, present) == (0, 0, 14, 0b1010)
    assert hdr[8] & FLAG_BADFCS == 0
    assert struct.unpack_from("<H", hdr, 10)[0] == 2437


def test_radiotap_bad_fcs_flag():
    f = Dot11Frame(DATA, "data", BROADCAST, BROADCAST, BROADCAST, fcs_ok=False)
    assert build_radiotap(f)[8] & FLAG_BADFCS


@pytest.mark.parametrize("ch,freq", [(1, 2412), (6, 2437), (11, 2462), (13, 2472), (14, 2484)])
def test_channel_freq(ch, freq):
    assert channel_to_freq(ch) == freq


@settings(max_examples=200, deadline=None)
@given(frames_st)
def test_radiotap_round_trip(frame):
    blob = build_radiotap(frame) + frame.to_bytes()
    hdr, rest = parse_radiotap(blob)
    assert rest == frame.to_bytes()
    assert hdr.bad_fcs == (not frame.fcs_ok)
    assert hdr.channel_freq == channel_to_freq(frame.channel)


def test_radiotap_truncated():
    with pytest.raises(RadiotapError):
        parse_radiotap(b"\x00\x00")


def test_radiotap_version():
    blob = bytearray(build_radiotap(Dot11Frame(CONTROL, "ack", BROADCAST)))
    blob[0] = 1
    with pytest.raises(RadiotapError):
        parse_radiotap(bytes(blob))


def test_radiotap_skips_extended_bitmap_and_tsft():
    # present: TSFT|flags|channel|ext, second word 0; TSFT needs 8-byte alignment
    present = (1 << 0) | (1 << 1) | (1 << 3) | (1 << 31)
    body = struct.pack("<I", 0) + b"\x00" * 4 + struct.pack("<Q", 123) + bytes([FLAG_BADFCS, 0]) + struct.pack("<HH", 2412, 0xA0)
    blob = struct.pack("<BBHI", 0, 0, 8 + len(body), present) + body + b"payload"
    hdr, rest = parse_radiotap(blob)
    assert rest == b"payload" and hdr.bad_fcs and hdr.channel_freq == 2412


# -- pcap ---------------------------------------------------------------------

def test_empty_pcap_is_24_bytes(tmp_path):
    p = tmp_path / "e.pcap"
    write_pcap([], 127, p)
    assert p.stat().st_size == 24
    assert p.read_bytes()[:4] == bytes.fromhex("d4c3b2a1")


@settings(max_examples=100, deadline=None)
@given(st.lists(st.binary(max_size=200), max_size=20), st.sampled_from([1, 127]))
def test_pcap_round_trip(payloads, linktype):
    recs = [CaptureRecord(1_000_000 + 7 * i, p) for i, p in enumerate(payloads)]
    blob = pcap_bytes(recs, linktype)
    cap = parse_pcap(blob)
    assert cap.linktype == linktype and cap.records == recs
    assert pcap_bytes(cap.records, cap.linktype) == blob


def test_pcap_file_round_trip(tmp_path):
    recs = [CaptureRecord(5, b"a"), CaptureRecord(6, b"bc")]
    p = tmp_path / "x.pcap"
    write_pcap(recs, 1, p)
    assert read_pcap(p).records == recs


def test_pcap_errors():
    with pytest.raises(PcapError):
        parse_pcap(b"\x00" * 24)
    good = pcap_bytes([CaptureRecord(1, b"abcd")], 1)
    with pytest.raises(PcapError):
        parse_pcap(good[:-1])
    with pytest.raises(PcapError):
        pcap_bytes([], 105)
    with pytest.raises(PcapError):
        pcap_bytes([CaptureRecord(2, b""), CaptureRecord(2, b"")], 1)


def test_pcap_swapped_magic():
    good = pcap_bytes([CaptureRecord(1_000_001, b"abcd")], 1)
    hdr = struct.unpack("<IHHiIII", good[:24])
    rec = struct.unpack("<IIII", good[24:40])
    swapped = struct.pack(">IHHiIII", *hdr) + struct.pack(">IIII", *rec) + good[40:]
    assert parse_pcap(swapped).records == [CaptureRecord(1_000_001, b"abcd")]


# -- sdio / host --------------------------------------------------------------

def test_sdio_round_trip():
    f = SdioFrame(0xF, b"hello")
    raw = f.pack()
    assert raw[:4] == bytes([9, 0, 0xF, 0])
    assert SdioFrame.unpack(raw) == f


@pytest.mark.parametrize("raw", [b"\x04\x00", b"\x04\x00\x0f\x00", b"\x06\x00\x0f\x00ab\x00",
                                 b"\x05\x00\x10\x00a", b"\x05\x00\x0f\x01a"])
def test_sdio_malformed(raw):
    with pytest.raises(SdioError):
        SdioFrame.unpack(raw)


def test_host_deliver_demux():
    q = [SdioFrame(0xF, b"m1").pack(), SdioFrame(2, b"e1").pack(), SdioFrame(0xF, b"m2").pack()]
    mon, eth = host_deliver(q)
    assert [r.data for r in mon] == [b"m1", b"m2"]
    assert [r.data for r in eth] == [b"e1"]
    assert mon[0].timestamp_us < mon[1].timestamp_us


def test_host_deliver_malformed():
    q = [SdioFrame(0xF, b"ok").pack(), b"\x04\x00\x0f\x00"]
    with pytest.raises(SdioError):
        host_deliver(q)
    mon, eth = host_deliver(q, strict=False)
    assert len(mon) + len(eth) == 1


# -- dot11 --------------------------------------------------------------------

@settings(max_examples=200, deadline=None)
@given(frames_st)
def test_dot11_round_trip(frame):
    back = Dot11Frame.from_bytes(frame.to_bytes(), frame.channel, frame.fcs_ok)
    assert back == frame
    assert Dot11Frame.from_json(frame.to_json()) == frame


def test_dot11_validation():
    with pytest.raises(FrameError):
        Dot11Frame(MANAGEMENT, "beacon", BROADCAST)
    with pytest.raises(FrameError):
        Dot11Frame(DATA, "ack", BROADCAST, BROADCAST, BROADCAST)
    with pytest.raises(FrameError):
        Dot11Frame.from_bytes(b"\x00" * 4)


# -- corpus -------------------------------------------------------------------

def test_corpus_deterministic():
    spec = acceptance_spec()
    assert gen_corpus(spec) == gen_corpus(spec)
    assert gen_corpus(spec) != gen_corpus(acceptance_spec(seed=1))


def test_corpus_counts():
    spec = acceptance_spec()
    labeled = gen_corpus_labeled(spec)
    assert len(labeled) == spec.total == 100
    for cls, n in spec.counts.items():
        assert sum(c == cls for c, _ in labeled) == n


def test_corpus_own_data_only():
    spec = CorpusSpec(seed=3, counts={"own_data": 5})
    fs = gen_corpus(spec)
    assert len(fs) == 5
    assert all(f.addr1 == bytes.fromhex("020000000001") and f.fcs_ok for f in fs)


def test_corpus_classes_have_expected_shape():
    for cls, f in gen_corpus_labeled(acceptance_spec()):
        if cls == "bad_fcs":
            assert not f.fcs_ok
        elif cls == "control":
            assert f.frame_type == CONTROL
        elif cls.endswith("beacon"):
            assert f.subtype == "beacon"
        elif cls == "broadcast_data":
            assert f.addr1 == BROADCAST


def test_corpus_file_round_trip(tmp_path):
    p = tmp_path / "c.json"
    save_corpus(acceptance_spec(), p)
    assert load_corpus(p) == gen_corpus(acceptance_spec())


def test_corpus_spec_validation():
    with pytest.raises(CorpusError):
        CorpusSpec(counts={"own_data": -1})
    with pytest.raises(CorpusError):
        CorpusSpec(counts={"aliens": 1})
    with pytest.raises(CorpusError):
        CorpusSpec.from_json({"seed": 1, "colour": "red"})
