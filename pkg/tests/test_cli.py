import json

import pytest

from fwmon.capture import read_pcap
from fwmon.cli import load_config, main, UsageError


@pytest.fixture(scope="module")
def work(tmp_path_factory):
    d = tmp_path_factory.mktemp("cli")
    assert main(["synth-ram", "--out", str(d / "ram.bin")]) == 0
    assert main(["patch", "--ram", str(d / "ram.bin"), "--patchset", "monitor", "--out", str(d / "mon.bin")]) == 0
    assert main(["patch", "--ram", str(d / "ram.bin"), "--patchset", "helloworld", "--out", str(d / "hw.bin"),
                 "--manifest", str(d / "hw.json")]) == 0
    assert main(["gen-corpus", "--seed", "4339", "--out", str(d / "corpus.json")]) == 0
    return d


def test_dump_pool_word(work, capsys):
    assert main(["dump", "--image", str(work / "hw.bin"), "--addr", "0x180014", "--len", "4"]) == 0
    assert "18 00 18 00" in capsys.readouterr().out


def test_dump_zero_length(work, capsys):
    assert main(["dump", "--image", str(work / "hw.bin"), "--addr", "0x180014", "--len", "0"]) == 0
    assert capsys.readouterr().out == ""


def test_dump_gap(work, capsys):
    assert main(["dump", "--image", str(work / "hw.bin"), "--addr", "0xA0000", "--len", "4"]) == 2
    assert "not inside" in capsys.readouterr().err


def test_dump_to_file(work):
    out = work / "pool.bin"
    assert main(["dump", "--image", str(work / "hw.bin"), "--addr", "0x180018", "--len", "12", "--out", str(out)]) == 0
    assert out.read_bytes() == b"hello world\x00"


def test_patch_monitor_manifest(work):
    m = json.loads((work / "mon.bin.manifest.json").read_text())
    addrs = {int(e["address"], 16) for e in m["edits"]}
    assert {0x1AAD98, 0x1AB82C, 0x1AB828} <= addrs
    assert sum(e["kind"] == "install_stub" for e in m["edits"]) == 1


def test_patch_missing_out(work):
    with pytest.raises(SystemExit) as info:
        main(["patch", "--ram", str(work / "ram.bin"), "--patchset", "monitor"])
    assert info.value.code == 1


def test_patch_plan_error(work, tmp_path):
    cfg = tmp_path / "cfg.json"
    cfg.write_text('{"placement_base": "0x1000"}')   # ROM is read-only
    rc = main(["patch", "--ram", str(work / "ram.bin"), "--patchset", "monitor", "--out",
               str(tmp_path / "x.bin"), "--config", str(cfg)])
    assert rc == 3


def test_disasm_listing(work, capsys):
    assert main(["disasm", "--image", str(work / "hw.bin"), "--addr", "0x180000", "--count", "7"]) == 0
    lines = capsys.readouterr().out.splitlines()
    assert [l.split()[1] for l in lines] == ["PUSH", "MOVS", "LDR", "BL", "MOVS", "BL", "POP"]
    assert "printf" in lines[3] and "dma_rx" in lines[5]


def test_disasm_count_zero(work, capsys):
    assert main(["disasm", "--image", str(work / "hw.bin"), "--addr", "0x180000", "--count", "0"]) == 0
    assert capsys.readouterr().out == ""


def test_disasm_range_error(work):
    assert main(["disasm", "--image", str(work / "hw.bin"), "--addr", "0xA0000"]) == 2


def test_sim_monitor(work, tmp_path):
    pcap, report = tmp_path / "m.pcap", tmp_path / "r.json"
    rc = main(["sim", "--ram", str(work / "mon.bin"), "--manifest", str(work / "mon.bin.manifest.json"),
               "--corpus", str(work / "corpus.json"), "--out-pcap", str(pcap), "--report", str(report)])
    assert rc == 0
    cap = read_pcap(pcap)
    assert cap.linktype == 127 and len(cap.records) == 100
    r = json.loads(report.read_text())
    assert r["mode"] == "patched" and r["counters"]["frames_offered"] == 100
    assert r["dispatch_chain"][1]["address"] == "0x180fee"
    assert r["maccontrol_history"]


def test_sim_stock_flag(work, tmp_path):
    pcap = tmp_path / "s.pcap"
    rc = main(["sim", "--ram", str(work / "mon.bin"), "--manifest", str(work / "mon.bin.manifest.json"),
               "--corpus", str(work / "corpus.json"), "--out-pcap", str(pcap), "--stock"])
    assert rc == 0
    cap = read_pcap(pcap)
    # the patched coreinit words still open the filter, but only own/broadcast data survive wlc_recv
    assert cap.linktype == 1 and len(cap.records) == 35


def test_sim_helloworld_console(work, tmp_path, capsys):
    rc = main(["sim", "--ram", str(work / "hw.bin"), "--manifest", str(work / "hw.json"),
               "--corpus", str(work / "corpus.json"), "--out-pcap", str(tmp_path / "h.pcap"), "--console"])
    assert rc == 0
    assert "hello world" in capsys.readouterr().out


def test_sim_bad_manifest(work, tmp_path):
    rc = main(["sim", "--ram", str(work / "ram.bin"), "--manifest", str(work / "mon.bin.manifest.json"),
               "--corpus", str(work / "corpus.json"), "--out-pcap", str(tmp_path / "x.pcap")])
    assert rc == 5


def test_gen_corpus_deterministic(work, tmp_path):
    a, b = tmp_path / "a.json", tmp_path / "b.json"
    main(["gen-corpus", "--seed", "7", "--counts", "own_data=3,control=2", "--out", str(a)])
    main(["gen-corpus", "--seed", "7", "--counts", "own_data=3,control=2", "--out", str(b)])
    assert a.read_bytes() == b.read_bytes()
    assert len(json.loads(a.read_text())["frames"]) == 5


def test_config_unknown_key(tmp_path):
    p = tmp_path / "c.json"
    p.write_text('{"rxbnd": 4, "turbo": true}')
    with pytest.raises(UsageError):
        load_config(p)


def test_config_flags_override(tmp_path):
    p = tmp_path / "c.json"
    p.write_text('{"rxbnd": 4, "mctl": {"promisc": "0x1"}}')
    cfg = load_config(p, {"rxbnd": 16})
    assert cfg.rxbnd == 16 and cfg.mctl.promisc == 1


def test_unknown_subcommand():
    with pytest.raises(SystemExit) as info:
        main(["frobnicate"])
    assert info.value.code == 1
