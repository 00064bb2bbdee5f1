import json
import random

import pytest

from fwmon import patcher, thumb
from fwmon.patcher import (
    ApplyError, InstallStub, MctlBits, NativeTrap, OrWord, PatchConfig, PatchManifest, PlanError,
    RedirectBranch, ReplaceFunction, apply, build_patch, plan, rollback, verify,
)
from fwmon.stockfw import STOCK_MCTRL_MASK
from fwmon.thumb import hello_world_program
from patchgen import DMA_RX_SITE, random_patchset


def test_mctl_defaults():
    m = MctlBits()
    assert m.promisc == 1 << 24 and m.keepbadfcs == 1 << 23
    assert m.keepcontrol == 1 << 22 and m.bcns_promisc == 1 << 20
    assert m.combined == 0x01D00000
    assert m.complete and not MctlBits.disabled().complete


@pytest.mark.parametrize("kw", [{"promisc": 3}, {"promisc": 1 << 22}])
def test_mctl_validation(kw):
    with pytest.raises(ValueError):
        MctlBits(**kw)


def test_mctl_json():
    m = MctlBits(promisc=1, keepbadfcs=2, keepcontrol=4, bcns_promisc=8)
    assert MctlBits.from_json(m.to_json()) == m
    with pytest.raises(ValueError):
        MctlBits.from_json({"bogus": 1})


def test_monitor_patchset(stock, syms):
    patched, manifest, report = build_patch("monitor", stock, syms)
    assert report.ok
    addrs = {e.address for e in manifest.edits}
    assert {0x1AAD98, 0x1AB82C, 0x1AB828} <= addrs
    assert sum(e.kind == "install_stub" for e in manifest.edits) == 1
    assert manifest.trap_tags() == {"monitor_recv"}
    assert patched.read_u32(0x1AB82C) == STOCK_MCTRL_MASK | MctlBits().combined
    # wlc_bmac_recv now starts with a B.W into the stub
    stub = next(e for e in manifest.edits if e.kind == "install_stub")
    assert thumb.decode_bw(patched.read_bytes(0x1AAD98, 4), 0x1AAD98) == stub.entry


def test_helloworld_patchset(stock, syms):
    patched, manifest, report = build_patch("helloworld", stock, syms)
    assert report.ok
    assert patched.read_bytes(0x180018, 12) == b"hello world\x00"
    assert patched.read_u32(0x180014) == 0x180018
    assert thumb.decode_bl(patched.read_bytes(DMA_RX_SITE, 4), DMA_RX_SITE) == 0x180000


def test_plan_is_deterministic(stock, syms):
    acts = patcher.make_monitor_patchset(syms)
    a = plan(acts, stock, syms)
    b = plan(acts, stock, syms)
    assert [e.to_json() for e in a.edits] == [e.to_json() for e in b.edits]


def test_placement_exhausted(stock, syms):
    with pytest.raises(PlanError):
        plan([InstallStub("hw", hello_world_program())], stock, syms,
             PatchConfig(placement_size=0x10))


def test_rom_target_rejected(stock, syms):
    with pytest.raises(PlanError):
        plan([OrWord(0x1000, 1)], stock, syms)


def test_redirect_site_must_hold_branch(stock, syms):
    with pytest.raises(PlanError):
        plan([InstallStub("hw", hello_world_program()), RedirectBranch(0x1AAD98, "hw")], stock, syms)


def test_overlapping_edits_rejected(stock, syms):
    with pytest.raises(PlanError):
        plan([OrWord(0x1B0000, 1), OrWord(0x1B0000, 2)], stock, syms)


def test_unknown_target(stock, syms):
    with pytest.raises(PlanError):
        plan([ReplaceFunction("wlc_coreinit", "nowhere")], stock, syms)


def test_apply_detects_drift(stock, syms):
    planned = plan([OrWord(0x1B0000, 1)], stock, syms)
    stock.write_u32(0x1B0000, 5)
    with pytest.raises(ApplyError):
        apply(planned, stock)


def test_verify_catches_tamper(stock, syms):
    patched, manifest, _ = build_patch("monitor", stock, syms)
    patched.write_bytes(0x1AAD98, b"\x00\xbf\x00\xbf")
    report = verify(patched, manifest, syms)
    assert not report.ok
    assert any(e.address == 0x1AAD98 for e in report.failures)


def test_verify_zero_bits_degenerate(stock, syms):
    patched, manifest = apply(plan([OrWord(0x1B0000, 0)], stock, syms), stock)
    report = verify(patched, manifest)
    assert report.ok and report.entries[0].status == "degenerate"


def test_trap_outside_stub_fails(stock, syms):
    patched, manifest, _ = build_patch("monitor", stock, syms)
    manifest.traps.append((0x1B0000, "stray"))
    assert not verify(patched, manifest).ok


def test_rollback_requires_patched_bytes(stock, syms):
    _, manifest, _ = build_patch("monitor", stock, syms)
    with pytest.raises(ApplyError):
        rollback(stock, manifest)


def test_manifest_file_round_trip(tmp_path, stock, syms):
    _, manifest, _ = build_patch("monitor", stock, syms)
    p = tmp_path / "m.json"
    patcher.save_manifest(manifest, p)
    back = patcher.load_manifest(p)
    assert back.to_json() == manifest.to_json()
    assert json.loads(p.read_text())["mctl"]["promisc"] == "0x1000000"


def test_bad_manifest(tmp_path):
    p = tmp_path / "m.json"
    p.write_text('{"edits": 1}')
    with pytest.raises(patcher.ManifestError):
        patcher.load_manifest(p)


def test_find_call_sites(stock, syms):
    assert patcher.find_call_sites(stock, 0x1AAD98, 0x40, syms.lookup("dma_rx")) == [DMA_RX_SITE]


@pytest.mark.parametrize("seed", range(40))
def test_random_apply_rollback(seed, stock, syms):
    rng = random.Random(seed)
    actions = random_patchset(rng)
    patched, manifest = apply(plan(actions, stock, syms), stock)
    assert verify(patched, manifest, syms).ok
    covered = set()
    for e in manifest.edits:
        covered.update(range(e.address, e.end))
    for lo, hi in patched.diff(stock):
        assert set(range(lo, hi)) <= covered
    restored = rollback(patched, manifest)
    assert restored == stock
    assert PatchManifest.from_json(manifest.to_json()).to_json() == manifest.to_json()


def test_native_trap_stub_shape(stock, syms):
    planned = plan([InstallStub("t", NativeTrap("x"))], stock, syms)
    (edit,) = planned.edits
    assert edit.new[:4] == patcher.TRAP_SLOT_BYTES
    assert planned.traps == [(edit.address, "x")]
    assert edit.entry == edit.address + 4
