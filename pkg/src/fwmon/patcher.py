"""Plan, apply, verify and roll back firmware patch sets.

A patch set is a list of actions. :func:`plan` turns it into concrete byte
edits against one image (stub placement by bump allocation, branch encoding,
old-bytes capture); :func:`apply` writes those edits and returns a
:class:`PatchManifest` that records enough to verify or undo every edit.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, replace
from typing import Optional, Union

from . import thumb
from .image import FirmwareImage, MemoryAccessError
from .symbols import FUNCTION, Symbol, SymbolError, SymbolMap
from .thumb import (
    Call, HookProgram, Param, ReturnLastResult, SaveScratch, hello_world_program,
)

DEFAULT_PLACEMENT_BASE = 0x180000
# stops short of handler_list_ref (0x180e5c), the first firmware data in RAM
DEFAULT_PLACEMENT_SIZE = 0xE00

# placeholder instructions at a trap slot; executing them untrapped returns r0 unchanged
TRAP_SLOT_BYTES = thumb.encode_bx_lr() + thumb.encode_nop()


class PatchError(Exception):
    pass


class PlanError(PatchError):
    pass


class ApplyError(PatchError):
    pass


class ManifestError(PatchError):
    pass


def _single_bit(x: int) -> bool:
    return x != 0 and x & (x - 1) == 0


@dataclass(frozen=True)
class MctlBits:
    """maccontrol flags needed for monitor mode (brcmsmac d11.h bit positions by default)."""
    promisc: int = 1 << 24
    keepbadfcs: int = 1 << 23
    keepcontrol: int = 1 << 22
    bcns_promisc: int = 1 << 20

    def __post_init__(self):
        masks = self.as_dict()
        for name, value in masks.items():
            if not 0 <= value <= 0xFFFFFFFF or (value and not _single_bit(value)):
                raise ValueError(f"MCTL {name} = {value:#x} is not a single-bit mask")
        nonzero = [v for v in masks.values() if v]
        if len(set(nonzero)) != len(nonzero):
            raise ValueError("MCTL masks must be distinct")

    @property
    def combined(self) -> int:
        return self.promisc | self.keepbadfcs | self.keepcontrol | self.bcns_promisc

    @property
    def complete(self) -> bool:
        return all(self.as_dict().values())

    def as_dict(self) -> dict:
        return {
            "promisc": self.promisc,
            "keepcontrol": self.keepcontrol,
            "bcns_promisc": self.bcns_promisc,
            "keepbadfcs": self.keepbadfcs,
        }

    def to_json(self) -> dict:
        return {k: f"{v:#x}" for k, v in self.as_dict().items()}

    @classmethod
    def from_json(cls, obj) -> "MctlBits":
        unknown = set(obj) - set(cls().as_dict())
        if unknown:
            raise ValueError(f"unknown MCTL fields: {sorted(unknown)}")
        return cls(**{k: int(v, 16) if isinstance(v, str) else int(v) for k, v in obj.items()})

    @classmethod
    def disabled(cls) -> "MctlBits":
        return cls(0, 0, 0, 0)


# -- actions ------------------------------------------------------------------

@dataclass(frozen=True)
class NativeTrap:
    tag: str


@dataclass(frozen=True)
class InstallStub:
    name: str
    program: Union[HookProgram, NativeTrap]


@dataclass(frozen=True)
class RedirectBranch:
    site: int
    new_target: Union[int, str]
    kind: str = "BL"


@dataclass(frozen=True)
class ReplaceFunction:
    symbol: str
    new_target: Union[int, str]


@dataclass(frozen=True)
class OrWord:
    target: Union[int, str]
    bits: int


@dataclass(frozen=True)
class PatchConfig:
    placement_base: int = DEFAULT_PLACEMENT_BASE
    placement_size: int = DEFAULT_PLACEMENT_SIZE


@dataclass
class Edit:
    action_id: int
    kind: str            # install_stub | redirect_branch | replace_function | or_word
    address: int
    old: bytes
    new: bytes
    name: str = ""
    target: Optional[int] = None   # branch destination for redirects
    branch: Optional[str] = None   # BL | B_W
    bits: Optional[int] = None
    calls: list = field(default_factory=list)  # stub-relative (offset, target)
    entry: Optional[int] = None    # stub entry point

    @property
    def end(self) -> int:
        return self.address + len(self.new)

    def to_json(self) -> dict:
        out = {
            "id": self.action_id,
            "kind": self.kind,
            "address": f"{self.address:#x}",
            "old": self.old.hex(),
            "new": self.new.hex(),
        }
        if self.name:
            out["name"] = self.name
        if self.target is not None:
            out["target"] = f"{self.target:#x}"
        if self.branch is not None:
            out["branch"] = self.branch
        if self.bits is not None:
            out["bits"] = f"{self.bits:#x}"
        if self.calls:
            out["calls"] = [[f"{o:#x}", f"{t:#x}"] for o, t in self.calls]
        if self.entry is not None:
            out["entry"] = f"{self.entry:#x}"
        return out

    @classmethod
    def from_json(cls, obj) -> "Edit":
        def h(key):
            return int(obj[key], 16) if key in obj else None
        return cls(
            action_id=int(obj["id"]),
            kind=obj["kind"],
            address=int(obj["address"], 16),
            old=bytes.fromhex(obj["old"]),
            new=bytes.fromhex(obj["new"]),
            name=obj.get("name", ""),
            target=h("target"),
            branch=obj.get("branch"),
            bits=h("bits"),
            calls=[(int(o, 16), int(t, 16)) for o, t in obj.get("calls", [])],
            entry=h("entry"),
        )


@dataclass
class PlannedPatch:
    edits: list
    traps: list           # (address, tag)
    stubs: dict           # name -> entry address
    placement_base: int
    mctl: Optional[MctlBits] = None


@dataclass
class PatchManifest:
    edits: list
    traps: list
    placement_base: int
    mctl: Optional[MctlBits] = None
    patchset: str = ""

    def trap_tags(self) -> set:
        return {tag for _, tag in self.traps}

    def to_json(self) -> dict:
        return {
            "patchset": self.patchset,
            "placement_base": f"{self.placement_base:#x}",
            "mctl": self.mctl.to_json() if self.mctl else None,
            "edits": [e.to_json() for e in self.edits],
            "traps": [{"address": f"{a:#x}", "tag": t} for a, t in self.traps],
        }

    @classmethod
    def from_json(cls, obj) -> "PatchManifest":
        try:
            return cls(
                edits=[Edit.from_json(e) for e in obj["edits"]],
                traps=[(int(t["address"], 16), t["tag"]) for t in obj["traps"]],
                placement_base=int(obj["placement_base"], 16),
                mctl=MctlBits.from_json(obj["mctl"]) if obj.get("mctl") else None,
                patchset=obj.get("patchset", ""),
            )
        except (KeyError, TypeError, ValueError, AttributeError) as exc:
            raise ManifestError(f"malformed manifest: {exc}") from exc


def save_manifest(manifest: PatchManifest, path) -> None:
    with open(path, "w") as fh:
        json.dump(manifest.to_json(), fh, indent=2)
        fh.write("\n")


def load_manifest(path) -> PatchManifest:
    try:
        with open(path) as fh:
            obj = json.load(fh)
    except json.JSONDecodeError as exc:
        raise ManifestError(f"{path}: {exc}") from exc
    return PatchManifest.from_json(obj)


# -- planning -----------------------------------------------------------------

def _align4(x: int) -> int:
    return (x + 3) & ~3


def trap_slot_symbol(tag: str) -> str:
    return f"__trap_{tag}"


def _trap_stub_program(tag: str) -> HookProgram:
    # r0-r3 pass through untouched to the native handler
    return HookProgram((
        SaveScratch(0),
        Call(trap_slot_symbol(tag), tuple(Param(i) for i in range(4))),
        ReturnLastResult(),
    ))


def _writable(image: FirmwareImage, addr: int, length: int) -> None:
    try:
        region = image.region_at(addr, length)
    except MemoryAccessError as exc:
        raise PlanError(str(exc)) from exc
    if not region.writable:
        raise PlanError(f"[{addr:#x}, {addr + length:#x}) lies in read-only region {region.name}")


def plan(actions, image: FirmwareImage, syms: SymbolMap,
         config: PatchConfig = PatchConfig()) -> PlannedPatch:
    """Resolve actions into concrete edits. Deterministic for identical inputs."""
    base = config.placement_base
    limit = base + config.placement_size
    if base & 3:
        raise PlanError(f"placement base {base:#x} is not 4-aligned")
    _writable(image, base, config.placement_size)

    edits: list = []
    traps: list = []
    stubs: dict = {}
    cursor = base

    for aid, action in enumerate(actions):
        if not isinstance(action, InstallStub):
            continue
        if action.name in stubs:
            raise PlanError(f"duplicate stub name {action.name!r}")
        start = cursor
        try:
            if isinstance(action.program, NativeTrap):
                tag = action.program.tag
                slot = Symbol(trap_slot_symbol(tag), start, FUNCTION)
                local = syms.with_symbols([slot])
                stub = thumb.assemble_stub(_trap_stub_program(tag), start + len(TRAP_SLOT_BYTES), local)
                blob = TRAP_SLOT_BYTES + stub.to_bytes()
                traps.append((start, tag))
            else:
                stub = thumb.assemble_stub(action.program, start, syms)
                blob = stub.to_bytes()
        except (thumb.ThumbError, SymbolError) as exc:
            raise PlanError(f"stub {action.name}: {exc}") from exc
        if start + len(blob) > limit:
            raise PlanError(
                f"placement region [{base:#x}, {limit:#x}) exhausted by stub {action.name} "
                f"({len(blob):#x} bytes at {start:#x})"
            )
        calls = [(stub.base - start + off, target) for off, target, _ in stub.calls]
        edits.append(Edit(aid, "install_stub", start, image.read_bytes(start, len(blob)), blob,
                          name=action.name, calls=calls, entry=stub.base))
        stubs[action.name] = stub.base
        cursor = _align4(start + len(blob))

    def resolve(target) -> int:
        if isinstance(target, int):
            return target
        if target in stubs:
            return stubs[target]
        if target in syms:
            return syms[target].address
        raise PlanError(f"unresolved branch target {target!r}")

    for aid, action in enumerate(actions):
        if isinstance(action, InstallStub):
            continue
        if isinstance(action, RedirectBranch):
            site = action.site
            _writable(image, site, 4)
            old = image.read_bytes(site, 4)
            try:
                thumb.decode_branch(old, site, action.kind)
            except thumb.DecodeError as exc:
                raise PlanError(f"redirect site {site:#x} does not hold a {action.kind}: {exc}") from exc
            target = resolve(action.new_target)
            try:
                new = thumb.encode_branch(site, target, action.kind)
            except thumb.EncodeError as exc:
                raise PlanError(str(exc)) from exc
            edits.append(Edit(aid, "redirect_branch", site, old, new, target=target, branch=action.kind))
        elif isinstance(action, ReplaceFunction):
            try:
                victim = syms[action.symbol]
            except SymbolError as exc:
                raise PlanError(str(exc)) from exc
            if victim.kind != FUNCTION:
                raise PlanError(f"{action.symbol} is not a function")
            _writable(image, victim.address, 4)
            target = resolve(action.new_target)
            try:
                new = thumb.encode_bw(victim.address, target)
            except thumb.EncodeError as exc:
                raise PlanError(str(exc)) from exc
            edits.append(Edit(aid, "replace_function", victim.address, image.read_bytes(victim.address, 4),
                              new, name=action.symbol, target=target, branch="B_W"))
        elif isinstance(action, OrWord):
            if isinstance(action.target, str):
                try:
                    addr = syms[action.target].address
                except SymbolError as exc:
                    raise PlanError(str(exc)) from exc
                name = action.target
            else:
                addr, name = action.target, ""
            if addr & 3:
                raise PlanError(f"or_word target {addr:#x} is not 4-aligned")
            _writable(image, addr, 4)
            old = image.read_bytes(addr, 4)
            word = int.from_bytes(old, "little") | (action.bits & 0xFFFFFFFF)
            edits.append(Edit(aid, "or_word", addr, old, word.to_bytes(4, "little"),
                              name=name, bits=action.bits & 0xFFFFFFFF))
        else:
            raise PlanError(f"unknown action {action!r}")

    ordered = sorted(edits, key=lambda e: e.address)
    for a, b in zip(ordered, ordered[1:]):
        if b.address < a.end:
            raise PlanError(
                f"edits overlap: action {a.action_id} [{a.address:#x}, {a.end:#x}) and "
                f"action {b.action_id} [{b.address:#x}, {b.end:#x})"
            )
    edits.sort(key=lambda e: e.action_id)
    return PlannedPatch(edits, traps, stubs, base)


def apply(planned: PlannedPatch, image: FirmwareImage, patchset: str = ""):
    """Return (patched copy, manifest). The input image is left untouched."""
    for e in planned.edits:
        current = image.read_bytes(e.address, len(e.old))
        if current != e.old:
            raise ApplyError(
                f"image drifted at {e.address:#x} (action {e.action_id}): expected {e.old.hex()}, "
                f"found {current.hex()}"
            )
    patched = image.copy()
    for e in planned.edits:
        patched.write_bytes(e.address, e.new)
    manifest = PatchManifest(
        edits=[replace(e) for e in planned.edits],
        traps=list(planned.traps),
        placement_base=planned.placement_base,
        mctl=planned.mctl,
        patchset=patchset,
    )
    return patched, manifest


def rollback(image: FirmwareImage, manifest: PatchManifest) -> FirmwareImage:
    for e in manifest.edits:
        current = image.read_bytes(e.address, len(e.new))
        if current != e.new:
            raise ApplyError(f"cannot roll back action {e.action_id}: bytes at {e.address:#x} changed")
    restored = image.copy()
    for e in manifest.edits:
        restored.write_bytes(e.address, e.old)
    return restored


# -- verification -------------------------------------------------------------

@dataclass
class VerifyEntry:
    action_id: int
    kind: str
    address: int
    status: str   # pass | fail | degenerate
    detail: str = ""

    def __str__(self):
        return f"[{self.status.upper():>10}] #{self.action_id} {self.kind} @ {self.address:#x} {self.detail}".rstrip()


@dataclass
class VerifyReport:
    entries: list

    @property
    def ok(self) -> bool:
        return all(e.status != "fail" for e in self.entries)

    @property
    def failures(self) -> list:
        return [e for e in self.entries if e.status == "fail"]

    def __str__(self):
        return "\n".join(str(e) for e in self.entries)


def _verify_edit(image: FirmwareImage, e: Edit, syms: Optional[SymbolMap]) -> VerifyEntry:
    def name(addr):
        sym = syms.reverse_lookup(addr) if syms is not None else None
        return f"{addr:#x}" + (f" ({sym.name})" if sym else "")

    try:
        current = image.read_bytes(e.address, len(e.new))
    except MemoryAccessError as exc:
        return VerifyEntry(e.action_id, e.kind, e.address, "fail", str(exc))

    if e.kind == "install_stub":
        for off, target in e.calls:
            try:
                got = thumb.decode_bl(current[off:off + 4], e.address + off)
            except thumb.DecodeError as exc:
                return VerifyEntry(e.action_id, e.kind, e.address, "fail", str(exc))
            if got != target:
                return VerifyEntry(e.action_id, e.kind, e.address, "fail",
                                   f"BL at {e.address + off:#x} goes to {got:#x}, expected {name(target)}")
        if current != e.new:
            diff = next(i for i, (a, b) in enumerate(zip(current, e.new)) if a != b)
            return VerifyEntry(e.action_id, e.kind, e.address, "fail",
                               f"stub {e.name} byte at {e.address + diff:#x} differs")
        return VerifyEntry(e.action_id, e.kind, e.address, "pass",
                           f"stub {e.name}: {len(e.new):#x} bytes, {len(e.calls)} call(s)")

    if e.kind in ("redirect_branch", "replace_function"):
        try:
            got = thumb.decode_branch(current, e.address, e.branch)
        except thumb.DecodeError as exc:
            return VerifyEntry(e.action_id, e.kind, e.address, "fail", str(exc))
        status = "pass" if got == e.target else "fail"
        return VerifyEntry(e.action_id, e.kind, e.address, status,
                           f"{e.branch.replace('_', '.')} -> {name(got)}")

    if e.kind == "or_word":
        word = int.from_bytes(current, "little")
        if not e.bits:
            return VerifyEntry(e.action_id, e.kind, e.address, "degenerate", "zero mask, no bits to set")
        status = "pass" if word & e.bits == e.bits else "fail"
        return VerifyEntry(e.action_id, e.kind, e.address, status, f"word={word:#010x} bits={e.bits:#010x}")

    return VerifyEntry(e.action_id, e.kind, e.address, "fail", f"unknown edit kind {e.kind!r}")


def verify(image: FirmwareImage, manifest: PatchManifest, syms: Optional[SymbolMap] = None) -> VerifyReport:
    entries = [_verify_edit(image, e, syms) for e in manifest.edits]
    stub_ranges = [(e.address, e.end) for e in manifest.edits if e.kind == "install_stub"]
    for addr, tag in manifest.traps:
        inside = any(lo <= addr < hi for lo, hi in stub_ranges)
        entries.append(VerifyEntry(-1, "trap", addr, "pass" if inside else "fail",
                                   f"{tag}" + ("" if inside else " not inside any installed stub")))
    return VerifyReport(entries)


# -- patch sets ---------------------------------------------------------------

def find_call_sites(image: FirmwareImage, start: int, length: int, target: int, kind: str = "BL") -> list:
    """Halfword-aligned sites in [start, start+length) holding a branch of ``kind`` to ``target``."""
    data = image.read_bytes(start, length)
    sites = []
    for off in range(0, length - 3, 2):
        try:
            if thumb.decode_branch(data[off:off + 4], start + off, kind) == target & ~1:
                sites.append(start + off)
        except thumb.DecodeError:
            pass
    return sites


def make_monitor_patchset(syms: SymbolMap, mctl: MctlBits = MctlBits()) -> list:
    for name in ("wlc_bmac_recv", "coreinit_mctrl_mask_word", "coreinit_mctrl_value_word"):
        if name not in syms:
            raise PlanError(f"monitor patch set needs symbol {name!r}")
    return [
        InstallStub("monitor_recv", NativeTrap("monitor_recv")),
        ReplaceFunction("wlc_bmac_recv", "monitor_recv"),
        OrWord("coreinit_mctrl_mask_word", mctl.combined),
        OrWord("coreinit_mctrl_value_word", mctl.combined),
    ]


HELLO_SEARCH_WINDOW = 0x40


def make_helloworld_patchset(syms: SymbolMap, image: FirmwareImage) -> list:
    """Hook the dma_rx call made from inside wlc_bmac_recv."""
    for name in ("wlc_bmac_recv", "dma_rx", "printf"):
        if name not in syms:
            raise PlanError(f"hello-world patch set needs symbol {name!r}")
    sites = find_call_sites(image, syms.lookup("wlc_bmac_recv"), HELLO_SEARCH_WINDOW, syms.lookup("dma_rx"))
    if not sites:
        raise PlanError("no BL to dma_rx found inside wlc_bmac_recv")
    return [
        InstallStub("hello_world", hello_world_program()),
        RedirectBranch(sites[0], "hello_world", "BL"),
    ]


PATCHSETS = ("monitor", "helloworld")


def build_patch(name: str, image: FirmwareImage, syms: SymbolMap,
                config: PatchConfig = PatchConfig(), mctl: MctlBits = MctlBits()):
    """plan + apply + verify for a named patch set; returns (patched, manifest, report)."""
    if name == "monitor":
        actions = make_monitor_patchset(syms, mctl)
    elif name == "helloworld":
        actions = make_helloworld_patchset(syms, image)
    else:
        raise PlanError(f"unknown patch set {name!r}; choose from {', '.join(PATCHSETS)}")
    planned = plan(actions, image, syms, config)
    if name == "monitor":
        planned.mctl = mctl
    patched, manifest = apply(planned, image, patchset=name)
    return patched, manifest, verify(patched, manifest, syms)
