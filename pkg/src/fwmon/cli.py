"""fwmon command line: dump, patch, sim, disasm, gen-corpus, synth-ram.

Exit codes:
    0  success
    1  usage error (bad flags, unreadable config)
    2  address range or decode error (dump, disasm)
    3  patch planning error
    4  patch verification failure
    5  simulation error
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import dataclass, field, fields
from pathlib import Path

from . import patcher
from .capture import (
    CorpusError, CorpusSpec, acceptance_spec, gen_corpus, host_deliver, load_corpus, load_spec, save_corpus,
    write_pcap,
)
from .capture.pcap import LINKTYPE_ETHERNET, LINKTYPE_IEEE802_11_RADIOTAP
from .chip import SimConfig, SimError, boot
from .image import FirmwareImage, MemoryAccessError, hexdump, write_blob
from .interp import InterpError
from .patcher import MctlBits, PatchConfig
from .stockfw import build_stock_ram
from .symbols import SymbolError, builtin_map, load_map
from .thumb import disassemble

log = logging.getLogger("fwmon")

EXIT_OK, EXIT_USAGE, EXIT_RANGE, EXIT_PLAN, EXIT_VERIFY, EXIT_SIM = range(6)


class UsageError(Exception):
    pass


@dataclass
class CliConfig:
    placement_base: int = patcher.DEFAULT_PLACEMENT_BASE
    rxbnd: int = 8
    ring_capacity: int = 64
    stock_data_channel: int = 2
    corrected_loop: bool = False
    mctl: MctlBits = field(default_factory=MctlBits)

    def sim_config(self) -> SimConfig:
        return SimConfig(rxbnd=self.rxbnd, ring_capacity=self.ring_capacity,
                         stock_data_channel=self.stock_data_channel,
                         corrected_loop=self.corrected_loop, mctl=self.mctl)


def _int(v) -> int:
    return int(v, 0) if isinstance(v, str) else int(v)


def load_config(path=None, overrides=None) -> CliConfig:
    """Config file values first, then non-None command-line overrides; everything validated."""
    values = {}
    if path:
        try:
            raw = json.loads(Path(path).read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise UsageError(f"cannot read config {path}: {exc}") from exc
        if not isinstance(raw, dict):
            raise UsageError("config file must hold a JSON object")
        known = {f.name for f in fields(CliConfig)}
        unknown = set(raw) - known
        if unknown:
            raise UsageError(f"unknown config keys: {', '.join(sorted(unknown))}")
        values.update(raw)
    values.update({k: v for k, v in (overrides or {}).items() if v is not None})
    try:
        cfg = CliConfig(
            placement_base=_int(values.get("placement_base", patcher.DEFAULT_PLACEMENT_BASE)),
            rxbnd=_int(values.get("rxbnd", 8)),
            ring_capacity=_int(values.get("ring_capacity", 64)),
            stock_data_channel=_int(values.get("stock_data_channel", 2)),
            corrected_loop=bool(values.get("corrected_loop", False)),
            mctl=MctlBits.from_json(values.get("mctl", {})),
        )
        cfg.sim_config()
    except (TypeError, ValueError) as exc:
        raise UsageError(f"bad config: {exc}") from exc
    if cfg.placement_base % 4:
        raise UsageError("placement_base must be 4-byte aligned")
    return cfg


def _symbols(path):
    return load_map(path) if path else builtin_map()


def _load_image(ram, rom=None) -> FirmwareImage:
    try:
        return FirmwareImage.from_files(ram, rom)
    except OSError as exc:
        raise UsageError(f"cannot load image: {exc}") from exc


def _parse_counts(text: str) -> dict:
    counts = {}
    for item in text.split(","):
        name, _, value = item.partition("=")
        if not value:
            raise UsageError(f"bad --counts item {item!r}, expected class=N")
        counts[name.strip().replace("-", "_")] = int(value)
    return counts


# -- subcommands --------------------------------------------------------------

def cmd_dump(args) -> int:
    image = _load_image(args.image, args.rom)
    try:
        data = image.read_bytes(args.addr, args.len)
    except MemoryAccessError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RANGE
    if args.out:
        write_blob(args.out, data)
    elif data:
        print(hexdump(data, args.addr))
    return EXIT_OK


def cmd_patch(args) -> int:
    cfg = load_config(args.config, {"placement_base": args.placement_base})
    image = _load_image(args.ram)
    syms = _symbols(args.symbols)
    try:
        patched, manifest, report = patcher.build_patch(
            args.patchset, image, syms, PatchConfig(placement_base=cfg.placement_base), cfg.mctl)
    except (patcher.PlanError, SymbolError, MemoryAccessError) as exc:
        print(f"plan error: {exc}", file=sys.stderr)
        return EXIT_PLAN
    if not report.ok:
        print(f"verify failed:\n{report}", file=sys.stderr)
        return EXIT_VERIFY
    write_blob(args.out, bytes(patched.region("ram").data))
    manifest_path = args.manifest or str(args.out) + ".manifest.json"
    patcher.save_manifest(manifest, manifest_path)
    for e in manifest.edits:
        print(f"{e.kind:<17}{e.address:#010x} {len(e.new):4d} bytes  {e.name or ''}")
    return EXIT_OK


def cmd_sim(args) -> int:
    cfg = load_config(args.config, {"rxbnd": args.rxbnd, "corrected_loop": args.corrected_loop or None})
    image = _load_image(args.ram)
    syms = _symbols(args.symbols)
    try:
        frames = load_corpus(args.corpus)
    except (OSError, CorpusError, ValueError) as exc:
        raise UsageError(f"cannot load corpus {args.corpus}: {exc}") from exc
    manifest = None
    if args.manifest:
        try:
            manifest = patcher.load_manifest(args.manifest)
        except (OSError, patcher.ManifestError) as exc:
            raise UsageError(f"cannot load manifest: {exc}") from exc
    try:
        state = boot(image, manifest, syms, cfg.sim_config(), force_stock=args.stock)
        state.run(frames)
        monitor, ethernet = host_deliver(state.host_queue)
    except (SimError, InterpError, MemoryAccessError, ValueError) as exc:
        print(f"sim error: {exc}", file=sys.stderr)
        return EXIT_SIM
    if state.mode == "patched":
        records, linktype = monitor, LINKTYPE_IEEE802_11_RADIOTAP
    else:
        records, linktype = ethernet, LINKTYPE_ETHERNET
    write_pcap(records, linktype, args.out_pcap)
    if args.report:
        Path(args.report).write_text(json.dumps(state.report(), indent=2) + "\n")
    if args.console:
        text = state.consoledump()
        if args.console == "-":
            sys.stdout.write(text)
        else:
            Path(args.console).write_text(text)
    log.info("%s run: %d frames in, %d records out", state.mode, len(frames), len(records))
    return EXIT_OK


def cmd_disasm(args) -> int:
    image = _load_image(args.image, args.rom)
    syms = _symbols(args.symbols)
    if args.count == 0:
        return EXIT_OK
    try:
        # widest Thumb instruction is 4 bytes; clip the window at the end of the region
        region = image.region_at(args.addr)
        length = min(4 * args.count, region.end - args.addr)
        lines = disassemble(image.read_bytes(args.addr, length), args.addr, syms, args.count)
    except MemoryAccessError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RANGE
    print("\n".join(lines))
    return EXIT_OK


def cmd_gen_corpus(args) -> int:
    try:
        if args.spec:
            spec = load_spec(args.spec)
        else:
            spec = acceptance_spec(args.seed)
            if args.counts:
                spec = CorpusSpec(seed=args.seed, counts=_parse_counts(args.counts))
    except (OSError, CorpusError, ValueError) as exc:
        raise UsageError(str(exc)) from exc
    save_corpus(spec, args.out)
    print(f"{len(gen_corpus(spec))} frames -> {args.out}")
    return EXIT_OK


def cmd_synth_ram(args) -> int:
    syms = _symbols(args.symbols)
    write_blob(args.out, build_stock_ram(syms))
    return EXIT_OK


# -- parser -------------------------------------------------------------------

class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _addr(text: str) -> int:
    try:
        return int(text, 0)
    except ValueError:
        raise argparse.ArgumentTypeError(f"bad number {text!r}") from None


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="fwmon", description="Firmware patching and monitor-mode simulation for a BCM4339 model.")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    d = sub.add_parser("dump", help="hexdump a memory range (membytes)")
    d.add_argument("--image", required=True, help="RAM blob")
    d.add_argument("--rom", help="optional ROM blob (zero-filled otherwise)")
    d.add_argument("--addr", type=_addr, required=True)
    d.add_argument("--len", type=_addr, required=True)
    d.add_argument("--out", help="write raw bytes here instead of printing")
    d.set_defaults(func=cmd_dump)

    pt = sub.add_parser("patch", help="plan, apply and verify a patch set")
    pt.add_argument("--ram", required=True)
    pt.add_argument("--symbols", help="symbol map JSON (built-in map by default)")
    pt.add_argument("--patchset", choices=patcher.PATCHSETS, required=True)
    pt.add_argument("--out", required=True, help="patched RAM blob")
    pt.add_argument("--manifest", help="manifest JSON (default: <out>.manifest.json)")
    pt.add_argument("--config")
    pt.add_argument("--placement-base", type=_addr)
    pt.set_defaults(func=cmd_patch)

    s = sub.add_parser("sim", help="boot the chip model and run a frame corpus")
    s.add_argument("--ram", required=True)
    s.add_argument("--manifest")
    s.add_argument("--symbols")
    s.add_argument("--corpus", required=True, help="corpus JSON or bare corpus spec")
    s.add_argument("--out-pcap", required=True)
    s.add_argument("--stock", action="store_true", help="run the stock receive path even if patched")
    s.add_argument("--report", help="write the JSON run report here")
    s.add_argument("--console", nargs="?", const="-", help="dump the firmware console (to stdout if no path)")
    s.add_argument("--config")
    s.add_argument("--rxbnd", type=int)
    s.add_argument("--corrected-loop", action="store_true")
    s.set_defaults(func=cmd_sim)

    da = sub.add_parser("disasm", help="disassemble Thumb code")
    da.add_argument("--image", required=True)
    da.add_argument("--rom")
    da.add_argument("--symbols")
    da.add_argument("--addr", type=_addr, required=True)
    da.add_argument("--count", type=int, default=16)
    da.set_defaults(func=cmd_disasm)

    g = sub.add_parser("gen-corpus", help="generate a deterministic frame corpus")
    src = g.add_mutually_exclusive_group()
    src.add_argument("--spec", help="corpus spec JSON")
    src.add_argument("--seed", type=_addr, default=4339)
    g.add_argument("--counts", help="e.g. own_data=20,control=10 (default: the 100-frame mixed corpus)")
    g.add_argument("--out", required=True)
    g.set_defaults(func=cmd_gen_corpus)

    sr = sub.add_parser("synth-ram", help="write the synthetic stock RAM image")
    sr.add_argument("--symbols")
    sr.add_argument("--out", required=True)
    sr.set_defaults(func=cmd_synth_ram)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    if getattr(args, "count", 0) and args.count < 0:
        parser.error("--count must be >= 0")
    if getattr(args, "len", 0) and args.len < 0:
        parser.error("--len must be >= 0")
    try:
        return args.func(args)
    except (UsageError, SymbolError) as exc:
        print(f"fwmon: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
