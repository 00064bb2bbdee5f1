"""Named firmware addresses for the BCM4339 firmware (6.37.32.RC23.34.40)."""

from __future__ import annotations

import json
from dataclasses import dataclass

FUNCTION = "function"
DATA_WORD = "data-word"
CHAIN_NODE = "handler-chain-node"
KINDS = (FUNCTION, DATA_WORD, CHAIN_NODE)


class SymbolError(ValueError):
    pass


@dataclass(frozen=True)
class Symbol:
    name: str
    address: int
    kind: str = FUNCTION
    thumb: bool = True

    def __post_init__(self):
        if self.kind not in KINDS:
            raise SymbolError(f"{self.name}: unknown kind {self.kind!r}")
        if not 0 <= self.address < 1 << 32:
            raise SymbolError(f"{self.name}: address {self.address:#x} out of range")
        if self.kind == FUNCTION and self.address & 1:
            raise SymbolError(f"{self.name}: function address {self.address:#x} is not halfword-aligned")


class SymbolMap:
    def __init__(self, symbols=()):
        self._by_name: dict[str, Symbol] = {}
        for sym in symbols:
            self.add(sym)

    def add(self, sym: Symbol) -> Symbol:
        if sym.name in self._by_name:
            raise SymbolError(f"duplicate symbol {sym.name!r}")
        if sym.kind == FUNCTION:
            clash = self.reverse_lookup(sym.address)
            if clash is not None:
                raise SymbolError(
                    f"{sym.name}: function address {sym.address:#x} already named {clash.name!r}"
                )
        self._by_name[sym.name] = sym
        return sym

    def lookup(self, name: str) -> int:
        return self[name].address

    def get(self, name: str):
        return self._by_name.get(name)

    def reverse_lookup(self, addr: int):
        """Function symbol at ``addr`` (Thumb bit ignored), or None."""
        addr &= ~1
        for sym in self._by_name.values():
            if sym.kind == FUNCTION and sym.address == addr:
                return sym
        return None

    def with_symbols(self, extra) -> "SymbolMap":
        return SymbolMap([*self, *extra])

    def __getitem__(self, name: str) -> Symbol:
        try:
            return self._by_name[name]
        except KeyError:
            raise SymbolError(f"unresolved symbol {name!r}") from None

    def __contains__(self, name):
        return name in self._by_name

    def __iter__(self):
        return iter(self._by_name.values())

    def __len__(self):
        return len(self._by_name)

    def __eq__(self, other):
        if not isinstance(other, SymbolMap):
            return NotImplemented
        return self._by_name == other._by_name

    def to_json(self) -> list:
        return [
            {"name": s.name, "address": f"{s.address:#x}", "kind": s.kind, "thumb": s.thumb}
            for s in self
        ]

    @classmethod
    def from_json(cls, entries) -> "SymbolMap":
        if not isinstance(entries, list):
            raise SymbolError("symbol map must be a JSON array")
        syms = cls()
        for i, e in enumerate(entries):
            try:
                sym = Symbol(
                    name=str(e["name"]),
                    address=int(e["address"], 16),
                    kind=e.get("kind", FUNCTION),
                    thumb=bool(e.get("thumb", True)),
                )
            except (KeyError, TypeError, ValueError, AttributeError) as exc:
                if isinstance(exc, SymbolError):
                    raise
                raise SymbolError(f"malformed symbol entry #{i}: {e!r}") from exc
            syms.add(sym)
        return syms


def load_map(path) -> SymbolMap:
    with open(path) as fh:
        text = fh.read()
    if not text.strip():
        return SymbolMap()
    try:
        entries = json.loads(text)
    except json.JSONDecodeError as exc:
        raise SymbolError(f"{path}: {exc}") from exc
    return SymbolMap.from_json(entries)


def save_map(syms: SymbolMap, path) -> None:
    with open(path, "w") as fh:
        json.dump(syms.to_json(), fh, indent=2)
        fh.write("\n")


_BUILTIN = [
    # called from generated hook code
    ("printf", 0x126F0, FUNCTION),
    ("dma_rx", 0x8C69C, FUNCTION),
    # receive path
    ("wlc_bmac_recv", 0x1AAD98, FUNCTION),
    ("wlc_bmac_recv_wrapper", 0x4F7A4, FUNCTION),
    ("wlc_recv", 0x19AFE8, FUNCTION),
    ("dngl_sendpkt", 0x182750, FUNCTION),
    ("dma_txfast", 0x1844B2, FUNCTION),
    ("wlc_bmac_mctrl", 0x4F080, FUNCTION),
    ("wlc_coreinit", 0x1AB66C, FUNCTION),
    ("wlc_dpc", 0x61EB4, FUNCTION),
    # literal words passed by wlc_coreinit to wlc_bmac_mctrl
    ("coreinit_mctrl_mask_word", 0x1AB82C, DATA_WORD),
    ("coreinit_mctrl_value_word", 0x1AB828, DATA_WORD),
    # FIQ dispatch chain
    ("fiq_ram_handler", 0x180FEE, FUNCTION),
    ("common_exception_handler", 0x181032, FUNCTION),
    ("callback_ref", 0x181100, DATA_WORD),
    ("callback_fn", 0x181E48, FUNCTION),
    ("fiq_dispatch", 0x181A88, FUNCTION),
    ("handler_list_ref", 0x180E5C, DATA_WORD),
    ("wlc_dpc_chain_0", 0x27550, CHAIN_NODE),
    ("wlc_dpc_chain_1", 0x2733C, CHAIN_NODE),
    ("wlc_dpc_chain_2", 0x61EB4, CHAIN_NODE),
    # wlc_recv -> dngl_sendpkt path (unnamed in the firmware, odd values are Thumb pointers)
    ("sendpkt_path_0", 0x19955F, CHAIN_NODE),
    ("sendpkt_path_1", 0x198CDD, CHAIN_NODE),
    ("sendpkt_path_2", 0x1981F5, CHAIN_NODE),
    ("sendpkt_path_3", 0x1893B5, CHAIN_NODE),
    ("sendpkt_path_4", 0x183771, CHAIN_NODE),
    ("sendpkt_path_5", 0x182C84, CHAIN_NODE),
    # dngl_sendpkt -> dma_txfast path
    ("txfast_path_0", 0x18256C, CHAIN_NODE),
    ("txfast_path_1", 0x182450, CHAIN_NODE),
]

# interrupt-to-receive path in call order, by symbol name
FIQ_CHAIN = (
    "fiq_ram_handler",
    "common_exception_handler",
    "callback_ref",
    "callback_fn",
    "fiq_dispatch",
    "handler_list_ref",
    "wlc_dpc_chain_0",
    "wlc_dpc_chain_1",
    "wlc_dpc_chain_2",
    "wlc_bmac_recv_wrapper",
    "wlc_bmac_recv",
)


def builtin_map() -> SymbolMap:
    return SymbolMap(Symbol(name, addr, kind) for name, addr, kind in _BUILTIN)
