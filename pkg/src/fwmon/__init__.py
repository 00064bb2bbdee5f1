"""fwmon: firmware patching toolkit and receive-path model for the BCM4339 Wi-Fi SoC."""

from .image import FirmwareImage, MemoryAccessError
from .patcher import MctlBits, build_patch
from .symbols import SymbolMap, builtin_map

__version__ = "0.1.0"
