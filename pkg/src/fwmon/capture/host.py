"""Host driver side: split SDIO frames into monitor and Ethernet captures."""

from __future__ import annotations

import logging

from ..sdio import MONITOR_CHANNEL, SdioError, SdioFrame
from .pcap import CaptureRecord

log = logging.getLogger(__name__)

# 2016-01-01T00:00:00Z; one frame per millisecond
TS_BASE_US = 1_451_606_400_000_000
TS_STEP_US = 1000


def host_deliver(host_queue, strict: bool = True, ts_base: int = TS_BASE_US, ts_step: int = TS_STEP_US):
    """Return (monitor records, ethernet records).

    Timestamps follow queue position, so each list is strictly increasing.
    With ``strict=False`` malformed frames are logged and skipped.
    """
    monitor, ethernet = [], []
    for i, raw in enumerate(host_queue):
        try:
            frame = SdioFrame.unpack(raw)
        except SdioError as exc:
            if strict:
                raise SdioError(f"host frame #{i}: {exc}") from exc
            log.warning("dropping malformed host frame #%d: %s", i, exc)
            continue
        record = CaptureRecord(ts_base + i * ts_step, frame.payload)
        (monitor if frame.channel == MONITOR_CHANNEL else ethernet).append(record)
    return monitor, ethernet
