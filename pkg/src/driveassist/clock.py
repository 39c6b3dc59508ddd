"""Wall and simulated clocks behind one small interface.

Live serving measures real latencies; scenario replay swaps in a virtual
clock so latency records (and therefore metrics CSVs) are bit-reproducible.
"""

from __future__ import annotations

import time
from typing import Protocol


class Clock(Protocol):
    def now_ms(self) -> float: ...

    def sleep_ms(self, duration_ms: float) -> None: ...


class MonotonicClock:
    """Real monotonic clock; sleeps block the calling thread."""

    def now_ms(self) -> float:
        return time.monotonic() * 1000.0

    def sleep_ms(self, duration_ms: float) -> None:
        if duration_ms > 0:
            time.sleep(duration_ms / 1000.0)


class VirtualClock:
    """Deterministic clock: time advances only through sleep_ms calls."""

    def __init__(self, start_ms: float = 0.0) -> None:
        self._now_ms = float(start_ms)

    def now_ms(self) -> float:
        return self._now_ms

    def sleep_ms(self, duration_ms: float) -> None:
        if duration_ms > 0:
            self._now_ms += float(duration_ms)
