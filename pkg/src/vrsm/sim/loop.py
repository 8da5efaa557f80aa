"""An asyncio event loop that runs on virtual time.

Nothing ever blocks: when every task is waiting, the loop jumps its clock
straight to the next scheduled timer. Ready callbacks run FIFO and timers pop
in (when, insertion order), so equal-time timers fire FIFO.
"""

import asyncio
import heapq
import itertools
import math


class SimulationIdle(Exception):
    """Every task is blocked and no timer is pending."""


class _SeqTimer(asyncio.TimerHandle):
    __slots__ = ("_seq",)

    def __lt__(self, other):
        return (self._when, self._seq) < (other._when, other._seq)


class SimLoop(asyncio.BaseEventLoop):
    def __init__(self):
        super().__init__()
        self._now_ns = 0
        self._selector = self
        self._timer_seq = itertools.count()

    def call_at(self, when, callback, *args, context=None):
        self._check_closed()
        timer = _SeqTimer(when, callback, args, self, context)
        timer._seq = next(self._timer_seq)
        heapq.heappush(self._scheduled, timer)
        timer._scheduled = True
        return timer

    def now_ns(self) -> int:
        return self._now_ns

    def time(self) -> float:
        return self._now_ns / 1e9

    def call_at_ns(self, when_ns: int, callback, *args):
        return self.call_at(when_ns / 1e9, callback, *args)

    # selector protocol used by BaseEventLoop._run_once
    def select(self, timeout):
        if timeout is None:
            raise SimulationIdle(f"no runnable work at t={self._now_ns}ns")
        if timeout > 0:
            self._now_ns += max(1, math.ceil(timeout * 1e9 - 1e-3))
        return []

    def _process_events(self, event_list):
        pass

    def _write_to_self(self):
        pass
