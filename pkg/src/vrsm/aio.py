"""Async primitives shared by protocol code; all durations are integer nanoseconds."""

import asyncio


def loop_ns() -> int:
    """Monotonic loop time (virtual time under the simulator)."""
    return int(asyncio.get_running_loop().time() * 1e9)


async def wait_future(fut: asyncio.Future, timeout_ns: int) -> bool:
    """Wait for ``fut`` without consuming it; True if it finished in time."""
    if fut.done():
        return True
    if timeout_ns <= 0:
        return False
    loop = asyncio.get_running_loop()
    waiter = loop.create_future()

    def wake(_=None):
        if not waiter.done():
            waiter.set_result(None)

    handle = loop.call_later(timeout_ns / 1e9, wake)
    fut.add_done_callback(wake)
    try:
        await waiter
    finally:
        handle.cancel()
        fut.remove_done_callback(wake)
    return fut.done()


class Notifier:
    """Broadcast wakeup: ``wait`` returns at the next ``notify`` or on timeout."""

    def __init__(self):
        self._fut = None

    async def wait(self, timeout_ns: int) -> bool:
        if self._fut is None or self._fut.done():
            self._fut = asyncio.get_running_loop().create_future()
        return await wait_future(self._fut, timeout_ns)

    def notify(self):
        f = self._fut
        self._fut = None
        if f is not None and not f.done():
            f.set_result(None)


async def await_quorum(tasks, need: int, ok=bool) -> int:
    """Wait until ``need`` tasks returned a value accepted by ``ok`` or all tasks ended.

    Returns the count of accepted results seen. Tasks still running are left alone.
    """
    pending = set(tasks)
    good = 0
    while pending and good < need:
        done, pending = await asyncio.wait(pending, return_when=asyncio.FIRST_COMPLETED)
        for t in done:
            if not t.cancelled() and t.exception() is None and ok(t.result()):
                good += 1
    return good
