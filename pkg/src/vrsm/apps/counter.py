"""A counter state machine: every op increments and returns the new value."""

from ..codec import Reader, Writer, u64


class CounterStateMachine:
    def __init__(self):
        self.value = 0
        self.next_index = 0

    def apply(self, op: bytes, idx: int) -> bytes:
        self.next_index = idx + 1
        self.value += 1
        return u64(self.value)

    def read(self, op: bytes):
        return self.next_index, u64(self.value)

    def get_state(self) -> bytes:
        return Writer().u64(self.value).getvalue()

    def set_state(self, snap: bytes, idx: int):
        r = Reader(snap)
        self.value = r.u64()
        r.expect_done()
        self.next_index = idx
