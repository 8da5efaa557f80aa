"""Exactly-once execution on top of an at-least-once clerk.

Each read-write op carries ``(clientId, seq)``. The wrapped state machine keeps
the last seq and reply per client inside its snapshot, so a duplicate returns
the stored reply on every replica and survives reconfiguration.

Envelope: ``[clientId u64][seq u64][kind u8][payloadLen u64][payload]``.
"""

import logging

from .codec import DecodeError, Reader, Writer

log = logging.getLogger(__name__)

READWRITE = 0
READONLY = 1


def encode_envelope(client_id: int, seq: int, kind: int, payload: bytes) -> bytes:
    return Writer().u64(client_id).u64(seq).u8(kind).blob(payload).getvalue()


def decode_envelope(data: bytes):
    r = Reader(data)
    cid, seq, kind, payload = r.u64(), r.u64(), r.u8(), r.blob()
    r.expect_done()
    if kind not in (READWRITE, READONLY):
        raise DecodeError(f"bad envelope kind {kind}")
    return cid, seq, kind, payload


class ExactlyOnceStateMachine:
    """Versioned state machine transformer adding a per-client reply table."""

    def __init__(self, inner):
        self.inner = inner
        self.table = {}  # clientId -> (lastSeq, lastReply)
        self.inner_applies = 0

    def apply(self, op: bytes, idx: int) -> bytes:
        try:
            cid, seq, kind, payload = decode_envelope(op)
        except DecodeError:
            log.warning("rejecting malformed envelope at index %d", idx)
            return b""
        if kind == READONLY:
            return self.inner.read(payload)[1]
        last = self.table.get(cid)
        if last is not None:
            if seq == last[0]:
                return last[1]
            if seq < last[0]:
                return b""
        reply = self.inner.apply(payload, idx)
        self.inner_applies += 1
        self.table[cid] = (seq, reply)
        return reply

    def read(self, op: bytes):
        try:
            _, _, _, payload = decode_envelope(op)
        except DecodeError:
            return 0, b""
        return self.inner.read(payload)

    def get_state(self) -> bytes:
        w = Writer().blob(self.inner.get_state()).u64(len(self.table))
        for cid in sorted(self.table):
            seq, reply = self.table[cid]
            w.u64(cid).u64(seq).blob(reply)
        return w.getvalue()

    def set_state(self, snap: bytes, idx: int):
        r = Reader(snap)
        inner = r.blob()
        table = {}
        for _ in range(r.u64()):
            cid, seq, reply = r.u64(), r.u64(), r.blob()
            table[cid] = (seq, reply)
        r.expect_done()
        self.inner.set_state(inner, idx)
        self.table = table


class ExactlyOnceClerk:
    def __init__(self, clerk, client_id: int = None):
        self.clerk = clerk
        self.client_id = client_id if client_id is not None else clerk.rng.getrandbits(64)
        self.seq = 0

    async def apply(self, payload: bytes) -> bytes:
        self.seq += 1
        return await self.clerk.apply(encode_envelope(self.client_id, self.seq, READWRITE, payload))

    async def read(self, payload: bytes) -> bytes:
        return await self.clerk.read(encode_envelope(self.client_id, self.seq, READONLY, payload))
