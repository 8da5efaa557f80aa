"""Unreliable request/response RPC over a connection.

One ``call`` may run the remote handler zero, one or many times: requests are
retransmitted until a reply arrives and the server never deduplicates.

Frame layout (little-endian)::

    request: [kind u8 = 0][seqno u64][rpcId u64][payloadLen u64][payload]
    reply:   [kind u8 = 1][seqno u64][payloadLen u64][payload]
"""

import asyncio
import logging

from .aio import loop_ns, wait_future
from .clock import MS, SECOND
from .codec import DecodeError, Reader, Writer
from .transport import ConnectionClosed

log = logging.getLogger(__name__)

REQUEST = 0
REPLY = 1

RETRANSMIT_INTERVAL = 100 * MS
RETRANSMIT_CAP = 1 * SECOND


class RpcTimeout(TimeoutError):
    pass


def encode_request(seqno: int, rpc_id: int, payload: bytes) -> bytes:
    return Writer().u8(REQUEST).u64(seqno).u64(rpc_id).blob(payload).getvalue()


def encode_reply(seqno: int, payload: bytes) -> bytes:
    return Writer().u8(REPLY).u64(seqno).blob(payload).getvalue()


def decode_frame(data: bytes):
    """Return ``(kind, seqno, rpc_id, payload)``; rpc_id is None for replies."""
    r = Reader(data)
    kind = r.u8()
    seqno = r.u64()
    if kind == REQUEST:
        rpc_id = r.u64()
    elif kind == REPLY:
        rpc_id = None
    else:
        raise DecodeError(f"bad frame kind {kind}")
    payload = r.blob()
    r.expect_done()
    return kind, seqno, rpc_id, payload


class RpcClient:
    def __init__(self, node, addr: int, retransmit: int = RETRANSMIT_INTERVAL, retransmit_cap: int = RETRANSMIT_CAP):
        self.node = node
        self.addr = addr
        self.retransmit = retransmit
        self.retransmit_cap = retransmit_cap
        self.conn = node.connect(addr)
        self._seq = 0
        self._pending = {}
        self._reader = node.spawn(self._read_loop())

    async def _read_loop(self):
        while True:
            try:
                msg = await self.conn.receive()
            except ConnectionClosed:
                return
            try:
                kind, seqno, _, payload = decode_frame(msg)
            except DecodeError:
                continue
            if kind != REPLY:
                continue
            fut = self._pending.pop(seqno, None)
            if fut is not None and not fut.done():
                fut.set_result(payload)

    async def call(self, rpc_id: int, args: bytes, timeout: int) -> bytes:
        self._seq += 1
        seqno = self._seq
        fut = asyncio.get_running_loop().create_future()
        self._pending[seqno] = fut
        req = encode_request(seqno, rpc_id, args)
        deadline = loop_ns() + timeout
        interval = self.retransmit
        try:
            while True:
                self.conn.send(req)
                remaining = deadline - loop_ns()
                if await wait_future(fut, min(interval, remaining)):
                    return fut.result()
                if deadline - loop_ns() <= 0:
                    raise RpcTimeout(f"rpc {rpc_id} to {self.addr} timed out")
                interval = min(interval * 2, self.retransmit_cap)
        finally:
            self._pending.pop(seqno, None)

    def close(self):
        self.conn.close()
        self._reader.cancel()


async def serve(node, addr: int, handlers: dict):
    """Listen on ``addr`` and run ``handlers[rpcId](args) -> reply`` for every request frame.

    Each request frame runs in its own task and its reply is sent best-effort.
    Requests naming an unknown rpcId are dropped.
    """
    listener = await node.listen(addr)
    node.spawn(_accept_loop(node, listener, dict(handlers)))
    return listener


async def _accept_loop(node, listener, handlers):
    while True:
        try:
            conn = await listener.accept()
        except ConnectionClosed:
            return
        node.spawn(_conn_loop(node, conn, handlers))


async def _conn_loop(node, conn, handlers):
    while True:
        try:
            msg = await conn.receive()
        except ConnectionClosed:
            return
        try:
            kind, seqno, rpc_id, payload = decode_frame(msg)
        except DecodeError:
            log.debug("dropping malformed frame")
            continue
        handler = handlers.get(rpc_id) if kind == REQUEST else None
        if handler is None:
            continue
        node.spawn(_run_handler(conn, seqno, handler, payload))


async def _run_handler(conn, seqno, handler, payload):
    reply = await handler(payload)
    conn.send(encode_reply(seqno, reply))
