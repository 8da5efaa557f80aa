"""Replicated state machine client: writes go to the primary, reads to any replica."""

import logging

from .clock import MS, SECOND
from .codec import DecodeError, Reader
from .configservice import ConfigClerk
from .errors import Err, ProtocolError
from .replica import RPC_APPLY, RPC_APPLY_READONLY
from .rpc import RpcClient, RpcTimeout

log = logging.getLogger(__name__)

BACKOFF_START = 50 * MS
BACKOFF_CAP = 500 * MS
APPLY_TIMEOUT = 4 * SECOND
READ_TIMEOUT = 3 * SECOND


class Clerk:
    """One logical client with at most one outstanding operation.

    Both calls retry forever; an operation sent through ``apply`` may be
    executed more than once.
    """

    def __init__(self, node, config_servers: list, rng=None):
        self.node = node
        self.config = ConfigClerk(node, config_servers)
        self.rng = rng if rng is not None else node.rng
        self.cached_config = []
        self._clients = {}
        self.attempts = 0

    def _client(self, addr: int) -> RpcClient:
        c = self._clients.get(addr)
        if c is None:
            c = self._clients[addr] = RpcClient(self.node, addr)
        return c

    async def _refresh(self):
        try:
            cfg = await self.config.get_config()
        except ProtocolError:
            return
        if cfg:
            self.cached_config = cfg

    async def _attempt(self, addr: int, rpc_id: int, op: bytes, timeout: int):
        self.attempts += 1
        try:
            reply = await self._client(addr).call(rpc_id, op, timeout)
            r = Reader(reply)
            code, res = r.u64(), r.blob()
        except (RpcTimeout, DecodeError):
            return None
        return res if code == Err.OK else None

    async def _retry(self, pick, rpc_id: int, op: bytes, timeout: int) -> bytes:
        backoff = BACKOFF_START
        while True:
            if not self.cached_config:
                await self._refresh()
            if self.cached_config:
                res = await self._attempt(pick(), rpc_id, op, timeout)
                if res is not None:
                    return res
                await self._refresh()
            await self.node.sleep(self.rng.randint(backoff // 2, backoff))
            backoff = min(backoff * 2, BACKOFF_CAP)

    async def apply(self, op: bytes) -> bytes:
        return await self._retry(lambda: self.cached_config[0], RPC_APPLY, op, APPLY_TIMEOUT)

    async def read(self, op: bytes) -> bytes:
        return await self._retry(lambda: self.rng.choice(self.cached_config), RPC_APPLY_READONLY, op, READ_TIMEOUT)
