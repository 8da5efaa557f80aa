"""Reconfiguration controller: move the replicated state machine to a new server set."""

import asyncio
import logging

from .clock import MS, SECOND
from .codec import DecodeError, Reader, Writer
from .errors import Err, ProtocolError, UnavailableError, error_for
from .replica import RPC_BECOME_PRIMARY, RPC_GET_STATE_AND_SEAL, RPC_SET_NEW_EPOCH_STATE
from .rpc import RpcClient, RpcTimeout

log = logging.getLogger(__name__)

STEP_TIMEOUT = 2 * SECOND
BECOME_PRIMARY_DEADLINE = 10 * SECOND


class ReconfigError(ProtocolError):
    pass


class Reconfigurer:
    def __init__(self, node, config_clerk, rng=None):
        self.node = node
        self.config = config_clerk
        self.rng = rng if rng is not None else node.rng
        self._clients = {}

    def _client(self, addr):
        c = self._clients.get(addr)
        if c is None:
            c = self._clients[addr] = RpcClient(self.node, addr)
        return c

    async def _call(self, addr, rpc_id, args, timeout=STEP_TIMEOUT):
        """Reply reader after the error code, or raise the mapped error."""
        try:
            reply = await self._client(addr).call(rpc_id, args, timeout)
            r = Reader(reply)
            code = r.u64()
        except RpcTimeout:
            raise UnavailableError(f"no reply from {addr}") from None
        except DecodeError:
            raise UnavailableError(f"garbled reply from {addr}") from None
        return code, r

    async def reconfigure(self, new_servers: list) -> int:
        """Run all five steps once; returns the new epoch or raises on the first failed step."""
        new_servers = list(new_servers)
        if not new_servers or len(set(new_servers)) != len(new_servers):
            raise ValueError("new server list must be non-empty and distinct")
        epoch, old = await self.config.reserve_epoch_and_get_config()
        self.node.trace("reconfig_reserved", epoch=epoch)

        next_index, snap = await self._seal_one(epoch, old)

        args = Writer().u64(epoch).u64(next_index).blob(snap).getvalue()
        results = await asyncio.gather(*(self._install(a, epoch, args) for a in new_servers),
                                       return_exceptions=True)
        for res in results:
            if isinstance(res, BaseException):
                raise res

        await self.config.try_write_config(epoch, new_servers)
        self.node.trace("reconfig_written", epoch=epoch, config=tuple(new_servers))

        await self._activate(new_servers[0], epoch, new_servers)
        return epoch

    async def _seal_one(self, epoch: int, old: list):
        if not old:
            raise ReconfigError("current configuration is empty")
        start = self.rng.randrange(len(old))
        last = None
        for k in range(len(old)):
            addr = old[(start + k) % len(old)]
            try:
                code, r = await self._call(addr, RPC_GET_STATE_AND_SEAL, Writer().u64(epoch).getvalue())
            except UnavailableError as e:
                last = e
                continue
            if code == Err.OK:
                r.u64()
                return r.u64(), r.blob()
            last = error_for(code, f"seal at {addr}")
            if code == Err.STALE_EPOCH:
                break
        raise last or ReconfigError("could not seal any old server")

    async def _install(self, addr: int, epoch: int, args: bytes):
        code, r = await self._call(addr, RPC_SET_NEW_EPOCH_STATE, args)
        if code == Err.OK:
            return
        if code == Err.STALE_EPOCH and r.u64() == epoch:
            return  # a retransmitted install already took effect
        raise error_for(code, f"install at {addr}")

    async def _activate(self, primary: int, epoch: int, servers: list):
        args = Writer().u64(epoch).u64_list(servers).getvalue()
        stop = self.node.time_range().earliest + BECOME_PRIMARY_DEADLINE
        while True:
            try:
                code, _ = await self._call(primary, RPC_BECOME_PRIMARY, args)
            except UnavailableError:
                code = Err.TIMEOUT
            if code == Err.OK:
                self.node.trace("reconfig_done", epoch=epoch)
                return
            if code != Err.TIMEOUT or self.node.time_range().earliest > stop:
                raise error_for(code, f"activate {primary}")
            await self.node.sleep(50 * MS)

