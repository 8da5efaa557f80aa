"""Whole-state Paxos over a fixed server set.

Every accepted value is the complete replicated state, so an acceptor that
falls behind catches up by taking a newer state rather than repairing a log.
Leader epochs are drawn from per-server residue classes (``e % n == me``), so
two servers can never lead in the same epoch.
"""

import asyncio
import hashlib
import logging

from . import mutants
from .aio import await_quorum
from .clock import MS
from .codec import DecodeError, Reader, Writer
from .errors import Err, NotLeaderError, PaxosError
from .rpc import RpcClient, RpcTimeout

log = logging.getLogger(__name__)

RPC_PREPARE = 10
RPC_PROPOSE = 11

DEFAULT_RPC_TIMEOUT = 1000 * MS
DURABLE_FILE = "paxos"


def blob_digest(blob: bytes) -> str:
    return hashlib.blake2b(blob, digest_size=8).hexdigest()


def next_owned_epoch(floor: int, me: int, n: int) -> int:
    """Smallest epoch strictly above ``floor`` congruent to ``me`` mod ``n``."""
    e = floor + 1
    return e + (me - e) % n


class PaxosDurable:
    __slots__ = ("promised", "accepted_epoch", "accepted_index", "state")

    def __init__(self, promised=0, accepted_epoch=0, accepted_index=0, state=b""):
        self.promised = promised
        self.accepted_epoch = accepted_epoch
        self.accepted_index = accepted_index
        self.state = state

    def encode(self) -> bytes:
        return (Writer().u64(self.promised).u64(self.accepted_epoch).u64(self.accepted_index)
                .blob(self.state).getvalue())

    @classmethod
    def decode(cls, data: bytes) -> "PaxosDurable":
        r = Reader(data)
        d = cls(r.u64(), r.u64(), r.u64(), r.blob())
        r.expect_done()
        return d

    def copy(self) -> "PaxosDurable":
        return PaxosDurable(self.promised, self.accepted_epoch, self.accepted_index, self.state)


class PaxosNode:
    def __init__(self, node, me: int, peers: list, durable: PaxosDurable, rpc_timeout: int = DEFAULT_RPC_TIMEOUT):
        if not 0 <= me < len(peers):
            raise ValueError("server index out of range")
        self.node = node
        self.me = me
        self.peers = list(peers)
        self.n = len(peers)
        self.d = durable
        self.rpc_timeout = rpc_timeout
        self.is_leader = False
        self.leader_epoch = 0
        self.max_seen = durable.promised
        self.heard_from_leader = None  # local earliest time of the last proposal accepted from another server
        self._lock = asyncio.Lock()
        self._clients = {}

    @classmethod
    async def recover(cls, node, me: int, peers: list, initial_state: bytes, **kw) -> "PaxosNode":
        data = await node.store.read(DURABLE_FILE)
        if data is None:
            d = PaxosDurable(state=initial_state)
            await node.store.write_atomic(DURABLE_FILE, d.encode())
        else:
            d = PaxosDurable.decode(data)
        node.trace("paxos_recovered", promised=d.promised, epoch=d.accepted_epoch, index=d.accepted_index)
        return cls(node, me, peers, d, **kw)

    def handlers(self) -> dict:
        return {RPC_PREPARE: self._handle_prepare, RPC_PROPOSE: self._handle_propose}

    @property
    def majority(self) -> int:
        return self.n // 2 + 1

    def _client(self, i: int) -> RpcClient:
        c = self._clients.get(i)
        if c is None:
            c = self._clients[i] = RpcClient(self.node, self.peers[i])
        return c

    async def _persist(self):
        await self.node.store.write_atomic(DURABLE_FILE, self.d.encode())

    def _observe_epoch(self, e: int):
        if e > self.max_seen:
            self.max_seen = e
        if self.is_leader and e > self.leader_epoch:
            self.is_leader = False

    # -- client-facing

    def leader_recently_active(self, window: int) -> bool:
        """True when another server's proposal was accepted here within the last ``window`` ns."""
        t = self.heard_from_leader
        return t is not None and self.node.time_range().earliest - t < window

    def weak_read(self) -> bytes:
        return self.d.state

    def begin(self):
        """Return ``(state, commit)``; ``await commit(new_state)`` raises on failure.

        A failed commit may still have taken effect.
        """
        epoch, index = self.leader_epoch, self.d.accepted_index
        leader = self.is_leader

        async def commit(new_state: bytes):
            if not leader:
                raise NotLeaderError("not the paxos leader")
            await self._commit(epoch, index, bytes(new_state))

        return self.d.state, commit

    async def _commit(self, epoch: int, index: int, new_state: bytes):
        d = self.d
        async with self._lock:
            if not self.is_leader or self.leader_epoch != epoch or d.promised != epoch:
                raise NotLeaderError("leadership lost")
            if d.accepted_index != index or d.accepted_epoch != epoch:
                raise PaxosError("index moved since begin")
            d.accepted_index = index + 1
            d.state = new_state
            await self._persist()
            self.node.trace("paxos_accept", epoch=epoch, index=index + 1, digest=blob_digest(new_state))
        payload = Writer().u64(epoch).u64(index + 1).blob(new_state).getvalue()
        tasks = [self.node.spawn(self._send_propose(i, payload)) for i in range(self.n) if i != self.me]
        got = 1 + await await_quorum(tasks, self.majority - 1)
        if got < self.majority:
            raise PaxosError(f"no majority for index {index + 1}")
        self.node.trace("paxos_committed", epoch=epoch, index=index + 1, digest=blob_digest(new_state))

    async def _send_propose(self, i: int, payload: bytes) -> bool:
        try:
            reply = await self._client(i).call(RPC_PROPOSE, payload, self.rpc_timeout)
            r = Reader(reply)
            err, promised = r.u64(), r.u64()
        except (RpcTimeout, DecodeError):
            return False
        if err != Err.OK:
            self._observe_epoch(promised)
            return False
        return True

    async def try_become_leader(self) -> bool:
        d = self.d
        async with self._lock:
            epoch = next_owned_epoch(max(d.promised, self.max_seen), self.me, self.n)
            self.is_leader = False
            d.promised = epoch
            self.max_seen = epoch
            await self._persist()
            own = (d.accepted_epoch, d.accepted_index, d.state)
        payload = Writer().u64(epoch).getvalue()
        responses = [own]
        tasks = [self.node.spawn(self._send_prepare(i, payload, epoch, responses))
                 for i in range(self.n) if i != self.me]
        got = 1 + await await_quorum(tasks, self.majority - 1)
        if got < self.majority:
            return False
        async with self._lock:
            if d.promised != epoch:
                return False
            _, idx, state = max(responses, key=lambda r: (r[0], r[1]))
            d.accepted_epoch, d.accepted_index, d.state = epoch, idx, state
            await self._persist()
            self.is_leader = True
            self.leader_epoch = epoch
            self.node.trace("paxos_leader", epoch=epoch, index=idx)
            self.node.trace("paxos_accept", epoch=epoch, index=idx, digest=blob_digest(state))
        return True

    async def _send_prepare(self, i, payload, epoch, responses) -> bool:
        try:
            reply = await self._client(i).call(RPC_PREPARE, payload, self.rpc_timeout)
            r = Reader(reply)
            err, promised, acc_e, acc_i, state = r.u64(), r.u64(), r.u64(), r.u64(), r.blob()
        except (RpcTimeout, DecodeError):
            return False
        if err != Err.OK:
            self._observe_epoch(promised)
            return False
        responses.append((acc_e, acc_i, state))
        return True

    # -- acceptor

    async def _handle_prepare(self, args: bytes) -> bytes:
        epoch = Reader(args).u64()
        d = self.d
        async with self._lock:
            if epoch < d.promised:
                return Writer().u64(Err.STALE_EPOCH).u64(d.promised).u64(0).u64(0).blob(b"").getvalue()
            if epoch > d.promised:
                d.promised = epoch
                self._observe_epoch(epoch)
                await self._persist()
            self.node.trace("paxos_promise", epoch=epoch)
            return (Writer().u64(Err.OK).u64(d.promised).u64(d.accepted_epoch).u64(d.accepted_index)
                    .blob(d.state).getvalue())

    async def _handle_propose(self, args: bytes) -> bytes:
        r = Reader(args)
        epoch, index, state = r.u64(), r.u64(), r.blob()
        d = self.d
        async with self._lock:
            if epoch < d.promised:
                return Writer().u64(Err.STALE_EPOCH).u64(d.promised).getvalue()
            if (epoch, index) > (d.accepted_epoch, d.accepted_index):
                self._observe_epoch(epoch)
                d.promised = epoch
                d.accepted_epoch, d.accepted_index, d.state = epoch, index, state
                if mutants.active("paxos_ack_before_persist"):
                    self.node.trace("paxos_ack", epoch=epoch, index=index)
                    self.node.spawn(self._persist())
                    return Writer().u64(Err.OK).u64(d.promised).getvalue()
                await self._persist()
                self.node.trace("paxos_accept", epoch=epoch, index=index, digest=blob_digest(state))
            # equal epoch with a lower or equal index: a newer state of the same leader is already held
            if epoch % self.n != self.me:
                self.heard_from_leader = self.node.time_range().earliest
            self.node.trace("paxos_ack", epoch=epoch, index=index)
            return Writer().u64(Err.OK).u64(d.promised).getvalue()
