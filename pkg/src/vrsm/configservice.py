"""Configuration service: epoch reservation, the live configuration, and epoch leases.

The service state is one small blob replicated by whole-state Paxos; every
mutation is a begin/commit pair on the current Paxos leader.
"""

import asyncio
import collections
import logging
from dataclasses import dataclass, field, replace

from .clock import MS, SECOND
from .codec import DecodeError, Reader, Writer
from .errors import Err, NotLeaderError, ProtocolError, UnavailableError, error_for
from .paxos import PaxosNode
from .rpc import RpcClient, RpcTimeout, serve

log = logging.getLogger(__name__)

RPC_RESERVE = 20
RPC_GET_CONFIG = 21
RPC_WRITE_CONFIG = 22
RPC_GET_LEASE = 23

LEASE_DURATION = 1 * SECOND
LEASE_POLL = 10 * MS
# a committed lease this far from lapsing is handed out again without a new commit
LEASE_REUSE_SLACK = 300 * MS
WRITE_WAIT_LIMIT = 3 * SECOND
# a non-leader that accepted another leader's proposal this recently defers instead of campaigning
LEADER_QUIET = 500 * MS


@dataclass(frozen=True)
class ConfigState:
    reserved_epoch: int = 1
    live_epoch: int = 1
    config: tuple = field(default_factory=tuple)
    lease_expiration: int = 0

    def encode(self) -> bytes:
        return (Writer().u64(self.reserved_epoch).u64(self.live_epoch).u64(self.lease_expiration)
                .u64_list(self.config).getvalue())

    @classmethod
    def decode(cls, data: bytes) -> "ConfigState":
        r = Reader(data)
        reserved, live, lease = r.u64(), r.u64(), r.u64()
        cfg = tuple(r.u64_list())
        r.expect_done()
        return cls(reserved, live, cfg, lease)


class ConfigServer:
    def __init__(self, node, paxos: PaxosNode, lease_duration: int = LEASE_DURATION):
        self.node = node
        self.paxos = paxos
        self.lease_duration = lease_duration
        self._op_lock = asyncio.Lock()
        self._committed_at = None  # (leader epoch, index) of the last commit made here
        self._reserved_for = collections.OrderedDict()  # caller nonce -> (epoch, config)

    @classmethod
    async def start(cls, node, me: int, peers: list, initial_config: list, lease_duration: int = LEASE_DURATION,
                    **paxos_kw) -> "ConfigServer":
        init = ConfigState(1, 1, tuple(initial_config), 0).encode()
        px = await PaxosNode.recover(node, me, peers, init, **paxos_kw)
        srv = cls(node, px, lease_duration)
        handlers = px.handlers()
        handlers.update({
            RPC_RESERVE: srv._handle_reserve,
            RPC_GET_CONFIG: srv._handle_get_config,
            RPC_WRITE_CONFIG: srv._handle_write_config,
            RPC_GET_LEASE: srv._handle_get_lease,
        })
        await serve(node, peers[me], handlers)
        return srv

    def state(self) -> ConfigState:
        return ConfigState.decode(self.paxos.weak_read())

    async def _mutate(self, step):
        """Run ``step(state, known_committed) -> (new_state | None, result)`` as one Paxos transaction.

        ``known_committed`` is true when this server itself committed ``state``.

        Raises NotLeaderError or PaxosError when it cannot be committed here.
        """
        async with self._op_lock:
            for _ in range(2):
                if not self.paxos.is_leader and self.paxos.leader_recently_active(LEADER_QUIET):
                    raise NotLeaderError("another leader is active")
                if not self.paxos.is_leader and not await self.paxos.try_become_leader():
                    raise NotLeaderError("could not become leader")
                at = (self.paxos.leader_epoch, self.paxos.d.accepted_index)
                old, commit = self.paxos.begin()
                st = ConfigState.decode(old)
                new, result = step(st, at == self._committed_at)
                if new is None:
                    return result
                self._trace_transition(st, new)
                try:
                    await commit(new.encode())
                except NotLeaderError:
                    continue
                self._committed_at = (at[0], at[1] + 1)
                return result
            raise NotLeaderError("leadership lost twice")

    def _trace_transition(self, old: ConfigState, new: ConfigState):
        self.node.trace("config_propose", old_live=old.live_epoch, new_live=new.live_epoch,
                        old_reserved=old.reserved_epoch, new_reserved=new.reserved_epoch,
                        old_lease=old.lease_expiration, new_lease=new.lease_expiration,
                        config=new.config)

    # each handler maps protocol failures to an error code in its reply

    async def _handle_reserve(self, args: bytes) -> bytes:
        nonce = Reader(args).u64() if len(args) == 8 else None

        def step(st, _):
            # a retransmitted request must not reserve a second epoch
            if nonce is not None and nonce in self._reserved_for:
                return None, self._reserved_for[nonce]
            st2 = replace(st, reserved_epoch=st.reserved_epoch + 1)
            return st2, (st2.reserved_epoch, st2.config)

        try:
            epoch, cfg = await self._mutate(step)
        except ProtocolError as e:
            return Writer().u64(e.code).u64(0).u64_list([]).getvalue()
        if nonce is not None:
            self._reserved_for[nonce] = (epoch, cfg)
            while len(self._reserved_for) > 64:
                self._reserved_for.popitem(last=False)
        return Writer().u64(Err.OK).u64(epoch).u64_list(cfg).getvalue()

    async def _handle_get_config(self, args: bytes) -> bytes:
        return Writer().u64_list(self.state().config).getvalue()

    async def _handle_write_config(self, args: bytes) -> bytes:
        r = Reader(args)
        epoch, cfg = r.u64(), tuple(r.u64_list())
        deadline = self.node.time_range().earliest + WRITE_WAIT_LIMIT

        def step(st, _):
            if epoch != st.reserved_epoch:
                return None, Err.STALE_EPOCH
            if st.live_epoch == epoch:
                # a retried write of an already-live epoch changes nothing, lease included
                return None, (Err.OK if st.config == cfg else Err.STALE_EPOCH)
            if self.node.time_range().earliest <= st.lease_expiration:
                return None, Err.RETRY
            return replace(st, live_epoch=epoch, config=cfg, lease_expiration=0), Err.OK

        while True:
            try:
                code = await self._mutate(step)
            except ProtocolError as e:
                code = e.code
            if code != Err.RETRY or self.node.time_range().earliest > deadline:
                return Writer().u64(code).getvalue()
            await self.node.sleep(LEASE_POLL)

    async def _handle_get_lease(self, args: bytes) -> bytes:
        epoch = Reader(args).u64()

        def step(st, known_committed):
            if epoch != st.live_epoch:
                return None, (Err.WRONG_EPOCH, 0)
            if st.reserved_epoch > st.live_epoch:
                return None, (Err.REFUSED, 0)
            want = self.node.time_range().latest + self.lease_duration
            if known_committed and st.lease_expiration >= want - LEASE_REUSE_SLACK:
                return None, (Err.OK, st.lease_expiration)
            exp = max(st.lease_expiration, want)
            return replace(st, lease_expiration=exp), (Err.OK, exp)

        try:
            code, exp = await self._mutate(step)
        except ProtocolError as e:
            code, exp = e.code, 0
        if code == Err.OK:
            self.node.trace("lease_granted", epoch=epoch, expiration=exp)
        return Writer().u64(code).u64(exp).getvalue()


class ConfigClerk:
    """Client of the configuration service.

    Mutations stick to the last server that answered and rotate on failure;
    every call gives up with UnavailableError after ``deadline`` ns.
    """

    def __init__(self, node, servers: list, rpc_timeout: int = 1 * SECOND, deadline: int = 10 * SECOND):
        self.node = node
        self.servers = list(servers)
        self.rpc_timeout = rpc_timeout
        self.deadline = deadline
        self._hint = 0
        self._clients = {}

    def _client(self, i):
        c = self._clients.get(i)
        if c is None:
            c = self._clients[i] = RpcClient(self.node, self.servers[i])
        return c

    async def _call(self, rpc_id: int, args: bytes, retry_codes=(Err.NOT_LEADER, Err.PAXOS, Err.RETRY)):
        """Return a Reader positioned after an OK code; raise the mapped error otherwise."""
        stop = self.node.time_range().earliest + self.deadline
        backoff = 10 * MS
        while True:
            i = self._hint
            try:
                reply = await self._client(i).call(rpc_id, args, self.rpc_timeout)
                r = Reader(reply)
                code = r.u64()
            except (RpcTimeout, DecodeError):
                code = Err.TIMEOUT
            if code == Err.OK:
                return r
            if code not in retry_codes and code != Err.TIMEOUT:
                raise error_for(code, f"config rpc {rpc_id}")
            if code != Err.RETRY:
                self._hint = (i + 1) % len(self.servers)
            if self.node.time_range().earliest > stop:
                raise UnavailableError(f"config rpc {rpc_id}: last code {Err(code).name}")
            await self.node.sleep(self.node.rng.randint(backoff // 2, backoff))
            backoff = min(backoff * 2, 200 * MS)

    async def reserve_epoch_and_get_config(self):
        nonce = self.node.rng.getrandbits(64)
        r = await self._call(RPC_RESERVE, Writer().u64(nonce).getvalue())
        return r.u64(), r.u64_list()

    async def try_write_config(self, epoch: int, config: list):
        await self._call(RPC_WRITE_CONFIG, Writer().u64(epoch).u64_list(config).getvalue())

    async def get_lease(self, epoch: int) -> int:
        r = await self._call(RPC_GET_LEASE, Writer().u64(epoch).getvalue())
        return r.u64()

    async def get_config(self) -> list:
        n = len(self.servers)
        for k in range(n):
            i = (self._hint + k) % n
            try:
                reply = await self._client(i).call(RPC_GET_CONFIG, b"", self.rpc_timeout)
                cfg = Reader(reply).u64_list()
            except (RpcTimeout, DecodeError):
                continue
            return cfg
        raise UnavailableError("no config server reachable")

