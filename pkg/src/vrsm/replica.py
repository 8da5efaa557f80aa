"""Primary/backup replica server with epochs, sealing, state transfer and leased reads.

The durable logger file holds one epoch at a time. Its header snapshot is the
state-transfer payload the epoch started from, ``[nextIndex u64][snapLen u64][snap]``,
and each record is one operation applied in that epoch, in index order.
"""

import asyncio
import hashlib
import logging

from . import mutants
from .aio import Notifier, loop_ns
from .clock import MS, SECOND
from .codec import DecodeError, Reader, Writer
from .configservice import ConfigClerk
from .errors import Err, ProtocolError, error_for
from .rpc import RpcClient, RpcTimeout, serve
from .storage import LoggerReset, StateLogger

log = logging.getLogger(__name__)

RPC_APPLY = 30
RPC_APPLY_AS_BACKUP = 31
RPC_APPLY_READONLY = 32
RPC_GET_STATE_AND_SEAL = 33
RPC_SET_NEW_EPOCH_STATE = 34
RPC_BECOME_PRIMARY = 35
RPC_INCREASE_COMMIT_INDEX = 36

LOG_FILE = "replica.log"

APPLY_DEADLINE = 3 * SECOND
BACKUP_RETRY_LIMIT = 30 * SECOND
BACKUP_RPC_TIMEOUT = 1 * SECOND
COMMIT_WAIT_TIMEOUT = 2 * SECOND
COMMIT_BROADCAST_DELAY = 20 * MS
COMMIT_HEARTBEAT = 250 * MS
LEASE_RENEW_INTERVAL = 300 * MS
OUT_OF_ORDER_WAIT = 300 * MS


def digest(b: bytes) -> str:
    return hashlib.blake2b(b, digest_size=8).hexdigest()


def encode_transfer(next_index: int, snapshot: bytes) -> bytes:
    return Writer().u64(next_index).blob(snapshot).getvalue()


def decode_transfer(data: bytes):
    r = Reader(data)
    next_index, snap = r.u64(), r.blob()
    r.expect_done()
    return next_index, snap


class Replica:
    def __init__(self, node, addr: int, vsm, logger: StateLogger, config_clerk: ConfigClerk = None):
        self.node = node
        self.addr = addr
        self.vsm = vsm
        self.logger = logger
        self.config_clerk = config_clerk
        self.epoch = logger.epoch
        self.sealed = logger.sealed
        self.is_primary = False
        self.base = 0
        self.next_index = 0
        self.committed = 0
        self.lease_epoch = 0
        self.lease_expiry = 0
        self.backups = []
        self._clients = {}
        self._lock = asyncio.Lock()
        self._commit_changed = Notifier()
        self._appended = Notifier()
        # async hook awaited between the lease check and the local read, for pause injection
        self.read_pause = None

    @classmethod
    async def start(cls, node, addr: int, vsm, config_servers: list = None, initial_config: list = None,
                    renew_leases: bool = True) -> "Replica":
        logger = await StateLogger.recover(node, LOG_FILE)
        clerk = ConfigClerk(node, config_servers, deadline=1 * SECOND) if config_servers else None
        r = cls(node, addr, vsm, logger, clerk)
        if logger.epoch == 0 and initial_config and addr in initial_config:
            await r._bootstrap(list(initial_config))
        else:
            r._replay()
        await serve(node, addr, r.handlers())
        node.spawn(r._commit_broadcast_loop())
        if clerk is not None and renew_leases:
            node.spawn(r._lease_loop())
        return r

    def handlers(self) -> dict:
        return {
            RPC_APPLY: self._handle_apply,
            RPC_APPLY_AS_BACKUP: self._handle_apply_as_backup,
            RPC_APPLY_READONLY: self._handle_apply_readonly,
            RPC_GET_STATE_AND_SEAL: self._handle_get_state_and_seal,
            RPC_SET_NEW_EPOCH_STATE: self._handle_set_new_epoch_state,
            RPC_BECOME_PRIMARY: self._handle_become_primary,
            RPC_INCREASE_COMMIT_INDEX: self._handle_increase_commit_index,
        }

    # -- startup

    async def _bootstrap(self, config: list):
        payload = encode_transfer(0, self.vsm.get_state())
        await self.logger.install_header(1, False, payload)
        self.epoch, self.sealed = 1, False
        self.base = self.next_index = self.committed = 0
        self.node.trace("replica_enter", epoch=1, next_index=0, digest=digest(payload), bootstrap=True)
        if config[0] == self.addr:
            self._activate(config)

    def _replay(self):
        lg = self.logger
        if lg.epoch == 0:
            self.node.trace("replica_recovered", epoch=0, digest="", records=())
            return
        base, snap = decode_transfer(lg.snapshot)
        self.vsm.set_state(snap, base)
        for k, rec in enumerate(lg.records):
            self.vsm.apply(rec, base + k)
        self.base = self.committed = base
        self.next_index = base + len(lg.records)
        self.node.trace("replica_recovered", epoch=lg.epoch, digest=digest(lg.snapshot),
                        records=tuple(digest(r) for r in lg.records))

    def _activate(self, config: list):
        self.is_primary = True
        self.committed = self.next_index
        self.backups = [a for a in config if a != self.addr]
        self.node.trace("replica_primary", epoch=self.epoch, committed=self.committed)
        self._commit_changed.notify()

    def _client(self, addr: int) -> RpcClient:
        c = self._clients.get(addr)
        if c is None:
            c = self._clients[addr] = RpcClient(self.node, addr)
        return c

    def lease_valid(self) -> bool:
        return self.lease_epoch == self.epoch and self.node.time_range().latest < self.lease_expiry

    def _durable_target(self, idx: int) -> int:
        return idx - self.base + 1

    # -- write path

    async def _handle_apply(self, op: bytes) -> bytes:
        try:
            res = await self.apply(op)
        except ProtocolError as e:
            return Writer().u64(e.code).blob(b"").getvalue()
        return Writer().u64(Err.OK).blob(res).getvalue()

    async def apply(self, op: bytes) -> bytes:
        async with self._lock:
            if not self.is_primary:
                raise _err(Err.NOT_PRIMARY)
            if self.sealed:
                raise _err(Err.SEALED)
            e, idx = self.epoch, self.next_index
            self.next_index += 1
            res = self.vsm.apply(op, idx)
            self.logger.append_op(op)
            target = self._durable_target(idx)
            backups = list(self.backups)
            self.node.trace("replica_accept", epoch=e, index=idx, digest=digest(op))
        start = loop_ns()
        payload = Writer().u64(e).u64(idx).blob(op).getvalue()
        tasks = [self.node.spawn(self._replicate(b, e, payload, start + BACKUP_RETRY_LIMIT)) for b in backups]
        try:
            await self.logger.wait_durable(target)
        except LoggerReset:
            raise _err(Err.EPOCH_CHANGED)
        if tasks:
            done, _ = await asyncio.wait(tasks, timeout=max(0, start + APPLY_DEADLINE - loop_ns()) / 1e9)
            if len(done) < len(tasks) or not all(t.result() for t in done):
                raise _err(Err.BACKUP)
        if self.epoch != e:
            raise _err(Err.EPOCH_CHANGED)
        if idx + 1 > self.committed:
            self.committed = idx + 1
            self.node.trace("replica_commit", epoch=e, committed=self.committed)
            self._commit_changed.notify()
        return res

    def _still_replicating(self, e: int) -> bool:
        return self.epoch == e and self.is_primary and not self.sealed

    async def _replicate(self, backup: int, e: int, payload: bytes, give_up: int) -> bool:
        """Send one op to one backup until it is accepted or retrying is pointless."""
        client = self._client(backup)
        while self._still_replicating(e) and loop_ns() < give_up:
            try:
                reply = await client.call(RPC_APPLY_AS_BACKUP, payload, BACKUP_RPC_TIMEOUT)
                code = Reader(reply).u64()
            except (RpcTimeout, DecodeError):
                continue
            if code == Err.OK:
                return True
            if code in (Err.STALE_EPOCH, Err.SEALED):
                return False
            await self.node.sleep(10 * MS)
        return False

    async def _handle_apply_as_backup(self, args: bytes) -> bytes:
        r = Reader(args)
        e, idx, op = r.u64(), r.u64(), r.blob()
        # an op overtaken by its successor usually arrives shortly; wait a bit before refusing
        deadline = loop_ns() + OUT_OF_ORDER_WAIT
        while e == self.epoch and idx > self.next_index and loop_ns() < deadline:
            await self._appended.wait(deadline - loop_ns())
        async with self._lock:
            if e < self.epoch:
                return _code(Err.STALE_EPOCH)
            if e > self.epoch:
                return _code(Err.FUTURE_EPOCH)
            if self.is_primary:
                return _code(Err.STALE_EPOCH)
            if idx > self.next_index:
                return _code(Err.OUT_OF_ORDER)
            if idx == self.next_index:
                if self.sealed:
                    return _code(Err.SEALED)
                self.next_index += 1
                self.vsm.apply(op, idx)
                self.logger.append_op(op)
                self.node.trace("replica_accept", epoch=e, index=idx, digest=digest(op))
                self._appended.notify()
            # idx below nextIndex: a retransmission of an op already held; ack once durable
            target = self._durable_target(idx)
        if not mutants.active("backup_ack_before_durable"):
            try:
                await self.logger.wait_durable(target)
            except LoggerReset:
                return _code(Err.STALE_EPOCH)
        self.node.trace("replica_ack", epoch=e, index=idx)
        return _code(Err.OK)

    # -- commit index

    async def _commit_broadcast_loop(self):
        while True:
            await self._commit_changed.wait(COMMIT_HEARTBEAT)
            await self.node.sleep(COMMIT_BROADCAST_DELAY)
            if not self.is_primary:
                continue
            msg = Writer().u64(self.epoch).u64(self.committed).getvalue()
            for b in self.backups:
                self.node.spawn(self._send_commit(b, msg))

    async def _send_commit(self, backup: int, msg: bytes):
        try:
            await self._client(backup).call(RPC_INCREASE_COMMIT_INDEX, msg, COMMIT_BROADCAST_DELAY * 5)
        except RpcTimeout:
            pass

    async def _handle_increase_commit_index(self, args: bytes) -> bytes:
        r = Reader(args)
        e, c = r.u64(), r.u64()
        if e != self.epoch:
            return _code(Err.STALE_EPOCH)
        c = min(c, self.next_index)
        if c > self.committed:
            self.committed = c
            self._commit_changed.notify()
        return _code(Err.OK)

    # -- reads

    async def _handle_apply_readonly(self, op: bytes) -> bytes:
        try:
            res = await self.apply_readonly(op)
        except ProtocolError as e:
            return Writer().u64(e.code).blob(b"").getvalue()
        return Writer().u64(Err.OK).blob(res).getvalue()

    async def apply_readonly(self, op: bytes) -> bytes:
        async with self._lock:
            if not self.lease_valid():
                raise _err(Err.RETRY)
            if self.read_pause is not None:
                await self.read_pause()
            e = self.epoch
            idx, res = self.vsm.read(op)
        await self.wait_for_committed(e, idx)
        return res

    async def wait_for_committed(self, e: int, idx: int):
        deadline = loop_ns() + COMMIT_WAIT_TIMEOUT
        while self.committed < idx:
            if self.epoch != e:
                raise _err(Err.RETRY)
            left = deadline - loop_ns()
            if left <= 0:
                raise _err(Err.RETRY)
            await self._commit_changed.wait(left)
        if self.epoch != e:
            raise _err(Err.RETRY)

    # -- reconfiguration

    async def _handle_get_state_and_seal(self, args: bytes) -> bytes:
        new_epoch = Reader(args).u64()
        async with self._lock:
            if new_epoch < self.epoch or (new_epoch == self.epoch and not self.sealed):
                return Writer().u64(Err.STALE_EPOCH).u64(self.epoch).u64(0).blob(b"").getvalue()
            if not self.sealed:
                await self.logger.set_sealed()
                self.sealed = True
                self._commit_changed.notify()
            state = self.vsm.get_state()
            payload = encode_transfer(self.next_index, state)
            self.node.trace("replica_sealed", epoch=self.epoch, next_index=self.next_index, digest=digest(payload))
            return Writer().u64(Err.OK).u64(self.epoch).u64(self.next_index).blob(state).getvalue()

    async def _handle_set_new_epoch_state(self, args: bytes) -> bytes:
        r = Reader(args)
        new_epoch, next_index, snap = r.u64(), r.u64(), r.blob()
        async with self._lock:
            if new_epoch <= self.epoch:
                return Writer().u64(Err.STALE_EPOCH).u64(self.epoch).getvalue()
            payload = encode_transfer(next_index, snap)
            await self.logger.install_header(new_epoch, False, payload)
            self.vsm.set_state(snap, next_index)
            self.epoch, self.sealed, self.is_primary = new_epoch, False, False
            self.base = self.next_index = self.committed = next_index
            self.backups = []
            self.lease_epoch = self.lease_expiry = 0
            self.node.trace("replica_enter", epoch=new_epoch, next_index=next_index, digest=digest(payload),
                            bootstrap=False)
            self._commit_changed.notify()
            return Writer().u64(Err.OK).u64(self.epoch).getvalue()

    async def _handle_become_primary(self, args: bytes) -> bytes:
        r = Reader(args)
        e, config = r.u64(), r.u64_list()
        async with self._lock:
            if e != self.epoch or self.sealed:
                return _code(Err.WRONG_EPOCH)
            if not self.is_primary:
                self._activate(config)
            return _code(Err.OK)

    # -- leases

    async def _lease_loop(self):
        while True:
            await self.node.sleep(self.node.rng.randint(LEASE_RENEW_INTERVAL * 3 // 4, LEASE_RENEW_INTERVAL))
            e = self.epoch
            if e == 0:
                continue
            try:
                exp = await self.config_clerk.get_lease(e)
            except ProtocolError:
                continue
            if self.epoch == e and (self.lease_epoch != e or exp > self.lease_expiry):
                self.lease_epoch, self.lease_expiry = e, exp


def _err(code: Err) -> ProtocolError:
    return error_for(code)


def _code(code: Err) -> bytes:
    return Writer().u64(code).getvalue()
