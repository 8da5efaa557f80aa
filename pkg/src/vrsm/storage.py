"""Durable files and the append-only state logger.

On-disk layout of a logger file, all integers little-endian::

    [epoch u64][sealed u8][snapLen u64][snap bytes]   header, only ever written atomically
    ([recLen u64][rec bytes])*                         appended records

Appends are buffered in memory and flushed by a background task; callers that
need durability before acknowledging something await ``wait_durable``.
"""

import asyncio
import os
import struct

from . import mutants
from .clock import MS
from .codec import DecodeError

_U64 = struct.Struct("<Q")
HEADER_FIXED = 8 + 1 + 8

DEFAULT_FLUSH_INTERVAL = 5 * MS


class LoggerReset(Exception):
    """The file was replaced while a caller waited on a record of the old file."""


class SimStore:
    """Per-node files held by the simulator so they survive crashes.

    Every mutation goes through ``hook(node, kind, name, data)`` first; the
    hook may crash the node before the write or return a byte count at which
    an append is torn.
    """

    def __init__(self, node, files: dict, hook=None):
        self._node = node
        self._files = files
        self._hook = hook

    async def read(self, name: str):
        self._node.check_alive()
        v = self._files.get(name)
        return None if v is None else bytes(v)

    async def write_atomic(self, name: str, data: bytes):
        self._mutate("replace", name, bytes(data))

    async def append(self, name: str, data: bytes):
        self._mutate("append", name, bytes(data))

    def _mutate(self, kind, name, data):
        node = self._node
        node.check_alive()
        tear = self._hook(node, kind, name, data) if self._hook else None
        if kind == "replace":
            self._files[name] = bytearray(data)
        else:
            buf = self._files.setdefault(name, bytearray())
            buf += data if tear is None else data[:tear]
        if tear is not None:
            node.crash_now()


class FileStore:
    """Files in a directory; every mutation is fsynced before returning."""

    def __init__(self, root: str):
        self.root = root
        os.makedirs(root, exist_ok=True)

    def _path(self, name):
        return os.path.join(self.root, name)

    async def read(self, name: str):
        return await asyncio.to_thread(self._read, name)

    def _read(self, name):
        try:
            with open(self._path(name), "rb") as f:
                return f.read()
        except FileNotFoundError:
            return None

    async def write_atomic(self, name: str, data: bytes):
        await asyncio.to_thread(self._write_atomic, name, bytes(data))

    def _write_atomic(self, name, data):
        path = self._path(name)
        tmp = path + ".tmp"
        with open(tmp, "wb") as f:
            f.write(data)
            f.flush()
            os.fsync(f.fileno())
        os.replace(tmp, path)
        dfd = os.open(self.root, os.O_RDONLY)
        try:
            os.fsync(dfd)
        finally:
            os.close(dfd)

    async def append(self, name: str, data: bytes):
        await asyncio.to_thread(self._append, name, bytes(data))

    def _append(self, name, data):
        with open(self._path(name), "ab") as f:
            f.write(data)
            f.flush()
            os.fsync(f.fileno())


def encode_header(epoch: int, sealed: bool, snapshot: bytes) -> bytes:
    return _U64.pack(epoch) + bytes([1 if sealed else 0]) + _U64.pack(len(snapshot)) + snapshot


def encode_record(rec: bytes) -> bytes:
    return _U64.pack(len(rec)) + rec


def parse_log(data: bytes):
    """Return ``(epoch, sealed, snapshot, records, good_len)``.

    A record whose length prefix or body runs past the end of the file is a
    torn tail; parsing stops there and ``good_len`` marks the last whole record.
    """
    if len(data) < HEADER_FIXED:
        raise DecodeError("logger header truncated")
    epoch = _U64.unpack_from(data, 0)[0]
    sealed = data[8] != 0
    snap_len = _U64.unpack_from(data, 9)[0]
    pos = HEADER_FIXED + snap_len
    if pos > len(data):
        raise DecodeError("logger snapshot truncated")
    snapshot = bytes(data[HEADER_FIXED:pos])
    records = []
    n = len(data)
    while pos + 8 <= n:
        rec_len = _U64.unpack_from(data, pos)[0]
        end = pos + 8 + rec_len
        if end > n:
            break
        records.append(bytes(data[pos + 8:end]))
        pos = end
    return epoch, sealed, snapshot, records, pos


class StateLogger:
    def __init__(self, node, name: str, epoch: int = 0, sealed: bool = False, snapshot: bytes = b"",
                 records=(), flush_interval: int = DEFAULT_FLUSH_INTERVAL):
        self.node = node
        self.store = node.store
        self.name = name
        self.epoch = epoch
        self.sealed = sealed
        self.snapshot = snapshot
        self.records = list(records)
        self.durable_count = len(self.records)
        self.flush_interval = flush_interval
        self._gen = 0
        self._waiters = []
        self._urgent = False
        self._kick = asyncio.Event()
        self._io = asyncio.Lock()
        self._flusher = None

    @classmethod
    async def recover(cls, node, name: str, **kw) -> "StateLogger":
        store = node.store
        data = await store.read(name)
        if data is None:
            lg = cls(node, name, **kw)
            await store.write_atomic(name, encode_header(0, False, b""))
        else:
            epoch, sealed, snap, records, good = parse_log(data)
            if good < len(data):
                await store.write_atomic(name, data[:good])
            lg = cls(node, name, epoch, sealed, snap, records, **kw)
        lg.start()
        return lg

    def start(self):
        if self._flusher is None:
            self._flusher = self.node.spawn(self._flush_loop())

    @property
    def buffered_count(self) -> int:
        return len(self.records)

    def append_op(self, record: bytes) -> int:
        idx = len(self.records)
        self.records.append(bytes(record))
        self._kick.set()
        return idx

    async def wait_durable(self, upto: int):
        if upto <= self.durable_count or mutants.active("logger_ack_before_sync"):
            return
        if upto > len(self.records):
            raise ValueError(f"wait_durable({upto}) beyond {len(self.records)} buffered records")
        fut = asyncio.get_running_loop().create_future()
        self._waiters.append((upto, self._gen, fut))
        self._urgent = True
        self._kick.set()
        await fut

    async def _flush_loop(self):
        while True:
            await self._kick.wait()
            self._kick.clear()
            if not self._urgent:
                await self.node.sleep(self.flush_interval)
            self._urgent = False
            await self.flush()

    async def flush(self):
        async with self._io:
            start, end = self.durable_count, len(self.records)
            if end > start:
                await self.store.append(self.name, b"".join(encode_record(r) for r in self.records[start:end]))
                self.durable_count = end
            self._release()

    def _release(self):
        keep = []
        for upto, gen, fut in self._waiters:
            if fut.done():
                continue
            if gen != self._gen:
                fut.set_exception(LoggerReset())
            elif upto <= self.durable_count:
                fut.set_result(None)
            else:
                keep.append((upto, gen, fut))
        self._waiters = keep

    async def install_header(self, epoch: int, sealed: bool, snapshot: bytes):
        """Atomically replace the file with a fresh header and no records."""
        async with self._io:
            await self.store.write_atomic(self.name, encode_header(epoch, sealed, snapshot))
            self.epoch, self.sealed, self.snapshot = epoch, sealed, snapshot
            self.records = []
            self.durable_count = 0
            self._gen += 1
            self._release()

    async def set_sealed(self):
        """Durably set the sealed flag, keeping (and syncing) every record."""
        async with self._io:
            body = encode_header(self.epoch, True, self.snapshot)
            body += b"".join(encode_record(r) for r in self.records)
            await self.store.write_atomic(self.name, body)
            self.sealed = True
            self.durable_count = len(self.records)
            self._release()
