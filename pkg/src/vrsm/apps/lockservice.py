"""Named locks, one key per lock; the value is the owner id or empty when free."""

from dataclasses import dataclass

from ..clock import MS
from ..codec import u64


@dataclass(frozen=True)
class Locked:
    key: bytes
    owner: int


class LockService:
    def __init__(self, node, kv, poll: int = 20 * MS):
        self.node = node
        self.kv = kv
        self.poll = poll

    async def acquire(self, key: bytes) -> Locked:
        owner = self.node.rng.getrandbits(64) | 1
        while not await self.kv.cond_put(key, b"", u64(owner)):
            await self.node.sleep(self.node.rng.randint(self.poll // 2, self.poll))
        self.node.trace("lock_acquired", key=key, owner=owner)
        return Locked(key, owner)

    async def release(self, h: Locked):
        self.node.trace("lock_released", key=h.key, owner=h.owner)
        if not await self.kv.cond_put(h.key, u64(h.owner), b""):
            raise RuntimeError(f"lock {h.key!r} not held by {h.owner:#x}")
