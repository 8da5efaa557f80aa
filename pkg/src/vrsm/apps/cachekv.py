"""Client-side caching with leases stored next to each value.

Every stored value is ``[leaseExpiration u64][value]``; an absent key reads as
lease 0 and an empty value. Holding a lease lets a client serve reads from its
local cache; writers wait until every outstanding lease on the key has lapsed.
"""

from ..clock import MS
from ..codec import read_u64, u64


def encode_value(lease: int, value: bytes) -> bytes:
    return u64(lease) + value


def decode_value(raw: bytes):
    if len(raw) < 8:
        return 0, b""
    return read_u64(raw), raw[8:]


class CacheKv:
    def __init__(self, node, kv, put_poll: int = 10 * MS):
        self.node = node
        self.kv = kv
        self.cache = {}  # key -> (value, lease expiration)
        self.put_poll = put_poll
        self.cache_hits = 0

    async def get_and_cache(self, key: bytes, cachetime: int) -> bytes:
        while True:
            raw = await self.kv.get(key)
            lease, value = decode_value(raw)
            new_lease = max(self.node.time_range().latest + cachetime, lease)
            if await self.kv.cond_put(key, raw, encode_value(new_lease, value)):
                self.node.trace("cache_granted", key=key, value=value, lease=new_lease)
                self.cache[key] = (value, new_lease)
                return value

    async def get(self, key: bytes) -> bytes:
        hit = self.cache.get(key)
        if hit is not None:
            if self.node.time_range().latest < hit[1]:
                self.cache_hits += 1
                return hit[0]
            del self.cache[key]
        return decode_value(await self.kv.get(key))[1]

    async def put(self, key: bytes, value: bytes):
        while True:
            raw = await self.kv.get(key)
            lease, old = decode_value(raw)
            earliest = self.node.time_range().earliest
            if earliest > lease:
                self.node.trace("cache_put_attempt", key=key)
                # keep the lapsed expiration: every stored value still names some lease
                if await self.kv.cond_put(key, raw, encode_value(lease, value)):
                    self.node.trace("cache_put_done", key=key, old_value=old)
                    return
                continue
            await self.node.sleep(max(self.put_poll, lease - earliest + 1))
