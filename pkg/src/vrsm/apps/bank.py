"""Bank transfers and audits over two key-value instances: balances and locks."""

from ..codec import read_u64, u64


def _balance(raw: bytes) -> int:
    return read_u64(raw) if raw else 0


class Bank:
    def __init__(self, balances, locks, accounts):
        self.balances = balances
        self.locks = locks
        self.accounts = sorted(accounts)

    async def create(self, initial: dict):
        for acct in sorted(initial):
            await self.balances.put(acct, u64(initial[acct]))

    async def transfer(self, src: bytes, dst: bytes, amount: int) -> bool:
        if src == dst:
            raise ValueError("transfer needs two distinct accounts")
        held = [await self.locks.acquire(k) for k in sorted((src, dst))]
        try:
            a = _balance(await self.balances.get(src))
            b = _balance(await self.balances.get(dst))
            if a < amount:
                return False
            await self.balances.put(src, u64(a - amount))
            await self.balances.put(dst, u64(b + amount))
            return True
        finally:
            for h in reversed(held):
                await self.locks.release(h)

    async def audit(self) -> int:
        held = [await self.locks.acquire(k) for k in self.accounts]
        try:
            total = 0
            for k in self.accounts:
                total += _balance(await self.balances.get(k))
            return total
        finally:
            for h in reversed(held):
                await self.locks.release(h)
