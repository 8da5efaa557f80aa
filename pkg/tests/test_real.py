import asyncio
import socket

from vrsm import lincheck, real
from vrsm.transport import pack_addr


def _ports(n):
    socks = [socket.socket() for _ in range(n)]
    for s in socks:
        s.bind(("127.0.0.1", 0))
    ports = [s.getsockname()[1] for s in socks]
    for s in socks:
        s.close()
    return [pack_addr("127.0.0.1", p) for p in ports]


def test_loopback_cluster_with_live_reconfiguration(tmp_path):
    cfg = _ports(3)
    reps = _ports(4)

    async def go():
        tasks = [asyncio.create_task(real.run_config_server(i, cfg, reps[:3], str(tmp_path / f"c{i}"), 0))
                 for i in range(3)]
        tasks += [asyncio.create_task(real.run_replica(a, cfg, reps[:3], str(tmp_path / f"r{k}"), True, 0))
                  for k, a in enumerate(reps)]
        await asyncio.sleep(0.3)
        try:
            return await asyncio.wait_for(
                real.run_bench(cfg, 400, 0.9, clients=3, keys=10, reconfigure_to=reps[1:], seed=1), 60)
        finally:
            for t in tasks:
                t.cancel()
            await asyncio.gather(*tasks, return_exceptions=True)
    res = asyncio.run(go())
    assert res.errors == 0 and res.ops == 400
    assert res.reconfig_epoch == 2
    assert lincheck.check(res.history, "kv").ok
