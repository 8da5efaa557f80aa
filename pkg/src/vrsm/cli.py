"""Command line entry points.

    vrsm sim run --scenario F --seed N [--history OUT] [--check]
    vrsm sim sweep --scenario F --seeds A..B [--parallel K]
    vrsm sim crash-sweep --scenario F --node NAME [--seed N]
    vrsm check --history FILE --spec kv
    vrsm real serve-paxos | serve-replica | reconfigure | bench ...

Exit status is 0 when every oracle and check passes, 1 on a detected
violation, 2 on bad usage.
"""

import argparse
import asyncio
import logging
import sys
import time

from . import history as history_mod
from . import lincheck
from .clock import MS
from .transport import parse_addr


def _addr_list(s: str) -> list:
    return [parse_addr(a) for a in s.split(",") if a.strip()]


def _seed_range(s: str) -> range:
    a, sep, b = s.partition("..")
    if not sep:
        return range(int(a), int(a) + 1)
    return range(int(a), int(b) + 1)


def _load(path):
    from .sim.scenario import load_scenario
    return load_scenario(path)


# -- sim

def cmd_sim_run(args) -> int:
    from .sim.sweep import run_with_sweep
    sc = _load(args.scenario).with_seed(args.seed)
    res, sweep = run_with_sweep(sc, check=args.check)
    if sweep is not None:
        print(sweep.summary())
    if args.history:
        history_mod.save(res.history, args.history)
    print(res.summary())
    print(f"fingerprint={res.fingerprint}")
    if res.lincheck is not None:
        print(f"lincheck: {'ok' if res.lincheck.ok else 'VIOLATION'} ({res.lincheck.explored} states)")
    if not res.ok and res.lincheck is not None and not res.lincheck.ok:
        for o in res.lincheck.prefix or []:
            print("  " + str(o.to_json()))
    return 0 if res.ok else 1


def cmd_sim_sweep(args) -> int:
    from .sim.sweep import seed_sweep
    sc = _load(args.scenario)
    seeds = _seed_range(args.seeds)
    failed = []
    start = time.monotonic()

    def show(r):
        seed, ok, err = r[0], r[1], r[2]
        if not ok:
            failed.append(seed)
            print(f"seed={seed} FAIL {err}", flush=True)
        elif args.verbose:
            print(f"seed={seed} PASS", flush=True)

    seed_sweep(sc, seeds, parallel=args.parallel, check=not args.no_check, on_result=show)
    print(f"{len(seeds) - len(failed)}/{len(seeds)} seeds passed in {time.monotonic() - start:.1f}s")
    if failed:
        print(f"first failing seed: {failed[0]} (reproduce: vrsm sim run --scenario {args.scenario} "
              f"--seed {failed[0]} --check)")
        return 1
    return 0


def cmd_sim_crash_sweep(args) -> int:
    from .sim.sweep import crash_point_sweep
    sc = _load(args.scenario).with_seed(args.seed)
    rep = crash_point_sweep(sc, args.node)
    print(rep.summary())
    return 0 if rep.ok else 1


# -- check

def cmd_check(args) -> int:
    ops = history_mod.load(args.history)
    try:
        res = lincheck.check(ops, args.spec)
    except lincheck.ResourceLimitError as e:
        print(f"gave up: {e}")
        return 1
    if res.ok:
        print(f"linearizable: {len(ops)} operations, {res.explored} states explored")
        return 0
    print(f"NOT linearizable (key {res.key!r}); shortest failing prefix:")
    for o in res.prefix:
        print("  " + str(o.to_json()))
    return 1


# -- real

def cmd_real(args) -> int:
    from . import real
    eps = int(args.epsilon_ms * MS)
    if args.real_cmd == "serve-paxos":
        coro = real.run_config_server(args.me, _addr_list(args.peers), _addr_list(args.initial_config),
                                      args.data, eps)
    elif args.real_cmd == "serve-replica":
        coro = real.run_replica(parse_addr(args.addr), _addr_list(args.config_addrs),
                                _addr_list(args.initial_config), args.data, not args.coarse_deps, eps)
    elif args.real_cmd == "reconfigure":
        epoch = asyncio.run(real.run_reconfigure(_addr_list(args.config_addrs), _addr_list(args.new_servers)))
        print(f"reconfigured to epoch {epoch}")
        return 0
    else:
        res = asyncio.run(real.run_bench(
            _addr_list(args.config_addrs), args.ops, args.read_fraction, args.clients, args.keys,
            _addr_list(args.reconfigure_to) if args.reconfigure_to else None, args.reconfigure_after, args.seed))
        print(res.report())
        if args.history:
            history_mod.save(res.history, args.history)
        rc = 0 if res.errors == 0 else 1
        if args.check and res.history:
            chk = lincheck.check(res.history, "kv")
            print(f"lincheck: {'ok' if chk.ok else 'VIOLATION on key ' + repr(chk.key)}")
            rc = rc or (0 if chk.ok else 1)
        return rc
    try:
        asyncio.run(coro)
    except KeyboardInterrupt:
        pass
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="vrsm", description="replicated state machine toolkit: simulate, check, deploy")
    p.add_argument("-v", "--verbose", action="store_true", help="log at debug level")
    sub = p.add_subparsers(dest="cmd", required=True)

    sim = sub.add_parser("sim", help="deterministic simulation").add_subparsers(dest="sim_cmd", required=True)
    r = sim.add_parser("run", help="run one scenario under one seed")
    r.add_argument("--scenario", required=True)
    r.add_argument("--seed", type=int, default=0)
    r.add_argument("--history", help="write the client history here (JSON lines)")
    r.add_argument("--check", action="store_true", help="check the history for linearizability")
    r.set_defaults(fn=cmd_sim_run)
    s = sim.add_parser("sweep", help="run one scenario under many seeds")
    s.add_argument("--scenario", required=True)
    s.add_argument("--seeds", required=True, help="inclusive range A..B")
    s.add_argument("--parallel", type=int, default=1)
    s.add_argument("--no-check", action="store_true", help="skip linearizability checking")
    s.set_defaults(fn=cmd_sim_sweep)
    c = sim.add_parser("crash-sweep", help="crash one node at every durable write in turn")
    c.add_argument("--scenario", required=True)
    c.add_argument("--node", required=True)
    c.add_argument("--seed", type=int, default=0)
    c.set_defaults(fn=cmd_sim_crash_sweep)

    ch = sub.add_parser("check", help="check a recorded history for linearizability")
    ch.add_argument("--history", required=True)
    ch.add_argument("--spec", default="kv", choices=sorted(lincheck.SPECS))
    ch.set_defaults(fn=cmd_check)

    real = sub.add_parser("real", help="run on real sockets").add_subparsers(dest="real_cmd", required=True)
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--epsilon-ms", type=float, default=50.0, help="assumed clock uncertainty")
    sp = real.add_parser("serve-paxos", parents=[common], help="run one configuration service server")
    sp.add_argument("--me", type=int, required=True, help="this server's index in --peers")
    sp.add_argument("--peers", required=True, help="host:port,...")
    sp.add_argument("--initial-config", required=True, help="replica host:port,... of epoch 1")
    sp.add_argument("--data", required=True, help="directory for durable state")
    sr = real.add_parser("serve-replica", parents=[common], help="run one key-value replica")
    sr.add_argument("--addr", required=True)
    sr.add_argument("--config-addrs", required=True)
    sr.add_argument("--initial-config", required=True)
    sr.add_argument("--data", required=True)
    sr.add_argument("--coarse-deps", action="store_true", help="reads wait for the whole log, not the key")
    rc = real.add_parser("reconfigure", parents=[common], help="move the service to a new replica set")
    rc.add_argument("--config-addrs", required=True)
    rc.add_argument("--new-servers", required=True)
    b = real.add_parser("bench", parents=[common], help="drive load and report latency")
    b.add_argument("--config-addrs", required=True)
    b.add_argument("--ops", type=int, default=1000)
    b.add_argument("--read-fraction", type=float, default=0.95)
    b.add_argument("--clients", type=int, default=4)
    b.add_argument("--keys", type=int, default=100)
    b.add_argument("--reconfigure-to", help="replica host:port,... to move to during the run")
    b.add_argument("--reconfigure-after", type=int, help="completed ops before reconfiguring (default half)")
    b.add_argument("--history")
    b.add_argument("--check", action="store_true")
    b.add_argument("--seed", type=int)
    for sp_ in (sp, sr, rc, b):
        sp_.set_defaults(fn=cmd_real)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(asctime)s %(name)s %(levelname)s %(message)s")
    try:
        return args.fn(args)
    except (OSError, ValueError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
