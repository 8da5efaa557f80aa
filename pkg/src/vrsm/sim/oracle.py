"""Runtime safety monitors fed by node trace events.

The oracle sees every ``node.trace`` call as it happens, together with the
simulator's true global time, and reports the first violated property to the
world. It keeps its own copies of everything it needs (logs as op digests,
acknowledgements, lease grants), so nothing here is visible to protocol code.
Replication groups are told apart by ``node.group``.
"""

import logging
from collections import defaultdict

log = logging.getLogger(__name__)


class Oracle:
    def __init__(self, world, paxos_sizes: dict = None):
        self.world = world
        self.paxos_sizes = dict(paxos_sizes or {})
        self.violations = []
        # paxos
        self.px_accepts = defaultdict(set)       # (group, e, i, digest) -> node names
        self.px_chosen = {}                       # (group, i) -> digest
        self.px_leaders = {}                      # (group, e) -> node name
        self.px_acked = {}                        # node -> max (e, i)
        self.px_promised = {}                     # node -> max promise acknowledged
        self.px_commits = 0
        # config service
        self.max_lease = defaultdict(int)         # (group, epoch) -> max expiration granted
        self.epoch_config = {}                    # (group, epoch) -> config tuple
        self.live_transitions = 0
        self.lease_checks = 0
        # replicas
        self.node_log = {}                        # node -> (epoch, [digests])
        self.epoch_base = {}                      # (group, epoch) -> transfer digest
        self.epoch_primary = {}                   # (group, epoch) -> node name
        self.primary_log = {}                     # (group, epoch) -> the primary's log for that epoch
        self.transfers = {}                       # (group, transfer digest) -> [digests]
        self.committed = defaultdict(list)        # group -> committed op digests
        self.rep_acked = {}                       # node -> max (epoch, index) acknowledged durable
        # applications
        self.lock_holder = {}                     # (group, key) -> owner
        self.lock_handoffs = 0
        self.cache_grants = defaultdict(int)      # (key, value) -> max lease
        self.cache_attempt = {}                   # (node, key) -> global time of last cond-put attempt
        self.cache_puts = 0
        # standalone state loggers
        self.logger_acked = {}                    # node -> (epoch, count, sealed)
        self.logger_recoveries = 0

    # -- plumbing

    def violate(self, msg: str):
        self.violations.append(msg)
        self.world.fail(f"oracle: {msg}")

    def observe(self, node, kind: str, f: dict):
        h = getattr(self, "_on_" + kind, None)
        if h is not None:
            h(node, getattr(node, "group", "main"), f)

    def on_crash(self, node):
        pass

    def report(self) -> dict:
        return {
            "violations": list(self.violations),
            "paxos_commits": self.px_commits,
            "live_transitions": self.live_transitions,
            "lease_checks": self.lease_checks,
            "committed_ops": {g: len(v) for g, v in self.committed.items()},
            "lock_handoffs": self.lock_handoffs,
            "cache_puts": self.cache_puts,
        }

    # -- paxos

    def _majority(self, group):
        n = self.paxos_sizes.get(group)
        return None if n is None else n // 2 + 1

    def _chosen(self, group, i, digest, why):
        prev = self.px_chosen.get((group, i))
        if prev is None:
            self.px_chosen[(group, i)] = digest
        elif prev != digest:
            self.violate(f"paxos {group}: index {i} chosen as {prev} and {digest} ({why})")

    def _on_paxos_accept(self, node, group, f):
        key = (group, f["epoch"], f["index"], f["digest"])
        s = self.px_accepts[key]
        s.add(node.name)
        m = self._majority(group)
        if m is not None and len(s) == m:
            self._chosen(group, f["index"], f["digest"], "quorum of acceptances")

    def _on_paxos_committed(self, node, group, f):
        self.px_commits += 1
        self._chosen(group, f["index"], f["digest"], f"commit reported by {node.name}")

    def _on_paxos_leader(self, node, group, f):
        key = (group, f["epoch"])
        prev = self.px_leaders.get(key)
        if prev is not None and prev != node.name:
            self.violate(f"paxos {group}: epoch {f['epoch']} led by {prev} and {node.name}")
        self.px_leaders[key] = node.name

    def _on_paxos_ack(self, node, group, f):
        ei = (f["epoch"], f["index"])
        if ei > self.px_acked.get(node.name, (0, 0)):
            self.px_acked[node.name] = ei

    def _on_paxos_promise(self, node, group, f):
        if f["epoch"] > self.px_promised.get(node.name, 0):
            self.px_promised[node.name] = f["epoch"]

    def _on_paxos_recovered(self, node, group, f):
        acked = self.px_acked.get(node.name, (0, 0))
        if (f["epoch"], f["index"]) < acked:
            self.violate(f"paxos {node.name}: recovered at {(f['epoch'], f['index'])} below acknowledged {acked}")
        if f["promised"] < self.px_promised.get(node.name, 0):
            self.violate(f"paxos {node.name}: recovered promise {f['promised']} below acknowledged "
                         f"{self.px_promised[node.name]}")

    # -- config service

    def _on_lease_granted(self, node, group, f):
        key = (group, f["epoch"])
        if f["expiration"] > self.max_lease[key]:
            self.max_lease[key] = f["expiration"]

    def _on_config_propose(self, node, group, f):
        old, new = f["old_live"], f["new_live"]
        if new < old:
            self.violate(f"config {group}: live epoch moving backwards {old} -> {new}")
        if f["new_reserved"] < f["old_reserved"] or new > f["new_reserved"]:
            self.violate(f"config {group}: bad reservation transition {f}")
        if new != old:
            self.lease_checks += 1
            now = self.world.now_ns()
            lease = max(f["old_lease"], self.max_lease[(group, old)])
            if now <= lease:
                self.violate(f"config {group}: live epoch {old} -> {new} at t={now} before lease expiry {lease}")
            self.live_transitions += 1
        key = (group, new)
        cfg = tuple(f["config"])
        prev = self.epoch_config.setdefault(key, cfg)
        if prev != cfg:
            self.violate(f"config {group}: epoch {new} given two configurations {prev} and {cfg}")

    # -- replicas

    def _commit(self, group, log_, c, who):
        g = self.committed[group]
        if c <= len(g):
            if log_[:c] != g[:c]:
                self.violate(f"replica {group}: {who} commits {c} ops disagreeing with the committed log")
        else:
            if log_[:len(g)] != g:
                self.violate(f"replica {group}: {who} would drop or reorder committed ops")
                return
            g.extend(log_[len(g):c])

    def _on_replica_enter(self, node, group, f):
        e, d = f["epoch"], f["digest"]
        if f.get("bootstrap") and f["next_index"] == 0:
            self.transfers.setdefault((group, d), [])
        base = self.transfers.get((group, d))
        if base is None:
            self.violate(f"replica {node.name}: entered epoch {e} with a state no seal produced")
            return
        prev = self.epoch_base.setdefault((group, e), d)
        if prev != d:
            self.violate(f"replica {group}: epoch {e} started from two different states")
        self.node_log[node.name] = (e, list(base))

    def _on_replica_accept(self, node, group, f):
        e, i, d = f["epoch"], f["index"], f["digest"]
        cur = self.node_log.get(node.name)
        if cur is None or cur[0] != e:
            self.violate(f"replica {node.name}: accepted op in epoch {e} without entering it")
            return
        lg = cur[1]
        if i != len(lg):
            self.violate(f"replica {node.name}: accepted index {i} but holds {len(lg)} ops")
            return
        prim = self.epoch_primary.get((group, e))
        if prim is not None and prim != node.name:
            plog = self.primary_log[(group, e)]
            if i >= len(plog) or plog[i] != d:
                self.violate(f"replica {node.name}: backup op at epoch {e} index {i} is not on primary {prim}")
        lg.append(d)

    def _on_replica_primary(self, node, group, f):
        key = (group, f["epoch"])
        prev = self.epoch_primary.get(key)
        if prev is not None and prev != node.name:
            self.violate(f"replica {group}: two primaries {prev} and {node.name} in epoch {f['epoch']}")
        self.epoch_primary[key] = node.name
        cur = self.node_log.get(node.name)
        if cur is not None and cur[0] == f["epoch"]:
            self.primary_log[key] = cur[1]
        self._on_replica_commit(node, group, f)

    def _on_replica_commit(self, node, group, f):
        cur = self.node_log.get(node.name)
        if cur is None or cur[0] != f["epoch"]:
            self.violate(f"replica {node.name}: commit in epoch {f['epoch']} it does not hold")
            return
        c = f["committed"]
        if c > len(cur[1]):
            self.violate(f"replica {node.name}: committed {c} beyond its {len(cur[1])} ops")
            return
        self._commit(group, cur[1], c, node.name)
        if c > 0:
            self._note_ack(node.name, f["epoch"], c - 1)

    def _note_ack(self, name, e, i):
        if (e, i) > self.rep_acked.get(name, (0, -1)):
            self.rep_acked[name] = (e, i)

    def _on_replica_ack(self, node, group, f):
        self._note_ack(node.name, f["epoch"], f["index"])

    def _on_replica_sealed(self, node, group, f):
        cur = self.node_log.get(node.name)
        if cur is None or cur[0] != f["epoch"] or len(cur[1]) != f["next_index"]:
            self.violate(f"replica {node.name}: sealed state does not match its log")
            return
        self.transfers.setdefault((group, f["digest"]), list(cur[1]))

    def _on_replica_recovered(self, node, group, f):
        e = f["epoch"]
        acked = self.rep_acked.get(node.name)
        if e == 0:
            if acked is not None:
                self.violate(f"replica {node.name}: lost its whole log after acknowledging {acked}")
            self.node_log.pop(node.name, None)
            return
        base = self.transfers.get((group, f["digest"]))
        if base is None:
            self.violate(f"replica {node.name}: recovered from an unknown state")
            return
        lg = list(base) + list(f["records"])
        if acked is not None:
            if acked[0] > e:
                self.violate(f"replica {node.name}: recovered in epoch {e} after acknowledging epoch {acked[0]}")
            elif acked[0] == e and len(lg) <= acked[1]:
                self.violate(f"replica {node.name}: acknowledged index {acked[1]} of epoch {e} "
                             f"but recovered only {len(lg)} ops")
        prev = self.node_log.get(node.name)
        if prev is not None and prev[0] == e and lg != prev[1][:len(lg)]:
            self.violate(f"replica {node.name}: recovered log is not a prefix of what it accepted")
        self.node_log[node.name] = (e, lg)

    # -- standalone state logger (records of epoch e are e{e}-0, e{e}-1, ...)

    def _on_logger_acked(self, node, group, f):
        cur = self.logger_acked.get(node.name, (0, 0, False))
        new = (f["epoch"], f["count"], f["sealed"])
        if new > cur:
            self.logger_acked[node.name] = new

    def _on_logger_recovered(self, node, group, f):
        self.logger_recoveries += 1
        e, recs = f["epoch"], f["records"]
        want_snap = f"snap{e}".encode() if e else b""
        if f["snapshot"] != want_snap:
            self.violate(f"logger {node.name}: recovered a header mixing states (epoch {e}, snapshot {f['snapshot']!r})")
        for i, r in enumerate(recs):
            if r != f"e{e}-{i}".encode():
                self.violate(f"logger {node.name}: record {i} is {r!r}, not what was appended")
                return
        ae, ac, asealed = self.logger_acked.get(node.name, (0, 0, False))
        if e < ae:
            self.violate(f"logger {node.name}: recovered epoch {e} after epoch {ae} was acknowledged")
        elif e == ae and (len(recs) < ac or (asealed and not f["sealed"])):
            self.violate(f"logger {node.name}: acknowledged {ac} records{' and the seal' if asealed else ''} "
                         f"of epoch {e}, recovered {len(recs)}{' unsealed' if not f['sealed'] else ''}")

    # -- applications

    def _on_lock_acquired(self, node, group, f):
        key = (group, f["key"])
        holder = self.lock_holder.get(key)
        if holder is not None:
            self.violate(f"lock {f['key']!r}: acquired by {f['owner']:#x} while held by {holder:#x}")
        self.lock_holder[key] = f["owner"]
        self.lock_handoffs += 1

    def _on_lock_released(self, node, group, f):
        key = (group, f["key"])
        if self.lock_holder.get(key) != f["owner"]:
            self.violate(f"lock {f['key']!r}: released by non-holder {f['owner']:#x}")
        self.lock_holder[key] = None

    def _on_cache_granted(self, node, group, f):
        k = (f["key"], f["value"])
        if f["lease"] > self.cache_grants[k]:
            self.cache_grants[k] = f["lease"]

    def _on_cache_put_attempt(self, node, group, f):
        self.cache_attempt[(node.name, f["key"])] = self.world.now_ns()

    def _on_cache_put_done(self, node, group, f):
        self.cache_puts += 1
        t = self.cache_attempt.get((node.name, f["key"]))
        lease = self.cache_grants.get((f["key"], f["old_value"]), 0)
        if t is None or t <= lease:
            self.violate(f"cache {f['key']!r}: value {f['old_value']!r} replaced at t={t} inside lease {lease}")
