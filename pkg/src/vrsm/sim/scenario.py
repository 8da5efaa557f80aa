"""Scenario files: INI text read with configparser.

Example::

    [scenario]
    workload = kv
    time_limit_s = 600

    [cluster]
    config_servers = 3
    replicas = 3
    spares = 1

    [faults]
    drop_prob = 0.1
    dup_prob = 0.1
    min_delay_ms = 1
    max_delay_ms = 200

    [clock]
    epsilon_ns = 50000000

    [workload]
    clients = 5
    ops_per_client = 40
    read_fraction = 0.5
    key_space = 5

    [crashes]
    backup_crashes = 1
    downtime_ms = 500
    reconfigurations = 1

Any key left out takes the default below. The seed is never stored in the
file; it is supplied per run.
"""

import configparser
from dataclasses import dataclass, field, fields

from ..clock import DEFAULT_EPSILON, MS
from ..transport import FaultProfile

WORKLOADS = ("kv", "logger", "counter", "bank", "cachekv", "paxos", "racing", "pause")


@dataclass
class Scenario:
    workload: str = "kv"
    seed: int = 0
    time_limit_s: float = 600.0
    # cluster
    config_servers: int = 3
    replicas: int = 3
    spares: int = 1
    # faults
    drop_prob: float = 0.0
    dup_prob: float = 0.0
    min_delay_ms: float = 1.0
    max_delay_ms: float = 10.0
    # clock
    epsilon_ns: int = DEFAULT_EPSILON
    # workload
    clients: int = 5
    ops_per_client: int = 40
    read_fraction: float = 0.5
    key_space: int = 5
    precise_deps: bool = True
    # crashes and reconfiguration
    backup_crashes: int = 0
    downtime_ms: float = 500.0
    reconfigurations: int = 0
    controllers: int = 1
    # when set, every run is followed by a crash-point sweep of this node
    sweep_node: str = ""
    # paxos-only runs
    partitions: int = 0
    # pause injection between lease check and local read
    pause_prob: float = 0.0
    pause_max_ms: float = 0.0
    # test-only protocol mutants
    mutants: tuple = field(default_factory=tuple)

    def fault_profile(self) -> FaultProfile:
        return FaultProfile(drop_prob=self.drop_prob, dup_prob=self.dup_prob,
                            min_delay=int(self.min_delay_ms * MS), max_delay=int(self.max_delay_ms * MS))

    def with_seed(self, seed: int) -> "Scenario":
        d = {f.name: getattr(self, f.name) for f in fields(self)}
        d["seed"] = seed
        return Scenario(**d)

    def validate(self):
        if self.workload not in WORKLOADS:
            raise ValueError(f"unknown workload {self.workload!r}; expected one of {', '.join(WORKLOADS)}")
        if self.config_servers < 1 or self.replicas < 1:
            raise ValueError("need at least one config server and one replica")
        if not (0 <= self.drop_prob < 1 and 0 <= self.dup_prob <= 1):
            raise ValueError("fault probabilities out of range")
        if self.min_delay_ms > self.max_delay_ms:
            raise ValueError("min_delay_ms exceeds max_delay_ms")
        if not 0 <= self.read_fraction <= 1:
            raise ValueError("read_fraction must lie in [0, 1]")
        return self


# section -> keys it may hold
_SECTIONS = {
    "scenario": ("workload", "time_limit_s"),
    "cluster": ("config_servers", "replicas", "spares"),
    "faults": ("drop_prob", "dup_prob", "min_delay_ms", "max_delay_ms", "partitions", "pause_prob", "pause_max_ms"),
    "clock": ("epsilon_ns",),
    "workload": ("clients", "ops_per_client", "read_fraction", "key_space", "precise_deps"),
    "crashes": ("backup_crashes", "downtime_ms", "reconfigurations", "controllers", "sweep_node"),
    "mutants": ("enable",),
}


def parse_scenario(text: str) -> Scenario:
    cp = configparser.ConfigParser()
    cp.read_string(text)
    types = {f.name: f.type for f in fields(Scenario)}
    kw = {}
    for section in cp.sections():
        allowed = _SECTIONS.get(section)
        if allowed is None:
            raise ValueError(f"unknown section [{section}]")
        for key in cp[section]:
            if key not in allowed:
                raise ValueError(f"unknown key {key!r} in [{section}]")
            if section == "mutants":
                kw["mutants"] = tuple(m.strip() for m in cp[section][key].split(",") if m.strip())
                continue
            t = types[key]
            if t is bool:
                kw[key] = cp.getboolean(section, key)
            elif t is int:
                kw[key] = cp.getint(section, key)
            elif t is float:
                kw[key] = cp.getfloat(section, key)
            else:
                kw[key] = cp.get(section, key).strip()
    return Scenario(**kw).validate()


def load_scenario(path: str) -> Scenario:
    with open(path) as f:
        return parse_scenario(f.read())
