"""Deliberate protocol bugs, switched on only by tests and sweeps to prove the checks bite.

Known names:

``logger_ack_before_sync``
    ``StateLogger.wait_durable`` returns before the records are synced.
``backup_ack_before_durable``
    a backup acknowledges ``apply_as_backup`` without waiting for its log.
``paxos_ack_before_persist``
    a paxos acceptor replies to propose before writing its state.
"""

from contextlib import contextmanager

KNOWN = frozenset({"logger_ack_before_sync", "backup_ack_before_durable", "paxos_ack_before_persist"})

_active = set()


def active(name: str) -> bool:
    return name in _active


def enable(*names):
    for n in names:
        if n not in KNOWN:
            raise ValueError(f"unknown mutant {n!r}")
    _active.update(names)


def reset():
    _active.clear()


@contextmanager
def enabled(*names):
    prev = set(_active)
    enable(*names)
    try:
        yield
    finally:
        _active.clear()
        _active.update(prev)
