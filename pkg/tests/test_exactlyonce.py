import pytest

from vrsm.apps.counter import CounterStateMachine
from vrsm.codec import read_u64
from vrsm.exactlyonce import READONLY, READWRITE, ExactlyOnceStateMachine, decode_envelope, encode_envelope
from vrsm.codec import DecodeError
from vrsm.sim.scenario import Scenario
from vrsm.sim.workloads import run_scenario


def _inc(cid, seq):
    return encode_envelope(cid, seq, READWRITE, b"inc")


def test_duplicate_runs_inner_once_with_identical_replies():
    sm = ExactlyOnceStateMachine(CounterStateMachine())
    a = sm.apply(_inc(1, 1), 0)
    b = sm.apply(_inc(1, 1), 1)
    assert a == b and sm.inner_applies == 1 and sm.inner.value == 1


def test_distinct_clients_are_not_deduplicated():
    sm = ExactlyOnceStateMachine(CounterStateMachine())
    sm.apply(_inc(1, 1), 0)
    sm.apply(_inc(2, 1), 1)
    assert sm.inner.value == 2


def test_duplicates_detected_after_snapshot_restore():
    sm = ExactlyOnceStateMachine(CounterStateMachine())
    first = sm.apply(_inc(5, 3), 0)
    other = ExactlyOnceStateMachine(CounterStateMachine())
    other.set_state(sm.get_state(), 1)
    assert other.apply(_inc(5, 3), 1) == first and other.inner.value == 1


def test_readonly_envelope_does_not_touch_the_table():
    sm = ExactlyOnceStateMachine(CounterStateMachine())
    sm.apply(_inc(1, 1), 0)
    assert read_u64(sm.apply(encode_envelope(1, 1, READONLY, b""), 1)) == 1
    assert sm.inner_applies == 1


def test_envelope_round_trip_and_rejection():
    env = encode_envelope(2**63, 9, READWRITE, b"xyz")
    assert decode_envelope(env) == (2**63, 9, READWRITE, b"xyz")
    with pytest.raises(DecodeError):
        decode_envelope(env[:-1])


@pytest.mark.parametrize("seed", [1, 2, 3])
def test_counter_under_drop_and_duplication_is_exact(seed):
    sc = Scenario(workload="counter", seed=seed, clients=2, ops_per_client=50, drop_prob=0.1, dup_prob=0.3,
                  max_delay_ms=50)
    res = run_scenario(sc)
    assert res.ok, res.error
