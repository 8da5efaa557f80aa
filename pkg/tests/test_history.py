from vrsm import history
from vrsm.history import History, Operation


def test_stamps_strictly_increase_on_a_frozen_clock():
    h = History(lambda: 5)
    a = h.invoke(1, "put", "k", "v")
    b = h.invoke(2, "get", "k")
    h.complete(a, "")
    h.complete(b, "v")
    stamps = [a.invoke, b.invoke, a.ret, b.ret]
    assert stamps == sorted(set(stamps)) and stamps[0] == 5


def test_incomplete_ops_have_no_return():
    h = History(iter(range(100)).__next__)
    o = h.invoke(0, "get", "k")
    assert not o.completed and o.ret is None


def test_jsonl_round_trip(tmp_path):
    h = History(iter(range(100)).__next__)
    h.complete(h.invoke(0, "put", "k", "v"), "")
    h.complete(h.invoke(1, "cond_put", "k", "v", "w"), True)
    h.invoke(2, "get", "k")
    p = tmp_path / "h.jsonl"
    history.save(h.ops, str(p))
    back = history.load(str(p))
    assert [o.to_json() for o in back] == [o.to_json() for o in h.ops]
    assert back[2] == Operation(2, "get", ("k",), 4)
