import threading

import pytest

from hypothesis import given
import hypothesis.strategies as st

from iogrammar.cst import SignatureTable, merge_tables
from iogrammar.model import CallSignature, Int, encode_fields
from iogrammar.exceptions import InvalidRecord, TableFull


def sig(n):
    return CallSignature(encode_fields(0, (Int(n),), 0, 0))


def table_of(*values):
    table = SignatureTable()
    for v in values:
        table.intern(sig(v))
    return table


def test_intern_dense():
    table = SignatureTable()
    assert table.intern(sig(1)) == 0
    assert table.intern(sig(2)) == 1
    assert table.intern(sig(1)) == 0
    assert table.count(0) == 2
    assert table.count(1) == 1
    assert len(table) == 2
    assert table.lookup(1) == sig(2)
    assert table.index_of(sig(2)) == 1
    assert table.index_of(sig(3)) is None
    assert table.total_calls() == 3


def test_intern_full(monkeypatch):
    import iogrammar.cst
    monkeypatch.setattr(iogrammar.cst, "MAX_ENTRIES", 2)
    table = table_of(1, 2)
    assert table.intern(sig(1)) == 0
    with pytest.raises(TableFull):
        table.intern(sig(3))


def test_concurrent_intern():
    table = SignatureTable()

    def worker():
        for n in range(200):
            table.intern(sig(n))

    threads = [threading.Thread(target=worker) for _ in range(4)]
    for t in threads:
        t.start()
    for t in threads:
        t.join()

    assert len(table) == 200
    assert table.counts() == [4] * 200


def test_merge_identical():
    merged, remaps = merge_tables([table_of(1, 2), table_of(1, 2)])
    assert list(merged) == [sig(1), sig(2)]
    assert remaps == [[0, 1], [0, 1]]
    assert merged.counts() == [2, 2]


def test_merge_disjoint():
    merged, remaps = merge_tables([table_of(1, 2), table_of(3, 4, 5)])
    assert len(merged) == 5
    assert remaps == [[0, 1], [2, 3, 4]]


def test_merge_order_is_rank_scan():
    merged, remaps = merge_tables([table_of(7, 1), table_of(2, 1, 7)])
    assert list(merged) == [sig(7), sig(1), sig(2)]
    assert remaps[1] == [2, 1, 0]


def test_merge_empty_list():
    with pytest.raises(ValueError):
        merge_tables([])


@given(st.lists(st.lists(st.integers(0, 20), max_size=30), min_size=1, max_size=5))
def test_merge_preserves_signatures(rank_values):
    tables = [table_of(*values) for values in rank_values]
    merged, remaps = merge_tables(tables)
    for table, remap in zip(tables, remaps):
        for index, signature, _ in table.items():
            assert merged.lookup(remap[index]) == signature
    assert merged.total_calls() == sum(t.total_calls() for t in tables)

    again, identity = merge_tables([merged])
    assert again == merged
    assert identity == [list(range(len(merged)))]


@given(st.lists(st.integers(0, 50), max_size=40))
def test_serialization_roundtrip(values):
    table = table_of(*values)
    data = table.to_bytes()
    parsed, end = SignatureTable.from_bytes(data)
    assert end == len(data)
    assert parsed == table


def test_from_bytes_rejects_duplicates():
    table = table_of(1)
    data = bytearray(table.to_bytes())
    data[0] = 2
    data += data[4:]
    with pytest.raises(InvalidRecord):
        SignatureTable.from_bytes(bytes(data))


def test_from_bytes_truncated():
    data = table_of(1, 2).to_bytes()
    with pytest.raises(InvalidRecord):
        SignatureTable.from_bytes(data[:-3])
