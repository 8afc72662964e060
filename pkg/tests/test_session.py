import os
import threading

import pytest

from iogrammar.model import Int, Handle, UniqueHandle, Offset, Literal, IterLinear, decode_signature
from iogrammar.grammar import START_RULE, Symbol
from iogrammar.pattern import HandleRegistry, OffsetDecoder
from iogrammar.session import FilterConfig, RankTracer
from iogrammar.exceptions import DepthOverflow, StackMismatch, UnbalancedCalls, InvalidRecord


def decoded_stream(local, rank=0):
    decoder = OffsetDecoder(rank)
    out = []
    for terminal in local.grammar.expand():
        func, args, tid, depth = decode_signature(local.table.lookup(terminal).data)
        out.append((func, decoder.decode(func, args, tid, depth), tid, depth))
    return out


def test_depths_of_nested_calls(registry):
    tracer = RankTracer(0, registry)
    h5 = tracer.begin_call(0, registry.id_of("H5Dwrite"))
    mpi = tracer.begin_call(0, registry.id_of("MPI_File_write_at"))
    posix = tracer.begin_call(0, registry.id_of("pwrite"))
    assert [h5.depth, mpi.depth, posix.depth] == [0, 1, 2]

    tracer.end_call(posix, (Handle(3), 0, 8, 0))
    tracer.end_call(mpi, (Handle(9), 0, 0, 8, 1))
    tracer.end_call(h5, (1, 1, 0, 0, 0, 0))
    local = tracer.finalize_rank()
    assert [depth for _, _, _, depth in decoded_stream(local)] == [2, 1, 0]


def test_threads_have_independent_stacks(registry):
    tracer = RankTracer(0, registry)
    write = registry.id_of("write")
    a = tracer.begin_call(0, write)
    b = tracer.begin_call(1, write)
    assert a.depth == b.depth == 0
    tracer.end_call(a, (Handle(3), 0, 1))
    tracer.end_call(b, (Handle(3), 0, 1))


def test_depth_overflow(registry):
    tracer = RankTracer(0, registry)
    fsync = registry.id_of("fsync")
    for _ in range(256):
        tracer.begin_call(0, fsync)
    with pytest.raises(DepthOverflow):
        tracer.begin_call(0, fsync)


def test_stack_mismatch(registry):
    tracer = RankTracer(0, registry)
    fsync = registry.id_of("fsync")
    outer = tracer.begin_call(0, fsync)
    tracer.begin_call(0, fsync)
    with pytest.raises(StackMismatch):
        tracer.end_call(outer, (Handle(3),))


def test_arity_checked(registry):
    tracer = RankTracer(0, registry)
    with pytest.raises(InvalidRecord):
        tracer.call(0, registry.id_of("write"), (Handle(3), 0))


def test_unbalanced(registry):
    tracer = RankTracer(0, registry)
    tracer.begin_call(0, registry.id_of("fsync"))
    with pytest.raises(UnbalancedCalls):
        tracer.finalize_rank()


def test_empty_session(registry):
    local = RankTracer(0, registry).finalize_rank()
    assert local.grammar.expand() == []
    assert len(local.table) == 0
    assert local.calls == 0


def test_nested_loops_session(registry):
    tracer = RankTracer(0, registry)
    write, fsync = registry.id_of("write"), registry.id_of("fsync")
    for _ in range(3):
        for _ in range(4):
            tracer.call(0, write, (Handle(3), 0, 4096))
        tracer.call(0, fsync, (Handle(3),))
    local = tracer.finalize_rank()

    assert len(local.table) == 2
    assert local.grammar.rules == {START_RULE: (Symbol(-2, 3),), -2: (Symbol(0, 4), Symbol(1, 1))}


def test_clock(registry):
    tracer = RankTracer(0, registry, call_ticks=3, gap_ticks=2)
    fsync = registry.id_of("fsync")
    tracer.call(0, fsync, (Handle(3),))
    tracer.advance(10)
    tracer.call(0, fsync, (Handle(3),))
    assert tracer.timestamps == [(0, 3), (15, 18)]
    assert tracer.now == 20


def test_offsets_are_pattern_encoded(registry):
    tracer = RankTracer(1, registry)
    lseek = registry.id_of("lseek")
    for i in range(5):
        tracer.call(0, lseek, (Handle(3), 10 + 20 * i, 0))
    local = tracer.finalize_rank()

    patterns = [decode_signature(sig.data)[1][1] for sig in local.table]
    assert patterns == [Offset(Literal(10)), Offset(IterLinear(20, 10))]
    assert [args[1] for _, args, _, _ in decoded_stream(local, 1)] == [Int(10 + 20 * i) for i in range(5)]


def test_intra_pattern_off(registry):
    tracer = RankTracer(0, registry, intra_pattern=False)
    lseek = registry.id_of("lseek")
    for i in range(5):
        tracer.call(0, lseek, (Handle(3), 20 * i, 0))
    assert len(tracer.finalize_rank().table) == 5


def test_offset_slot_needs_integer(registry):
    tracer = RankTracer(0, registry)
    with pytest.raises(InvalidRecord):
        tracer.call(0, registry.id_of("lseek"), (Handle(3), "zero", 0))


@pytest.mark.parametrize("bad", [2**64, -2**63 - 1])
def test_rejected_offset_keeps_pattern_index(registry, bad):
    tracer = RankTracer(0, registry)
    lseek = registry.id_of("lseek")
    for offset in (0, 10):
        tracer.call(0, lseek, (Handle(3), offset, 0))
    with pytest.raises(InvalidRecord):
        tracer.call(0, lseek, (Handle(3), bad, 0))
    for offset in (30, 40, 50):
        tracer.call(0, lseek, (Handle(3), offset, 0))
    local = tracer.finalize_rank()

    assert local.calls == 5
    assert [args[1] for _, args, _, _ in decoded_stream(local)] == [Int(v) for v in (0, 10, 30, 40, 50)]


def test_filter_drops_unmatched_path(registry):
    tracer = RankTracer(0, registry, filter=FilterConfig(prefixes=("/scratch",)))
    assert not tracer.call(0, registry.id_of("open"), ("/tmp/x", 65, Handle(3)))
    assert not tracer.call(0, registry.id_of("write"), (Handle(3), 0, 10))
    assert tracer.finalize_rank().calls == 0


def test_filter_tracks_handles(registry):
    tracer = RankTracer(0, registry, filter=FilterConfig(prefixes=("/scratch",)))
    assert tracer.call(0, registry.id_of("open"), ("/scratch/ckpt", 65, Handle(3)))
    assert tracer.call(0, registry.id_of("write"), (Handle(3), 0, 10))
    assert tracer.call(0, registry.id_of("close"), (Handle(3),))
    # closed: no longer tracked
    assert not tracer.call(0, registry.id_of("write"), (Handle(3), 0, 10))
    assert tracer.finalize_rank().calls == 3


def test_filter_disabled_layer(registry):
    tracer = RankTracer(0, registry, filter=FilterConfig(layers={"posix"}))
    assert tracer.call(0, registry.id_of("write"), (Handle(3), 0, 10))
    assert not tracer.call(0, registry.id_of("MPI_Barrier"), (0,))


def test_no_filter_records_everything(registry):
    tracer = RankTracer(0, registry)
    assert tracer.call(0, registry.id_of("open"), ("/tmp/x", 65, Handle(3)))
    assert tracer.call(0, registry.id_of("MPI_Barrier"), (0,))


def test_filter_from_env(monkeypatch):
    monkeypatch.setenv("IOGRAMMAR_PREFIXES", os.pathsep.join(["/scratch", "/projects"]))
    monkeypatch.setenv("IOGRAMMAR_MPI", "0")
    config = FilterConfig.from_env()
    assert config.prefixes == ("/scratch", "/projects")
    assert config.layers == frozenset({"posix", "mpiio", "hdf5"})
    assert FilterConfig.from_env(prefixes=["/data"]).prefixes == ("/data",)


def test_filter_validation():
    with pytest.raises(ValueError):
        FilterConfig(prefixes=("",))
    with pytest.raises(ValueError):
        FilterConfig(layers={"cuda"})


def test_unique_handles_substituted(registry):
    handles = HandleRegistry()
    oracle = []
    tracer = RankTracer(0, registry, handles=handles, oracle=oracle)
    handles.collective_open([0], [1000])
    tracer.call(0, registry.id_of("MPI_File_sync"), (Handle(1000),))
    tracer.call(0, registry.id_of("MPI_File_close"), (Handle(1000),))
    tracer.call(0, registry.id_of("MPI_File_sync"), (Handle(1000),))

    assert [r.args for r in oracle] == [(UniqueHandle(0),), (UniqueHandle(0),), (Handle(1000),)]
    assert handles.lookup(0, 1000) is None


def test_oracle_mirrors_recorded_calls(registry):
    oracle = []
    tracer = RankTracer(0, registry, filter=FilterConfig(prefixes=("/scratch",)), oracle=oracle)
    tracer.call(0, registry.id_of("open"), ("/tmp/x", 65, Handle(4)))
    tracer.call(0, registry.id_of("open"), ("/scratch/y", 65, Handle(3)))
    tracer.call(0, registry.id_of("lseek"), (Handle(3), 40, 0))
    local = tracer.finalize_rank()

    assert len(oracle) == local.calls == 2
    assert oracle[1].args == (Handle(3), Int(40), Int(0))
    assert [(r.t_entry, r.t_exit) for r in oracle] == list(local.timestamps)


def test_interleaved_threads(registry):
    oracle = []
    tracer = RankTracer(0, registry, oracle=oracle)
    lseek = registry.id_of("lseek")
    rounds = 300
    barrier = threading.Barrier(2, timeout=30)

    def worker(tid):
        for i in range(rounds):
            barrier.wait()
            tracer.call(tid, lseek, (Handle(3), tid * 100_000 + i * 64, 0))

    threads = [threading.Thread(target=worker, args=(tid,)) for tid in range(2)]
    for t in threads:
        t.start()
    for t in threads:
        t.join()
    local = tracer.finalize_rank()

    tids = [r.thread_id for r in oracle]
    assert sum(1 for a, b in zip(tids, tids[1:]) if a != b) >= rounds
    assert len(local.table) == 4
    assert all(t_entry <= t_exit for t_entry, t_exit in local.timestamps)

    stream = decoded_stream(local)
    assert [(tid, args) for _, args, tid, _ in stream] == [(r.thread_id, r.args) for r in oracle]
    for tid in range(2):
        offsets = [args[1].value for _, args, t, _ in stream if t == tid]
        assert offsets == [tid * 100_000 + i * 64 for i in range(rounds)]
