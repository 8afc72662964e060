from dataclasses import replace

import pytest

from iogrammar.finalize import raw_timestamp_block, unpack_timestamps
from iogrammar.grammar import START_RULE, Symbol, Grammar, grammar_equal
from iogrammar.harness import (
    KINDS, WorkloadSpec, OracleLog, simulate, run_workload, compare_with_oracle, scaling_sweep,
)
from iogrammar.model import Int, UniqueHandle
from iogrammar.exceptions import InvalidWorkload


def test_serial_nested_grammar():
    archive, _ = run_workload(WorkloadSpec(kind="serial_nested", m=3, n=4), "serial")
    expected = Grammar({START_RULE: (Symbol(-2, 3),), -2: (Symbol(0, 4), Symbol(1, 1))})
    assert grammar_equal(archive.result.grammar_of(0), expected)
    assert len(archive.result.table) == 2


@pytest.mark.parametrize("m", [2, 5, 50])
@pytest.mark.parametrize("n", [2, 9, 50])
def test_serial_nested_size_is_constant(m, n):
    rank_locals, _, _ = simulate(WorkloadSpec(kind="serial_nested", m=m, n=n))
    grammar = rank_locals[0].grammar
    assert grammar.rule_count() == 2
    assert grammar.symbol_count() == 3
    assert len(rank_locals[0].table) == 2


def test_strided_offsets():
    archive, oracle = run_workload(WorkloadSpec(kind="strided", p=2, m=2, chunk=10), "strided")
    assert len(archive.result.grammars) == 1
    assert archive.result.index == [0, 0]
    assert len(archive.result.table) == 3
    lseek = archive.registry.id_of("lseek")
    assert [r.args[1] for r in archive.read_records(0) if r.func == lseek] == [Int(0), Int(20)]
    assert [r.args[1] for r in archive.read_records(1) if r.func == lseek] == [Int(10), Int(30)]
    assert compare_with_oracle(archive, oracle) == []


def core_sizes(df):
    return list(df["grammars_bytes"] + df["cst_bytes"])


@pytest.mark.slow
def test_scale_invariance():
    df = scaling_sweep(WorkloadSpec(kind="strided_shared", m=1000), [2, 4, 8, 16, 32, 64])
    assert len(set(core_sizes(df))) == 1
    assert set(df["unique_grammars"]) == {1}
    assert set(df["cst_entries"]) == {3}


def test_scale_invariance_small():
    df = scaling_sweep(WorkloadSpec(kind="strided_shared", m=50), [2, 4, 8])
    assert len(set(core_sizes(df))) == 1
    assert list(df.columns) == [
        "scale_param", "grammars_bytes", "cst_bytes", "index_bytes", "timestamps_bytes",
        "unique_grammars", "cst_entries", "core_bytes",
    ]


@pytest.mark.slow
def test_inter_pattern_ablation():
    spec = WorkloadSpec(kind="strided_shared", m=1000, inter_pattern=False)
    sizes = core_sizes(scaling_sweep(spec, [2, 4, 8, 16, 32, 64]))
    assert all(a < b for a, b in zip(sizes, sizes[1:]))
    assert (sizes[-1] - sizes[0]) / sizes[0] >= 10


def test_inter_pattern_ablation_small():
    spec = WorkloadSpec(kind="strided_shared", m=20, inter_pattern=False)
    df = scaling_sweep(spec, [2, 4, 8])
    sizes = core_sizes(df)
    assert all(a < b for a, b in zip(sizes, sizes[1:]))
    assert list(df["unique_grammars"]) == [2, 4, 8]


@pytest.mark.parametrize("m", [2, 10, 100])
def test_intra_pattern_ablation(m):
    off, _, _ = simulate(WorkloadSpec(kind="strided_shared", p=1, m=m, intra_pattern=False))
    assert len(off[0].table) == m + 1
    assert len(off[0].grammar) == 2 * m

    on, _, _ = simulate(WorkloadSpec(kind="strided_shared", p=1, m=m))
    assert len(on[0].table) == 3


def test_filename_staircase():
    spec = WorkloadSpec(kind="checkpoint_series", p=2, files=5, iters_per_file=4)
    _, oracle, _ = simulate(spec)
    for milestones in oracle.milestones:
        entries = [count for _, count in milestones]
        assert len(entries) == 20
        steps = [i for i in range(1, 20) if entries[i] != entries[i - 1]]
        assert steps == [4, 8, 12, 16]
        assert all(b - a == 1 for a, b in zip(entries, entries[1:]) if a != b)
        assert entries[0] == 3


def test_checkpoint_series_archive():
    spec = WorkloadSpec(kind="checkpoint_series", p=2, files=3, iters_per_file=2)
    archive, oracle = run_workload(spec, "ckpt")
    assert compare_with_oracle(archive, oracle) == []
    assert len(archive.result.grammars) == 1


MATRIX_P = [1, 2, 4, 8]
MATRIX_M = [1, 2, 10]


def spec_for(kind, p, m, **kwargs):
    return WorkloadSpec(kind=kind, p=p, m=m, n=3, files=2, iters_per_file=m, aggregators=min(2, p), length=50, **kwargs)


@pytest.mark.parametrize("kind", KINDS)
@pytest.mark.parametrize("p", MATRIX_P)
@pytest.mark.parametrize("m", MATRIX_M)
def test_lossless(kind, p, m):
    archive, oracle = run_workload(spec_for(kind, p, m), "t")
    assert compare_with_oracle(archive, oracle) == []


@pytest.mark.slow
@pytest.mark.parametrize("kind", KINDS)
@pytest.mark.parametrize("p", [1, 2, 4, 8, 16, 32, 64])
@pytest.mark.parametrize("m", [1, 2, 10, 100])
def test_lossless_full_matrix(kind, p, m):
    archive, oracle = run_workload(spec_for(kind, p, m, inter_pattern=(m % 2 == 0)), "t")
    assert compare_with_oracle(archive, oracle) == []


@pytest.mark.parametrize("seed", range(200))
def test_lossless_random(seed):
    spec = WorkloadSpec(kind="random", p=2, seed=seed, length=60, alphabet=1 + seed % 10)
    archive, oracle = run_workload(spec, "r")
    assert compare_with_oracle(archive, oracle) == []


THREADED = dict(p=2, m=100, files=2, iters_per_file=50, length=200, threads=2)


def thread_switches(records):
    tids = [r.thread_id for r in records]
    return sum(1 for a, b in zip(tids, tids[1:]) if a != b)


@pytest.mark.parametrize("kind", ["serial_nested", "strided_shared", "checkpoint_series", "random"])
def test_lossless_two_threads(kind):
    spec = WorkloadSpec(kind=kind, **THREADED)
    archive, oracle = run_workload(spec, "threads")
    assert compare_with_oracle(archive, oracle) == []
    assert {r.thread_id for _, r in archive.iter_records()} == {0, 1}
    for records in oracle.records:
        assert thread_switches(records) >= 50

    _, single, _ = simulate(replace(spec, threads=1))
    for rank in range(spec.p):
        first = [(r.func, r.args, r.call_depth) for r in archive.read_records(rank) if r.thread_id == 0]
        assert first == [(r.func, r.args, r.call_depth) for r in single.records[rank]]


def test_two_threads_are_deterministic():
    spec = WorkloadSpec(kind="random", p=2, length=400, alphabet=9, threads=2)
    _, first, _ = simulate(spec)
    _, second, _ = simulate(spec)
    assert first == second
    _, other, _ = simulate(replace(spec, seed=1))
    assert [r.thread_id for r in other.records[0]] != [r.thread_id for r in first.records[0]]


def test_lossless_without_patterns():
    spec = WorkloadSpec(kind="ior_like", p=4, intra_pattern=False, inter_pattern=False)
    archive, oracle = run_workload(spec, "plain")
    assert compare_with_oracle(archive, oracle) == []


def test_layer_filter():
    spec = WorkloadSpec(kind="ior_like", p=2, layers=("mpiio",))
    archive, oracle = run_workload(spec, "mpiio")
    assert compare_with_oracle(archive, oracle) == []
    layers = {archive.registry.info(r.func).layer for _, r in archive.iter_records()}
    assert layers == {"mpiio"}


def test_timestamp_contract():
    rank_locals, oracle, _ = simulate(WorkloadSpec(kind="ior_like", p=3))
    for local, records in zip(rank_locals, oracle.records):
        assert len(raw_timestamp_block(local.timestamps)) == 8 * len(records)
    archive, _ = run_workload(WorkloadSpec(kind="ior_like", p=3), "ior")
    for rank, records in enumerate(oracle.records):
        pairs = unpack_timestamps(archive.result.timestamps[rank])
        assert pairs == [(r.t_entry, r.t_exit) for r in records]


def test_ior_like_handles_are_group_wide():
    archive, _ = run_workload(WorkloadSpec(kind="ior_like", p=4), "ior")
    assert len(archive.result.grammars) == 1
    write_at = archive.registry.id_of("MPI_File_write_at")
    for rank in range(4):
        calls = [r for r in archive.read_records(rank) if r.func == write_at]
        assert len(calls) == 4
        assert {r.args[0] for r in calls} == {UniqueHandle(0)}
        assert [r.args[1].value for r in calls] == [rank * 1024 + k * 256 for k in range(4)]


@pytest.mark.parametrize("aggregators", [2, 4, 8])
def test_aggregator_plateau(aggregators):
    ranks = [aggregators * k for k in (1, 2, 4, 8)]
    df = scaling_sweep(WorkloadSpec(kind="collective_agg", m=4, aggregators=aggregators), ranks)
    # every rank aggregates its own chunk until the groups grow past one rank
    assert list(df["unique_grammars"]) == [1] + [2 * aggregators] * 3


def test_workload_validation():
    with pytest.raises(InvalidWorkload):
        WorkloadSpec(kind="nope").validate()
    with pytest.raises(InvalidWorkload):
        WorkloadSpec(p=0).validate()
    with pytest.raises(InvalidWorkload):
        WorkloadSpec(kind="collective_agg", p=2, aggregators=3).validate()
    with pytest.raises(InvalidWorkload):
        WorkloadSpec(kind="ior_like", block=1000, transfer=300).validate()
    with pytest.raises(InvalidWorkload):
        WorkloadSpec(kind="ior_like", threads=2).validate()
    with pytest.raises(InvalidWorkload):
        WorkloadSpec(layers=("cuda",)).validate()


def test_workload_dict_roundtrip():
    spec = WorkloadSpec(kind="agg", p=4, aggregators=2, prefixes=("/scratch",), layers=("posix", "mpiio"))
    assert spec.kind == "collective_agg"
    assert WorkloadSpec.from_dict(spec.to_dict()) == spec
    with pytest.raises(InvalidWorkload):
        WorkloadSpec.from_dict({"kind": "random", "colour": 1})


def test_deterministic_oracle():
    spec = WorkloadSpec(kind="random", p=3, seed=5)
    _, first, _ = simulate(spec)
    _, second, _ = simulate(spec)
    assert first == second
    assert isinstance(first, OracleLog)
    assert first.nranks == 3


def test_compare_reports_differences(strided_archive):
    archive, oracle = strided_archive
    oracle.records[1][0] = oracle.records[1][1]
    problems = compare_with_oracle(archive, oracle)
    assert len(problems) == 1
    assert problems[0].startswith("rank 1 record 0")
    assert compare_with_oracle(archive, OracleLog.empty(3)) == ["archive has 2 ranks, oracle has 3"]
