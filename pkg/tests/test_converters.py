import io
import json

import pytest

from rich.console import Console

from iogrammar.converters import (
    COLUMNS, chrome_events, to_chrome_timeline, records_frame, to_columnar, dump_lines,
    format_record, stats, render_stats,
)
from iogrammar.harness import WorkloadSpec, run_workload
from iogrammar.utils import read_json, read_dataframe


def test_chrome_timeline(strided_archive):
    archive, oracle = strided_archive
    assert to_chrome_timeline(archive, "timeline.json") == 8
    events = read_json("timeline.json")
    assert events == chrome_events(archive)

    first = events[0]
    assert first["name"] == "lseek"
    assert first["ph"] == "X"
    assert first["cat"] == "posix"
    assert first["pid"] == 0
    assert first["args"]["arg2"] == 0
    assert first["args"]["call_depth"] == 0
    record = oracle.records[0][0]
    assert first["ts"] == pytest.approx(record.t_entry * 0.1)
    assert first["dur"] == pytest.approx((record.t_exit - record.t_entry) * 0.1)
    assert [e["pid"] for e in events] == [0] * 4 + [1] * 4


@pytest.mark.parametrize("kind", ["ior_like", "random", "checkpoint_series"])
def test_chrome_events_are_complete_events(kind):
    archive, _ = run_workload(WorkloadSpec(kind=kind, p=2, files=2, iters_per_file=3, length=40), kind)
    to_chrome_timeline(archive, "timeline.json")
    events = read_json("timeline.json")
    assert len(events) == archive.record_count()
    for event in events:
        assert {"name", "cat", "ph", "ts", "dur", "pid", "tid", "args"} <= set(event)
        assert event["ph"] == "X"
        assert isinstance(event["name"], str) and event["name"]
        assert isinstance(event["ts"], (int, float)) and event["ts"] >= 0
        assert isinstance(event["dur"], (int, float)) and event["dur"] >= 0
        assert type(event["pid"]) is int
        assert type(event["tid"]) is int
        assert isinstance(event["args"], dict)


def test_chrome_timeline_empty():
    spec = WorkloadSpec(kind="serial_nested", prefixes=("/nowhere",))
    archive, _ = run_workload(spec, "empty")
    assert to_chrome_timeline(archive, "timeline.json") == 0
    with open("timeline.json") as f:
        assert f.read() == "[]"


def test_columnar(strided_archive):
    archive, _ = strided_archive
    assert to_columnar(archive, "calls.csv") == 8
    df = read_dataframe("calls.csv")
    assert list(df.columns) == COLUMNS + ["arg1", "arg2", "arg3"]
    rank1 = df[df["rank"] == 1]
    assert list(rank1[rank1["func"] == "lseek"]["arg2"].astype(int)) == [10, 30]
    assert set(df["arg1"]) == {"#3"}


def test_columnar_pads_short_rows():
    spec = WorkloadSpec(kind="serial_nested", m=2, n=2)
    archive, _ = run_workload(spec, "serial")
    df = records_frame(archive)
    fsync = df[df["func"] == "fsync"]
    assert fsync["arg2"].isna().all()
    assert len(df) == 6


def test_dump_lines(strided_archive):
    archive, _ = strided_archive
    lines = list(dump_lines(archive))
    assert len(lines) == 8
    assert lines[0] == "0 0 0 0 1 lseek(#3, 0, 0)"
    assert lines[5] == "1 0 0 2 3 write(#3, 0, 10)"


def test_format_record(strided_archive):
    archive, _ = strided_archive
    record = archive.read_records(1)[2]
    assert format_record(1, record, archive.registry) == "1 0 0 4 5 lseek(#3, 30, 0)"


def test_stats(strided_archive):
    archive, _ = strided_archive
    report = stats(archive)
    assert report.functions == {
        "write": {"layer": "posix", "calls": 4, "signatures": 1},
        "lseek": {"layer": "posix", "calls": 4, "signatures": 2},
    }
    assert report.unique_grammars == 1
    assert report.cst_entries == 3
    assert report.total_records == 8
    assert report.rank_calls == [4, 4]
    assert report.layer_calls == {"posix": 8}
    assert report.archive_bytes == sum(archive.sizes.values())
    assert report.compression_ratio == pytest.approx(report.raw_bytes / report.archive_bytes)
    json.dumps(report.to_dict())


def test_render_stats(strided_archive):
    archive, _ = strided_archive
    buffer = io.StringIO()
    render_stats(stats(archive), Console(file=buffer, width=120))
    text = buffer.getvalue()
    assert "lseek" in text
    assert "unique grammars" in text
    assert "cst.dat" in text
