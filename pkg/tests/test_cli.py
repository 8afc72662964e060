import io
import argparse
import json
import os

import pandas
import pytest

from iogrammar import __version__
from iogrammar.cli import main, parse_range, EXIT_OK, EXIT_FAILED, EXIT_USAGE, EXIT_CORRUPT
from iogrammar.archive import TraceMeta, write_archive
from iogrammar.harness import WorkloadSpec


@pytest.mark.parametrize("text, expected", [
    ("2..64", [2, 4, 8, 16, 32, 64]),
    ("1..1", [1]),
    ("3..20", [3, 6, 12]),
    ("1,2,4", [1, 2, 4]),
    ("7", [7]),
])
def test_parse_range(text, expected):
    assert parse_range(text) == expected


@pytest.mark.parametrize("text", ["", "a..b", "8..2", "0..4", "1,,2"])
def test_parse_range_rejects(text):
    with pytest.raises(argparse.ArgumentTypeError):
        parse_range(text)


def test_gen_then_verify(capsys):
    assert main(["gen", "--kind", "strided", "--p", "8", "--m", "100", "-o", "t"]) == EXIT_OK
    assert os.path.isfile(os.path.join("t", "cst.dat"))
    assert main(["verify", "t"]) == EXIT_OK
    assert "OK (1600 records)" in capsys.readouterr().out


def test_verify_without_workload(strided_archive):
    archive, _ = strided_archive
    write_archive(archive.result, TraceMeta(registry=archive.registry), "bare")
    assert main(["verify", "bare"]) == EXIT_FAILED


def test_verify_detects_mismatch(strided_archive, capsys):
    archive, _ = strided_archive
    other = WorkloadSpec(kind="strided_shared", p=2, m=2, chunk=20)
    write_archive(archive.result, TraceMeta(registry=archive.registry, workload=other.to_dict()), "t")
    assert main(["verify", "t"]) == EXIT_FAILED
    assert "rank 0 record 1" in capsys.readouterr().out


def test_usage_errors():
    assert main([]) == EXIT_USAGE
    assert main(["gen"]) == EXIT_USAGE
    assert main(["gen", "--kind", "nope", "-o", "t"]) == EXIT_USAGE
    assert main(["gen", "--kind", "agg", "--p", "2", "--aggregators", "4", "-o", "t"]) == EXIT_USAGE
    assert main(["bench", "--p", "2..8", "--m", "1,2"]) == EXIT_USAGE


def test_version(capsys):
    assert main(["--version"]) == EXIT_OK
    assert __version__ in capsys.readouterr().out


def test_corrupt_archive():
    assert main(["gen", "--kind", "serial", "--m", "3", "--n", "2", "-o", "t"]) == EXIT_OK
    path = os.path.join("t", "grammars.dat")
    with open(path, "rb") as f:
        data = bytearray(f.read())
    data[len(data) // 2] ^= 0xFF
    with open(path, "wb") as f:
        f.write(bytes(data))
    assert main(["verify", "t"]) == EXIT_CORRUPT
    assert main(["dump", "t"]) == EXIT_CORRUPT


def test_missing_archive():
    assert main(["stats", "nowhere"]) == EXIT_CORRUPT


def test_dump(strided_archive, capsys):
    archive, _ = strided_archive
    assert main(["dump", archive.path]) == EXIT_OK
    lines = capsys.readouterr().out.splitlines()
    assert len(lines) == 8
    assert lines[0] == "0 0 0 0 1 lseek(#3, 0, 0)"

    assert main(["dump", archive.path, "--rank", "1"]) == EXIT_OK
    lines = capsys.readouterr().out.splitlines()
    assert lines[2] == "1 0 0 4 5 lseek(#3, 30, 0)"


def test_convert_chrome_empty(capsys):
    assert main(["gen", "--kind", "serial", "--prefix", "/nowhere", "-o", "t"]) == EXIT_OK
    capsys.readouterr()
    assert main(["convert", "t", "--format", "chrome"]) == EXIT_OK
    assert capsys.readouterr().out.strip() == "[]"


def test_convert_to_files(strided_archive):
    archive, _ = strided_archive
    assert main(["convert", archive.path, "--format", "chrome", "-o", "timeline.json"]) == EXIT_OK
    with open("timeline.json") as f:
        assert len(json.load(f)) == 8
    assert main(["convert", archive.path, "--format", "csv", "-o", "calls.csv"]) == EXIT_OK
    assert len(pandas.read_csv("calls.csv")) == 8


def test_convert_csv_stdout(strided_archive, capsys):
    archive, _ = strided_archive
    assert main(["convert", archive.path, "--format", "csv"]) == EXIT_OK
    df = pandas.read_csv(io.StringIO(capsys.readouterr().out))
    assert list(df["func"]) == ["lseek", "write"] * 4


def test_stats_json(strided_archive, capsys):
    archive, _ = strided_archive
    assert main(["stats", archive.path, "--json"]) == EXIT_OK
    report = json.loads(capsys.readouterr().out)
    assert report["unique_grammars"] == 1
    assert report["cst_entries"] == 3
    assert report["total_records"] == 8


def test_stats_table(strided_archive, capsys):
    archive, _ = strided_archive
    assert main(["stats", archive.path]) == EXIT_OK
    assert "lseek" in capsys.readouterr().out


def test_bench_without_inter_pattern(capsys):
    argv = ["bench", "--kind", "strided", "--p", "2..16", "--m", "20", "--no-inter-pattern"]
    assert main(argv) == EXIT_OK
    df = pandas.read_csv(io.StringIO(capsys.readouterr().out))
    assert list(df["scale_param"]) == [2, 4, 8, 16]
    core = list(df["core_bytes"])
    assert all(a < b for a, b in zip(core, core[1:]))


def test_bench_to_file():
    assert main(["bench", "--kind", "strided", "--p", "4", "--m", "1,2,4", "-o", "sweep.csv"]) == EXIT_OK
    df = pandas.read_csv("sweep.csv")
    assert list(df["scale_param"]) == [1, 2, 4]
    assert set(df["unique_grammars"]) == {1}


def test_convert_warns_on_extension(strided_archive, caplog):
    archive, _ = strided_archive
    assert main(["convert", archive.path, "--format", "csv", "-o", "calls.json"]) == EXIT_OK
    assert "Writing csv output to calls.json" in caplog.text


def test_csv_stdout_matches_file(strided_archive, capsys):
    archive, _ = strided_archive
    assert main(["convert", archive.path, "--format", "csv", "-o", "calls.csv"]) == EXIT_OK
    capsys.readouterr()
    assert main(["convert", archive.path, "--format", "csv"]) == EXIT_OK
    out = capsys.readouterr().out
    with open("calls.csv", newline="") as f:
        assert out == f.read()
    assert out.endswith("\r\n")


def test_verify_two_threads(capsys):
    argv = ["gen", "--kind", "random", "--p", "2", "--length", "400", "--alphabet", "9", "--threads", "2", "-o", "t"]
    assert main(argv) == EXIT_OK
    assert main(["verify", "t"]) == EXIT_OK
    assert ": OK (" in capsys.readouterr().out


def test_layers_from_env(monkeypatch, capsys):
    monkeypatch.setenv("IOGRAMMAR_POSIX", "0")
    assert main(["gen", "--kind", "ior", "--p", "2", "-o", "t"]) == EXIT_OK
    monkeypatch.delenv("IOGRAMMAR_POSIX")
    capsys.readouterr()

    assert main(["dump", "t"]) == EXIT_OK
    out = capsys.readouterr().out
    assert "MPI_File_write_at(" in out
    assert "pwrite(" not in out
    assert main(["verify", "t"]) == EXIT_OK


def test_prefixes_from_env(monkeypatch, capsys):
    monkeypatch.setenv("IOGRAMMAR_PREFIXES", "/nowhere")
    assert main(["gen", "--kind", "checkpoint", "--p", "2", "-o", "env"]) == EXIT_OK
    assert main(["gen", "--kind", "checkpoint", "--p", "2", "--prefix", "/scratch", "-o", "cli"]) == EXIT_OK
    capsys.readouterr()

    assert main(["stats", "env", "--json"]) == EXIT_OK
    assert json.loads(capsys.readouterr().out)["total_records"] == 0
    assert main(["stats", "cli", "--json"]) == EXIT_OK
    assert json.loads(capsys.readouterr().out)["total_records"] == 6


def test_invalid_layers():
    assert main(["gen", "--layers", "posix,cuda", "-o", "t"]) == EXIT_USAGE
