"""Report rendering and command-line workflow tests.

The CLI tests drive ``main`` in-process end to end: synthesize a dataset
directory, partition it, run a tiny two-round experiment from a JSON config,
and summarize the logs into tables.
"""

import json
import subprocess
import sys

import numpy as np
import pytest

from fedmix.cli import main
from fedmix.data import load_dataset
from fedmix.engine import ExperimentConfig, PartitionSpec, RoundRecord
from fedmix.errors import DataError
from fedmix.models import tiny_config
from fedmix.params import load_file
from fedmix.report import (
    RUN_TABLE_HEADERS,
    RunSummary,
    load_run,
    pivot_table,
    read_records_jsonl,
    render_table,
    runs_table,
    sig6,
    summarize_run,
    write_records_jsonl,
)


class TestSig6:
    def test_rounds_floats_to_six_significant_digits(self):
        assert sig6(0.123456789) == "0.123457"
        assert sig6(1234567.0) == "1.23457e+06"
        assert sig6(0.5) == "0.5"

    def test_leaves_ints_bools_and_strings_alone(self):
        assert sig6(42) == "42"
        assert sig6(True) == "True"
        assert sig6("label") == "label"


def _record(rnd, micro, *, wall=0.5):
    return RoundRecord(
        round=rnd,
        client_stats=[{"client_id": 0, "wall_seconds": wall},
                      {"client_id": 1, "wall_seconds": wall}],
        micro_f1=micro, macro_f1=micro / 2, test_bce=1.25,
        param_count=100, bytes_payload=1600, bytes_total=1700)


class TestRecordsJsonl:
    def test_write_read_roundtrip(self, tmp_path):
        records = [_record(1, 0.5), _record(2, 0.75)]
        path = tmp_path / "rounds.jsonl"
        write_records_jsonl(records, path)
        back = read_records_jsonl(path)
        assert back == [r.to_dict() for r in records]

    def test_bad_line_reports_path_and_lineno(self, tmp_path):
        path = tmp_path / "rounds.jsonl"
        path.write_text('{"round": 1}\n{oops\n')
        with pytest.raises(DataError, match=r"rounds\.jsonl:2"):
            read_records_jsonl(path)

    def test_empty_file_is_an_error(self, tmp_path):
        path = tmp_path / "rounds.jsonl"
        path.write_text("\n\n")
        with pytest.raises(DataError, match="no records"):
            read_records_jsonl(path)


class TestSummarizeRun:
    def test_takes_finals_from_last_record(self):
        records = [_record(1, 0.5, wall=0.5).to_dict(),
                   _record(2, 0.75, wall=1.0).to_dict()]
        meta = {"algo": "moon", "model": {"arch": "conv_mixer"},
                "partition": {"scheme": "ds2"}}
        s = summarize_run(records, meta, "runA")
        assert s.label == "runA"
        assert (s.algo, s.arch, s.partition) == ("moon", "conv_mixer", "ds2")
        assert s.rounds == 2
        assert s.final_micro_f1 == 0.75
        assert s.final_test_bce == 1.25
        assert s.param_count == 100
        assert s.bytes_total_per_round == 1700
        # per-round wall time sums are 1.0 and 2.0 across two clients
        assert s.mean_round_seconds == pytest.approx(1.5)

    def test_missing_meta_yields_placeholders(self):
        s = summarize_run([_record(1, 0.5).to_dict()], None, "x")
        assert (s.algo, s.arch, s.partition) == ("?", "?", "?")

    def test_no_records_is_an_error(self):
        with pytest.raises(DataError, match="no records"):
            summarize_run([], None, "x")


class TestRenderTable:
    HEADERS = ["name", "value"]
    ROWS = [["x", 0.123456789], ["yy", 7]]

    def test_csv(self):
        assert render_table(self.HEADERS, self.ROWS, "csv") == \
            "name,value\nx,0.123457\nyy,7\n"

    def test_md(self):
        assert render_table(self.HEADERS, self.ROWS, "md") == \
            "| name | value |\n| --- | --- |\n| x | 0.123457 |\n| yy | 7 |\n"

    def test_text_aligns_columns(self):
        text = render_table(self.HEADERS, self.ROWS, "text")
        lines = text.splitlines()
        assert len(lines) == 4
        assert lines[0].split() == self.HEADERS
        assert set(lines[1].replace(" ", "")) == {"-"}
        assert lines[2].startswith("x ")
        assert "0.123457" in lines[2]

    def test_unknown_format_is_an_error(self):
        with pytest.raises(DataError, match="format"):
            render_table(self.HEADERS, self.ROWS, "html")


def _summary(algo, arch, scheme, micro):
    return RunSummary(label=f"{algo}-{arch}-{scheme}", algo=algo, arch=arch,
                      partition=scheme, rounds=3, final_micro_f1=micro,
                      final_macro_f1=micro / 2, final_test_bce=1.0,
                      param_count=100, bytes_total_per_round=1700,
                      mean_round_seconds=0.25)


class TestTables:
    def test_runs_table_csv(self):
        text = runs_table([_summary("fedavg", "mlp_mixer", "ds1", 0.9)], "csv")
        lines = text.splitlines()
        assert lines[0] == ",".join(RUN_TABLE_HEADERS)
        assert lines[1] == ("fedavg-mlp_mixer-ds1,fedavg,mlp_mixer,ds1,3,"
                            "0.9,0.45,1,100,1700,0.25")

    def test_runs_table_requires_rows(self):
        with pytest.raises(DataError, match="no runs"):
            runs_table([], "csv")

    def test_pivot_fills_algo_arch_by_partition(self):
        summaries = [_summary("fedavg", "mlp_mixer", "ds1", 0.9),
                     _summary("fedavg", "mlp_mixer", "ds2", 0.8),
                     _summary("moon", "conv_mixer", "ds2", 0.7)]
        assert pivot_table(summaries, "csv") == (
            "algo,arch,ds1,ds2\n"
            "fedavg,mlp_mixer,0.9,0.8\n"
            "moon,conv_mixer,,0.7\n")


@pytest.fixture(scope="module")
def workspace(tmp_path_factory):
    """One synthesized dataset pair plus a finished two-round run."""
    root = tmp_path_factory.mktemp("cli")
    train_dir = root / "train"
    test_dir = root / "test"
    for out, seed in ((train_dir, 0), (test_dir, 1)):
        rc = main(["synth", "--groups", "2", "--classes", "3",
                   "--per-group", "12", "--image-size", "8",
                   "--channels", "2", "--seed", str(seed),
                   "--structure-seed", "0", "--out", str(out)])
        assert rc == 0

    config = ExperimentConfig(
        algo="fedavg",
        model=tiny_config("mlp_mixer"),
        partition=PartitionSpec("ds1", clients=2),
        rounds=2, local_epochs=1, lr=1e-3, batch_size=16,
        seed=0, precision="f32")
    config_path = root / "config.json"
    config_path.write_text(config.to_json())

    run_dir = root / "run1"
    rc = main(["run", "--config", str(config_path), "--data", str(train_dir),
               "--test-data", str(test_dir), "--out", str(run_dir),
               "--checkpoints"])
    assert rc == 0
    return {"root": root, "train": train_dir, "test": test_dir,
            "config": config_path, "run": run_dir}


class TestCliSynthAndPartition:
    def test_synth_writes_loadable_dataset(self, workspace):
        dataset = load_dataset(workspace["train"])
        assert len(dataset) == 24
        assert dataset.n_classes == 3
        assert dataset.images.shape == (24, 2, 8, 8)
        assert sorted(set(dataset.groups)) == ["group0", "group1"]

    def test_partition_writes_exact_cover(self, workspace):
        out = workspace["root"] / "shards.json"
        rc = main(["partition", "--data", str(workspace["train"]),
                   "--scheme", "ds2", "--out", str(out)])
        assert rc == 0
        payload = json.loads(out.read_text())
        assert payload["clients"] == 2
        all_indices = sorted(i for s in payload["shards"] for i in s["indices"])
        assert all_indices == list(range(24))
        assert 0.0 <= payload["skew"]["mean_js"] <= 1.0

    def test_partition_missing_data_dir_exits_2(self, workspace, capsys):
        rc = main(["partition", "--data", str(workspace["root"] / "nope"),
                   "--scheme", "ds1", "--out", "/dev/null"])
        assert rc == 2
        assert "not found" in capsys.readouterr().err

    def test_synth_invalid_spec_exits_1(self, tmp_path, capsys):
        rc = main(["synth", "--groups", "0", "--classes", "3",
                   "--per-group", "4", "--image-size", "8",
                   "--out", str(tmp_path / "bad")])
        assert rc == 1
        assert "error:" in capsys.readouterr().err


class TestCliRun:
    def test_run_outputs(self, workspace):
        run_dir = workspace["run"]
        records = read_records_jsonl(run_dir / "rounds.jsonl")
        assert [r["round"] for r in records] == [1, 2]
        summary = json.loads((run_dir / "summary.json").read_text())
        assert summary["rounds_completed"] == 2
        assert summary["config"]["algo"] == "fedavg"
        assert summary["final_micro_f1"] == records[-1]["micro_f1"]
        for rnd in (1, 2):
            ps = load_file(run_dir / f"round_{rnd:03d}.fmps")
            assert ps[ps.names[0]].dtype == np.float32

    def test_run_is_deterministic_outside_wall_times(self, workspace):
        run2 = workspace["root"] / "run2"
        rc = main(["run", "--config", str(workspace["config"]),
                   "--data", str(workspace["train"]),
                   "--test-data", str(workspace["test"]),
                   "--out", str(run2)])
        assert rc == 0

        def stripped(run_dir):
            out = []
            for rec in read_records_jsonl(run_dir / "rounds.jsonl"):
                for cs in rec["client_stats"]:
                    cs.pop("wall_seconds")
                out.append(rec)
            return out

        assert stripped(workspace["run"]) == stripped(run2)

    def test_run_accepts_precomputed_shards(self, workspace):
        shards_path = workspace["root"] / "ds2_shards.json"
        assert main(["partition", "--data", str(workspace["train"]),
                     "--scheme", "ds2", "--out", str(shards_path)]) == 0
        run_dir = workspace["root"] / "run_sharded"
        rc = main(["run", "--config", str(workspace["config"]),
                   "--data", str(workspace["train"]),
                   "--test-data", str(workspace["test"]),
                   "--shards", str(shards_path), "--out", str(run_dir)])
        assert rc == 0
        records = read_records_jsonl(run_dir / "rounds.jsonl")
        assert len(records[0]["client_stats"]) == 2

    def test_run_rejects_unknown_config_field(self, workspace, capsys):
        bad = json.loads(workspace["config"].read_text())
        bad["momentum"] = 0.9
        bad_path = workspace["root"] / "bad_config.json"
        bad_path.write_text(json.dumps(bad))
        rc = main(["run", "--config", str(bad_path),
                   "--data", str(workspace["train"]),
                   "--test-data", str(workspace["test"]),
                   "--out", str(workspace["root"] / "never")])
        assert rc == 1
        assert "momentum" in capsys.readouterr().err

    def test_run_missing_config_exits_2(self, workspace):
        rc = main(["run", "--config", str(workspace["root"] / "nope.json"),
                   "--data", str(workspace["train"]),
                   "--test-data", str(workspace["test"]),
                   "--out", str(workspace["root"] / "never")])
        assert rc == 2


class TestCliReport:
    def test_report_text_to_stdout(self, workspace, capsys):
        rc = main(["report", "--in", str(workspace["run"] / "rounds.jsonl")])
        assert rc == 0
        out = capsys.readouterr().out
        assert "micro_f1" in out
        assert "run1" in out
        assert "mlp_mixer" in out

    def test_report_csv_with_pivot_to_file(self, workspace):
        out_path = workspace["root"] / "tables.csv"
        rc = main(["report", "--in", str(workspace["run"] / "rounds.jsonl"),
                   "--format", "csv", "--pivot", "--out", str(out_path)])
        assert rc == 0
        text = out_path.read_text()
        assert text.startswith(",".join(RUN_TABLE_HEADERS))
        assert "algo,arch,ds1" in text

    def test_report_missing_input_exits_2(self, workspace):
        rc = main(["report", "--in", str(workspace["root"] / "ghost.jsonl")])
        assert rc == 2

    def test_report_output_is_stable_across_calls(self, workspace):
        paths = ["report", "--in", str(workspace["run"] / "rounds.jsonl"),
                 "--format", "md"]
        first = workspace["root"] / "t1.md"
        second = workspace["root"] / "t2.md"
        assert main(paths + ["--out", str(first)]) == 0
        assert main(paths + ["--out", str(second)]) == 0
        assert first.read_bytes() == second.read_bytes()


class TestCliUsage:
    def test_no_command_is_a_usage_error(self):
        with pytest.raises(SystemExit) as e:
            main([])
        assert e.value.code == 2

    def test_unknown_command_is_a_usage_error(self):
        with pytest.raises(SystemExit) as e:
            main(["frobnicate"])
        assert e.value.code == 2

    def test_console_entry_point_runs(self, tmp_path):
        proc = subprocess.run(
            [sys.executable, "-m", "fedmix.cli", "synth", "--groups", "1",
             "--classes", "2", "--per-group", "3", "--image-size", "8",
             "--out", str(tmp_path / "d")],
            capture_output=True, text=True)
        assert proc.returncode == 0
        assert "3 samples" in proc.stdout
