"""Run-log summarization and table rendering.

Consumes round-record JSONL files (one JSON object per line) with their
sidecar ``summary.json`` metadata and renders accuracy/complexity tables as
CSV, Markdown, or aligned text. All numbers print with 6 significant digits
and output is byte-identical across repeated invocations.
"""

from __future__ import annotations

import csv
import io
import json
from dataclasses import dataclass
from pathlib import Path

from .errors import DataError


def sig6(x) -> str:
    if isinstance(x, bool) or not isinstance(x, (int, float)):
        return str(x)
    if isinstance(x, int):
        return str(x)
    return f"{x:.6g}"


def write_records_jsonl(records, path) -> None:
    with open(path, "w") as f:
        for r in records:
            d = r.to_dict() if hasattr(r, "to_dict") else r
            f.write(json.dumps(d, sort_keys=True))
            f.write("\n")


def read_records_jsonl(path) -> list[dict]:
    records = []
    with open(path) as f:
        for lineno, line in enumerate(f, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                records.append(json.loads(line))
            except json.JSONDecodeError as e:
                raise DataError(f"{path}:{lineno}: bad JSON record ({e})") from e
    if not records:
        raise DataError(f"{path}: no records")
    return records


@dataclass
class RunSummary:
    label: str
    algo: str
    arch: str
    partition: str
    rounds: int
    final_micro_f1: float
    final_macro_f1: float
    final_test_bce: float
    param_count: int
    bytes_total_per_round: int
    mean_round_seconds: float

    def to_dict(self) -> dict:
        return dict(self.__dict__)


def summarize_run(records: list[dict], meta: dict | None, label: str) -> RunSummary:
    """Fold one run's records (plus optional config metadata) into a row."""
    if not records:
        raise DataError("summarize_run: no records")
    last = records[-1]
    round_secs = [sum(cs.get("wall_seconds", 0.0) for cs in r.get("client_stats", []))
                  for r in records]
    meta = meta or {}
    model = meta.get("model", {})
    return RunSummary(
        label=label,
        algo=meta.get("algo", "?"),
        arch=model.get("arch", "?"),
        partition=meta.get("partition", {}).get("scheme", "?"),
        rounds=len(records),
        final_micro_f1=float(last["micro_f1"]),
        final_macro_f1=float(last["macro_f1"]),
        final_test_bce=float(last["test_bce"]),
        param_count=int(last["param_count"]),
        bytes_total_per_round=int(last["bytes_total"]),
        mean_round_seconds=sum(round_secs) / len(round_secs),
    )


def load_run(jsonl_path) -> RunSummary:
    """Read a rounds.jsonl and its sidecar summary.json (config echo)."""
    p = Path(jsonl_path)
    records = read_records_jsonl(p)
    meta = None
    sidecar = p.parent / "summary.json"
    if sidecar.is_file():
        with open(sidecar) as f:
            meta = json.load(f).get("config")
    label = p.parent.name if p.parent.name not in ("", ".") else p.stem
    return summarize_run(records, meta, label)


def render_table(headers: list[str], rows: list[list], fmt: str) -> str:
    """Render rows in csv, md, or aligned-text form; cells are formatted
    to 6 significant digits."""
    cells = [[sig6(c) for c in row] for row in rows]
    if fmt == "csv":
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(headers)
        w.writerows(cells)
        return buf.getvalue()
    if fmt == "md":
        lines = ["| " + " | ".join(headers) + " |",
                 "|" + "|".join(" --- " for _ in headers) + "|"]
        lines += ["| " + " | ".join(r) + " |" for r in cells]
        return "\n".join(lines) + "\n"
    if fmt == "text":
        widths = [max(len(headers[i]), *(len(r[i]) for r in cells)) if cells
                  else len(headers[i]) for i in range(len(headers))]
        def fmt_row(r):
            return "  ".join(s.ljust(widths[i]) for i, s in enumerate(r)).rstrip()
        lines = [fmt_row(headers), fmt_row(["-" * w for w in widths])]
        lines += [fmt_row(r) for r in cells]
        return "\n".join(lines) + "\n"
    raise DataError(f"unknown table format {fmt!r}")


RUN_TABLE_HEADERS = ["run", "algo", "arch", "partition", "rounds",
                     "micro_f1", "macro_f1", "test_bce", "params",
                     "bytes_per_round", "mean_round_seconds"]


def runs_table(summaries: list[RunSummary], fmt: str) -> str:
    """One row per run: accuracy plus complexity columns."""
    if not summaries:
        raise DataError("runs_table: no runs")
    rows = [[s.label, s.algo, s.arch, s.partition, s.rounds,
             s.final_micro_f1, s.final_macro_f1, s.final_test_bce,
             s.param_count, s.bytes_total_per_round, s.mean_round_seconds]
            for s in summaries]
    return render_table(RUN_TABLE_HEADERS, rows, fmt)


def pivot_table(summaries: list[RunSummary], fmt: str,
                metric: str = "final_micro_f1") -> str:
    """Rows algo x arch, one column per partition scheme; cells hold the
    chosen final metric (blank when that combination was not run)."""
    if not summaries:
        raise DataError("pivot_table: no runs")
    schemes = sorted({s.partition for s in summaries})
    keys = sorted({(s.algo, s.arch) for s in summaries})
    cell: dict[tuple, float] = {}
    for s in summaries:
        cell[(s.algo, s.arch, s.partition)] = getattr(s, metric)
    rows = []
    for algo, arch in keys:
        row = [algo, arch]
        for scheme in schemes:
            v = cell.get((algo, arch, scheme))
            row.append("" if v is None else v)
        rows.append(row)
    return render_table(["algo", "arch", *schemes], rows, fmt)
