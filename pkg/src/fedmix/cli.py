"""Command-line entry points.

Subcommands: ``synth`` (generate a dataset directory), ``partition`` (shard
a dataset and report skew), ``run`` (execute an experiment from a JSON
config), ``report`` (summarize round logs into tables), and ``gradcheck``
(run the gradient verification suite). Exit codes: 0 success, 1 validation
or check failure, 2 usage error.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from .errors import FedmixError, UsageError


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="fedmix",
        description="Deterministic desk-scale federated learning simulator.")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate a synthetic dataset directory")
    p.add_argument("--groups", type=int, required=True)
    p.add_argument("--classes", type=int, required=True)
    p.add_argument("--per-group", type=int, required=True,
                   help="mean samples per group")
    p.add_argument("--image-size", type=int, required=True)
    p.add_argument("--channels", type=int, default=3)
    p.add_argument("--label-alpha", type=float, default=None,
                   help="Dirichlet concentration; omit for identical groups")
    p.add_argument("--drift", type=float, default=0.0)
    p.add_argument("--quantity-exponent", type=float, default=0.0)
    p.add_argument("--mean-positives", type=float, default=2.0)
    p.add_argument("--noise", type=float, default=0.5)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--structure-seed", type=int, default=None)
    p.add_argument("--out", required=True)

    p = sub.add_parser("partition", help="shard a dataset and measure skew")
    p.add_argument("--data", required=True, help="dataset directory")
    p.add_argument("--scheme", choices=("ds1", "ds2"), required=True)
    p.add_argument("--clients", type=int, default=7, help="ds1 client count")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True, help="output JSON path")

    p = sub.add_parser("run", help="run an experiment from a JSON config")
    p.add_argument("--config", required=True)
    p.add_argument("--data", required=True, help="training dataset directory")
    p.add_argument("--test-data", required=True, help="test dataset directory")
    p.add_argument("--shards", default=None,
                   help="precomputed shards JSON (from `partition`)")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--checkpoints", action="store_true",
                   help="write a parameter blob per round")

    p = sub.add_parser("report", help="summarize round logs into tables")
    p.add_argument("--in", dest="inputs", nargs="+", required=True,
                   help="rounds.jsonl paths")
    p.add_argument("--format", choices=("csv", "md", "text"), default="text")
    p.add_argument("--pivot", action="store_true",
                   help="add an algo x arch by partition micro-F1 table")
    p.add_argument("--out", default=None, help="write tables here instead of stdout")

    p = sub.add_parser("gradcheck", help="run the gradient verification suite")
    p.add_argument("--primitives-only", action="store_true")
    p.add_argument("--threshold", type=float, default=None,
                   help="override the pass threshold")
    return parser


def _cmd_synth(args) -> int:
    from .data import SynthSpec, save_dataset, synth_generate
    spec = SynthSpec(
        n_groups=args.groups, n_classes=args.classes,
        samples_per_group=args.per_group, image_size=args.image_size,
        channels=args.channels, label_alpha=args.label_alpha,
        drift_strength=args.drift, quantity_exponent=args.quantity_exponent,
        mean_positives=args.mean_positives, noise_scale=args.noise,
        structure_seed=args.structure_seed)
    dataset = synth_generate(spec, args.seed)
    save_dataset(dataset, args.out)
    print(f"wrote {len(dataset)} samples, {dataset.n_classes} classes -> {args.out}")
    return 0


def _cmd_partition(args) -> int:
    from .data import load_dataset
    from .partition import partition_ds1, partition_ds2, skew_report
    data_dir = Path(args.data)
    if not data_dir.exists():
        raise UsageError(f"{data_dir}: not found")
    dataset = load_dataset(data_dir)
    if args.scheme == "ds1":
        shards = partition_ds1(dataset, args.clients, args.seed)
    else:
        shards = partition_ds2(dataset)
    report = skew_report(dataset, shards)
    payload = {
        "scheme": args.scheme,
        "seed": args.seed,
        "clients": len(shards),
        "shards": [{"client_id": s.client_id, "indices": list(s.indices)}
                   for s in shards],
        "skew": report.to_dict(),
    }
    with open(args.out, "w") as f:
        json.dump(payload, f, sort_keys=True)
        f.write("\n")
    print(f"{len(shards)} shards (sizes {list(report.shard_sizes)}), "
          f"mean JS {report.mean_js:.6g}, size Gini {report.size_gini:.6g} "
          f"-> {args.out}")
    return 0


def _cmd_run(args) -> int:
    from .data import load_dataset
    from .engine import ExperimentConfig, run_experiment
    from .params import save_file
    from .partition import ClientShard
    from .report import write_records_jsonl

    config_path = Path(args.config)
    if not config_path.is_file():
        raise UsageError(f"{config_path}: not found")
    config = ExperimentConfig.from_json(config_path.read_text())
    config.validate()
    for d in (args.data, args.test_data):
        if not Path(d).exists():
            raise UsageError(f"{d}: not found")
    train_set = load_dataset(args.data)
    test_set = load_dataset(args.test_data)

    shards = None
    if args.shards:
        shards_path = Path(args.shards)
        if not shards_path.is_file():
            raise UsageError(f"{shards_path}: not found")
        with open(shards_path) as f:
            payload = json.load(f)
        shards = [ClientShard(s["client_id"], tuple(s["indices"]))
                  for s in payload["shards"]]

    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)

    states = []

    def on_round(record, state):
        print(f"round {record.round}: micro_f1 {record.micro_f1:.6g} "
              f"macro_f1 {record.macro_f1:.6g} test_bce {record.test_bce:.6g}")
        if args.checkpoints:
            states.append((record.round, state.global_params))

    records = run_experiment(config, train_set, test_set, shards=shards,
                             on_round=on_round)
    write_records_jsonl(records, out / "rounds.jsonl")
    if args.checkpoints:
        for rnd, ps in states:
            save_file(ps, out / f"round_{rnd:03d}.fmps", config.precision)

    last = records[-1]
    total_wall = sum(sum(cs["wall_seconds"] for cs in r.client_stats)
                     for r in records)
    summary = {
        "config": config.to_dict(),
        "rounds_completed": len(records),
        "final_micro_f1": last.micro_f1,
        "final_macro_f1": last.macro_f1,
        "final_test_bce": last.test_bce,
        "param_count": last.param_count,
        "bytes_total_per_round": last.bytes_total,
        "total_local_train_seconds": total_wall,
    }
    with open(out / "summary.json", "w") as f:
        json.dump(summary, f, indent=2, sort_keys=True)
        f.write("\n")
    print(f"final micro_f1 {last.micro_f1:.6g} -> {out / 'rounds.jsonl'}")
    return 0


def _cmd_report(args) -> int:
    from .report import load_run, pivot_table, runs_table
    summaries = []
    for path in args.inputs:
        if not Path(path).is_file():
            raise UsageError(f"{path}: not found")
        summaries.append(load_run(path))
    text = runs_table(summaries, args.format)
    if args.pivot:
        text += "\n" + pivot_table(summaries, args.format)
    if args.out:
        Path(args.out).write_text(text)
        print(f"wrote {args.out}")
    else:
        sys.stdout.write(text)
    return 0


def _cmd_gradcheck(args) -> int:
    from .gradcheck import MODEL_TOL, PRIMITIVE_TOL, run_model_checks, \
        run_primitive_checks
    prim_tol = args.threshold if args.threshold is not None else PRIMITIVE_TOL
    results = run_primitive_checks(threshold=prim_tol)
    worst: dict[str, float] = {}
    for r in results:
        op = r.name.split("[")[0]
        worst[op] = max(worst.get(op, 0.0), r.max_rel_err)
    for op in sorted(worst):
        print(f"{op}: worst rel err {worst[op]:.3e}")
    if not args.primitives_only:
        model_tol = args.threshold if args.threshold is not None else MODEL_TOL
        model_results = run_model_checks(threshold=model_tol)
        for r in model_results:
            print(r)
        results = results + model_results
    failures = [r for r in results if not r.passed]
    if failures:
        print(f"{len(failures)} checks FAILED")
        for r in failures:
            print(r)
        return 1
    print(f"all {len(results)} gradient checks passed")
    return 0


_COMMANDS = {
    "synth": _cmd_synth,
    "partition": _cmd_partition,
    "run": _cmd_run,
    "report": _cmd_report,
    "gradcheck": _cmd_gradcheck,
}


def main(argv=None) -> int:
    parser = _build_parser()
    args = parser.parse_args(argv)
    try:
        return _COMMANDS[args.command](args)
    except UsageError as e:
        print(f"error: {e}", file=sys.stderr)
        return 2
    except FedmixError as e:
        print(f"error: {e}", file=sys.stderr)
        return 1


def entry() -> None:
    sys.exit(main())


if __name__ == "__main__":
    entry()
