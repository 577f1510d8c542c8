"""Command-line entry point: ``inckmeans {fit,update,delete,bench}``.

Exit codes: 0 success, 1 usage error, 2 data error, 3 I/O error.
"""

from __future__ import annotations

import argparse
import csv
import json
import os
import sys
from pathlib import Path

import numpy as np

from . import bench as B
from .core import (
    FIRST_K_DISTINCT,
    ClusteringError,
    Metric,
    TieBreak,
    incremental_delete,
    incremental_insert,
    lloyd_fit,
)
from .ingest import DataFormatError, Dataset, load_dataset, parse_number
from .store import (
    MalformedModelError,
    ModelFileError,
    ModelNotFoundError,
    ModelWriteError,
    StoredModel,
    fingerprint,
    load_model,
    membership_fingerprint,
    save_model,
    timestamp,
)

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_IO = 0, 1, 2, 3
DEFAULT_DELTAS = "100,200,300,400,500,600"


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def default_registry() -> Path:
    env = os.environ.get("INCKMEANS_REGISTRY")
    if env:
        return Path(env)
    return Path.home() / ".cache" / "inckmeans" / "thresholds.json"


def _fmt(x) -> str:
    return f"{float(x):.6f}"


def _write_rows(out_dir, name, header, rows):
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    with (out / name).open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        w.writerows(rows)


def _means_rows(stored: StoredModel):
    return [[f"cluster{j}", c.member_count] + [_fmt(v) for v in c.centroid]
            for j, c in enumerate(stored.model.clusters)]


def _print_table(header, rows):
    widths = [max(len(str(r[i])) for r in [header] + rows) for i in range(len(header))]
    for r in [header] + rows:
        print("  ".join(str(v).ljust(w) for v, w in zip(r, widths)).rstrip())


def print_means(stored: StoredModel, out_dir=None):
    header = ["clusterid", "members"] + [f"{n} mean" for n in stored.attribute_names]
    rows = _means_rows(stored)
    _print_table(header, rows)
    if out_dir:
        _write_rows(out_dir, "cluster_means.csv",
                    ["clusterid", "member_count"] + [f"{n}_mean" for n in stored.attribute_names],
                    rows)


def print_parameters(stored: StoredModel, out_dir=None):
    m = stored.model
    header = ["clusternumber", "distancefunction", "clusteriteration", "squareError"]
    rows = [[m.k, m.metric.value, m.iterations, f"{m.square_error:.5f}"]]
    _print_table(header, rows)
    if out_dir:
        _write_rows(out_dir, "run_parameters.csv", header, rows)


def _ingest_kwargs(args, feature_columns=None):
    kw = {"has_header": not args.no_header, "skip_missing": args.skip_missing,
          "id_column": args.id_column}
    cols = feature_columns
    if cols is None and getattr(args, "features", None):
        cols = [c.strip() for c in args.features.split(",") if c.strip()]
    kw["feature_columns"] = cols
    return kw


def _load(path, args, feature_columns=None) -> Dataset:
    ds = load_dataset(path, **_ingest_kwargs(args, feature_columns))
    if ds.skipped:
        print(f"skipped {ds.skipped} rows with missing values", file=sys.stderr)
    return ds


def _centers(args, dimension):
    if not args.center:
        return FIRST_K_DISTINCT
    rows = []
    for spec in args.center:
        try:
            row = [parse_number(t) for t in spec.split(",")]
        except ValueError:
            raise UsageError(f"bad --center value {spec!r}") from None
        if len(row) != dimension:
            raise UsageError(f"--center {spec!r} has {len(row)} values, data has {dimension}")
        rows.append(row)
    if len(rows) != args.k:
        raise UsageError(f"{len(rows)} --center values given for k={args.k}")
    return np.array(rows)


def cmd_fit(args) -> int:
    if args.k < 1:
        raise UsageError("-k must be >= 1")
    ds = _load(args.data, args)
    init = _centers(args, ds.dimension)
    model = lloyd_fit(ds.X, args.k, init=init, metric=Metric.parse(args.metric),
                      max_iterations=args.max_iterations, ids=ds.ids,
                      tie_break=TieBreak.parse(args.tie_break))
    stored = StoredModel(
        model=model,
        attribute_names=list(ds.attribute_names),
        dataset_fingerprint=fingerprint(ds.attribute_names, ds.X),
        created_at=timestamp(),
        record_count=len(ds),
        labels=ds.label_map(),
        vectors=ds.lookup(),
    )
    save_model(stored, args.model_out)
    print_means(stored, args.out_dir)
    print()
    print_parameters(stored, args.out_dir)
    return EXIT_OK


def _read_registry(path: Path) -> dict:
    if not path.exists():
        return {}
    try:
        doc = json.loads(path.read_text(encoding="utf-8"))
    except json.JSONDecodeError:
        print(f"warning: ignoring unreadable threshold registry {path}", file=sys.stderr)
        return {}
    return doc if isinstance(doc, dict) else {}


def _registry_threshold(path: Path, fp: str):
    entry = _read_registry(path).get(fp)
    if not isinstance(entry, dict):
        return None
    for key in (B.Basis.WALL_TIME.value, B.Basis.DISTANCE_EVALS.value):
        if entry.get(key) is not None:
            return float(entry[key]), key
    return None


def _next_int_id(stored: StoredModel) -> int:
    ints = [r for c in stored.model.clusters for r in c.member_ids if isinstance(r, int)]
    return max(ints) + 1 if ints else 0


def cmd_update(args) -> int:
    stored = load_model(args.model)
    side_fp = membership_fingerprint(args.model)
    if side_fp is not None and side_fp != stored.dataset_fingerprint:
        msg = "membership file fingerprint does not match the model"
        if args.strict_fingerprint:
            raise DataFormatError(msg, args.model)
        print(f"warning: {msg}", file=sys.stderr)

    path = Path(args.new_data)
    if path.exists() and not path.read_text(encoding="utf-8").strip():
        ds = None
    else:
        cols = None if args.no_header else stored.attribute_names
        ds = _load(path, args, feature_columns=cols)
        if ds.dimension != stored.model.dimension:
            raise ClusteringError(
                f"dimension mismatch: new data has {ds.dimension}, model has "
                f"{stored.model.dimension}")
    if ds is None or len(ds) == 0:
        print("0 records assigned")
        return EXIT_OK

    if args.id_column:
        ids = list(ds.ids)
    else:
        start = _next_int_id(stored)
        ids = list(range(start, start + len(ds)))
    batch = list(zip(ids, ds.X))
    lookup = stored.vectors if args.update_means else None
    model, assignments = incremental_insert(batch, stored.model, args.update_means,
                                            data_lookup=lookup)

    rows = []
    for rid, lab, a in zip(ids, ds.labels, assignments):
        name = lab if lab is not None else str(rid)
        rows.append([name, a.cluster_index, _fmt(a.distance)])
        print(f"{name} -> cluster{a.cluster_index} (distance {a.distance:.6f})")
    print(f"{len(assignments)} records assigned")

    stored.model = model
    stored.inserted_since_fit += len(assignments)
    stored.vectors.update(batch)
    stored.labels.update({rid: lab for rid, lab in zip(ids, ds.labels) if lab is not None})
    save_model(stored, args.model)

    delta = B.delta_percent(stored.record_count, stored.record_count + stored.inserted_since_fit)
    print(f"δ = {delta:.1f}%")
    threshold = None
    if args.threshold is not None:
        threshold = args.threshold
    else:
        found = _registry_threshold(Path(args.registry or default_registry()),
                                    stored.dataset_fingerprint)
        if found is not None:
            threshold = found[0]
            print(f"threshold {threshold:.1f}% from benchmark ({found[1]})")
    if threshold is None:
        print("warning: no threshold configured (run `bench` or pass --threshold)",
              file=sys.stderr)
    else:
        print(B.advice(delta, threshold))
        if delta > threshold:
            print("advice: refit recommended")

    if args.out_dir:
        _write_rows(args.out_dir, "assignments.csv", ["record", "cluster", "distance"], rows)
    return EXIT_OK


def _resolve(stored: StoredModel, tokens):
    by_id = {str(r): r for c in stored.model.clusters for r in c.member_ids}
    by_label = {}
    for rid, lab in stored.labels.items():
        if str(rid) in by_id:
            by_label.setdefault(lab, []).append(rid)
    out = []
    for tok in tokens:
        if tok in by_id:
            out.append(by_id[tok])
        elif len(by_label.get(tok, [])) == 1:
            out.append(by_label[tok][0])
        elif tok in by_label:
            raise ClusteringError(f"label {tok!r} is ambiguous; delete by record id")
        else:
            raise ClusteringError(f"unknown record id or label: {tok!r}")
    return out


def cmd_delete(args) -> int:
    stored = load_model(args.model)
    ids = _resolve(stored, args.ids)
    if not ids:
        print("0 records deleted")
        return EXIT_OK
    missing = [r for r in ids if r not in stored.vectors]
    if missing:
        raise ClusteringError(f"no stored vector for record {missing[0]!r}")
    stored.model = incremental_delete(ids, stored.model, stored.vectors)
    for rid in ids:
        stored.vectors.pop(rid, None)
        stored.labels.pop(rid, None)
    save_model(stored, args.model)
    print(f"{len(ids)} records deleted")
    print_means(stored, args.out_dir)
    return EXIT_OK


def _parse_deltas(text: str):
    try:
        out = [int(t) for t in text.split(",") if t.strip()]
    except ValueError:
        raise UsageError(f"bad --deltas value {text!r}") from None
    if not out:
        raise UsageError("--deltas is empty")
    return out


def cmd_bench(args) -> int:
    if args.replay and args.data:
        raise UsageError("--replay and a data path are mutually exclusive")
    if not args.replay and not args.data:
        raise UsageError("a data path (or --replay) is required")

    fp = None
    if args.replay:
        series = B.load_replay(args.replay, base_size=args.replay_base)
    else:
        ds = _load(args.data, args)
        X = ds.X
        if args.base_size > len(ds):
            if not args.synthesize:
                raise B.BenchError(
                    f"base size {args.base_size} exceeds the {len(ds)} records in "
                    f"{args.data} (use --synthesize)")
            X = np.vstack([X, B.resample_with_noise(X, args.base_size - len(ds),
                                                    args.noise, args.seed + 1)])
        base = X[:args.base_size]
        fp = fingerprint(ds.attribute_names, base)
        extension = None
        if args.extension:
            ext = _load(args.extension, args, feature_columns=None if args.no_header
                        else ds.attribute_names)
            extension = ext.X
        config = B.BenchConfig(repetitions=args.repetitions, seed=args.seed, noise=args.noise,
                               max_iterations=args.max_iterations,
                               tie_break=TieBreak.parse(args.tie_break),
                               extension=extension)
        series = B.run_benchmark(base, _parse_deltas(args.deltas), args.k,
                                 Metric.parse(args.metric), config)

    estimates = [B.estimate_threshold(series, basis) for basis in B.Basis]
    for est in estimates:
        if series.has_basis(est.basis):
            print(B.describe(est, series))
        else:
            print(f"threshold ({est.basis.value}): n/a (no {est.basis.value} costs available)")
    if args.out_dir:
        B.emit_report(series, [e for e in estimates if series.has_basis(e.basis)],
                      args.out_dir, figures=not args.no_figures)
        print(f"report written to {args.out_dir}")

    if fp is not None:
        reg = Path(args.registry or default_registry())
        doc = _read_registry(reg)
        doc[fp] = {e.basis.value: e.crossover_percent for e in estimates}
        doc[fp]["created_at"] = timestamp()
        try:
            reg.parent.mkdir(parents=True, exist_ok=True)
            reg.write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n", encoding="utf-8")
        except OSError as exc:
            print(f"warning: could not update threshold registry {reg}: {exc}",
                  file=sys.stderr)
    return EXIT_OK


def _add_ingest_flags(p):
    p.add_argument("--no-header", action="store_true", help="CSV has no header row")
    p.add_argument("--features", help="comma-separated feature column names")
    p.add_argument("--id-column", help="column holding record ids")
    p.add_argument("--skip-missing", action="store_true",
                   help="drop rows with '?' feature values instead of failing")


def _add_fit_flags(p):
    p.add_argument("-k", type=int, default=5, help="number of clusters (default 5)")
    p.add_argument("--metric", choices=[m.value for m in Metric], default="euclidean")
    p.add_argument("--tie-break", choices=[t.value for t in TieBreak], default="lowest")
    p.add_argument("--max-iterations", type=int, default=100)


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="inckmeans",
                     description="Batch and incremental K-means with a result store.")
    sub = parser.add_subparsers(dest="command", parser_class=_Parser)
    sub.required = True

    p = sub.add_parser("fit", help="cluster a dataset and store the result")
    p.add_argument("data")
    _add_fit_flags(p)
    p.add_argument("--center", action="append",
                   help="explicit initial center, comma-separated; repeat k times")
    p.add_argument("--model-out", "-o", required=True)
    p.add_argument("--out-dir")
    _add_ingest_flags(p)
    p.set_defaults(func=cmd_fit)

    p = sub.add_parser("update", help="assign new records to a stored model")
    p.add_argument("model")
    p.add_argument("new_data")
    p.add_argument("--update-means", action="store_true",
                   help="move the receiving centroid to the running mean")
    p.add_argument("--threshold", type=float, help="growth percent above which to refit")
    p.add_argument("--registry", help="threshold registry written by `bench`")
    p.add_argument("--strict-fingerprint", action="store_true",
                   help="fail instead of warning on a fingerprint mismatch")
    p.add_argument("--out-dir")
    _add_ingest_flags(p)
    p.set_defaults(func=cmd_update)

    p = sub.add_parser("delete", help="remove records and recompute means")
    p.add_argument("model")
    p.add_argument("ids", nargs="*", help="record ids or labels")
    p.add_argument("--out-dir")
    p.set_defaults(func=cmd_delete)

    p = sub.add_parser("bench", help="full refit vs. incremental insert benchmark")
    p.add_argument("data", nargs="?")
    _add_fit_flags(p)
    p.add_argument("--base-size", type=int, default=1000)
    p.add_argument("--deltas", default=DEFAULT_DELTAS, help="comma-separated batch sizes")
    p.add_argument("--repetitions", type=int, default=5)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--noise", type=float, default=0.05)
    p.add_argument("--synthesize", action="store_true",
                   help="grow a small dataset to --base-size by noisy resampling")
    p.add_argument("--extension", help="file supplying the inserted records")
    p.add_argument("--replay", help="CSV of delta_percent,full_ms,incremental_ms")
    p.add_argument("--replay-base", type=int, default=1000)
    p.add_argument("--registry")
    p.add_argument("--out-dir")
    p.add_argument("--no-figures", action="store_true")
    _add_ingest_flags(p)
    p.set_defaults(func=cmd_bench)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return exc.code
    try:
        return args.func(args)
    except UsageError as exc:
        print(f"inckmeans {args.command}: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (ModelNotFoundError, ModelWriteError, FileNotFoundError, PermissionError) as exc:
        print(f"inckmeans {args.command}: {exc}", file=sys.stderr)
        return EXIT_IO
    except (ClusteringError, DataFormatError, MalformedModelError, B.BenchError) as exc:
        print(f"inckmeans {args.command}: {exc}", file=sys.stderr)
        return EXIT_DATA
    except (ModelFileError, OSError) as exc:
        print(f"inckmeans {args.command}: {exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
