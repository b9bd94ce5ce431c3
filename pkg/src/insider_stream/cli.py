"""Command-line entry point: featurize, detect, baseline, evaluate, synth, gradcheck.

Exit codes: 0 ok, 1 data error, 2 usage error (bad flags, missing files,
schema mismatch). Defaults may come from a JSON config file given with
``--config`` or the ``INSIDER_STREAM_CONFIG`` environment variable; its
top-level keys are sections named after subcommands.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import logging
import os
import sys
import warnings
from dataclasses import asdict, dataclass, field
from datetime import date
from pathlib import Path

from insider_stream import __version__
from insider_stream.baselines import BaselineConfig, baseline_stream
from insider_stream.eval import (EvalError, evaluate, load_labels, read_records, write_bands_csv,
                                 write_recall_csv, write_summary_json)
from insider_stream.features import (SchemaError, aggregate, load_schema, read_feature_csv,
                                     write_feature_csv)
from insider_stream.ingest import IngestError, find_source_files, open_stream, weekday_filter
from insider_stream.model import CheckpointError, Model, ModelConfig, check_gradients
from insider_stream.synth import SynthConfig, SynthError, emit_raw_logs, generate, plan_injections, summary_table
from insider_stream.trainer import OnlineTrainer

logger = logging.getLogger("insider_stream")

CONFIG_ENV = "INSIDER_STREAM_CONFIG"
MANIFEST = "manifest.json"
EXIT_OK, EXIT_DATA, EXIT_USAGE = 0, 1, 2


class UsageError(Exception):
    pass


@dataclass
class RunManifest:
    command: str
    config: dict
    seed: int | None = None
    schema_hash: str | None = None
    inputs: dict = field(default_factory=dict)  # path -> sha256
    version: str = __version__
    threads: int = 1

    def write(self, out_dir):
        path = Path(out_dir) / MANIFEST
        path.write_text(json.dumps(asdict(self), indent=2, sort_keys=True) + "\n")
        return path

    @classmethod
    def read(cls, out_dir):
        return cls(**json.loads((Path(out_dir) / MANIFEST).read_text()))


def file_digest(path):
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for block in iter(lambda: fh.read(1 << 20), b""):
            h.update(block)
    return h.hexdigest()


def _digests(paths):
    return {str(p): file_digest(p) for p in sorted(map(str, paths))}


def _thread_count():
    for var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS"):
        if os.environ.get(var, "").isdigit():
            return int(os.environ[var])
    return os.cpu_count() or 1


def _require(path, what="file"):
    p = Path(path)
    if not p.exists():
        raise UsageError(f"{what} not found: {p}")
    return p


def _out_dir(path):
    p = Path(path)
    p.mkdir(parents=True, exist_ok=True)
    return p


def _day_range(text):
    if text is None:
        return None
    try:
        lo, hi = (int(v) for v in text.split(":"))
    except ValueError:
        raise argparse.ArgumentTypeError(f"day range must look like LO:HI, got {text!r}")
    if lo > hi:
        raise argparse.ArgumentTypeError(f"empty day range {text!r}")
    return lo, hi


def _origin(text):
    try:
        return date.fromisoformat(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"origin must be YYYY-MM-DD, got {text!r}")


def _on_off(text):
    if text not in ("on", "off"):
        raise argparse.ArgumentTypeError("expected on or off")
    return text == "on"


def _schema(args):
    if args.schema:
        _require(args.schema, "schema")
    return load_schema(args.schema)


def _log_files(paths):
    files = []
    for p in map(Path, paths):
        _require(p, "log path")
        files.extend(find_source_files(p) if p.is_dir() else [p])
    if not files:
        raise UsageError("no source log files found")
    return files


def _log_days(args, schema):
    files = _log_files(args.logs)
    folder = Path(args.logs[0]) if Path(args.logs[0]).is_dir() else None
    directory = args.directory or (folder / "LDAP.csv" if folder and (folder / "LDAP.csv").exists() else None)
    decoys = args.decoys or (folder / "decoy_file.csv" if folder and (folder / "decoy_file.csv").exists() else ())
    stream = open_stream(files, directory=directory, on_error=args.on_error, decoys=decoys,
                         cardinalities=schema.cardinalities)
    if not args.all_days:
        stream = weekday_filter(stream)
    inputs = files + [p for p in (directory, decoys) if isinstance(p, (str, Path)) and p]
    return aggregate(stream, schema, origin=args.origin), inputs


def _write_jsonl(path, day_records):
    n = 0
    with open(path, "w") as fh:
        for records in day_records:
            for r in records:
                fh.write(r.to_json() + "\n")
                n += 1
    return n


def _input_days(args, schema):
    if bool(args.features) == bool(args.logs):
        raise UsageError("give exactly one of --features or --logs")
    if args.features:
        path = _require(args.features, "feature CSV")
        try:
            return read_feature_csv(path, schema), [path]
        except ValueError as exc:
            raise UsageError(str(exc))
    return _log_days(args, schema)


def _checked(days, schema):
    # surface a width mismatch as a usage error before any output is written
    it = iter(days)
    try:
        first = next(it, None)
    except ValueError as exc:
        if "count columns" not in str(exc):
            raise
        raise UsageError(str(exc))
    if first is not None and first[1] and len(first[1][0].counts) != schema.count_dim:
        raise UsageError(f"features have {len(first[1][0].counts)} counts, schema has {schema.count_dim}")

    def chain():
        if first is not None:
            yield first
        yield from it
    return chain()


def cmd_featurize(args):
    schema = _schema(args)
    out = _out_dir(args.out)
    days, inputs = _log_days(args, schema)
    n = write_feature_csv(out / "features.csv", days, schema)
    RunManifest("featurize", {"on_error": args.on_error, "all_days": args.all_days,
                              "origin": str(args.origin) if args.origin else None},
                schema_hash=schema.hash(), inputs=_digests(inputs), threads=_thread_count()).write(out)
    print(f"wrote {n} user-day rows to {out / 'features.csv'}")
    return EXIT_OK


def _model_config(args, schema):
    return ModelConfig(
        count_dim=schema.count_dim, categoricals=tuple(schema.categorical_specs),
        encoder=args.encoder, covariance=args.covariance, target_mode=args.target_mode,
        include_categoricals=args.categoricals, layers=args.layers, hidden_dim=args.hidden,
        bptt_window=args.bptt, batch_size=args.batch_size, learning_rate=args.lr, seed=args.seed)


def cmd_detect(args):
    schema = _schema(args)
    out = _out_dir(args.out)
    if args.resume:
        _require(args.resume, "checkpoint")
        try:
            trainer = OnlineTrainer.restore(args.resume, schema=schema, learn=not args.score_only,
                                            top_k=args.top_k)
        except CheckpointError as exc:
            raise UsageError(str(exc))
        config = trainer.model.config
    else:
        try:
            config = _model_config(args, schema)
        except ValueError as exc:
            raise UsageError(str(exc))
        trainer = OnlineTrainer(Model(config), schema=schema, ewma_alpha=args.ewma_alpha,
                                per_user_ewma=args.per_user_ewma, learn=not args.score_only,
                                top_k=args.top_k)
    days, inputs = _input_days(args, schema)
    n = _write_jsonl(out / "anomalies.jsonl", trainer.run(_checked(days, schema)))
    if args.checkpoint:
        trainer.checkpoint(args.checkpoint)
    if args.resume:
        inputs = list(inputs) + [args.resume]
    RunManifest("detect", {"model": config.to_dict(), "score_only": args.score_only,
                           "ewma_alpha": trainer.ewma_alpha, "per_user_ewma": trainer.per_user_ewma},
                seed=config.seed, schema_hash=schema.hash(), inputs=_digests(inputs),
                threads=_thread_count()).write(out)
    c = trainer.counters
    print(f"scored {n} user-days over {c.days} days ({c.updates} updates, {c.skipped_batches} skipped)")
    return EXIT_OK


def cmd_baseline(args):
    schema = _schema(args)
    out = _out_dir(args.out)
    try:
        cfg = BaselineConfig(kind=args.baseline, window=args.window, refresh=args.refresh,
                             min_history=args.min_history, k=args.k, n_trees=args.n_trees,
                             sample_size=args.sample_size, bootstrap=args.bootstrap,
                             seed=args.seed, top_k=args.top_k)
    except ValueError as exc:
        raise UsageError(str(exc))
    days, inputs = _input_days(args, schema)
    n = _write_jsonl(out / "anomalies.jsonl", baseline_stream(_checked(days, schema), cfg, schema))
    RunManifest("baseline", cfg.to_dict(), seed=cfg.seed, schema_hash=schema.hash(),
                inputs=_digests(inputs), threads=_thread_count()).write(out)
    print(f"scored {n} user-days with {cfg.kind}")
    return EXIT_OK


def cmd_evaluate(args):
    out = _out_dir(args.out)
    anomalies = _require(args.anomalies, "anomaly file")
    labels_path = _require(args.labels, "label file")
    labels = load_labels(labels_path, origin=args.origin)
    records = read_records(anomalies)
    _, curve, bands, summary = evaluate(records, labels, k=args.k, step=args.step,
                                        day_range=args.days)
    write_recall_csv(out / "recall.csv", curve)
    write_bands_csv(out / "bands.csv", bands)
    write_summary_json(out / "summary.json", summary)
    RunManifest("evaluate", {"k": args.k, "step": args.step,
                             "days": list(args.days) if args.days else None,
                             "origin": str(args.origin) if args.origin else None},
                inputs=_digests([anomalies, labels_path]), threads=_thread_count()).write(out)
    print(f"CR-{args.k} = {curve.cr:.4f} of {summary['max_cr']:g}; "
          f"mean labeled percentile {summary['mean_label_percentile']:.2f} "
          f"over {summary['n_labels']} labels")
    if summary["unmatched_labels"]:
        logger.warning("%d labels have no scored user-day", len(summary["unmatched_labels"]))
    return EXIT_OK


def cmd_synth(args):
    schema = _schema(args)
    out = _out_dir(args.out)
    try:
        base = SynthConfig(n_users=args.users, n_days=args.days, seed=args.seed,
                           weekend_activity=args.weekend_activity, schema=schema)
        injections = plan_injections(base, args.injections, seed=args.seed) if args.injections else ()
        cfg = SynthConfig.from_dict({**base.to_dict(), "injections": [i.to_dict() for i in injections]},
                                    schema=schema)
    except (ValueError, SynthError) as exc:
        raise UsageError(str(exc))
    data = generate(cfg)
    summary = emit_raw_logs(cfg, out, data)
    if args.features:
        write_feature_csv(out / "features.csv", data.days, schema)
    RunManifest("synth", cfg.to_dict(), seed=cfg.seed, schema_hash=schema.hash(),
                threads=_thread_count()).write(out)
    print(summary_table(summary))
    return EXIT_OK


def cmd_gradcheck(args):
    out = _out_dir(args.out) if args.out else None
    cats = (("a", 2), ("b", 3))
    rows, ok = [], True
    for seed in range(args.seed, args.seed + args.seeds):
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")  # gradient checks use deliberately tiny nets
            config = ModelConfig(count_dim=args.count_dim, categoricals=cats, encoder=args.encoder,
                                 covariance=args.covariance, include_categoricals=args.categoricals,
                                 layers=args.layers, hidden_dim=args.hidden, seed=seed)
        report = check_gradients(config, seed=seed, tolerance=args.tolerance)
        ok &= bool(report.passed)
        rows.append({"seed": seed, "max_error": float(report.max_error),
                     "worst_block": report.worst_block(), "passed": bool(report.passed)})
        print(f"seed {seed}: max rel error {report.max_error:.3e} ({report.worst_block()})"
              f" {'ok' if report.passed else 'FAIL'}")
    if out is not None:
        (out / "gradcheck.json").write_text(json.dumps(rows, indent=2) + "\n")
        RunManifest("gradcheck", {"encoder": args.encoder, "covariance": args.covariance,
                                  "categoricals": args.categoricals, "layers": args.layers,
                                  "hidden": args.hidden, "tolerance": args.tolerance},
                    seed=args.seed, threads=_thread_count()).write(out)
    return EXIT_OK if ok else EXIT_DATA


def _log_args(p):
    p.add_argument("--directory", help="user directory CSV (LDAP export)")
    p.add_argument("--decoys", help="decoy file list CSV")
    p.add_argument("--on-error", choices=("skip", "abort"), default="skip")
    p.add_argument("--all-days", action="store_true", help="keep weekend events")
    p.add_argument("--origin", type=_origin, help="date of day index 0 (default: first event)")


def _input_args(p):
    p.add_argument("--features", help="feature CSV from featurize")
    p.add_argument("--logs", nargs="+", help="raw log files or a release folder")
    _log_args(p)


def build_parser():
    parser = argparse.ArgumentParser(prog="insider-stream", description=__doc__.splitlines()[0])
    parser.add_argument("--config", default=os.environ.get(CONFIG_ENV),
                        help=f"JSON defaults file (env {CONFIG_ENV})")
    parser.add_argument("--schema", help="feature schema JSON (default: built-in)")
    parser.add_argument("-v", "--verbose", action="count", default=0)
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("featurize", help="raw logs to per-user daily feature CSV")
    p.add_argument("logs", nargs="+", help="log files or a release folder")
    _log_args(p)
    p.add_argument("-o", "--out", required=True)
    p.set_defaults(func=cmd_featurize)

    p = sub.add_parser("detect", help="online scoring and training")
    _input_args(p)
    p.add_argument("--encoder", choices=("dnn", "lstm"), default="dnn")
    p.add_argument("--covariance", choices=("identity", "diag"), default="diag")
    p.add_argument("--target-mode", choices=("same", "next"), default="same")
    p.add_argument("--categoricals", type=_on_off, default=False, metavar="on|off")
    p.add_argument("--layers", type=int, default=1)
    p.add_argument("--hidden", type=int, default=100)
    p.add_argument("--bptt", type=int, default=10, help="LSTM time steps to backpropagate over")
    p.add_argument("--batch-size", type=int, default=256)
    p.add_argument("--lr", type=float, default=0.01)
    p.add_argument("--ewma-alpha", type=float, default=0.02)
    p.add_argument("--per-user-ewma", action="store_true")
    p.add_argument("--top-k", type=int, default=10)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--score-only", action="store_true", help="score without learning")
    p.add_argument("--checkpoint", help="write the trainer state here at the end")
    p.add_argument("--resume", help="start from this checkpoint")
    p.add_argument("-o", "--out", required=True)
    p.set_defaults(func=cmd_detect)

    p = sub.add_parser("baseline", help="PCA or isolation forest scoring")
    _input_args(p)
    p.add_argument("--baseline", choices=("pca", "iforest"), default="pca")
    p.add_argument("--k", type=int, default=10, help="PCA components")
    p.add_argument("--n-trees", type=int, default=100)
    p.add_argument("--sample-size", type=int, default=256)
    p.add_argument("--bootstrap", action="store_true", help="iforest subsamples with replacement")
    p.add_argument("--window", type=int, default=60)
    p.add_argument("--refresh", type=int, default=10)
    p.add_argument("--min-history", type=int, default=10)
    p.add_argument("--top-k", type=int, default=10)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("-o", "--out", required=True)
    p.set_defaults(func=cmd_baseline)

    p = sub.add_parser("evaluate", help="recall curves, CR-k and percentile bands")
    p.add_argument("anomalies", help="anomaly JSONL")
    p.add_argument("labels", help="label CSV (user,day or user,date)")
    p.add_argument("--origin", type=_origin, help="date of day index 0, for dated labels")
    p.add_argument("--days", type=_day_range, metavar="LO:HI", help="evaluate these days only")
    p.add_argument("--k", type=int, default=1000)
    p.add_argument("--step", type=int, default=25)
    p.add_argument("-o", "--out", required=True)
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("synth", help="synthetic raw logs with injected threat days")
    p.add_argument("--users", type=int, default=200)
    p.add_argument("--days", type=int, default=120, help="weekdays")
    p.add_argument("--injections", type=int, default=12)
    p.add_argument("--weekend-activity", type=float, default=0.0)
    p.add_argument("--features", action="store_true", help="also write features.csv")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("-o", "--out", required=True)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("gradcheck", help="finite-difference gradient check")
    p.add_argument("--encoder", choices=("dnn", "lstm"), default="dnn")
    p.add_argument("--covariance", choices=("identity", "diag"), default="diag")
    p.add_argument("--categoricals", type=_on_off, default=False, metavar="on|off")
    p.add_argument("--layers", type=int, default=2)
    p.add_argument("--hidden", type=int, default=7)
    p.add_argument("--count-dim", type=int, default=3)
    p.add_argument("--seeds", type=int, default=20)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--tolerance", type=float, default=1e-4)
    p.add_argument("-o", "--out")
    p.set_defaults(func=cmd_gradcheck)
    return parser


def _config_defaults(parser, argv):
    pre, _ = parser.parse_known_args(argv)
    if not pre.config:
        return
    path = Path(pre.config)
    if not path.exists():
        raise UsageError(f"config not found: {path}")
    try:
        cfg = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise UsageError(f"{path}: {exc}")
    section = cfg.get(pre.command, {})
    sub = parser._subparsers._group_actions[0].choices[pre.command]
    known = {a.dest for a in sub._actions}
    unknown = set(section) - known
    if unknown:
        raise UsageError(f"{path}: unknown {pre.command} keys {sorted(unknown)}")
    sub.set_defaults(**section)


def main(argv=None):
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    try:
        _config_defaults(parser, argv)
        args = parser.parse_args(argv)
        logging.basicConfig(level=logging.WARNING - 10 * min(args.verbose, 2),
                            format="%(levelname)s %(name)s: %(message)s")
        return args.func(args)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (SchemaError, CheckpointError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (IngestError, EvalError, SynthError, ValueError, OSError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
