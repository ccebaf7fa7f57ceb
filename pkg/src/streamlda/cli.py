"""Command-line driver: synth, split, fit, run, eval, calibrate, sweep.

Options resolve as CLI flag > config file > built-in default; the config file
is flat ``key=value`` text with the same names as the long flags. Every
command echoes its resolved configuration so runs are reproducible from the
log alone. Report paths get their delimited tables and (unless disabled)
rendered figures written alongside.
"""

from __future__ import annotations

import argparse
import json
import sys
import time
from pathlib import Path

from . import engine, fileio, metrics, report, scoring, streams
from .gaussian import fit_initial

EXIT_OK = 0
EXIT_UNEXPECTED = 1
EXIT_USAGE = 2
EXIT_MISSING_FILE = 3
EXIT_FORMAT = 4
EXIT_CHECKSUM = 5
EXIT_VERSION = 6
EXIT_DIMENSION = 7
EXIT_DEGENERATE = 8
EXIT_ORACLE = 9

SPLIT_FILES = {
    "id_train": "id_train.emb",
    "id_app": "id_app.emb",
    "ood_app": "ood_app.emb",
    "id_cal": "id_cal.emb",
    "ood_cal": "ood_cal.emb",
    "test": "test.emb",
}
MANIFEST_FILE = "manifest.json"


class UsageError(ValueError):
    """Bad flag combination or malformed config."""


def _load_config(path: str | None) -> dict[str, str]:
    if path is None:
        return {}
    p = Path(path)
    if not p.exists():
        raise FileNotFoundError(f"config file not found: {p}")
    try:
        return report.parse_kv(p.read_text(encoding="utf-8"))
    except ValueError as exc:
        raise UsageError(f"malformed config {p}: {exc}") from exc


def _resolve(args, config: dict[str, str], name: str, default, cast):
    """flag > config > default; echoes nothing by itself."""
    flag = getattr(args, name, None)
    if flag is not None:
        return flag
    if name in config:
        raw = config[name]
        try:
            if cast is bool:
                return raw.lower() in ("1", "true", "yes", "on")
            return cast(raw)
        except ValueError as exc:
            raise UsageError(f"config key {name}={raw!r}: {exc}") from exc
    return default


def _echo(resolved: dict) -> None:
    for key in sorted(resolved):
        print(f"config {key}={resolved[key]}")


def _require_file(path) -> Path:
    p = Path(path)
    if not p.exists():
        raise FileNotFoundError(f"input file not found: {p}")
    return p


def _read_embeddings(path) -> streams.LabeledEmbeddingSet:
    return fileio.read_embeddings(_require_file(path))


def _load_split_dir(split_dir) -> tuple[dict, Path]:
    d = Path(split_dir)
    manifest_path = d / MANIFEST_FILE
    if not manifest_path.exists():
        raise FileNotFoundError(f"split manifest not found: {manifest_path}")
    return json.loads(manifest_path.read_text(encoding="utf-8")), d


def _build_stream(args, config, manifest: dict, split_dir: Path):
    setup = _resolve(args, config, "setup", "random", str)
    tasks = _resolve(args, config, "tasks", 5, int)
    stream_seed = _resolve(args, config, "stream_seed", 0, int)
    pool = streams.concat_sets(
        _read_embeddings(split_dir / SPLIT_FILES["id_app"]),
        _read_embeddings(split_dir / SPLIT_FILES["ood_app"]),
    )
    if setup == "random":
        stream = streams.stream_from_pool(pool, stream_seed, "random")
    elif setup == "class-incremental":
        stream = streams.class_incremental_from_pool(
            pool, manifest["ood_classes"], tasks, stream_seed
        )
    else:
        raise UsageError(f"unknown setup {setup!r}")
    resolved = {"setup": setup, "stream_seed": stream_seed}
    if setup == "class-incremental":
        resolved["tasks"] = tasks
    return stream, resolved


def _method_from(args, config) -> tuple[scoring.ScoreMethod, dict]:
    kind_name = _resolve(args, config, "method", "md", str).lower()
    try:
        kind = scoring.ScoreKind(kind_name)
    except ValueError:
        raise UsageError(f"unknown method {kind_name!r} (expected md or rmd)") from None
    default = (
        scoring.DEFAULT_MD_THRESHOLD
        if kind is scoring.ScoreKind.MD
        else scoring.DEFAULT_RMD_THRESHOLD
    )
    threshold = _resolve(args, config, "threshold", default, float)
    use_emerging = _resolve(args, config, "emerging", True, bool)
    method = scoring.ScoreMethod(kind, threshold, use_emerging)
    return method, {
        "method": kind.value,
        "threshold": threshold,
        "emerging": use_emerging,
    }


def _figures_enabled(args, config) -> bool:
    return _resolve(args, config, "figures", True, bool)


def cmd_synth(args) -> int:
    config = _load_config(args.config)
    resolved = {
        "classes": _resolve(args, config, "classes", 40, int),
        "dim": _resolve(args, config, "dim", 32, int),
        "per_class": _resolve(args, config, "per_class", 250, int),
        "spread": _resolve(args, config, "spread", 12.0, float),
        "cov": _resolve(args, config, "cov", 1.0, float),
        "seed": _resolve(args, config, "seed", 0, int),
        "out": args.out,
    }
    _echo(resolved)
    dataset = streams.synth_generate(
        num_classes=resolved["classes"],
        dim=resolved["dim"],
        samples_per_class=resolved["per_class"],
        spread=resolved["spread"],
        covariance=resolved["cov"],
        seed=resolved["seed"],
    )
    fileio.write_embeddings(args.out, dataset)
    print(f"wrote {len(dataset)} embeddings (dim {dataset.dim}) to {args.out}")
    return EXIT_OK


def cmd_split(args) -> int:
    config = _load_config(args.config)
    spec = streams.SplitSpec(
        seed=_resolve(args, config, "seed", 0, int),
        id_class_fraction=_resolve(args, config, "id_fraction", 0.5, float),
        app_per_class=_resolve(args, config, "app_per_class", 50, int),
        train_per_class=_resolve(args, config, "train_per_class", 450, int),
        cal_per_class=_resolve(args, config, "cal_per_class", 0, int),
    )
    resolved = {
        "embeddings": args.embeddings,
        "out_dir": args.out_dir,
        "seed": spec.seed,
        "id_fraction": spec.id_class_fraction,
        "train_per_class": spec.train_per_class,
        "app_per_class": spec.app_per_class,
        "cal_per_class": spec.cal_per_class,
        "test": args.test,
    }
    _echo(resolved)

    dataset = _read_embeddings(args.embeddings)
    test = _read_embeddings(args.test) if args.test else None
    result = streams.split(dataset, spec, test=test)

    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    fileio.write_embeddings(out / SPLIT_FILES["id_train"], result.id_train)
    fileio.write_embeddings(out / SPLIT_FILES["id_app"], result.id_app)
    fileio.write_embeddings(out / SPLIT_FILES["ood_app"], result.ood_app)
    fileio.write_embeddings(out / SPLIT_FILES["test"], result.test)
    if result.id_cal is not None:
        fileio.write_embeddings(out / SPLIT_FILES["id_cal"], result.id_cal)
        fileio.write_embeddings(out / SPLIT_FILES["ood_cal"], result.ood_cal)
    (out / MANIFEST_FILE).write_text(
        json.dumps(result.manifest(), indent=2, sort_keys=True) + "\n", encoding="utf-8"
    )
    print(
        f"split {len(result.id_classes)} training / {len(result.ood_classes)} withheld "
        f"classes into {out}"
    )
    return EXIT_OK


def cmd_fit(args) -> int:
    config = _load_config(args.config)
    ridge = _resolve(args, config, "ridge", 1e-4, float)
    th = _resolve(args, config, "th", engine.DEFAULT_PROMOTION_THRESHOLD, int)
    resolved = {"train": args.train, "out": args.out, "ridge": ridge, "th": th}
    _echo(resolved)

    train = _read_embeddings(args.train)
    protos, model, background = fit_initial(train.vectors, train.labels, ridge=ridge)
    registry = engine.ClassRegistry(model, background, protos, th=th)
    fileio.write_snapshot(args.out, engine.snapshot(registry))
    print(
        f"fitted {len(protos)} classes, dim {model.dim}, "
        f"{len(train)} samples; snapshot -> {args.out}"
    )
    return EXIT_OK


def cmd_run(args) -> int:
    config = _load_config(args.config)
    method, method_resolved = _method_from(args, config)
    manifest, split_dir = _load_split_dir(args.split_dir)
    stream, stream_resolved = _build_stream(args, config, manifest, split_dir)
    th_override = _resolve(args, config, "th", None, int)
    figures = _figures_enabled(args, config)

    snap = fileio.read_snapshot(_require_file(args.model))
    if th_override is not None:
        import dataclasses

        snap = dataclasses.replace(snap, th=th_override)
    registry = engine.restore(snap)

    test_path = args.test or (
        split_dir / SPLIT_FILES["test"]
        if (split_dir / SPLIT_FILES["test"]).exists()
        else None
    )
    test = _read_embeddings(test_path) if test_path else None

    resolved = {
        "model": args.model,
        "split_dir": str(split_dir),
        "report": args.report,
        "out_model": args.out_model,
        "th": registry.th,
        "test": str(test_path) if test_path else None,
        "figures": figures,
        **method_resolved,
        **stream_resolved,
    }
    _echo(resolved)

    oracle = stream.oracle()
    started = time.perf_counter()
    outcomes = engine.run_stream(registry, stream.items(), oracle, method)
    elapsed = time.perf_counter() - started

    boundaries = stream.task_boundaries if len(stream.task_boundaries) > 1 else ()
    run_report = metrics.build_report(
        outcomes,
        registry,
        test=test,
        task_boundaries=boundaries,
        manifest={"stream": stream.manifest(), "split": manifest},
    )

    report_path = Path(args.report)
    report.write_text(report_path, report.render_report(run_report, context=resolved))
    outcomes_path = args.outcomes or report_path.with_suffix(".outcomes.tsv")
    report.write_text(outcomes_path, report.outcomes_table(outcomes))
    if run_report.task_checkpoints:
        report.write_text(
            report_path.with_suffix(".tasks.tsv"),
            report.checkpoints_table(run_report.task_checkpoints),
        )
    if figures:
        from . import plots

        plots.save_run_figure(
            outcomes, report_path.with_suffix(".png"), stream.task_boundaries
        )

    if args.out_model:
        fileio.write_snapshot(args.out_model, engine.snapshot(registry))

    per_sample_ms = 1000.0 * elapsed / max(1, len(outcomes))
    print(
        f"processed {len(outcomes)} samples in {elapsed:.2f}s "
        f"({per_sample_ms:.3f} ms/sample), {run_report.asks} oracle queries, "
        f"f_score={run_report.f_score:.4f}"
    )
    if run_report.total_accuracy is not None:
        print(f"total_accuracy={run_report.total_accuracy:.4f}")
    return EXIT_OK


def cmd_eval(args) -> int:
    config = _load_config(args.config)
    figures = _figures_enabled(args, config)
    resolved = {
        "model": args.model,
        "test": args.test,
        "report": args.report,
        "figures": figures,
    }
    _echo(resolved)

    registry = engine.restore(fileio.read_snapshot(_require_file(args.model)))
    test = _read_embeddings(args.test)
    acc = metrics.evaluate_accuracy(registry, test)

    report_path = Path(args.report)
    report.write_text(report_path, report.render_accuracy(acc, context=resolved))
    if figures:
        from . import plots

        plots.save_accuracy_figure(acc, report_path.with_suffix(".png"))
    print(
        f"total={acc.total:.4f} id={acc.id_accuracy:.4f} ood={acc.ood_accuracy:.4f} "
        f"over {acc.n_total} samples"
    )
    return EXIT_OK


def cmd_calibrate(args) -> int:
    config = _load_config(args.config)
    method, method_resolved = _method_from(args, config)
    manifest, split_dir = _load_split_dir(args.split_dir)
    stream_seed = _resolve(args, config, "stream_seed", 0, int)
    n_candidates = _resolve(args, config, "candidates", 21, int)
    resolved = {
        "model": args.model,
        "split_dir": str(split_dir),
        "stream_seed": stream_seed,
        "candidates": n_candidates,
        "out_table": args.out_table,
        **method_resolved,
    }
    _echo(resolved)

    cal_id = split_dir / SPLIT_FILES["id_cal"]
    cal_ood = split_dir / SPLIT_FILES["ood_cal"]
    if not cal_id.exists() or not cal_ood.exists():
        raise FileNotFoundError(
            f"{split_dir} has no calibration slice; re-split with cal_per_class > 0"
        )
    pool = streams.concat_sets(_read_embeddings(cal_id), _read_embeddings(cal_ood))
    stream = streams.stream_from_pool(pool, stream_seed, "calibration")

    snap = fileio.read_snapshot(_require_file(args.model))
    best, rows = metrics.calibrate_threshold(
        snap,
        stream,
        stream.oracle(),
        method.kind,
        use_emerging=method.use_emerging,
        n_candidates=n_candidates,
    )
    if args.out_table:
        report.write_text(args.out_table, report.calibration_table(rows))
    print(f"best_threshold={best!r}")
    return EXIT_OK


def cmd_sweep(args) -> int:
    config = _load_config(args.config)
    method, method_resolved = _method_from(args, config)
    manifest, split_dir = _load_split_dir(args.split_dir)
    stream, stream_resolved = _build_stream(args, config, manifest, split_dir)
    figures = _figures_enabled(args, config)
    th_values = [
        int(v)
        for v in str(_resolve(args, config, "th_values", "10,20,30,40,50", str)).split(",")
    ]

    test_path = args.test or split_dir / SPLIT_FILES["test"]
    test = _read_embeddings(test_path)

    resolved = {
        "model": args.model,
        "split_dir": str(split_dir),
        "th_values": ",".join(str(v) for v in th_values),
        "out_table": args.out_table,
        "test": str(test_path),
        "figures": figures,
        **method_resolved,
        **stream_resolved,
    }
    _echo(resolved)

    snap = fileio.read_snapshot(_require_file(args.model))
    rows = metrics.promotion_threshold_sweep(
        snap, stream, stream.oracle(), method, test, th_values=th_values
    )
    table_path = Path(args.out_table)
    report.write_text(table_path, report.sweep_table(rows))
    if figures:
        from . import plots

        plots.save_sweep_figure(rows, table_path.with_suffix(".png"))
    for row in rows:
        print(
            f"th={row.th} f_score={row.f_score:.4f} asks={row.asks} "
            f"total={row.total_accuracy:.4f} id={row.id_accuracy:.4f} "
            f"ood={row.ood_accuracy:.4f}"
        )
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="streamlda",
        description=(
            "Streaming nearest-mean classification with online novelty "
            "detection and incremental class learning."
        ),
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def add_common(p: argparse.ArgumentParser) -> None:
        p.add_argument("--config", help="flat key=value config file")

    p = sub.add_parser("synth", help="generate a synthetic embedding file")
    add_common(p)
    p.add_argument("--out", required=True)
    p.add_argument("--classes", type=int)
    p.add_argument("--dim", type=int)
    p.add_argument("--per-class", dest="per_class", type=int)
    p.add_argument("--spread", type=float)
    p.add_argument("--cov", type=float)
    p.add_argument("--seed", type=int)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("split", help="split an embedding file into train/stream/test")
    add_common(p)
    p.add_argument("--embeddings", required=True)
    p.add_argument("--out-dir", dest="out_dir", required=True)
    p.add_argument("--test", help="held-out test embeddings used verbatim")
    p.add_argument("--seed", type=int)
    p.add_argument("--id-fraction", dest="id_fraction", type=float)
    p.add_argument("--train-per-class", dest="train_per_class", type=int)
    p.add_argument("--app-per-class", dest="app_per_class", type=int)
    p.add_argument("--cal-per-class", dest="cal_per_class", type=int)
    p.set_defaults(func=cmd_split)

    p = sub.add_parser("fit", help="fit the initial model from training embeddings")
    add_common(p)
    p.add_argument("--train", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--ridge", type=float)
    p.add_argument("--th", type=int)
    p.set_defaults(func=cmd_fit)

    p = sub.add_parser("run", help="stream the application data through a model")
    add_common(p)
    p.add_argument("--model", required=True)
    p.add_argument("--split-dir", dest="split_dir", required=True)
    p.add_argument("--report", required=True)
    p.add_argument("--out-model", dest="out_model")
    p.add_argument("--outcomes")
    p.add_argument("--test")
    p.add_argument("--setup", choices=["random", "class-incremental"])
    p.add_argument("--tasks", type=int)
    p.add_argument("--stream-seed", dest="stream_seed", type=int)
    p.add_argument("--method", choices=["md", "rmd"])
    p.add_argument("--threshold", type=float)
    p.add_argument("--th", type=int, help="override the snapshot promotion threshold")
    p.add_argument("--emerging", action=argparse.BooleanOptionalAction, default=None)
    p.add_argument("--figures", action=argparse.BooleanOptionalAction, default=None)
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("eval", help="closed-set accuracy of a snapshot on a test file")
    add_common(p)
    p.add_argument("--model", required=True)
    p.add_argument("--test", required=True)
    p.add_argument("--report", required=True)
    p.add_argument("--figures", action=argparse.BooleanOptionalAction, default=None)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("calibrate", help="pick a confidence cutoff on held-out data")
    add_common(p)
    p.add_argument("--model", required=True)
    p.add_argument("--split-dir", dest="split_dir", required=True)
    p.add_argument("--method", choices=["md", "rmd"])
    p.add_argument("--stream-seed", dest="stream_seed", type=int)
    p.add_argument("--candidates", type=int)
    p.add_argument("--out-table", dest="out_table")
    p.add_argument("--emerging", action=argparse.BooleanOptionalAction, default=None)
    p.set_defaults(func=cmd_calibrate)

    p = sub.add_parser("sweep", help="replay a stream across promotion thresholds")
    add_common(p)
    p.add_argument("--model", required=True)
    p.add_argument("--split-dir", dest="split_dir", required=True)
    p.add_argument("--out-table", dest="out_table", required=True)
    p.add_argument("--test")
    p.add_argument("--th-values", dest="th_values")
    p.add_argument("--setup", choices=["random", "class-incremental"])
    p.add_argument("--tasks", type=int)
    p.add_argument("--stream-seed", dest="stream_seed", type=int)
    p.add_argument("--method", choices=["md", "rmd"])
    p.add_argument("--threshold", type=float)
    p.add_argument("--emerging", action=argparse.BooleanOptionalAction, default=None)
    p.add_argument("--figures", action=argparse.BooleanOptionalAction, default=None)
    p.set_defaults(func=cmd_sweep)

    return parser


_ERROR_CODES: list[tuple[type[BaseException], int]] = [
    (UsageError, EXIT_USAGE),
    (fileio.ChecksumError, EXIT_CHECKSUM),
    (fileio.VersionMismatchError, EXIT_VERSION),
    (fileio.DimensionError, EXIT_DIMENSION),
    (fileio.BadMagicError, EXIT_FORMAT),
    (fileio.FileFormatError, EXIT_FORMAT),
    (FileNotFoundError, EXIT_MISSING_FILE),
    (engine.OracleQueryError, EXIT_ORACLE),
]


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except Exception as exc:  # map to documented exit codes
        from .gaussian import FactorizationError

        for klass, code in _ERROR_CODES:
            if isinstance(exc, klass):
                print(f"error: {exc}", file=sys.stderr)
                return code
        if isinstance(exc, FactorizationError):
            print(f"error: {exc}", file=sys.stderr)
            return EXIT_DEGENERATE
        if isinstance(exc, ValueError):
            print(f"error: {exc}", file=sys.stderr)
            return EXIT_USAGE
        raise


if __name__ == "__main__":
    sys.exit(main())
