"""Command-line entry point tying the pipeline together.

Subcommands: ``gen-data`` (synthetic/bundled datasets to CSV + manifest),
``train`` (CSV to .hcx container + JSONL training log), ``eval``
(classification + counterfactual quality report, table and JSON), ``explain``
(one-off counterfactual set for a single row), ``serve`` (HTTP service), and
``ablation`` (one model per loss configuration, compared on shared data).

Every artifact embeds the resolved config and seed that produced it; a rerun
with the same config and seed reproduces the same model hash and log. Exit
codes: 0 ok, 2 usage, 3 data error, 4 training divergence, 5 I/O. No
environment variables are consulted.
"""

from __future__ import annotations

import argparse
import dataclasses
import hashlib
import json
import sys
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .counterfact import annotate_arrays, explain, generate_arrays
from .dataio import (
    DataError,
    Schema,
    Table,
    encode_dataset,
    fit_preprocessor,
    generate_synthetic,
    load_builtin,
    load_csv,
    read_manifest,
    save_csv,
    split_train_test,
    write_manifest,
)
from .metrics import (
    CFReport,
    ClassifReport,
    IsoForest,
    LofIndex,
    MetricError,
    accuracy,
    auroc,
    coverage_validity,
    isoforest_score,
    lof_score,
    proximity_batch,
    timed,
)
from .persist import PersistError, hash_model, load_bundle, save_bundle
from .service import serve
from .training import (
    ModelBundle,
    TrainConfig,
    TrainingError,
    _stratified_indices,
    train,
    validation_metrics,
)

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_DATA = 3
EXIT_TRAINING = 4
EXIT_IO = 5

ABLATION_ORDER = ("Base", "Base+CE", "Base+CE+Flow", "Base+CE+Dist", "Full")


class UsageError(Exception):
    """Bad flag combinations or malformed config files (exit code 2)."""


@dataclass(frozen=True)
class RunConfig:
    """Everything a run needs: training hyperparameters plus the data and
    artifact paths. Fully serializable; a run is reproducible from this plus
    nothing else."""

    train: TrainConfig
    data: str
    target: str
    test_fraction: float
    out: str | None = None
    log: str | None = None

    def to_dict(self) -> dict:
        return {
            "train": self.train.to_dict(),
            "data": self.data,
            "target": self.target,
            "test_fraction": self.test_fraction,
            "out": self.out,
            "log": self.log,
        }

    @staticmethod
    def from_dict(d: dict) -> "RunConfig":
        return RunConfig(
            train=TrainConfig.from_dict(d["train"]),
            data=d["data"],
            target=d["target"],
            test_fraction=float(d["test_fraction"]),
            out=d.get("out"),
            log=d.get("log"),
        )


# ---------------------------------------------------------------------------
# config resolution: file defaults, flags override

_TRAIN_FIELDS = {f.name: f for f in dataclasses.fields(TrainConfig)}
_EXTRA_CONFIG_KEYS = {"test_fraction"}


def _read_config_file(path: str) -> dict:
    try:
        raw = json.loads(Path(path).read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise UsageError(f"config {path}: invalid JSON ({exc})") from None
    if not isinstance(raw, dict):
        raise UsageError(f"config {path}: expected a JSON object")
    unknown = set(raw) - set(_TRAIN_FIELDS) - _EXTRA_CONFIG_KEYS
    if unknown:
        raise UsageError(f"config {path}: unknown keys {sorted(unknown)}")
    return raw


def resolve_config(config_path: str | None,
                   overrides: dict) -> tuple[TrainConfig, float]:
    """Merge (defaults <- config file <- command-line flags) and split off the
    CLI-level test fraction."""
    merged: dict = dict(_read_config_file(config_path)) if config_path else {}
    for key, value in overrides.items():
        if value is not None:
            merged[key] = value
    test_fraction = float(merged.pop("test_fraction", 0.2))
    try:
        cfg = TrainConfig.from_dict(merged)
    except TypeError as exc:
        raise UsageError(f"bad config: {exc}") from None
    return cfg, test_fraction


def _parse_bool(text: str) -> bool:
    lowered = text.strip().lower()
    if lowered in ("1", "true", "yes", "on"):
        return True
    if lowered in ("0", "false", "no", "off"):
        return False
    raise argparse.ArgumentTypeError(f"expected a boolean, got {text!r}")


def _parse_triple(text: str) -> tuple[float, float, float]:
    parts = [p for p in text.replace(",", " ").split() if p]
    if len(parts) != 3:
        raise argparse.ArgumentTypeError(f"expected three numbers, got {text!r}")
    return tuple(float(p) for p in parts)


def _add_config_flags(sp: argparse.ArgumentParser) -> None:
    """One flag per TrainConfig field plus --test-fraction; None means 'not
    given' so the config file (or the dataclass default) wins."""
    group = sp.add_argument_group("config overrides")
    for f in _TRAIN_FIELDS.values():
        flag = "--" + f.name.replace("_", "-")
        if isinstance(f.default, bool):
            group.add_argument(flag, type=_parse_bool, default=None,
                               metavar="BOOL")
        elif f.name == "alpha_targets":
            group.add_argument(flag, type=_parse_triple, default=None,
                               metavar="A1,A2,A3")
        elif isinstance(f.default, float):
            group.add_argument(flag, type=float, default=None, metavar="X")
        else:
            group.add_argument(flag, type=int, default=None, metavar="N")
    group.add_argument("--test-fraction", type=float, default=None,
                       metavar="X", help="held-out test split (default 0.2)")


def _collect_overrides(args: argparse.Namespace) -> dict:
    out = {name: getattr(args, name) for name in _TRAIN_FIELDS}
    out["test_fraction"] = args.test_fraction
    return out


# ---------------------------------------------------------------------------
# shared plumbing

def _file_sha256(path: str | Path) -> str:
    digest = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 16), b""):
            digest.update(chunk)
    return digest.hexdigest()


def _json_default(obj):
    if isinstance(obj, np.bool_):
        return bool(obj)
    if isinstance(obj, np.integer):
        return int(obj)
    if isinstance(obj, np.floating):
        return float(obj)
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    raise TypeError(f"not JSON serializable: {type(obj).__name__}")


def _dump_json(payload: dict, path: str | Path) -> None:
    Path(path).write_text(
        json.dumps(payload, indent=2, sort_keys=True, default=_json_default)
        + "\n", encoding="utf-8")


def align_labels(table: Table, schema: Schema) -> np.ndarray:
    """Re-index a loaded table's labels into the model schema's class order."""
    lookup = {c: i for i, c in enumerate(schema.classes)}
    mapping = np.empty(len(table.schema.classes), dtype=np.int64)
    for i, name in enumerate(table.schema.classes):
        if name not in lookup:
            raise DataError(f"class {name!r} unknown to the model; expected "
                            f"one of {list(schema.classes)}")
        mapping[i] = lookup[name]
    return mapping[table.labels]


def build_reports(bundle: ModelBundle, X_train: np.ndarray,
                  X_test: np.ndarray, y_test: np.ndarray,
                  iso_seed: int = 0) -> tuple[ClassifReport, CFReport]:
    """Full evaluation pass: classification quality on the test split, then
    counterfactual quality for every row x every alternative class.

    The reported time is the end-to-end counterfactual generation for the
    whole test set (the single batched forward pass), excluding model loading
    and metric computation. Outlier references (LOF k=20, isolation forest
    with 100 trees) are fitted on the full training set. L1/L2 distances are
    reported on the train min-max scale so a step of 1.0 spans a feature's
    observed range.
    """
    net, flow, prep = bundle.net, bundle.flow, bundle.prep
    proba = net.predict_proba(X_test)
    n_classes = proba.shape[1]
    classif = ClassifReport(
        auroc=auroc(proba, y_test),
        accuracy=accuracy(proba.argmax(axis=1), y_test),
        class_counts=np.bincount(y_test, minlength=n_classes).tolist(),
    )

    (pred, _, candidates), seconds = timed(generate_arrays, net, prep, X_test)
    cf_pred, log_dens = annotate_arrays(net, flow, candidates)

    n_rows, k, _ = candidates.shape
    alt = np.ones((n_rows, k), dtype=bool)
    alt[np.arange(n_rows), pred] = False
    x_cf = candidates[alt]
    targets = np.broadcast_to(np.arange(k), (n_rows, k))[alt]
    coverage, validity = coverage_validity(n_rows * (k - 1), cf_pred[alt],
                                           targets)
    l1, l2, hamming = proximity_batch(
        prep.to_unit_range(np.repeat(X_test, k - 1, axis=0)),
        prep.to_unit_range(x_cf), prep.groups)
    log_p = log_dens[alt]
    p_plaus = float((log_p > bundle.thresholds.global_threshold).mean())

    lof = lof_score(LofIndex(X_train, k=20), x_cf)
    iso = isoforest_score(
        IsoForest(X_train, n_trees=100, subsample=min(256, len(X_train)),
                  seed=iso_seed), x_cf)
    cf_report = CFReport(
        coverage=coverage, validity=validity,
        l1=float(l1.mean()), l2=float(l2.mean()), hamming=float(hamming.mean()),
        p_plaus=p_plaus, log_dens=float(log_p.mean()),
        lof=lof, iso_forest=iso, seconds=seconds,
        has_categorical=any(g.kind == "categorical" for g in prep.groups),
    )
    return classif, cf_report


def replay_validation(bundle: ModelBundle, full_table: Table,
                      test_fraction: float) -> dict:
    """Recompute the validation metrics a finished training run logged, from
    the original data file and the config stored in the bundle. The split is
    a pure function of (seed, fractions, labels), so the numbers match the
    log's final record exactly."""
    cfg = bundle.config
    train_tbl, _ = split_train_test(full_table, test_fraction, seed=cfg.seed)
    y_all = align_labels(train_tbl, bundle.schema)
    X_all = bundle.prep.transform_table(train_tbl)
    rng = np.random.default_rng([cfg.seed, 101])
    _, val_idx = _stratified_indices(y_all, cfg.val_fraction, rng)
    vm = validation_metrics(bundle.net, bundle.flow, bundle.prep,
                            bundle.thresholds, X_all[val_idx], y_all[val_idx])
    return {"val_accuracy": round(vm.accuracy, 6),
            "validity": round(vm.validity, 6),
            "p_plaus": round(vm.plausible, 6),
            "mean_l2": round(vm.mean_l2, 6)}


def ablation_variants(cfg: TrainConfig) -> list[tuple[str, TrainConfig]]:
    """The five loss configurations, all sharing cfg's seed and sizes.

    Base turns off every counterfactual signal including the phase-1 cluster
    guidance, so its counterfactuals come from an unshaped weight head; the
    other rows keep the guidance and differ only in the joint-phase terms.
    """
    def variant(cf_ce: bool, prox: bool, plaus: bool, **extra) -> TrainConfig:
        return dataclasses.replace(cfg, use_cf_ce=cf_ce, use_proximity=prox,
                                   use_plausibility=plaus, **extra)

    return [
        ("Base", variant(False, False, False, pretrain_alpha=0.0)),
        ("Base+CE", variant(True, False, False)),
        ("Base+CE+Flow", variant(True, False, True)),
        ("Base+CE+Dist", variant(True, True, False)),
        ("Full", variant(True, True, True)),
    ]


def format_report(classif: ClassifReport, cf: CFReport) -> str:
    return ("Classification   AUROC {:.3f}  Accuracy {:.3f}\n"
            "Counterfactuals  {}".format(classif.auroc, classif.accuracy,
                                         cf.format_row()))


def format_ablation(rows: list[dict]) -> str:
    width = max(len(r["name"]) for r in rows)
    lines = []
    for r in rows:
        prefix = r["name"].ljust(width)
        if r["ok"]:
            lines.append(f"{prefix}  {r['report'].format_row()}")
        else:
            lines.append(f"{prefix}  FAILED: {r['error']}")
    return "\n".join(lines)


# ---------------------------------------------------------------------------
# subcommands

def cmd_gen_data(args: argparse.Namespace) -> int:
    if args.kind in ("moons", "blobs"):
        table = generate_synthetic(args.kind, n=args.n, noise=args.noise,
                                   seed=args.seed, n_classes=args.classes)
        source = {"kind": args.kind, "n": args.n, "noise": args.noise,
                  "seed": args.seed, "n_classes": args.classes}
    else:
        table = load_builtin(args.kind)
        source = {"kind": args.kind, "builtin": True}
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    save_csv(table, out)
    manifest = {
        "command": "gen-data",
        "source": source,
        "rows": len(table),
        "columns": table.schema.feature_names,
        "target": table.schema.target,
        "classes": list(table.schema.classes),
        "csv": str(out),
        "csv_sha256": _file_sha256(out),
    }
    manifest_path = str(out) + ".manifest.json"
    write_manifest(manifest_path, manifest)
    print(f"wrote {out} ({len(table)} rows, "
          f"{len(table.schema.feature_names)} features) + {manifest_path}")
    return EXIT_OK


def cmd_train(args: argparse.Namespace) -> int:
    cfg, test_fraction = resolve_config(args.config, _collect_overrides(args))
    out = Path(args.out)
    log_path = Path(args.log) if args.log else Path(str(out) + ".log.jsonl")
    run = RunConfig(train=cfg, data=str(args.data), target=args.target,
                    test_fraction=test_fraction, out=str(out),
                    log=str(log_path))

    table = load_csv(args.data, target=args.target)
    train_tbl, test_tbl = split_train_test(table, test_fraction, seed=cfg.seed)
    prep = fit_preprocessor(train_tbl)
    dataset = encode_dataset(train_tbl, prep)

    out.parent.mkdir(parents=True, exist_ok=True)
    log_path.parent.mkdir(parents=True, exist_ok=True)
    log_path.write_text(
        json.dumps({"phase": "config", "run": run.to_dict()}, sort_keys=True)
        + "\n", encoding="utf-8")

    bundle = train(cfg, dataset, prep, log_path=log_path)
    saved = save_bundle(bundle, out)

    if args.test_out:
        Path(args.test_out).parent.mkdir(parents=True, exist_ok=True)
        save_csv(test_tbl, args.test_out)

    manifest = {
        "command": "train",
        "run": run.to_dict(),
        "seed": cfg.seed,
        "model": str(out),
        "model_hash": saved["hash"],
        "log": str(log_path),
        "log_sha256": _file_sha256(log_path),
        "pretrain_accuracy": bundle.pretrain_accuracy,
        "best_epoch": bundle.best_epoch,
        "n_train": len(train_tbl),
        "n_test": len(test_tbl),
        "test_out": str(args.test_out) if args.test_out else None,
    }
    write_manifest(str(out) + ".manifest.json", manifest)
    print(f"trained on {len(train_tbl)} rows ({len(test_tbl)} held out); "
          f"model hash {saved['hash']}")
    return EXIT_OK


def cmd_eval(args: argparse.Namespace) -> int:
    bundle = load_bundle(args.model)
    test_tbl = load_csv(args.data, target=bundle.schema.target)
    y_test = align_labels(test_tbl, bundle.schema)
    X_test = bundle.prep.transform_table(test_tbl)

    train_data = args.train_data
    test_fraction = args.test_fraction
    log_path = None
    sidecar = Path(str(args.model) + ".manifest.json")
    if sidecar.exists():
        manifest = read_manifest(sidecar)
        run = manifest.get("run", {})
        train_data = train_data or run.get("data")
        if test_fraction is None and run.get("test_fraction") is not None:
            test_fraction = float(run["test_fraction"])
        log_path = manifest.get("log")

    replay = None
    if train_data and Path(train_data).exists():
        full_tbl = load_csv(train_data, target=bundle.schema.target)
        train_tbl, _ = split_train_test(
            full_tbl, test_fraction if test_fraction is not None else 0.2,
            seed=bundle.config.seed)
        X_train = bundle.prep.transform_table(train_tbl)
        reference_fit = "train-split"
        if test_fraction is not None:
            replay = replay_validation(bundle, full_tbl, test_fraction)
    else:
        X_train = X_test
        reference_fit = "eval-data"

    classif, cf = build_reports(bundle, X_train, X_test, y_test,
                                iso_seed=bundle.config.seed)
    text = format_report(classif, cf)
    print(text)

    payload = {
        "command": "eval",
        "model": str(args.model),
        "model_hash": hash_model(bundle),
        "config": bundle.config.to_dict(),
        "seed": bundle.config.seed,
        "data": str(args.data),
        "n_test": int(len(test_tbl)),
        "reference_fit": reference_fit,
        "classification": classif.to_dict(),
        "counterfactuals": cf.to_dict(),
    }
    if replay is not None:
        payload["validation_replay"] = replay
        if log_path and Path(log_path).exists():
            final = None
            with open(log_path, encoding="utf-8") as fh:
                for line in fh:
                    rec = json.loads(line)
                    if rec.get("phase") == "final":
                        final = rec
            if final is not None:
                payload["matches_log"] = all(
                    final[k] == replay[k] for k in replay)
    if args.report:
        report_dir = Path(args.report)
        report_dir.mkdir(parents=True, exist_ok=True)
        (report_dir / "report.txt").write_text(text + "\n", encoding="utf-8")
        _dump_json(payload, report_dir / "report.json")
        print(f"reports written to {report_dir}")
    return EXIT_OK


def cmd_explain(args: argparse.Namespace) -> int:
    bundle = load_bundle(args.model)
    if (args.features is None) == (args.data is None):
        raise UsageError("explain needs exactly one of --features or --data")
    if args.features is not None:
        try:
            row = json.loads(args.features)
        except json.JSONDecodeError as exc:
            raise UsageError(f"--features: invalid JSON ({exc})") from None
        if not isinstance(row, dict):
            raise UsageError("--features must be a JSON object")
        X = bundle.prep.transform_rows([row])
    else:
        table = load_csv(args.data, target=bundle.schema.target)
        if not 0 <= args.index < len(table):
            raise DataError(f"--index {args.index} out of range for "
                            f"{len(table)} rows")
        X = bundle.prep.transform_table(
            table.select(np.array([args.index])))

    result = explain(bundle, X)[0]
    classes = bundle.schema.classes
    payload = {
        "predicted_class": classes[result.predicted],
        "probabilities": {classes[i]: float(p)
                          for i, p in enumerate(result.probabilities)},
        "input": result.x_raw,
        "counterfactuals": [
            {
                "target_class": classes[alt.target],
                "features": alt.x_raw,
                "diffs": alt.diffs,
                "valid": bool(alt.predicted == alt.target),
                "predicted_class": classes[alt.predicted],
                "log_density": float(alt.log_density),
            }
            for alt in result.alternatives
        ],
    }
    print(json.dumps(payload, indent=2, sort_keys=True,
                     default=_json_default))
    return EXIT_OK


def cmd_serve(args: argparse.Namespace) -> int:
    bundle = load_bundle(args.model)
    print(f"serving {args.model} on {args.host}:{args.port}")
    serve(bundle, host=args.host, port=args.port)
    return EXIT_OK


def cmd_ablation(args: argparse.Namespace) -> int:
    cfg, test_fraction = resolve_config(args.config, _collect_overrides(args))
    table = load_csv(args.data, target=args.target)
    train_tbl, test_tbl = split_train_test(table, test_fraction, seed=cfg.seed)
    prep = fit_preprocessor(train_tbl)
    dataset = encode_dataset(train_tbl, prep)
    X_test = prep.transform_table(test_tbl)
    y_test = test_tbl.labels.copy()

    rows: list[dict] = []
    for name, variant in ablation_variants(cfg):
        try:
            bundle = train(variant, dataset, prep)
            _, cf = build_reports(bundle, dataset.X, X_test, y_test,
                                  iso_seed=cfg.seed)
            rows.append({"name": name, "ok": True, "report": cf,
                         "config": variant.to_dict()})
        except TrainingError as exc:
            rows.append({"name": name, "ok": False, "error": str(exc),
                         "config": variant.to_dict()})

    text = format_ablation(rows)
    print(text)
    if args.out:
        out_dir = Path(args.out)
        out_dir.mkdir(parents=True, exist_ok=True)
        (out_dir / "ablation.txt").write_text(text + "\n", encoding="utf-8")
        payload = {
            "command": "ablation",
            "data": str(args.data),
            "seed": cfg.seed,
            "test_fraction": test_fraction,
            "base_config": cfg.to_dict(),
            "rows": [
                {
                    "name": r["name"], "ok": r["ok"], "config": r["config"],
                    **({"counterfactuals": r["report"].to_dict()} if r["ok"]
                       else {"error": r["error"]}),
                }
                for r in rows
            ],
        }
        _dump_json(payload, out_dir / "ablation.json")
        print(f"ablation artifacts written to {out_dir}")
    failed = [r["name"] for r in rows if not r["ok"]]
    if failed:
        print(f"warning: {len(failed)} row(s) failed: {', '.join(failed)}",
              file=sys.stderr)
    return EXIT_OK


# ---------------------------------------------------------------------------
# parser and dispatch

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="tabcf",
        description="Interpretable tabular classifier with single-pass "
                    "counterfactual explanations.")
    sub = parser.add_subparsers(dest="command", required=True)

    sp = sub.add_parser("gen-data", help="generate a dataset CSV + manifest")
    sp.add_argument("kind", choices=["moons", "blobs", "wine", "digits"])
    sp.add_argument("--n", type=int, default=2000, help="number of rows")
    sp.add_argument("--noise", type=float, default=0.1)
    sp.add_argument("--seed", type=int, default=0)
    sp.add_argument("--classes", type=int, default=3,
                    help="class count (blobs only)")
    sp.add_argument("--out", required=True)
    sp.set_defaults(fn=cmd_gen_data)

    sp = sub.add_parser("train", help="train a model, write .hcx + log")
    sp.add_argument("--data", required=True, help="training CSV")
    sp.add_argument("--target", default="label", help="target column name")
    sp.add_argument("--out", required=True, help=".hcx output path")
    sp.add_argument("--config", default=None, help="JSON config file")
    sp.add_argument("--log", default=None,
                    help="training log path (default: <out>.log.jsonl)")
    sp.add_argument("--test-out", default=None,
                    help="also write the held-out test split as CSV")
    _add_config_flags(sp)
    sp.set_defaults(fn=cmd_train)

    sp = sub.add_parser("eval", help="evaluate a saved model on a CSV")
    sp.add_argument("--model", required=True)
    sp.add_argument("--data", required=True, help="evaluation CSV")
    sp.add_argument("--report", default=None,
                    help="directory for report.txt + report.json")
    sp.add_argument("--train-data", default=None,
                    help="original training CSV for outlier references and "
                         "validation replay (default: from model manifest)")
    sp.add_argument("--test-fraction", type=float, default=None)
    sp.set_defaults(fn=cmd_eval)

    sp = sub.add_parser("explain", help="counterfactuals for one row")
    sp.add_argument("--model", required=True)
    sp.add_argument("--features", default=None,
                    help='one row as JSON, e.g. \'{"x1": 0.3, "x2": -1.2}\'')
    sp.add_argument("--data", default=None, help="CSV to pick a row from")
    sp.add_argument("--index", type=int, default=0,
                    help="row number within --data (0-based)")
    sp.set_defaults(fn=cmd_explain)

    sp = sub.add_parser("serve", help="start the HTTP service")
    sp.add_argument("--model", required=True)
    sp.add_argument("--host", default="127.0.0.1")
    sp.add_argument("--port", type=int, default=8787)
    sp.set_defaults(fn=cmd_serve)

    sp = sub.add_parser("ablation",
                        help="train one model per loss configuration")
    sp.add_argument("--data", required=True)
    sp.add_argument("--target", default="label")
    sp.add_argument("--config", default=None)
    sp.add_argument("--out", default=None,
                    help="directory for ablation.txt + ablation.json")
    _add_config_flags(sp)
    sp.set_defaults(fn=cmd_ablation)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:  # argparse handles usage errors and --help
        return int(exc.code) if exc.code else EXIT_OK
    try:
        return int(args.fn(args) or EXIT_OK)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (DataError, MetricError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except TrainingError as exc:
        print(f"training error: {exc}", file=sys.stderr)
        return EXIT_TRAINING
    except (PersistError, OSError) as exc:
        print(f"i/o error: {exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
