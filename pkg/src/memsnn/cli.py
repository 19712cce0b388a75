"""``memsnn`` command line: train, ablate, profile, cluster.

Exit codes: 0 success, 2 usage or configuration error, 3 missing resource
(dataset or checkpoint), 4 undefined metric (e.g. silhouette on one class).
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import cluster
from . import energy as en
from .data import DatasetMissingError
from .models import MODEL_IDS
from .training import TrainConfig, extract_features, load_checkpoint, load_splits, train

log = logging.getLogger("memsnn")

EXIT_OK, EXIT_USAGE, EXIT_MISSING, EXIT_METRIC = 0, 2, 3, 4

MODEL_LABELS = {
    "M1": "M1: Baseline (No SCL)",
    "M2": "M2: Baseline + SCL",
    "M3": "M3: SNN + SCL + Hopfield",
    "M4": "M4: SNN + SCL + HGRN",
    "M5": "M5: Full Hybrid (All)",
}
ABLATION_COLUMNS = ["model", "val_acc", "test_acc", "silhouette", "energy_uj"]

# upper bounds applied by --quick
QUICK_CAPS = {"n_train": 160, "n_val": 80, "n_test": 80, "epochs": 2}

# flag dest -> TrainConfig field
_OVERRIDES = {
    "dataset": "dataset", "data_root": "data_root", "epochs": "epochs", "batch_size": "batch_size",
    "lr": "lr_max", "lr_min": "lr_min", "t_max": "t_max", "weight_decay": "weight_decay",
    "patience": "patience", "lambda_scl": "lambda_scl", "tau": "tau", "n_train": "n_train",
    "n_val": "n_val", "n_test": "n_test", "n_classes": "n_classes", "hgrn_hidden": "hgrn_hidden",
    "hgrn_head": "hgrn_head", "scl_reduction": "scl_reduction", "ce_mode": "ce_mode",
    "augment": "augment", "two_view": "scl_two_view", "pool": "pool", "hidden": "hidden",
}


class UsageError(Exception):
    pass


# ---------------------------------------------------------------- config


def _load_config_file(path) -> dict:
    if path is None:
        return {}
    try:
        with open(path) as fh:
            data = json.load(fh)
    except FileNotFoundError:
        raise UsageError(f"config file {path} not found")
    except json.JSONDecodeError as exc:
        raise UsageError(f"config file {path} is not valid JSON: {exc}")
    if not isinstance(data, dict):
        raise UsageError(f"config file {path} must hold a JSON object")
    return data


def resolve_config(args, model_id: str, seed: int | None) -> TrainConfig:
    """Defaults, then the JSON file, then explicit flags."""
    values = _load_config_file(getattr(args, "config", None))
    for dest, key in _OVERRIDES.items():
        v = getattr(args, dest, None)
        if v is not None:
            values[key] = v
    if getattr(args, "quick", False):
        for key, cap in QUICK_CAPS.items():
            values[key] = min(values.get(key, getattr(TrainConfig, key)), cap)
    values["model_id"] = model_id
    if seed is not None:
        values["seed"] = seed
    values.setdefault("t_max", values.get("epochs", TrainConfig.t_max))
    try:
        return TrainConfig.from_dict(values)
    except (TypeError, ValueError) as exc:
        raise UsageError(str(exc))


def _seeds(args) -> list[int | None]:
    return list(dict.fromkeys(args.seed)) if args.seed else [None]


def _out_dir(args) -> Path:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


# ---------------------------------------------------------------- train / ablate


def _run(cfg: TrainConfig, out: Path) -> dict:
    _, record = train(cfg, out)
    print(f"{cfg.model_id} seed {cfg.seed}: best val {record.best_val_accuracy:.4f} "
          f"(epoch {record.best_epoch}), test {record.test_accuracy:.4f}, "
          f"silhouette {record.silhouette}, {record.wall_time_s:.1f}s")
    return record.to_dict()


def cmd_train(args) -> int:
    if args.model not in MODEL_IDS:
        raise UsageError(f"unknown model id {args.model!r}; valid ids: {', '.join(MODEL_IDS)}")
    cfgs = [resolve_config(args, args.model, s) for s in _seeds(args)]
    out = _out_dir(args)
    for cfg in cfgs:
        _run(cfg, out)
    return EXIT_OK


def _mean_std(values):
    vals = [v for v in values if v is not None]
    if not vals:
        return None, None
    return float(np.mean(vals)), float(np.std(vals))


def summarize(records: dict[str, list[dict]]) -> list[dict]:
    """One Table-I-shaped row per model: mean (and std) over seeds."""
    rows = []
    for mid, recs in records.items():
        va = _mean_std([100 * r["best_val_accuracy"] for r in recs])
        te = _mean_std([100 * r["test_accuracy"] for r in recs])
        si = _mean_std([r["silhouette"] for r in recs])
        ej = _mean_std([r["energy"]["per_inference_uj"] for r in recs])
        rows.append({
            "model": mid, "val_acc": va[0], "test_acc": te[0], "silhouette": si[0], "energy_uj": ej[0],
            "val_acc_std": va[1], "test_acc_std": te[1], "silhouette_std": si[1], "energy_uj_std": ej[1],
            "n_seeds": len(recs),
        })
    return rows


def write_ablation_csv(path, rows):
    cols = ABLATION_COLUMNS + ["val_acc_std", "test_acc_std", "silhouette_std", "energy_uj_std", "n_seeds"]
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=cols)
        w.writeheader()
        for row in rows:
            w.writerow({k: "" if row[k] is None else repr(row[k]) if isinstance(row[k], float) else row[k]
                        for k in cols})


def ablation_markdown(rows) -> str:
    def cell(row, key, fmt):
        m, s = row[key], row[f"{key}_std"]
        if m is None:
            return "n/a"
        return format(m, fmt) + (f" ± {format(s, fmt)}" if row["n_seeds"] > 1 else "")

    lines = ["| Model | Val Acc (%) | Test Acc (%) | Silhouette | Energy (µJ) |",
             "|---|---:|---:|---:|---:|"]
    for row in rows:
        lines.append(f"| {MODEL_LABELS[row['model']]} | {cell(row, 'val_acc', '.2f')} | "
                     f"{cell(row, 'test_acc', '.2f')} | {cell(row, 'silhouette', '.3f')} | "
                     f"{cell(row, 'energy_uj', '.4f')} |")
    return "\n".join(lines)


def cmd_ablate(args) -> int:
    models = args.models or list(MODEL_IDS)
    bad = [m for m in models if m not in MODEL_IDS]
    if bad:
        raise UsageError(f"unknown model id(s) {', '.join(bad)}; valid ids: {', '.join(MODEL_IDS)}")
    plan = [(m, resolve_config(args, m, s)) for m in models for s in _seeds(args)]
    out = _out_dir(args)
    records: dict[str, list[dict]] = {m: [] for m in models}
    for mid, cfg in plan:
        path = out / f"{mid}_seed{cfg.seed}.json"
        if path.exists():
            log.info("skipping %s seed %d: %s exists", mid, cfg.seed, path)
            print(f"{mid} seed {cfg.seed}: reusing {path.name}")
            records[mid].append(json.loads(path.read_text()))
            continue
        records[mid].append(_run(cfg, out))
    rows = summarize(records)
    write_ablation_csv(out / "ablation.csv", rows)
    md = ablation_markdown(rows)
    (out / "ablation.md").write_text(md + "\n")
    print(md)
    return EXIT_OK


# ---------------------------------------------------------------- profile


def golden_report(out: Path) -> str:
    rows, ann = en.golden_rows()
    with open(out / "golden.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["model", "synops", "microjoules", "reduction"])
        for r in rows:
            w.writerow([r.model, repr(r.synops), repr(r.total_uj), repr(r.reduction)])
        w.writerow(["ANN", "", repr(ann), ""])
    payload = {"models": {r.model: {"synops": r.synops, "microjoules": r.total_uj, "reduction": r.reduction}
                          for r in rows},
               "ann": {"macs": en.GOLDEN_ANN_MACS_M * 1e6, "microjoules": ann}}
    (out / "golden.json").write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n")
    lines = ["| Model | SynOps (M) | Energy (µJ) | Reduction |", "|---|---:|---:|---:|"]
    for r in rows:
        lines.append(f"| {r.model} | {r.synops / 1e6:.3f} | {r.total_uj:.2f} | {r.reduction:.1f}x |")
    lines.append(f"| ANN | {en.GOLDEN_ANN_MACS_M:.2f} (MACs) | {ann:.2f} | 1.0x |")
    return "\n".join(lines)


def _load_model(path):
    p = Path(path)
    if not p.is_file():
        raise FileNotFoundError(f"checkpoint {p} not found")
    model, cfg = load_checkpoint(p)
    return model, cfg or TrainConfig(model_id=model.model_id)


def _eval_split(args, cfg: TrainConfig, split: str):
    overrides = {k: getattr(args, k) for k in ("dataset", "data_root") if getattr(args, k, None) is not None}
    cfg = TrainConfig.from_dict({**cfg.to_dict(), **overrides})
    Xtr, ytr, Xva, yva, Xte, yte = load_splits(cfg)
    X, y = {"train": (Xtr, ytr), "val": (Xva, yva), "test": (Xte, yte)}[split]
    if args.max_samples is not None:
        X, y = X[:args.max_samples], y[:args.max_samples]
    return X, y


def cmd_profile(args) -> int:
    out = _out_dir(args)
    if args.golden:
        print(golden_report(out))
        return EXIT_OK
    if args.checkpoint is None:
        raise UsageError("profile needs --golden or --checkpoint PATH")
    model, cfg = _load_model(args.checkpoint)
    X, _ = _eval_split(args, cfg, args.split)
    report = model.profile(X, cfg.batch_size)
    stem = f"energy_{model.model_id}"
    report.write_json(out / f"{stem}.json")
    report.write_csv(out / f"{stem}.csv")
    print(report.markdown())
    return EXIT_OK


# ---------------------------------------------------------------- cluster


def cmd_cluster(args) -> int:
    model, cfg = _load_model(args.checkpoint)
    X, y = _eval_split(args, cfg, args.split)
    feats = extract_features(model, X, cfg.batch_size)
    seed = args.seed[0] if args.seed else cfg.seed
    report, idx = cluster.analyze(feats, y, args.max_samples or cfg.silhouette_max_samples, seed)
    out = _out_dir(args)
    report.write_csv(out / f"silhouette_{model.model_id}.csv")
    cluster.write_features_csv(out / f"features_{model.model_id}.csv", feats[idx], y[idx])
    print(f"silhouette {report.score:.4f} ({report.band}) over {report.n_samples} samples")
    for c, v in sorted(report.per_class.items()):
        print(f"  class {c}: {v:.4f}")
    return EXIT_OK


# ---------------------------------------------------------------- parser


def _add_training_flags(p):
    p.add_argument("--config", help="JSON file with TrainConfig fields")
    p.add_argument("--dataset", choices=("synthetic", "nmnist"))
    p.add_argument("--data-root", help="N-MNIST root (default: $NMNIST_ROOT)")
    p.add_argument("--epochs", type=int)
    p.add_argument("--batch-size", type=int)
    p.add_argument("--lr", type=float, help="peak learning rate")
    p.add_argument("--lr-min", type=float)
    p.add_argument("--t-max", type=int, help="cosine period in epochs (default: --epochs)")
    p.add_argument("--weight-decay", type=float)
    p.add_argument("--patience", type=int)
    p.add_argument("--lambda-scl", type=float)
    p.add_argument("--tau", type=float)
    p.add_argument("--n-train", type=int)
    p.add_argument("--n-val", type=int)
    p.add_argument("--n-test", type=int)
    p.add_argument("--n-classes", type=int)
    p.add_argument("--hidden", type=int)
    p.add_argument("--hgrn-hidden", type=int)
    p.add_argument("--hgrn-head", choices=("fc", "lif"))
    p.add_argument("--scl-reduction", choices=("sum", "mean"))
    p.add_argument("--ce-mode", choices=("rate", "softmax"))
    p.add_argument("--two-view", action="store_const", const=True, help="two augmented views per sample for SCL")
    p.add_argument("--no-augment", dest="augment", action="store_const", const=False)
    p.add_argument("--pool", dest="pool", action=argparse.BooleanOptionalAction, default=None)
    p.add_argument("--seed", type=int, action="append", help="repeatable; one run per seed")
    p.add_argument("--quick", action="store_true", help="cap samples and epochs for a smoke run")
    p.add_argument("--out", default="runs", help="output directory")


def _add_eval_flags(p):
    p.add_argument("--checkpoint")
    p.add_argument("--dataset", choices=("synthetic", "nmnist"))
    p.add_argument("--data-root")
    p.add_argument("--split", choices=("train", "val", "test"))
    p.add_argument("--max-samples", type=int)
    p.add_argument("--out", default="runs")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="memsnn", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="train one model (once per --seed)")
    p.add_argument("--model", default="M1", help=f"one of {', '.join(MODEL_IDS)}")
    _add_training_flags(p)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("ablate", help="train M1..M5 and emit the ablation table")
    p.add_argument("--models", nargs="+", metavar="ID")
    _add_training_flags(p)
    p.set_defaults(func=cmd_ablate)

    p = sub.add_parser("profile", help="energy report from a checkpoint, or the published golden figures")
    p.add_argument("--golden", action="store_true")
    _add_eval_flags(p)
    p.set_defaults(func=cmd_profile, split="test")

    p = sub.add_parser("cluster", help="silhouette analysis of LIF3 features")
    _add_eval_flags(p)
    p.add_argument("--seed", type=int, action="append", help="subsample seed")
    p.set_defaults(func=cmd_cluster, split="val")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except cluster.UndefinedMetricError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_METRIC
    except (DatasetMissingError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_MISSING
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
