"""Command-line pipeline: synth | ingest | split | patch | train | eval | flag | overlay | suite.

Each subcommand reads the artifacts of earlier stages from the output
directory and writes its own; `suite` chains everything across all splits
and model families. Runs are reproducible: every JSON artifact embeds the
resolved configuration and package version, and identical master seeds
yield byte-identical outputs. Exit codes: 0 success, 1 usage error,
2 data error, 3 numerical abort.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import sys
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import __version__
from .corpus import (
    CorpusManifest, SplitPlan, filter_min_width, generate_split_suite,
    ingest_manifest, load_split, save_split,
)
from .errors import DataError, NumericalAbort
from .flagging import (
    build_flag_report, load_flag_report, load_predictions, model_agreement,
    predictions_from_eval, render_overlay, save_flag_report, save_predictions,
    save_suite_summary, suite_summary_rows,
)
from .kan import SplineGrid, build_kan
from .cnn import PATCHNET_SIZES, build_patchnet
from .patching import (
    extract_corpus_patches, load_image, load_patch_tensors, plan_grid,
    save_inventory, save_patch_tensors,
)
from .synth import synth_corpus
from .trainer import (
    Checkpoint, TrainConfig, entropy_threshold_table, evaluate, split_indices,
    train_on_split,
)


@dataclass
class RunConfig:
    manifest: str | None = None
    out: str = "run"
    forger_class: str | None = None
    min_width: int = 768
    patch_size: int = 256
    blur_sigma: float = 1.0
    entropy_threshold: float | None = 2.5
    entropy_sweep: tuple = (None, 2.5, 3.0)
    n_splits: int = 10
    test_frac: float = 0.10
    val_frac: float = 0.20
    master_seed: int = 0
    models: tuple = ("patchnet-S0", "kan")
    kan_widths: tuple = (120, 84, 12)
    kan_width_sweep: tuple = ()
    kan_side: int = 16
    kan_grid_size: int = 5
    kan_spline_order: int = 3
    cnn_side: int = 32
    epochs: int = 100
    batch_size: int = 64
    patience: int = 10
    kan_lr: float = 0.05
    cnn_lr: float = 1e-3
    train_seed: int = 0
    k: int = 20
    min_patches: int = 2
    synth_classes: int = 12
    synth_per_class: int = 10

    def to_dict(self) -> dict:
        """Resolved config for audit embedding; omits filesystem locations
        so identical runs into different directories stay byte-identical."""
        d = dataclasses.asdict(self)
        d.pop("out")
        d.pop("manifest")
        for key in ("entropy_sweep", "models", "kan_widths", "kan_width_sweep"):
            d[key] = list(d[key])
        return d


def _parse_widths(text: str) -> tuple[int, ...]:
    parts = [p for p in text.replace("|", "x").replace(":", "x").split("x") if p]
    return tuple(int(p) for p in parts)


def _parse_threshold(text: str) -> float | None:
    return None if text.strip().lower() in ("none", "off") else float(text)


def _parse_config_value(value: str):
    value = value.strip()
    if value.startswith('"') and value.endswith('"') and len(value) >= 2:
        return value[1:-1]
    low = value.lower()
    if low in ("true", "false"):
        return low == "true"
    if low == "none":
        return None
    try:
        return int(value)
    except ValueError:
        pass
    try:
        return float(value)
    except ValueError:
        pass
    return value


def load_config_file(path: str | Path) -> dict:
    """Flat key=value pairs; [section] headers group but do not namespace."""
    values: dict = {}
    for lineno, raw in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line or (line.startswith("[") and line.endswith("]")):
            continue
        if "=" not in line:
            raise ValueError(f"{path}:{lineno}: expected key = value, got {raw!r}")
        key, _, value = line.partition("=")
        values[key.strip()] = _parse_config_value(value)
    return values


_LIST_FIELDS = {
    "entropy_sweep": lambda v: tuple(_parse_threshold(t) for t in str(v).split(",") if t.strip()),
    "models": lambda v: tuple(t.strip() for t in str(v).split(",") if t.strip()),
    "kan_widths": _parse_widths,
    "kan_width_sweep": lambda v: tuple(_parse_widths(t) for t in str(v).split(",") if t.strip()),
}


def build_run_config(args: argparse.Namespace) -> RunConfig:
    """Defaults, then config file values, then explicit CLI flags."""
    values: dict = {}
    if getattr(args, "config", None):
        file_values = load_config_file(args.config)
        field_names = {f.name for f in dataclasses.fields(RunConfig)}
        for key, value in file_values.items():
            if key not in field_names:
                raise ValueError(f"unknown config key {key!r}")
            values[key] = _LIST_FIELDS[key](value) if key in _LIST_FIELDS else value
    for field in dataclasses.fields(RunConfig):
        flag_value = getattr(args, field.name, None)
        if flag_value is not None:
            values[field.name] = (
                _LIST_FIELDS[field.name](flag_value)
                if field.name in _LIST_FIELDS else flag_value
            )
    if "entropy_threshold" in values and isinstance(values["entropy_threshold"], str):
        values["entropy_threshold"] = _parse_threshold(values["entropy_threshold"])
    return RunConfig(**values)


def _write_json(path: Path, payload: dict) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(payload, sort_keys=True) + "\n", encoding="utf-8")


def _stamp(cfg: RunConfig, extra: dict) -> dict:
    payload = {"config": cfg.to_dict(), "version": __version__}
    payload.update(extra)
    return payload


def _require(path: Path, prior: str) -> Path:
    if not path.exists():
        raise DataError(f"{path.name} not found; run `forgeryflag {prior}` first")
    return path


def _load_corpus(out: Path) -> CorpusManifest:
    path = _require(out / "corpus.json", "ingest")
    return CorpusManifest.from_dict(json.loads(path.read_text(encoding="utf-8"))["manifest"])


def _load_plans(out: Path) -> list[SplitPlan]:
    suite_path = _require(out / "splits" / "suite.json", "split")
    labels = json.loads(suite_path.read_text(encoding="utf-8"))["splits"]
    return [load_split(out / "splits" / f"{label}.json") for label in labels]


def _model_family(model: str) -> str:
    return "kan" if model == "kan" else "patchnet"


def _model_spec(cfg: RunConfig, model: str, n_classes: int):
    """(patchset name, builder, train config) for one model tag."""
    if model == "kan":
        grid = SplineGrid(grid_size=cfg.kan_grid_size, order=cfg.kan_spline_order)
        input_dim = 3 * cfg.kan_side * cfg.kan_side

        def builder(seed, widths=tuple(cfg.kan_widths)):
            return build_kan(list(widths), input_dim=input_dim, grid=grid,
                             n_classes=n_classes, seed=seed)

        train_cfg = TrainConfig(
            epochs=cfg.epochs, batch_size=cfg.batch_size, optimizer="sgd",
            learning_rate=cfg.kan_lr, patience=cfg.patience, seed=cfg.train_seed,
            entropy_threshold=cfg.entropy_threshold, blur_sigma=cfg.blur_sigma,
        )
        return "kan", builder, train_cfg
    if model.startswith("patchnet-"):
        size = model.split("-", 1)[1]
        if size not in PATCHNET_SIZES:
            raise DataError(f"unknown model {model!r}")

        def builder(seed):
            return build_patchnet(size, input_side=cfg.cnn_side,
                                  n_classes=n_classes, seed=seed)

        train_cfg = TrainConfig(
            epochs=cfg.epochs, batch_size=cfg.batch_size, optimizer="adam",
            learning_rate=cfg.cnn_lr, patience=cfg.patience, seed=cfg.train_seed,
            entropy_threshold=cfg.entropy_threshold, blur_sigma=cfg.blur_sigma,
        )
        return "cnn", builder, train_cfg
    raise DataError(f"unknown model {model!r}")


def _split_label(plan: SplitPlan) -> str:
    return f"T{plan.seed}"


def cmd_synth(cfg: RunConfig) -> int:
    out = Path(cfg.out)
    manifest_path, manifest = synth_corpus(
        out, n_classes=cfg.synth_classes, per_class=cfg.synth_per_class,
        seed=cfg.master_seed,
    )
    print(f"wrote {len(manifest.artworks)} images and {manifest_path}")
    return 0


def cmd_ingest(cfg: RunConfig) -> int:
    if not cfg.manifest:
        raise ValueError("--manifest is required for ingest")
    out = Path(cfg.out)
    manifest = ingest_manifest(cfg.manifest, forger_class=cfg.forger_class)
    manifest = filter_min_width(manifest, cfg.min_width)
    _write_json(out / "corpus.json", _stamp(cfg, {
        "manifest": manifest.to_dict(),
        "counts_by_artist": manifest.counts_by_artist(),
    }))
    print(f"ingested {len(manifest.artworks)} artworks over "
          f"{len(manifest.classes)} classes (forger: {manifest.forger_class})")
    return 0


def cmd_split(cfg: RunConfig) -> int:
    out = Path(cfg.out)
    manifest = _load_corpus(out)
    plans = generate_split_suite(
        manifest, cfg.n_splits, test_frac=cfg.test_frac,
        val_frac_of_rest=cfg.val_frac, master_seed=cfg.master_seed,
    )
    (out / "splits").mkdir(parents=True, exist_ok=True)
    labels = []
    for plan in plans:
        label = _split_label(plan)
        labels.append(label)
        save_split(plan, out / "splits" / f"{label}.json")
    counts = {
        _split_label(p): {s: len(p.subset_ids(s)) for s in ("train", "val", "test")}
        for p in plans
    }
    _write_json(out / "splits" / "suite.json",
                _stamp(cfg, {"splits": labels, "subset_counts": counts}))
    print(f"wrote {len(plans)} split plans: {', '.join(labels)}")
    return 0


def cmd_patch(cfg: RunConfig) -> int:
    out = Path(cfg.out)
    manifest = _load_corpus(out)
    specs = {
        "kan": {"side": cfg.kan_side, "value_range": "symmetric", "layout": "flat"},
        "cnn": {"side": cfg.cnn_side, "value_range": "unit", "layout": "chw"},
    }
    inventory, sets = extract_corpus_patches(
        manifest, patch_size=cfg.patch_size, blur_sigma=cfg.blur_sigma,
        tensor_specs=specs,
    )
    patch_dir = out / "patches"
    patch_dir.mkdir(parents=True, exist_ok=True)
    save_inventory(inventory, patch_dir / "inventory.csv")
    for name, patchset in sets.items():
        save_patch_tensors(patchset, patch_dir / f"{name}_side{patchset.side}")
    _write_json(patch_dir / "meta.json", _stamp(cfg, {
        "n_patches": len(inventory),
        "tensor_files": {n: f"{n}_side{s['side']}" for n, s in specs.items()},
    }))
    print(f"extracted {len(inventory)} patches from {len(manifest.artworks)} artworks")
    return 0


def _load_patchset(out: Path, name: str, expected_side: int | None = None):
    meta_path = _require(out / "patches" / "meta.json", "patch")
    meta = json.loads(meta_path.read_text(encoding="utf-8"))
    patchset = load_patch_tensors(out / "patches" / meta["tensor_files"][name])
    if expected_side is not None and patchset.side != expected_side:
        raise DataError(
            f"{name} tensor cache was built with side {patchset.side}, "
            f"config wants {expected_side}; run `forgeryflag patch` first"
        )
    return patchset


def _selected_models(cfg: RunConfig, only: str | None) -> list[str]:
    if only:
        return [only]
    return list(cfg.models)


def _selected_plans(out: Path, only: str | None) -> list[SplitPlan]:
    plans = _load_plans(out)
    if only:
        plans = [p for p in plans if _split_label(p) == only]
        if not plans:
            raise DataError(f"split {only!r} not found; run `forgeryflag split` first")
    return plans


def cmd_train(cfg: RunConfig, only_model: str | None = None,
              only_split: str | None = None) -> int:
    out = Path(cfg.out)
    manifest = _load_corpus(out)
    plans = _selected_plans(out, only_split)
    (out / "checkpoints").mkdir(parents=True, exist_ok=True)
    (out / "reports").mkdir(parents=True, exist_ok=True)
    for model in _selected_models(cfg, only_model):
        set_name, builder, train_cfg = _model_spec(cfg, model, len(manifest.classes))
        side = cfg.kan_side if set_name == "kan" else cfg.cnn_side
        patchset = _load_patchset(out, set_name, expected_side=side)
        for plan in plans:
            label = _split_label(plan)
            ckpt, report = train_on_split(
                builder, patchset, plan, train_cfg, len(manifest.classes),
                classes=list(manifest.classes),
            )
            ckpt.save(out / "checkpoints" / f"{model}_{label}.ckpt")
            _write_json(out / "reports" / f"train_{model}_{label}.json",
                        _stamp(cfg, {"model": model, "split": label,
                                     "report": report.to_dict()}))
            print(f"trained {model} on {label}: best epoch {report.best_epoch}, "
                  f"val acc {report.val_accuracy:.3f}")
    return 0


def cmd_eval(cfg: RunConfig, only_model: str | None = None,
             only_split: str | None = None) -> int:
    out = Path(cfg.out)
    manifest = _load_corpus(out)
    plans = _selected_plans(out, only_split)
    (out / "predictions").mkdir(parents=True, exist_ok=True)
    for model in _selected_models(cfg, only_model):
        set_name, _, _ = _model_spec(cfg, model, len(manifest.classes))
        side = cfg.kan_side if set_name == "kan" else cfg.cnn_side
        patchset = _load_patchset(out, set_name, expected_side=side)
        for plan in plans:
            label = _split_label(plan)
            ckpt_path = _require(out / "checkpoints" / f"{model}_{label}.ckpt", "train")
            net = Checkpoint.load(ckpt_path).build_network()
            idx = split_indices(patchset, plan, cfg.entropy_threshold)["test"]
            if not len(idx):
                raise DataError(f"no test patches for {model} on {label}")
            result = evaluate(net, patchset.features[idx], patchset.labels[idx],
                              len(manifest.classes))
            preds = predictions_from_eval(
                [patchset.artwork_ids[i] for i in idx],
                patchset.rows[idx], patchset.cols[idx], patchset.labels[idx],
                result.probs, manifest.forger_index,
            )
            save_predictions(preds, out / "predictions" / f"{model}_{label}.csv")
            _write_json(out / "reports" / f"eval_{model}_{label}.json", _stamp(cfg, {
                "model": model, "split": label,
                "loss": result.loss, "accuracy": result.accuracy,
                "per_class_accuracy": result.per_class_accuracy,
                "confusion": result.confusion.tolist(),
            }))
            print(f"evaluated {model} on {label}: test acc {result.accuracy:.3f}")
    return 0


def cmd_flag(cfg: RunConfig, only_model: str | None = None,
             only_split: str | None = None) -> int:
    out = Path(cfg.out)
    manifest = _load_corpus(out)
    plans = _selected_plans(out, only_split)
    (out / "flags").mkdir(parents=True, exist_ok=True)
    reports = []
    for model in _selected_models(cfg, only_model):
        for plan in plans:
            label = _split_label(plan)
            pred_path = _require(out / "predictions" / f"{model}_{label}.csv", "eval")
            predictions = load_predictions(pred_path, manifest.forger_index)
            report = build_flag_report(
                predictions, split_id=label, model_id=model,
                model_family=_model_family(model),
                forger_index=manifest.forger_index,
                k=cfg.k, min_patches=cfg.min_patches,
            )
            save_flag_report(report, out / "flags" / f"{model}_{label}.json")
            reports.append(report)
    if len(reports) >= 2:
        matrix, agreement = model_agreement(reports)
        _write_json(out / "flags" / "agreement.json",
                    _stamp(cfg, {"matrix": matrix, "agreement": agreement}))
    artists = {r.id: r.artist for r in manifest.artworks}
    rows = suite_summary_rows(reports, artists)
    save_suite_summary(rows, out / "flags" / "summary.csv")
    flagged = sorted({aid for r in reports for aid in r.flagged_ids()})
    print(f"flag reports: {len(reports)}; paintings flagged anywhere: {len(flagged)}")
    return 0


def _overlay_one(cfg: RunConfig, out: Path, manifest: CorpusManifest,
                 reports, artwork_id: str) -> Path | None:
    record = manifest.record(artwork_id)
    marks = []
    for report in reports:
        if artwork_id not in report.flagged_ids():
            continue
        for p in report.top_patches:
            if p["artwork_id"] == artwork_id:
                mark = (p["row"], p["col"], report.model_family)
                if mark not in marks:
                    marks.append(mark)
    if not marks:
        return None
    image = load_image(record.path)
    grid = plan_grid(record.width, record.height, cfg.patch_size, artwork_id=artwork_id)
    out_path = out / "overlays" / f"{artwork_id}.png"
    out_path.parent.mkdir(parents=True, exist_ok=True)
    return render_overlay(image, grid, sorted(marks), out_path)


def cmd_overlay(cfg: RunConfig, artwork: str | None = None) -> int:
    out = Path(cfg.out)
    manifest = _load_corpus(out)
    flags_dir = _require(out / "flags", "flag")
    reports = [
        load_flag_report(p) for p in sorted(flags_dir.glob("*.json"))
        if p.name != "agreement.json"
    ]
    if artwork:
        targets = [artwork]
    else:
        targets = sorted({aid for r in reports for aid in r.flagged_ids()})
    written = 0
    for aid in targets:
        if _overlay_one(cfg, out, manifest, reports, aid) is not None:
            written += 1
    print(f"wrote {written} overlay images")
    return 0


def cmd_suite(cfg: RunConfig) -> int:
    out = Path(cfg.out)
    if not cfg.manifest:
        # zero-flag runs fall back to the bundled synthetic corpus
        manifest_path, _ = synth_corpus(
            out / "corpus", n_classes=cfg.synth_classes,
            per_class=cfg.synth_per_class, seed=cfg.master_seed,
        )
        cfg.manifest = str(manifest_path)
        print(f"no manifest given; generated synthetic corpus at {manifest_path}")
    cmd_ingest(cfg)
    cmd_split(cfg)
    cmd_patch(cfg)
    cmd_train(cfg)
    cmd_eval(cfg)
    cmd_flag(cfg)
    cmd_overlay(cfg)

    manifest = _load_corpus(out)
    plans = _load_plans(out)
    n_classes = len(manifest.classes)

    model_stats = {}
    for model in cfg.models:
        accs, losses = [], []
        for plan in plans:
            label = _split_label(plan)
            report = json.loads(
                (out / "reports" / f"train_{model}_{label}.json").read_text(encoding="utf-8")
            )["report"]
            accs.append(report["val_accuracy"])
            losses.append(report["min_val_loss"])
        model_stats[model] = {
            "mean_val_accuracy": float(np.mean(accs)),
            "std_val_accuracy": float(np.std(accs)),
            "min_val_loss": float(min(losses)),
        }

    # threshold comparison table (retrains the primary CNN per threshold)
    table2 = []
    cnn_models = [m for m in cfg.models if m.startswith("patchnet-")]
    if cnn_models and cfg.entropy_sweep:
        model = cnn_models[0]
        set_name, builder, train_cfg = _model_spec(cfg, model, n_classes)
        patchset = _load_patchset(out, set_name)
        table2 = entropy_threshold_table(
            builder, patchset, plans, list(cfg.entropy_sweep), train_cfg,
            n_classes, classes=list(manifest.classes),
        )

    # misattribution counts per split (primary model first, then the rest)
    table3 = {}
    for model in cfg.models:
        table3[model] = {}
        for plan in plans:
            label = _split_label(plan)
            flag = load_flag_report(out / "flags" / f"{model}_{label}.json")
            table3[model][label] = {
                "patches": flag.misattributed_patches,
                "paintings": flag.misattributed_paintings,
            }

    # KAN width comparison on the first split only
    table4 = []
    if "kan" in cfg.models:
        width_sweep = list(cfg.kan_width_sweep) or [tuple(cfg.kan_widths)]
        set_name, _, train_cfg = _model_spec(cfg, "kan", n_classes)
        patchset = _load_patchset(out, set_name)
        idx = split_indices(patchset, plans[0], cfg.entropy_threshold)
        grid = SplineGrid(grid_size=cfg.kan_grid_size, order=cfg.kan_spline_order)
        input_dim = 3 * cfg.kan_side * cfg.kan_side
        for widths in width_sweep:
            def builder(seed, widths=tuple(widths)):
                return build_kan(list(widths), input_dim=input_dim, grid=grid,
                                 n_classes=n_classes, seed=seed)
            _, report = train_on_split(
                builder, patchset, plans[0], train_cfg, n_classes,
                classes=list(manifest.classes),
            )
            table4.append({
                "widths": "|".join(str(w) for w in widths),
                "train_patches": int(len(idx["train"])),
                "val_patches": int(len(idx["val"])),
                "min_val_loss": report.min_val_loss,
                "val_accuracy": report.val_accuracy,
            })

    agreement_path = out / "flags" / "agreement.json"
    agreement = (
        json.loads(agreement_path.read_text(encoding="utf-8"))["agreement"]
        if agreement_path.exists() else []
    )
    _write_json(out / "summary.json", _stamp(cfg, {
        "n_artworks": len(manifest.artworks),
        "classes": list(manifest.classes),
        "forger_class": manifest.forger_class,
        "splits": [_split_label(p) for p in plans],
        "model_stats": model_stats,
        "entropy_table": table2,
        "misattribution_table": table3,
        "kan_width_table": table4,
        "agreement": agreement,
    }))
    print(f"suite complete; summary at {out / 'summary.json'}")
    return 0


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(1, f"{self.prog}: error: {message}\n")


def _add_common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="key=value config file; flags override it")
    p.add_argument("--out", help="output directory (default: run)")
    p.add_argument("--master-seed", dest="master_seed", type=int,
                   help="master seed for splits and the synthetic corpus (default 0)")


def _add_corpus_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--manifest", help="manifest CSV (id,artist,path,width,height)")
    p.add_argument("--forger-class", dest="forger_class",
                   help="class treated as the forger (default: class named 'forger', else last)")
    p.add_argument("--min-width", dest="min_width", type=int,
                   help="minimum image width in pixels (default 768)")


def _add_split_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--n-splits", dest="n_splits", type=int,
                   help="number of splits in the suite (default 10)")
    p.add_argument("--test-frac", dest="test_frac", type=float,
                   help="test fraction per split (default 0.10)")
    p.add_argument("--val-frac", dest="val_frac", type=float,
                   help="validation fraction of the non-test remainder (default 0.20)")


def _add_patch_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--patch-size", dest="patch_size", type=int,
                   help="square patch edge in pixels (default 256)")
    p.add_argument("--blur-sigma", dest="blur_sigma", type=float,
                   help="Gaussian blur sigma before patch extraction; 0 disables (default 1.0)")
    p.add_argument("--kan-side", dest="kan_side", type=int,
                   help="downsampled side for flat KAN tensors (default 16)")
    p.add_argument("--cnn-side", dest="cnn_side", type=int,
                   help="downsampled side for CNN tensors (default 32)")


def _add_train_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--models", help="comma list of models (default patchnet-S0,kan)")
    p.add_argument("--entropy-threshold", dest="entropy_threshold",
                   help="mean-entropy filter in bits, or 'none' (default 2.5)")
    p.add_argument("--epochs", type=int, help="max training epochs (default 100)")
    p.add_argument("--batch-size", dest="batch_size", type=int, help="batch size (default 64)")
    p.add_argument("--patience", type=int,
                   help="epochs without val-loss improvement before stopping (default 10)")
    p.add_argument("--kan-lr", dest="kan_lr", type=float, help="KAN SGD learning rate (default 0.05)")
    p.add_argument("--cnn-lr", dest="cnn_lr", type=float, help="PatchNet Adam learning rate (default 0.001)")
    p.add_argument("--train-seed", dest="train_seed", type=int, help="training seed (default 0)")
    p.add_argument("--kan-widths", dest="kan_widths",
                   help="KAN widths, e.g. 120x84x12 (default 120x84x12)")
    p.add_argument("--kan-grid-size", dest="kan_grid_size", type=int,
                   help="spline grid intervals (default 5)")
    p.add_argument("--kan-spline-order", dest="kan_spline_order", type=int,
                   help="spline order (default 3)")


def _add_flag_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--k", type=int, help="top-k disputed patches per split (default 20)")
    p.add_argument("--min-patches", dest="min_patches", type=int,
                   help="top-k patches needed to flag a painting (default 2)")


def make_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="forgeryflag",
                     description="Patch-level art-forgery flagging pipeline.")
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate the synthetic corpus")
    _add_common(p)
    p.add_argument("--classes", dest="synth_classes", type=int,
                   help="number of classes incl. the forger (default 12)")
    p.add_argument("--per-class", dest="synth_per_class", type=int,
                   help="images per class (default 10)")

    p = sub.add_parser("ingest", help="validate a manifest and freeze the corpus")
    _add_common(p); _add_corpus_flags(p)

    p = sub.add_parser("split", help="generate the stratified split suite")
    _add_common(p); _add_split_flags(p)

    p = sub.add_parser("patch", help="extract patches, entropies and tensors")
    _add_common(p); _add_patch_flags(p)

    p = sub.add_parser("train", help="train models per split")
    _add_common(p); _add_patch_flags(p); _add_train_flags(p)
    p.add_argument("--model", help="train a single model tag")
    p.add_argument("--split", help="train a single split label, e.g. T0")

    p = sub.add_parser("eval", help="evaluate checkpoints on test patches")
    _add_common(p); _add_patch_flags(p); _add_train_flags(p)
    p.add_argument("--model", help="evaluate a single model tag")
    p.add_argument("--split", help="evaluate a single split label")

    p = sub.add_parser("flag", help="aggregate predictions into flag reports")
    _add_common(p); _add_train_flags(p); _add_flag_flags(p)
    p.add_argument("--model", help="flag for a single model tag")
    p.add_argument("--split", help="flag for a single split label")

    p = sub.add_parser("overlay", help="render disputed-patch overlays")
    _add_common(p); _add_patch_flags(p)
    p.add_argument("--artwork", help="render a single artwork id")

    p = sub.add_parser("suite", help="run the whole pipeline end to end")
    _add_common(p); _add_corpus_flags(p); _add_split_flags(p)
    _add_patch_flags(p); _add_train_flags(p); _add_flag_flags(p)
    p.add_argument("--classes", dest="synth_classes", type=int,
                   help="classes for the fallback synthetic corpus (default 12)")
    p.add_argument("--per-class", dest="synth_per_class", type=int,
                   help="images per class for the fallback synthetic corpus (default 10)")
    p.add_argument("--entropy-sweep", dest="entropy_sweep",
                   help="comma list of thresholds for the comparison table "
                        "(default none,2.5,3)")
    p.add_argument("--kan-width-sweep", dest="kan_width_sweep",
                   help="comma list of KAN width configs, e.g. 24x16x12,120x84x12")
    return parser


def main(argv=None) -> int:
    parser = make_parser()
    args = parser.parse_args(argv)
    try:
        cfg = build_run_config(args)
        command = args.command
        if command == "synth":
            return cmd_synth(cfg)
        if command == "ingest":
            return cmd_ingest(cfg)
        if command == "split":
            return cmd_split(cfg)
        if command == "patch":
            return cmd_patch(cfg)
        if command == "train":
            return cmd_train(cfg, args.model, args.split)
        if command == "eval":
            return cmd_eval(cfg, args.model, args.split)
        if command == "flag":
            return cmd_flag(cfg, args.model, args.split)
        if command == "overlay":
            return cmd_overlay(cfg, args.artwork)
        if command == "suite":
            return cmd_suite(cfg)
        parser.error(f"unknown command {command!r}")
    except DataError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except NumericalAbort as exc:
        print(f"numerical abort: {exc}", file=sys.stderr)
        return 3
    except ValueError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
