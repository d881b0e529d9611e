"""Seeded training loop with validation tracking and early stopping.

The loop is model-agnostic: anything exposing forward/backward/params/grads
(KanNetwork, the PatchNet Sequential) trains the same way. The checkpoint
returned is always the parameters of the epoch with the lowest validation
loss. Model-init and data-shuffle randomness come from separate seed
streams, so changing one never perturbs the other.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import cnn as cnn_mod
from . import kan as kan_mod
from .corpus import SplitPlan
from .errors import DataError, NumericalAbort
from .patching import PatchSet
from .tensorkit import load_checkpoint, make_optimizer, save_checkpoint, softmax_xent


@dataclass
class TrainConfig:
    epochs: int = 100
    batch_size: int = 64
    optimizer: str = "sgd"
    learning_rate: float = 0.05
    momentum: float = 0.0
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8
    patience: int = 10
    seed: int = 0
    entropy_threshold: float | None = 2.5
    blur_sigma: float = 1.0

    def __post_init__(self):
        if self.epochs < 1:
            raise ValueError("epochs must be >= 1")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if self.patience < 0 or self.patience > self.epochs:
            raise ValueError("patience must lie in [0, epochs]")

    def to_dict(self) -> dict:
        return {
            "epochs": self.epochs, "batch_size": self.batch_size,
            "optimizer": self.optimizer, "learning_rate": self.learning_rate,
            "momentum": self.momentum, "beta1": self.beta1, "beta2": self.beta2,
            "epsilon": self.epsilon, "patience": self.patience, "seed": self.seed,
            "entropy_threshold": self.entropy_threshold, "blur_sigma": self.blur_sigma,
        }


KAN_DEFAULTS = dict(optimizer="sgd", learning_rate=0.05, batch_size=64)
CNN_DEFAULTS = dict(optimizer="adam", learning_rate=1e-3, batch_size=64)


@dataclass
class EvalResult:
    loss: float
    accuracy: float
    per_class_accuracy: list[float | None]
    confusion: np.ndarray
    probs: np.ndarray
    preds: np.ndarray


@dataclass
class TrainReport:
    entries: list[dict]
    min_val_loss: float
    best_epoch: int
    val_accuracy: float
    test_accuracy: float | None = None
    per_class_accuracy: list[float | None] | None = None
    confusion: list[list[int]] | None = None

    def to_dict(self) -> dict:
        return {
            "entries": self.entries,
            "min_val_loss": self.min_val_loss,
            "best_epoch": self.best_epoch,
            "val_accuracy": self.val_accuracy,
            "test_accuracy": self.test_accuracy,
            "per_class_accuracy": self.per_class_accuracy,
            "confusion": self.confusion,
        }


@dataclass
class Checkpoint:
    header: dict
    params: dict[str, np.ndarray]

    def save(self, path: str | Path) -> None:
        save_checkpoint(path, self.header, list(self.params.items()))

    @classmethod
    def load(cls, path: str | Path) -> "Checkpoint":
        header, params = load_checkpoint(path)
        return cls(header=header, params=params)

    def build_network(self, dtype=np.float32):
        net = network_from_header(self.header, dtype=dtype)
        for name, arr in net.params():
            arr[...] = self.params[name].astype(arr.dtype)
        return net


def network_from_header(header: dict, dtype=np.float32):
    arch = header["arch"]
    if arch == "kan":
        grid = kan_mod.SplineGrid.from_dict(header["grid"])
        return kan_mod.KanNetwork(list(header["widths"]), grid,
                                  seed=int(header.get("seed", 0)), dtype=dtype)
    if arch.startswith("patchnet-"):
        return cnn_mod.build_patchnet(
            arch.split("-", 1)[1], input_side=int(header.get("input_side", 32)),
            n_classes=int(header.get("n_classes", 12)),
            seed=int(header.get("seed", 0)), dtype=dtype,
        )
    raise ValueError(f"unknown architecture {arch!r}")


def evaluate(net, features: np.ndarray, labels: np.ndarray, n_classes: int,
             batch_size: int = 256) -> EvalResult:
    """Loss, accuracy, per-class accuracy, confusion and per-patch softmax."""
    n = len(labels)
    if n == 0:
        raise ValueError("empty evaluation set")
    probs = np.empty((n, n_classes), dtype=np.float64)
    total_loss = 0.0
    for start in range(0, n, batch_size):
        stop = min(start + batch_size, n)
        x = features[start:stop].astype(net.dtype, copy=False)
        loss, p, _ = softmax_xent(net.forward(x), labels[start:stop])
        probs[start:stop] = p
        total_loss += loss * (stop - start)
    preds = probs.argmax(axis=1)
    confusion = np.zeros((n_classes, n_classes), dtype=np.int64)
    np.add.at(confusion, (labels, preds), 1)
    row_sums = confusion.sum(axis=1)
    per_class = [
        float(confusion[c, c] / row_sums[c]) if row_sums[c] else None
        for c in range(n_classes)
    ]
    return EvalResult(
        loss=total_loss / n,
        accuracy=float((preds == labels).mean()),
        per_class_accuracy=per_class,
        confusion=confusion,
        probs=probs,
        preds=preds,
    )


def fit_network(
    net,
    train_x: np.ndarray,
    train_y: np.ndarray,
    val_x: np.ndarray | None,
    val_y: np.ndarray | None,
    config: TrainConfig,
    n_classes: int,
    shuffle_seed=None,
) -> tuple[list[tuple[str, np.ndarray]], TrainReport]:
    """Run the training loop; returns best-epoch parameters and the report.

    Early stopping tracks validation loss (training loss when no validation
    set is given); training halts once the tracked loss has failed to
    improve for `patience` consecutive epochs, so patience 0 trains exactly
    one epoch.
    """
    if len(train_x) == 0:
        raise DataError("empty training set")
    has_val = val_x is not None and len(val_x) > 0
    if shuffle_seed is None:
        shuffle_seed = [config.seed, 1]
    rng = np.random.default_rng(shuffle_seed)
    optimizer = make_optimizer(
        config.optimizer, config.learning_rate, momentum=config.momentum,
        beta1=config.beta1, beta2=config.beta2, epsilon=config.epsilon,
    )
    params = [arr for _, arr in net.params()]
    entries: list[dict] = []
    best_loss = math.inf
    best_epoch = -1
    best_params: list[tuple[str, np.ndarray]] = []
    best_val_accuracy = math.nan
    since_improved = 0
    n = len(train_x)
    for epoch in range(config.epochs):
        order = rng.permutation(n)
        epoch_loss = 0.0
        for start in range(0, n, config.batch_size):
            idx = order[start:start + config.batch_size]
            x = train_x[idx].astype(net.dtype, copy=False)
            loss, _, grad = softmax_xent(net.forward(x), train_y[idx])
            if not math.isfinite(loss):
                raise NumericalAbort(
                    f"non-finite training loss at epoch {epoch}, batch {start // config.batch_size}"
                )
            net.backward(grad.astype(net.dtype, copy=False))
            optimizer.step(params, net.grads())
            epoch_loss += loss * len(idx)
        train_loss = epoch_loss / n
        entry = {"epoch": epoch, "train_loss": train_loss,
                 "val_loss": None, "val_accuracy": None}
        if has_val:
            val = evaluate(net, val_x, val_y, n_classes)
            if not math.isfinite(val.loss):
                raise NumericalAbort(f"non-finite validation loss at epoch {epoch}")
            entry["val_loss"] = val.loss
            entry["val_accuracy"] = val.accuracy
            tracked = val.loss
        else:
            tracked = train_loss
        entries.append(entry)
        if tracked < best_loss:
            best_loss = tracked
            best_epoch = epoch
            best_params = [(name, arr.copy()) for name, arr in net.params()]
            best_val_accuracy = entry["val_accuracy"] if has_val else math.nan
            since_improved = 0
        else:
            since_improved += 1
        if since_improved >= config.patience:
            break
    for name, arr in best_params:
        net.set_param(name, arr)
    report = TrainReport(
        entries=entries,
        min_val_loss=best_loss,
        best_epoch=best_epoch,
        val_accuracy=best_val_accuracy,
    )
    return best_params, report


def split_indices(patchset: PatchSet, plan: SplitPlan,
                  entropy_threshold: float | None) -> dict[str, np.ndarray]:
    """Patch indices per subset, with the entropy filter applied uniformly."""
    subsets = {"train": [], "val": [], "test": []}
    threshold = -math.inf if entropy_threshold is None else entropy_threshold
    for i, artwork_id in enumerate(patchset.artwork_ids):
        if patchset.entropies[i] <= threshold:
            continue
        subset = plan.assignment.get(artwork_id)
        if subset is None:
            raise DataError(f"artwork {artwork_id!r} missing from split plan")
        subsets[subset].append(i)
    return {k: np.array(v, dtype=np.int64) for k, v in subsets.items()}


def train_on_split(
    builder,
    patchset: PatchSet,
    plan: SplitPlan,
    config: TrainConfig,
    n_classes: int,
    classes: list[str] | None = None,
    model_seed: int | None = None,
) -> tuple[Checkpoint, TrainReport]:
    """Train one model on one split of a patch set.

    `builder(seed)` constructs a fresh network. The model seed defaults to
    the plan seed, so it is independent of the data-shuffle seed stream
    (config.seed): changing one never perturbs the other.
    """
    idx = split_indices(patchset, plan, config.entropy_threshold)
    train_y = patchset.labels[idx["train"]]
    present = set(np.unique(train_y).tolist())
    for c in range(n_classes):
        if c not in present:
            name = classes[c] if classes else str(c)
            raise DataError(f"class absent from training set: {name}")
    if model_seed is None:
        model_seed = plan.seed
    net = builder(model_seed)
    best_params, report = fit_network(
        net,
        patchset.features[idx["train"]], train_y,
        patchset.features[idx["val"]], patchset.labels[idx["val"]],
        config, n_classes,
        shuffle_seed=[config.seed, plan.seed, 1],
    )
    if len(idx["test"]):
        test = evaluate(net, patchset.features[idx["test"]],
                        patchset.labels[idx["test"]], n_classes)
        report.test_accuracy = test.accuracy
        report.per_class_accuracy = test.per_class_accuracy
        report.confusion = test.confusion.tolist()
    header = dict(net.header)
    header.update({
        "split_seed": plan.seed,
        "best_epoch": report.best_epoch,
        "epoch": report.best_epoch,
        "train_config": config.to_dict(),
    })
    checkpoint = Checkpoint(header=header, params=dict(best_params))
    return checkpoint, report


@dataclass
class SuiteResult:
    rows: list[dict]
    mean_val_accuracy: float
    std_val_accuracy: float
    reports: list[TrainReport] = field(default_factory=list)
    checkpoints: list[Checkpoint] = field(default_factory=list)


def suite_run(
    builder,
    patchset: PatchSet,
    plans: list[SplitPlan],
    config: TrainConfig,
    n_classes: int,
    classes: list[str] | None = None,
) -> SuiteResult:
    """Train one model per split; aggregate validation accuracy mean and
    population standard deviation."""
    if not plans:
        raise ValueError("need at least one split plan")
    rows, reports, checkpoints = [], [], []
    for plan in plans:
        ckpt, report = train_on_split(
            builder, patchset, plan, config, n_classes, classes=classes
        )
        rows.append({
            "seed": plan.seed,
            "min_val_loss": report.min_val_loss,
            "val_accuracy": report.val_accuracy,
        })
        reports.append(report)
        checkpoints.append(ckpt)
    accs = np.array([r["val_accuracy"] for r in rows], dtype=np.float64)
    return SuiteResult(
        rows=rows,
        mean_val_accuracy=float(accs.mean()),
        std_val_accuracy=float(accs.std()),
        reports=reports,
        checkpoints=checkpoints,
    )


def entropy_threshold_table(
    builder,
    patchset: PatchSet,
    plans: list[SplitPlan],
    thresholds,
    config: TrainConfig,
    n_classes: int,
    classes: list[str] | None = None,
) -> list[dict]:
    """Accuracy comparison across entropy thresholds on identical splits.

    One row per threshold: mean retained train/val patch counts across the
    splits, the lowest validation loss reached by any split, and the
    mean/std validation accuracy.
    """
    rows = []
    for threshold in thresholds:
        cfg = TrainConfig(**{**config.to_dict(), "entropy_threshold": threshold})
        counts_train, counts_val = [], []
        for plan in plans:
            idx = split_indices(patchset, plan, threshold)
            counts_train.append(len(idx["train"]))
            counts_val.append(len(idx["val"]))
        result = suite_run(builder, patchset, plans, cfg, n_classes, classes=classes)
        rows.append({
            "threshold": "none" if threshold is None else threshold,
            "train_patches": float(np.mean(counts_train)),
            "val_patches": float(np.mean(counts_val)),
            "min_val_loss": float(min(r["min_val_loss"] for r in result.rows)),
            "avg_val_accuracy": result.mean_val_accuracy,
            "std_val_accuracy": result.std_val_accuracy,
        })
    return rows
