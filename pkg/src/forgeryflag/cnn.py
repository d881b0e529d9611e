"""PatchNet: a small from-scratch CNN family (S0, S1, S2).

Three sizes of the same stem + staged conv architecture, used to ask the
"does a bigger model help?" question at desk scale. Parameter counts grow
strictly S0 < S1 < S2; accuracy need not (and in practice may not) follow.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .tensorkit import (
    Conv2d, Dense, GlobalAvgPool, Layer, MaxPool2d, ReLU, Sequential,
)


@dataclass(frozen=True)
class PatchNetConfig:
    size: str
    stem: int
    stages: tuple[tuple[int, int], ...]  # (channels, blocks) per stage
    head: int
    n_classes: int = 12

    def __post_init__(self):
        if self.stem < 1 or self.head < 1:
            raise ValueError("stem and head widths must be positive")
        for ch, blocks in self.stages:
            if ch < 1 or blocks < 1:
                raise ValueError("stage channels and blocks must be positive")


PATCHNET_SIZES: dict[str, PatchNetConfig] = {
    "S0": PatchNetConfig(size="S0", stem=16, stages=((32, 1), (64, 1)), head=64),
    "S1": PatchNetConfig(size="S1", stem=32, stages=((64, 1), (128, 1)), head=128),
    "S2": PatchNetConfig(size="S2", stem=32, stages=((64, 2), (128, 2)), head=128),
}


class _Flatten(Layer):
    def forward(self, x):
        self._shape = x.shape
        return x.reshape(x.shape[0], -1)

    def backward(self, grad):
        return grad.reshape(self._shape)


def build_patchnet(
    size: str | PatchNetConfig,
    input_side: int = 32,
    n_classes: int = 12,
    seed: int = 0,
    dtype=np.float32,
) -> Sequential:
    """Stem conv, staged conv/relu/maxpool blocks, global average, dense head.

    Input is (N, 3, side, side) with side in {32, 64}.
    """
    if isinstance(size, str):
        if size not in PATCHNET_SIZES:
            raise ValueError(f"unknown PatchNet size {size!r}; choose from {sorted(PATCHNET_SIZES)}")
        config = PATCHNET_SIZES[size]
    else:
        config = size
    if input_side not in (32, 64):
        raise ValueError(f"input_side must be 32 or 64, got {input_side}")
    if config.n_classes != n_classes:
        config = PatchNetConfig(
            size=config.size, stem=config.stem, stages=config.stages,
            head=config.head, n_classes=n_classes,
        )
    rng = np.random.default_rng([seed, 0])
    layers: list[Layer] = [
        Conv2d(3, config.stem, k=3, rng=rng, stride=1, pad=1, dtype=dtype),
        ReLU(),
    ]
    ch_in = config.stem
    for ch, blocks in config.stages:
        for _ in range(blocks):
            layers.append(Conv2d(ch_in, ch, k=3, rng=rng, stride=1, pad=1, dtype=dtype))
            layers.append(ReLU())
            ch_in = ch
        layers.append(MaxPool2d(2))
    layers.append(GlobalAvgPool())
    layers.append(Dense(ch_in, config.head, rng=rng, dtype=dtype))
    layers.append(ReLU())
    layers.append(Dense(config.head, config.n_classes, rng=rng, dtype=dtype))
    header = {
        "arch": f"patchnet-{config.size}",
        "input_side": input_side,
        "n_classes": config.n_classes,
        "seed": seed,
    }
    net = Sequential(layers, header=header, dtype=dtype)
    net.input_side = input_side
    return net


def count_parameters(net) -> int:
    return sum(arr.size for _, arr in net.params())


def size_sweep(sizes, train_fn) -> list[dict]:
    """Train one model per size tag and tabulate the validation outcome.

    `train_fn(size)` must return a report carrying min_val_loss and
    val_accuracy attributes (a TrainReport fits). Rows come back sorted by
    size tag.
    """
    sizes = list(sizes)
    if not sizes:
        raise ValueError("need at least one size")
    rows = []
    for size in sorted(sizes):
        report = train_fn(size)
        rows.append({
            "size": size,
            "min_val_loss": report.min_val_loss,
            "val_accuracy": report.val_accuracy,
        })
    return rows
