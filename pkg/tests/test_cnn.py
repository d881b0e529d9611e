import numpy as np
import pytest

from forgeryflag.cnn import (
    PATCHNET_SIZES, PatchNetConfig, build_patchnet, count_parameters, size_sweep,
)
from forgeryflag.tensorkit import softmax_xent

from gradcheck import check_network_gradients


def param_count_oracle(config: PatchNetConfig, head_in: int) -> int:
    """Independent conv/dense parameter counting from the config."""
    total = 3 * config.stem * 9 + config.stem  # stem conv + bias
    ch_in = config.stem
    for ch, blocks in config.stages:
        for _ in range(blocks):
            total += ch_in * ch * 9 + ch
            ch_in = ch
    total += ch_in * config.head + config.head
    total += config.head * config.n_classes + config.n_classes
    return total


class TestBuildPatchnet:
    def test_forward_shape(self, rng):
        net = build_patchnet("S0", input_side=32, seed=0)
        out = net.forward(rng.normal(size=(2, 3, 32, 32)).astype(np.float32))
        assert out.shape == (2, 12)

    def test_single_sample_shape_contract(self, rng):
        net = build_patchnet("S0", input_side=32, seed=0)
        out = net.forward(rng.normal(size=(1, 3, 32, 32)).astype(np.float32))
        assert out.shape == (1, 12)

    def test_input_side_64(self, rng):
        net = build_patchnet("S1", input_side=64, seed=0)
        out = net.forward(rng.normal(size=(1, 3, 64, 64)).astype(np.float32))
        assert out.shape == (1, 12)

    def test_parameter_counts_strictly_increase(self):
        counts = [count_parameters(build_patchnet(s)) for s in ("S0", "S1", "S2")]
        assert counts[0] < counts[1] < counts[2]

    def test_parameter_count_oracle(self):
        for size, config in PATCHNET_SIZES.items():
            net = build_patchnet(size)
            assert count_parameters(net) == param_count_oracle(config, None)

    def test_softmax_sums_to_one(self, rng):
        net = build_patchnet("S0", seed=1)
        logits = net.forward(rng.normal(size=(3, 3, 32, 32)).astype(np.float32))
        _, probs, _ = softmax_xent(logits, np.zeros(3, dtype=np.int64))
        assert np.abs(probs.sum(axis=1) - 1.0).max() < 1e-6

    def test_unknown_size(self):
        with pytest.raises(ValueError, match="unknown PatchNet size"):
            build_patchnet("S9")

    def test_bad_input_side(self):
        with pytest.raises(ValueError, match="input_side"):
            build_patchnet("S0", input_side=48)

    def test_header(self):
        net = build_patchnet("S2", input_side=32, seed=5)
        assert net.header["arch"] == "patchnet-S2"
        assert net.header["seed"] == 5

    def test_deterministic_init(self):
        a = build_patchnet("S0", seed=4)
        b = build_patchnet("S0", seed=4)
        for (_, pa), (_, pb) in zip(a.params(), b.params()):
            assert np.array_equal(pa, pb)

    def test_config_validation(self):
        with pytest.raises(ValueError):
            PatchNetConfig(size="bad", stem=0, stages=((8, 1),), head=8)
        with pytest.raises(ValueError):
            PatchNetConfig(size="bad", stem=8, stages=((8, 0),), head=8)


def test_gradients_all_layers(rng):
    net = build_patchnet("S0", input_side=32, seed=3, dtype=np.float64)
    x = rng.normal(size=(3, 3, 32, 32))
    y = rng.integers(0, 12, size=3)
    worst = check_network_gradients(net, x, y, rng, max_per_group=25)
    assert max(worst.values()) < 1e-6


def test_size_sweep_on_separable_images(rng):
    """One model per size on synthetic separable data; all sizes learn it."""
    from forgeryflag.trainer import TrainConfig, fit_network

    n_classes, per_class, side = 6, 14, 32
    xs, ys = [], []
    for c in range(n_classes):
        base = np.zeros((3, side, side), dtype=np.float32)
        base[c % 3, :, :] = 0.3 + 0.22 * (c // 3)
        base[(c + 1) % 3, :, :] = 0.9 - 0.25 * (c // 3)
        xs.append(base + rng.normal(scale=0.05, size=(per_class, 3, side, side)))
        ys.append(np.full(per_class, c))
    x = np.concatenate(xs).astype(np.float32)
    y = np.concatenate(ys)
    order = rng.permutation(len(y))
    x, y = x[order], y[order]
    split = int(0.7 * len(y))

    def train_fn(size):
        net = build_patchnet(size, input_side=side, n_classes=n_classes, seed=1)
        config = TrainConfig(epochs=14, batch_size=16, optimizer="adam",
                             learning_rate=1e-3, patience=14, seed=0)
        _, report = fit_network(net, x[:split], y[:split], x[split:], y[split:],
                                config, n_classes)
        return report

    rows = size_sweep(["S0", "S1", "S2"], train_fn)
    assert [r["size"] for r in rows] == ["S0", "S1", "S2"]
    assert all(r["val_accuracy"] >= 0.9 for r in rows), rows


class TestSizeSweep:
    class _StubReport:
        def __init__(self, loss, acc):
            self.min_val_loss = loss
            self.val_accuracy = acc

    def test_single_size(self):
        rows = size_sweep(["S0"], lambda s: self._StubReport(0.5, 0.9))
        assert len(rows) == 1
        assert rows[0]["size"] == "S0"

    def test_rows_sorted_by_size(self):
        seen = []

        def fake_train(size):
            seen.append(size)
            return self._StubReport(0.1, 0.99)

        rows = size_sweep(["S2", "S0", "S1"], fake_train)
        assert [r["size"] for r in rows] == ["S0", "S1", "S2"]
        assert seen == ["S0", "S1", "S2"]

    def test_empty_rejected(self):
        with pytest.raises(ValueError):
            size_sweep([], lambda s: None)
