import json
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from forgeryflag.tensorkit import (
    SGD, Adam, Conv2d, Dense, GlobalAvgPool, MaxPool2d, ReLU, Sequential, SiLU,
    load_checkpoint, make_optimizer, save_checkpoint, silu, softmax_xent,
)

from gradcheck import check_network_gradients, rel_error


def conv_oracle(x, w, b, stride, pad):
    """Six-deep nested-loop cross-correlation."""
    n, c_in, h, wd = x.shape
    c_out, _, k, _ = w.shape
    out_h = (h + 2 * pad - k) // stride + 1
    out_w = (wd + 2 * pad - k) // stride + 1
    xp = np.pad(x, ((0, 0), (0, 0), (pad, pad), (pad, pad)))
    out = np.zeros((n, c_out, out_h, out_w), dtype=np.float64)
    for ni in range(n):
        for co in range(c_out):
            for oy in range(out_h):
                for ox in range(out_w):
                    acc = 0.0
                    for ci in range(c_in):
                        for ky in range(k):
                            for kx in range(k):
                                acc += (w[co, ci, ky, kx]
                                        * xp[ni, ci, oy * stride + ky, ox * stride + kx])
                    out[ni, co, oy, ox] = acc + b[co]
    return out


def maxpool_oracle(x, size):
    n, c, h, w = x.shape
    out = np.zeros((n, c, h // size, w // size), dtype=x.dtype)
    for ni in range(n):
        for ci in range(c):
            for oy in range(h // size):
                for ox in range(w // size):
                    out[ni, ci, oy, ox] = x[ni, ci,
                                            oy * size:(oy + 1) * size,
                                            ox * size:(ox + 1) * size].max()
    return out


def single_layer_net(layer, extra=None):
    layers = [layer] + (extra or [])
    return Sequential(layers, header={"arch": "test"}, dtype=np.float64)


class TestConv2d:
    def test_identity_kernel(self, rng):
        conv = Conv2d(1, 1, k=1, rng=rng, dtype=np.float64)
        conv.w[...] = 1.0
        conv.b[...] = 0.0
        x = rng.normal(size=(2, 1, 5, 7))
        assert np.allclose(conv.forward(x), x)

    def test_matches_nested_loop_oracle(self, rng):
        conv = Conv2d(3, 4, k=3, rng=rng, dtype=np.float64)
        x = rng.normal(size=(2, 3, 8, 8))
        expected = conv_oracle(x, conv.w, conv.b, stride=1, pad=0)
        assert np.abs(conv.forward(x) - expected).max() < 1e-5

    def test_strided_padded_oracle(self, rng):
        conv = Conv2d(2, 3, k=3, rng=rng, stride=2, pad=1, dtype=np.float64)
        x = rng.normal(size=(2, 2, 9, 7))
        expected = conv_oracle(x, conv.w, conv.b, stride=2, pad=1)
        out = conv.forward(x)
        assert out.shape == expected.shape
        assert np.abs(out - expected).max() < 1e-10

    def test_output_dims_formula(self, rng):
        conv = Conv2d(1, 1, k=3, rng=rng, stride=2, pad=1)
        out = conv.forward(np.zeros((1, 1, 11, 8), dtype=np.float32))
        assert out.shape == (1, 1, (11 + 2 - 3) // 2 + 1, (8 + 2 - 3) // 2 + 1)

    def test_channel_mismatch(self, rng):
        conv = Conv2d(3, 4, k=3, rng=rng)
        with pytest.raises(ValueError, match="channels"):
            conv.forward(np.zeros((1, 2, 8, 8), dtype=np.float32))

    def test_backward_finite_differences_float64(self, rng):
        net = single_layer_net(Conv2d(2, 3, k=3, rng=rng, pad=1, dtype=np.float64),
                               [GlobalAvgPool()])
        x = rng.normal(size=(3, 2, 6, 6))
        y = rng.integers(0, 3, size=3)
        worst = check_network_gradients(net, x, y, rng)
        assert max(worst.values()) < 1e-6

    def test_backward_finite_differences_float32(self, rng):
        # float32 analytic gradients against float64 finite differences
        net32 = Sequential([Conv2d(2, 3, k=3, rng=rng, pad=1, dtype=np.float32),
                            GlobalAvgPool()], header={"arch": "t"}, dtype=np.float32)
        rng64 = np.random.default_rng(0)
        net64 = Sequential([Conv2d(2, 3, k=3, rng=rng64, pad=1, dtype=np.float64),
                            GlobalAvgPool()], header={"arch": "t"}, dtype=np.float64)
        x = rng.normal(size=(3, 2, 6, 6)).astype(np.float32)
        y = rng.integers(0, 3, size=3)
        worst = check_network_gradients(net32, x, y, rng, fd_net=net64)
        assert max(worst.values()) < 1e-3


class TestElementwise:
    def test_relu_example(self):
        relu = ReLU()
        out = relu.forward(np.array([-1.0, 0.0, 2.0]))
        assert np.array_equal(out, [0.0, 0.0, 2.0])

    def test_relu_backward_masks(self):
        relu = ReLU()
        relu.forward(np.array([-1.0, 0.5, 2.0]))
        assert np.array_equal(relu.backward(np.ones(3)), [0.0, 1.0, 1.0])

    def test_silu_at_zero(self):
        assert silu(np.array([0.0]))[0] == 0.0

    def test_silu_formula(self, rng):
        x = rng.normal(size=100)
        expected = x / (1.0 + np.exp(-x))
        assert np.allclose(silu(x), expected, atol=1e-12)

    def test_silu_layer_gradient(self, rng):
        net = single_layer_net(Dense(4, 3, rng, dtype=np.float64), [SiLU()])
        x = rng.normal(size=(5, 4))
        y = rng.integers(0, 3, size=5)
        worst = check_network_gradients(net, x, y, rng)
        assert max(worst.values()) < 1e-6


class TestDense:
    def test_forward_formula(self, rng):
        dense = Dense(3, 2, rng, dtype=np.float64)
        x = rng.normal(size=(4, 3))
        assert np.allclose(dense.forward(x), x @ dense.w.T + dense.b)

    def test_backward_finite_differences(self, rng):
        net = single_layer_net(Dense(6, 4, rng, dtype=np.float64))
        x = rng.normal(size=(5, 6))
        y = rng.integers(0, 4, size=5)
        worst = check_network_gradients(net, x, y, rng)
        assert max(worst.values()) < 1e-6


class TestMaxPool:
    def test_forward_oracle(self, rng):
        pool = MaxPool2d(2)
        x = rng.normal(size=(2, 3, 6, 8))
        assert np.array_equal(pool.forward(x), maxpool_oracle(x, 2))

    def test_indivisible_rejected(self):
        with pytest.raises(ValueError, match="divisible"):
            MaxPool2d(2).forward(np.zeros((1, 1, 5, 4)))

    def test_backward_routes_to_argmax(self):
        pool = MaxPool2d(2)
        x = np.array([[[[1.0, 2.0], [3.0, 4.0]]]])
        pool.forward(x)
        gx = pool.backward(np.array([[[[5.0]]]]))
        assert np.array_equal(gx, [[[[0.0, 0.0], [0.0, 5.0]]]])

    def test_backward_finite_differences(self, rng):
        net = single_layer_net(Conv2d(1, 3, k=1, rng=rng, dtype=np.float64),
                               [MaxPool2d(2), GlobalAvgPool()])
        x = rng.normal(size=(2, 1, 4, 4))
        y = rng.integers(0, 3, size=2)
        worst = check_network_gradients(net, x, y, rng)
        assert max(worst.values()) < 1e-6


class TestSoftmaxXent:
    def test_uniform_logits_twelve_classes(self):
        loss, probs, grad = softmax_xent(np.zeros(12), 3)
        assert np.allclose(probs, 1.0 / 12.0)
        assert loss == pytest.approx(math.log(12.0), abs=1e-12)
        assert loss == pytest.approx(2.4849, abs=1e-4)

    def test_huge_logit_no_overflow(self):
        logits = np.zeros(12)
        logits[5] = 1000.0
        loss, probs, _ = softmax_xent(logits, 5)
        assert math.isfinite(loss)
        assert loss == pytest.approx(0.0, abs=1e-12)
        assert probs[5] == pytest.approx(1.0, abs=1e-12)

    def test_gradient_matches_finite_differences(self, rng):
        logits = rng.normal(size=12)
        label = 7
        _, _, grad = softmax_xent(logits, label)
        h = 1e-6
        for i in range(12):
            lp = softmax_xent(logits + h * np.eye(12)[i], label)[0]
            lm = softmax_xent(logits - h * np.eye(12)[i], label)[0]
            fd = (lp - lm) / (2 * h)
            assert rel_error(fd, grad[i], floor=1e-4) < 1e-4

    def test_batch_grad_is_mean(self, rng):
        logits = rng.normal(size=(4, 5))
        labels = np.array([0, 1, 2, 3])
        loss, probs, grad = softmax_xent(logits, labels)
        singles = [softmax_xent(logits[i], labels[i]) for i in range(4)]
        assert loss == pytest.approx(np.mean([s[0] for s in singles]), abs=1e-12)
        assert np.allclose(grad, np.stack([s[2] for s in singles]) / 4.0)

    def test_label_out_of_range(self):
        with pytest.raises(ValueError, match="label out of range"):
            softmax_xent(np.zeros(3), 3)

    def test_too_few_classes(self):
        with pytest.raises(ValueError, match="at least 2"):
            softmax_xent(np.zeros(1), 0)

    @settings(max_examples=40, deadline=None)
    @given(st.lists(st.floats(min_value=-500, max_value=500), min_size=2, max_size=16))
    def test_probs_simplex(self, logits):
        _, probs, _ = softmax_xent(np.array(logits), 0)
        assert abs(probs.sum() - 1.0) < 1e-6
        assert (probs >= 0).all()


class TestSGD:
    def test_basic_step(self):
        p = np.array([1.0])
        SGD(0.1).step([p], [np.array([0.5])])
        assert p[0] == pytest.approx(0.95, abs=1e-12)

    def test_zero_gradient(self):
        p = np.array([1.0, -2.0])
        SGD(0.1).step([p], [np.zeros(2)])
        assert np.array_equal(p, [1.0, -2.0])

    def test_momentum_two_steps(self):
        p = np.array([0.0])
        opt = SGD(0.1, momentum=0.9)
        opt.step([p], [np.array([1.0])])   # v=1, p=-0.1
        opt.step([p], [np.array([1.0])])   # v=1.9, p=-0.29
        assert p[0] == pytest.approx(-0.29, abs=1e-12)

    def test_length_mismatch(self):
        with pytest.raises(ValueError):
            SGD(0.1).step([np.zeros(1)], [])


class TestAdam:
    def test_first_step_hand_oracle(self):
        lr, b1, b2, eps = 1e-3, 0.9, 0.999, 1e-8
        p = np.array([1.0])
        Adam(lr, b1, b2, eps).step([p], [np.array([1.0])])
        # by hand: m=0.1, v=0.001; bias-corrected m_hat=v_hat=1;
        # delta = -lr * 1 / (sqrt(1) + eps)
        expected = 1.0 - lr * 1.0 / (1.0 + eps)
        assert p[0] == pytest.approx(expected, abs=1e-15)

    def test_zero_gradient_no_change(self):
        p = np.array([3.0])
        opt = Adam(1e-3)
        opt.step([p], [np.zeros(1)])
        assert p[0] == 3.0

    def test_two_steps_hand_oracle(self):
        lr, b1, b2, eps = 0.1, 0.9, 0.999, 1e-8
        p = np.array([0.0])
        opt = Adam(lr, b1, b2, eps)
        g1, g2 = 2.0, -1.0
        opt.step([p], [np.array([g1])])
        opt.step([p], [np.array([g2])])
        m = (1 - b1) * g1
        v = (1 - b2) * g1 * g1
        p_ref = 0.0 - lr * (m / (1 - b1)) / (math.sqrt(v / (1 - b2)) + eps)
        m = b1 * m + (1 - b1) * g2
        v = b2 * v + (1 - b2) * g2 * g2
        p_ref -= lr * (m / (1 - b1 ** 2)) / (math.sqrt(v / (1 - b2 ** 2)) + eps)
        assert p[0] == pytest.approx(p_ref, abs=1e-14)

    def test_unknown_optimizer(self):
        with pytest.raises(ValueError):
            make_optimizer("nag", 0.1)


class TestRandomShapeGradients:
    def test_twenty_random_configurations(self, rng):
        """Analytic vs central differences on 20 random layer stacks (float64)."""
        worst_overall = 0.0
        for trial in range(20):
            kind = trial % 4
            n = int(rng.integers(1, 4))
            classes = int(rng.integers(2, 5))
            if kind == 0:
                d_in = int(rng.integers(2, 7))
                net = single_layer_net(Dense(d_in, classes, rng, dtype=np.float64))
                x = rng.normal(size=(n, d_in))
            elif kind == 1:
                c = int(rng.integers(1, 3))
                side = int(rng.integers(4, 7))
                net = single_layer_net(
                    Conv2d(c, classes, k=3, rng=rng, pad=1, dtype=np.float64),
                    [GlobalAvgPool()])
                x = rng.normal(size=(n, c, side, side))
            elif kind == 2:
                c = int(rng.integers(1, 3))
                net = single_layer_net(
                    Conv2d(c, classes, k=1, rng=rng, dtype=np.float64),
                    [MaxPool2d(2), GlobalAvgPool()])
                x = rng.normal(size=(n, c, 4, 6))
            else:
                d_in = int(rng.integers(2, 6))
                hidden = int(rng.integers(2, 6))
                net = single_layer_net(
                    Dense(d_in, hidden, rng, dtype=np.float64),
                    [SiLU(), Dense(hidden, classes, rng, dtype=np.float64)])
                x = rng.normal(size=(n, d_in))
            y = rng.integers(0, classes, size=n)
            worst = check_network_gradients(net, x, y, rng, max_per_group=40)
            worst_overall = max(worst_overall, max(worst.values()))
        assert worst_overall < 1e-6


class TestCheckpoint:
    def test_roundtrip(self, tmp_path, rng):
        params = [("a.w", rng.normal(size=(3, 4)).astype(np.float32)),
                  ("a.b", rng.normal(size=4).astype(np.float32))]
        header = {"arch": "test", "seed": 9, "epoch": 2}
        path = tmp_path / "model.ckpt"
        save_checkpoint(path, header, params)
        loaded_header, loaded = load_checkpoint(path)
        assert loaded_header["arch"] == "test"
        assert loaded_header["seed"] == 9
        assert loaded_header["epoch"] == 2
        assert loaded_header["shapes"]["a.w"] == [3, 4]
        for name, arr in params:
            assert np.array_equal(loaded[name], arr)

    def test_header_is_json_line(self, tmp_path):
        path = tmp_path / "m.ckpt"
        save_checkpoint(path, {"arch": "x"}, [("p", np.zeros(2, np.float32))])
        first = path.read_bytes().split(b"\n", 1)[0]
        header = json.loads(first)
        assert header["arch"] == "x"

    def test_trailing_data_rejected(self, tmp_path):
        path = tmp_path / "m.ckpt"
        save_checkpoint(path, {"arch": "x"}, [("p", np.zeros(2, np.float32))])
        with open(path, "ab") as fh:
            fh.write(b"\x00\x00\x00\x00")
        with pytest.raises(ValueError, match="trailing"):
            load_checkpoint(path)


def test_debug_checks_catch_nonfinite(rng):
    from forgeryflag.errors import NumericalAbort
    from forgeryflag.tensorkit import set_debug_checks

    net = Sequential([Dense(3, 2, rng)], header={"arch": "t"}, dtype=np.float32)
    net.layers[0].w[0, 0] = np.inf
    x = rng.normal(size=(2, 3)).astype(np.float32)
    set_debug_checks(True)
    try:
        with pytest.raises(NumericalAbort, match="non-finite"):
            net.forward(x)
    finally:
        set_debug_checks(False)
    # disabled mode lets the values through
    assert not np.isfinite(net.forward(x)).all()


def test_training_determinism(rng):
    """Identical seeds produce bit-identical parameters after N steps."""
    def run():
        r = np.random.default_rng(11)
        net = Sequential([Dense(4, 8, r), ReLU(), Dense(8, 3, r)],
                         header={"arch": "t"}, dtype=np.float32)
        opt = SGD(0.05)
        data_rng = np.random.default_rng(12)
        x = data_rng.normal(size=(32, 4)).astype(np.float32)
        y = data_rng.integers(0, 3, size=32)
        params = [p for _, p in net.params()]
        for _ in range(20):
            _, _, grad = softmax_xent(net.forward(x), y)
            net.backward(grad.astype(np.float32))
            opt.step(params, net.grads())
        return [arr.tobytes() for _, arr in net.params()]

    assert run() == run()
