"""Minimal dense-tensor layer kit with explicit forward/backward passes.

Tensors are contiguous row-major numpy arrays, float32 for training with a
float64 mode for verification (gradient checks run in float64). Every layer
caches what its backward pass needs; gradients are recomputed per batch, so
there is no accumulation state to reset. Convolution runs as a patch-matrix
(im2col) multiplication; the nested-loop form lives only in the test suite
as an oracle.
"""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from .errors import NumericalAbort

DEBUG_CHECKS = False


def set_debug_checks(enabled: bool) -> None:
    """Toggle NaN/Inf verification after every forward and backward pass."""
    global DEBUG_CHECKS
    DEBUG_CHECKS = enabled


def check_finite(arr: np.ndarray, where: str) -> None:
    if not np.all(np.isfinite(arr)):
        raise NumericalAbort(f"non-finite values in {where}")


def kaiming_uniform(rng: np.random.Generator, shape: tuple[int, ...], fan_in: int, dtype=np.float32) -> np.ndarray:
    bound = np.sqrt(6.0 / fan_in)
    return rng.uniform(-bound, bound, size=shape).astype(dtype)


def sigmoid(x: np.ndarray) -> np.ndarray:
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def silu(x: np.ndarray) -> np.ndarray:
    return x * sigmoid(x)


def silu_grad(x: np.ndarray) -> np.ndarray:
    s = sigmoid(x)
    return s * (1.0 + x * (1.0 - s))


class Layer:
    """Forward/backward building block; parameters exposed as named arrays."""

    def params(self) -> list[tuple[str, np.ndarray]]:
        return []

    def grads(self) -> list[np.ndarray]:
        return []

    def forward(self, x: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def backward(self, grad: np.ndarray) -> np.ndarray:
        raise NotImplementedError


class ReLU(Layer):
    def forward(self, x):
        self._mask = x > 0
        return np.where(self._mask, x, 0.0)

    def backward(self, grad):
        return np.where(self._mask, grad, 0.0)


class SiLU(Layer):
    def forward(self, x):
        self._x = x
        return silu(x)

    def backward(self, grad):
        return grad * silu_grad(self._x)


class Dense(Layer):
    """Affine map y = x W^T + b on (N, in) batches."""

    def __init__(self, in_dim: int, out_dim: int, rng: np.random.Generator, dtype=np.float32):
        self.w = kaiming_uniform(rng, (out_dim, in_dim), fan_in=in_dim, dtype=dtype)
        self.b = np.zeros(out_dim, dtype=dtype)
        self.gw = np.zeros_like(self.w)
        self.gb = np.zeros_like(self.b)

    def params(self):
        return [("w", self.w), ("b", self.b)]

    def grads(self):
        return [self.gw, self.gb]

    def forward(self, x):
        self._x = x
        return x @ self.w.T + self.b

    def backward(self, grad):
        self.gw = grad.T @ self._x
        self.gb = grad.sum(axis=0)
        return grad @ self.w


def im2col(x: np.ndarray, k: int, stride: int, pad: int) -> np.ndarray:
    """(N, C, H, W) -> (N * out_h * out_w, C * k * k) patch matrix."""
    n, c, h, w = x.shape
    out_h = (h + 2 * pad - k) // stride + 1
    out_w = (w + 2 * pad - k) // stride + 1
    if pad:
        x = np.pad(x, ((0, 0), (0, 0), (pad, pad), (pad, pad)))
    cols = np.empty((n, c, k, k, out_h, out_w), dtype=x.dtype)
    for i in range(k):
        i_max = i + stride * out_h
        for j in range(k):
            j_max = j + stride * out_w
            cols[:, :, i, j, :, :] = x[:, :, i:i_max:stride, j:j_max:stride]
    return cols.transpose(0, 4, 5, 1, 2, 3).reshape(n * out_h * out_w, -1)


def col2im(cols: np.ndarray, x_shape: tuple[int, ...], k: int, stride: int, pad: int) -> np.ndarray:
    """Scatter-add inverse of im2col (gradients of overlapping windows sum)."""
    n, c, h, w = x_shape
    out_h = (h + 2 * pad - k) // stride + 1
    out_w = (w + 2 * pad - k) // stride + 1
    cols = cols.reshape(n, out_h, out_w, c, k, k).transpose(0, 3, 4, 5, 1, 2)
    img = np.zeros((n, c, h + 2 * pad, w + 2 * pad), dtype=cols.dtype)
    for i in range(k):
        i_max = i + stride * out_h
        for j in range(k):
            j_max = j + stride * out_w
            img[:, :, i:i_max:stride, j:j_max:stride] += cols[:, :, i, j, :, :]
    if pad:
        return img[:, :, pad:-pad, pad:-pad]
    return img


class Conv2d(Layer):
    """Cross-correlation with square kernels over (N, C, H, W) batches."""

    def __init__(self, in_ch: int, out_ch: int, k: int, rng: np.random.Generator,
                 stride: int = 1, pad: int = 0, dtype=np.float32):
        if stride < 1:
            raise ValueError("stride must be >= 1")
        self.k, self.stride, self.pad = k, stride, pad
        fan_in = in_ch * k * k
        self.w = kaiming_uniform(rng, (out_ch, in_ch, k, k), fan_in=fan_in, dtype=dtype)
        self.b = np.zeros(out_ch, dtype=dtype)
        self.gw = np.zeros_like(self.w)
        self.gb = np.zeros_like(self.b)

    def params(self):
        return [("w", self.w), ("b", self.b)]

    def grads(self):
        return [self.gw, self.gb]

    def forward(self, x):
        n, c, h, w = x.shape
        if c != self.w.shape[1]:
            raise ValueError(f"expected {self.w.shape[1]} input channels, got {c}")
        self._x_shape = x.shape
        self._cols = im2col(x, self.k, self.stride, self.pad)
        out_ch = self.w.shape[0]
        out_h = (h + 2 * self.pad - self.k) // self.stride + 1
        out_w = (w + 2 * self.pad - self.k) // self.stride + 1
        out = self._cols @ self.w.reshape(out_ch, -1).T + self.b
        out = out.reshape(n, out_h, out_w, out_ch).transpose(0, 3, 1, 2)
        if DEBUG_CHECKS:
            check_finite(out, "conv2d forward")
        return out

    def backward(self, grad):
        out_ch = self.w.shape[0]
        g2d = grad.transpose(0, 2, 3, 1).reshape(-1, out_ch)
        self.gw = (g2d.T @ self._cols).reshape(self.w.shape)
        self.gb = g2d.sum(axis=0)
        gcols = g2d @ self.w.reshape(out_ch, -1)
        return col2im(gcols, self._x_shape, self.k, self.stride, self.pad)


class MaxPool2d(Layer):
    """Non-overlapping max pooling; requires spatial dims divisible by size."""

    def __init__(self, size: int = 2):
        self.size = size

    def forward(self, x):
        n, c, h, w = x.shape
        p = self.size
        if h % p or w % p:
            raise ValueError(f"spatial dims ({h}, {w}) not divisible by pool size {p}")
        windows = (
            x.reshape(n, c, h // p, p, w // p, p)
            .transpose(0, 1, 2, 4, 3, 5)
            .reshape(n, c, h // p, w // p, p * p)
        )
        self._argmax = windows.argmax(axis=-1)
        self._x_shape = x.shape
        return np.take_along_axis(windows, self._argmax[..., None], axis=-1)[..., 0]

    def backward(self, grad):
        n, c, h, w = self._x_shape
        p = self.size
        windows = np.zeros((n, c, h // p, w // p, p * p), dtype=grad.dtype)
        np.put_along_axis(windows, self._argmax[..., None], grad[..., None], axis=-1)
        return (
            windows.reshape(n, c, h // p, w // p, p, p)
            .transpose(0, 1, 2, 4, 3, 5)
            .reshape(n, c, h, w)
        )


class GlobalAvgPool(Layer):
    def forward(self, x):
        self._x_shape = x.shape
        return x.mean(axis=(2, 3))

    def backward(self, grad):
        n, c, h, w = self._x_shape
        return np.broadcast_to(grad[:, :, None, None], (n, c, h, w)) / (h * w)


class Sequential:
    """Layer chain exposing the network protocol the trainer expects."""

    def __init__(self, layers: list[Layer], header: dict, dtype=np.float32):
        self.layers = layers
        self.header = header
        self.dtype = np.dtype(dtype)

    def forward(self, x: np.ndarray) -> np.ndarray:
        for i, layer in enumerate(self.layers):
            x = layer.forward(x)
            if DEBUG_CHECKS:
                check_finite(x, f"{self.header.get('arch', '?')} forward layer {i}")
        return x

    def backward(self, grad: np.ndarray) -> np.ndarray:
        for i, layer in reversed(list(enumerate(self.layers))):
            grad = layer.backward(grad)
            if DEBUG_CHECKS:
                check_finite(grad, f"{self.header.get('arch', '?')} backward layer {i}")
        return grad

    def params(self) -> list[tuple[str, np.ndarray]]:
        out = []
        for i, layer in enumerate(self.layers):
            for name, arr in layer.params():
                out.append((f"layer{i}.{name}", arr))
        return out

    def grads(self) -> list[np.ndarray]:
        out = []
        for layer in self.layers:
            out.extend(layer.grads())
        return out

    def set_param(self, name: str, value: np.ndarray) -> None:
        for pname, arr in self.params():
            if pname == name:
                arr[...] = value
                return
        raise KeyError(name)


def softmax_xent(logits: np.ndarray, labels) -> tuple[float, np.ndarray, np.ndarray]:
    """Stabilized softmax + cross-entropy.

    Accepts a single logit vector with an int label, or an (N, C) batch with
    a label vector. Returns (mean loss, probabilities, gradient of the mean
    loss with respect to the logits).
    """
    logits = np.asarray(logits)
    single = logits.ndim == 1
    if single:
        logits = logits[None, :]
        labels = np.array([labels])
    else:
        labels = np.asarray(labels)
    n, n_classes = logits.shape
    if n_classes < 2:
        raise ValueError("need at least 2 classes")
    if labels.min() < 0 or labels.max() >= n_classes:
        raise ValueError("label out of range")
    shifted = logits - logits.max(axis=1, keepdims=True)
    exp = np.exp(shifted)
    probs = exp / exp.sum(axis=1, keepdims=True)
    picked = probs[np.arange(n), labels]
    loss = float(-np.log(np.maximum(picked, np.finfo(probs.dtype).tiny)).mean())
    grad = probs.copy()
    grad[np.arange(n), labels] -= 1.0
    grad /= n
    if single:
        return loss, probs[0], grad[0]
    return loss, probs, grad


class SGD:
    """Plain stochastic gradient descent with optional classical momentum."""

    kind = "sgd"

    def __init__(self, learning_rate: float, momentum: float = 0.0):
        self.learning_rate = learning_rate
        self.momentum = momentum
        self.step_count = 0
        self._velocity: list[np.ndarray] | None = None

    def step(self, params: list[np.ndarray], grads: list[np.ndarray]) -> None:
        if len(params) != len(grads):
            raise ValueError("params/grads length mismatch")
        self.step_count += 1
        if self.momentum == 0.0:
            for p, g in zip(params, grads):
                p -= (self.learning_rate * g).astype(p.dtype, copy=False)
            return
        if self._velocity is None:
            self._velocity = [np.zeros_like(p) for p in params]
        for p, g, v in zip(params, grads, self._velocity):
            v *= self.momentum
            v += g.astype(p.dtype, copy=False)
            p -= self.learning_rate * v


class Adam:
    """Adam with the standard bias-corrected moment estimates."""

    kind = "adam"

    def __init__(self, learning_rate: float = 1e-3, beta1: float = 0.9,
                 beta2: float = 0.999, epsilon: float = 1e-8):
        self.learning_rate = learning_rate
        self.beta1 = beta1
        self.beta2 = beta2
        self.epsilon = epsilon
        self.step_count = 0
        self._m: list[np.ndarray] | None = None
        self._v: list[np.ndarray] | None = None

    def step(self, params: list[np.ndarray], grads: list[np.ndarray]) -> None:
        if len(params) != len(grads):
            raise ValueError("params/grads length mismatch")
        if self._m is None:
            self._m = [np.zeros_like(p) for p in params]
            self._v = [np.zeros_like(p) for p in params]
        self.step_count += 1
        t = self.step_count
        bc1 = 1.0 - self.beta1 ** t
        bc2 = 1.0 - self.beta2 ** t
        for p, g, m, v in zip(params, grads, self._m, self._v):
            g = g.astype(p.dtype, copy=False)
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * g * g
            m_hat = m / bc1
            v_hat = v / bc2
            p -= self.learning_rate * m_hat / (np.sqrt(v_hat) + self.epsilon)


def make_optimizer(name: str, learning_rate: float, momentum: float = 0.0,
                   beta1: float = 0.9, beta2: float = 0.999, epsilon: float = 1e-8):
    if name == "sgd":
        return SGD(learning_rate, momentum=momentum)
    if name == "adam":
        return Adam(learning_rate, beta1=beta1, beta2=beta2, epsilon=epsilon)
    raise ValueError(f"unknown optimizer {name!r}")


def save_checkpoint(path: str | Path, header: dict, params: list[tuple[str, np.ndarray]]) -> None:
    """Single-file checkpoint: one JSON header line, then little-endian
    float32 parameter data concatenated in header order."""
    header = dict(header)
    header["shapes"] = {name: list(arr.shape) for name, arr in params}
    header["param_order"] = [name for name, _ in params]
    blob = b"".join(np.ascontiguousarray(arr, dtype="<f4").tobytes() for _, arr in params)
    with open(path, "wb") as fh:
        fh.write(json.dumps(header, sort_keys=True).encode("utf-8"))
        fh.write(b"\n")
        fh.write(blob)


def load_checkpoint(path: str | Path) -> tuple[dict, dict[str, np.ndarray]]:
    with open(path, "rb") as fh:
        header = json.loads(fh.readline().decode("utf-8"))
        blob = fh.read()
    flat = np.frombuffer(blob, dtype="<f4")
    params = {}
    offset = 0
    for name in header["param_order"]:
        shape = header["shapes"][name]
        size = int(np.prod(shape)) if shape else 1
        params[name] = flat[offset:offset + size].reshape(shape).copy()
        offset += size
    if offset != flat.size:
        raise ValueError(f"checkpoint {path} has trailing data")
    return header, params
