"""Kolmogorov-Arnold layers: learnable per-edge spline activations.

Every edge (input i, output j) of a layer applies its own scalar function,
a weighted silu base branch plus a learned combination of B-spline basis
functions over a fixed uniform grid, and the output node sums the edge
values. With grid_size G intervals and spline order k there are G + k basis
functions per edge; inputs are clamped to the grid range before the spline
lookup (no adaptive grid refinement), which keeps gradients exact.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import tensorkit
from .tensorkit import check_finite, kaiming_uniform, silu, silu_grad


@dataclass(frozen=True)
class SplineGrid:
    """Uniform knot grid with k extra knots extended past each end."""

    grid_size: int = 5
    order: int = 3
    lo: float = -1.0
    hi: float = 1.0

    def __post_init__(self):
        if self.grid_size < 1 or self.order < 0:
            raise ValueError("grid_size must be >= 1 and order >= 0")
        if not self.hi > self.lo:
            raise ValueError("grid range must be non-empty")

    @property
    def n_basis(self) -> int:
        return self.grid_size + self.order

    @property
    def step(self) -> float:
        return (self.hi - self.lo) / self.grid_size

    def knots(self) -> np.ndarray:
        idx = np.arange(-self.order, self.grid_size + self.order + 1, dtype=np.float64)
        return self.lo + idx * self.step

    def to_dict(self) -> dict:
        return {"grid_size": self.grid_size, "order": self.order,
                "lo": self.lo, "hi": self.hi}

    @classmethod
    def from_dict(cls, d: dict) -> "SplineGrid":
        return cls(grid_size=int(d["grid_size"]), order=int(d["order"]),
                   lo=float(d["lo"]), hi=float(d["hi"]))


def _degree_zero(x: np.ndarray, grid: SplineGrid) -> np.ndarray:
    """One-hot interval indicators for clamped x over all degree-0 slots.

    x exactly at the upper bound lands in the last interior interval, so the
    recursion evaluates the polynomial piece whose left limit equals the
    basis value there (B-splines of positive degree are continuous).
    """
    g, k = grid.grid_size, grid.order
    raw = np.floor((x - grid.lo) / grid.step).astype(np.int64)
    idx = np.clip(raw, 0, g - 1) + k
    bases = np.zeros(x.shape + (g + 2 * k,), dtype=x.dtype)
    np.put_along_axis(bases, idx[..., None], 1.0, axis=-1)
    return bases


def _raise_degree(bases: np.ndarray, x: np.ndarray, knots: np.ndarray, m: int) -> np.ndarray:
    """Cox-de Boor step from degree m-1 bases to degree m."""
    count = bases.shape[-1] - 1
    left_den = knots[m:m + count] - knots[:count]
    right_den = knots[m + 1:m + 1 + count] - knots[1:1 + count]
    left = (x[..., None] - knots[:count]) / left_den
    right = (knots[m + 1:m + 1 + count] - x[..., None]) / right_den
    return left * bases[..., :-1] + right * bases[..., 1:]


def bspline_basis(x, grid: SplineGrid) -> np.ndarray:
    """B-spline basis values, shape x.shape + (n_basis,).

    Values outside [lo, hi] are clamped first. Inside the range the basis is
    non-negative and sums to 1 (partition of unity).
    """
    values, _ = bspline_basis_and_derivative(x, grid, with_derivative=False)
    return values


def bspline_basis_and_derivative(
    x, grid: SplineGrid, with_derivative: bool = True
) -> tuple[np.ndarray, np.ndarray | None]:
    """Basis values and, optionally, their derivatives with respect to x.

    Derivatives use the standard degree-(k-1) difference formula. At the
    clamp boundaries the derivative is the one-sided interior value; the
    caller zeroes gradients for inputs strictly outside the range.
    """
    x = np.asarray(x)
    scalar = x.ndim == 0
    if scalar:
        x = x[None]
    dtype = x.dtype if np.issubdtype(x.dtype, np.floating) else np.float64
    xc = np.clip(x, grid.lo, grid.hi).astype(dtype, copy=False)
    knots = grid.knots().astype(dtype)
    k = grid.order
    bases = _degree_zero(xc, grid)
    for m in range(1, k):
        bases = _raise_degree(bases, xc, knots, m)
    deriv = None
    if with_derivative and k >= 1:
        # d/dx B_{j,k} = k * (B_{j,k-1}/(t_{j+k}-t_j) - B_{j+1,k-1}/(t_{j+k+1}-t_{j+1}))
        count = grid.n_basis
        d1 = knots[k:k + count] - knots[:count]
        d2 = knots[k + 1:k + 1 + count] - knots[1:1 + count]
        deriv = k * (bases[..., :count] / d1 - bases[..., 1:count + 1] / d2)
    if with_derivative and k == 0:
        deriv = np.zeros(xc.shape + (grid.n_basis,), dtype=dtype)
    if k >= 1:
        bases = _raise_degree(bases, xc, knots, k)
    if scalar:
        return bases[0], (deriv[0] if deriv is not None else None)
    return bases, deriv


class KanLayer:
    """One KAN layer: per-edge silu base branch plus spline branch.

    y_j = sum_i base_w[j,i] * silu(x_i)
        + sum_i spline_w[j,i] * sum_b coeffs[j,i,b] * B_b(clamp(x_i))
    """

    def __init__(self, in_dim: int, out_dim: int, grid: SplineGrid,
                 rng: np.random.Generator, dtype=np.float32):
        self.in_dim = in_dim
        self.out_dim = out_dim
        self.grid = grid
        nb = grid.n_basis
        self.base_w = kaiming_uniform(rng, (out_dim, in_dim), fan_in=in_dim, dtype=dtype)
        self.spline_w = np.ones((out_dim, in_dim), dtype=dtype)
        self.coeffs = rng.normal(0.0, 0.1 / np.sqrt(nb), size=(out_dim, in_dim, nb)).astype(dtype)
        self.g_base_w = np.zeros_like(self.base_w)
        self.g_spline_w = np.zeros_like(self.spline_w)
        self.g_coeffs = np.zeros_like(self.coeffs)

    def params(self):
        return [("base_w", self.base_w), ("spline_w", self.spline_w),
                ("coeffs", self.coeffs)]

    def grads(self):
        return [self.g_base_w, self.g_spline_w, self.g_coeffs]

    def forward(self, x: np.ndarray) -> np.ndarray:
        if x.ndim != 2 or x.shape[1] != self.in_dim:
            raise ValueError(f"expected (N, {self.in_dim}) input, got {x.shape}")
        n = x.shape[0]
        self._x = x
        self._basis, self._dbasis = bspline_basis_and_derivative(x, self.grid)
        # scaled coefficients fold spline_w into one GEMM operand
        scaled = (self.spline_w[:, :, None] * self.coeffs).reshape(self.out_dim, -1)
        spline_out = self._basis.reshape(n, -1) @ scaled.T
        base_out = silu(x) @ self.base_w.T
        return base_out + spline_out

    def backward(self, grad: np.ndarray) -> np.ndarray:
        if grad.ndim != 2 or grad.shape[1] != self.out_dim:
            raise ValueError(f"expected (N, {self.out_dim}) gradient, got {grad.shape}")
        n = grad.shape[0]
        nb = self.grid.n_basis
        x, basis, dbasis = self._x, self._basis, self._dbasis
        self.g_base_w = grad.T @ silu(x)
        # d spline_out / d scaled = basis; unfold into coeffs and spline_w parts
        g_scaled = (grad.T @ basis.reshape(n, -1)).reshape(self.out_dim, self.in_dim, nb)
        self.g_coeffs = g_scaled * self.spline_w[:, :, None]
        self.g_spline_w = (g_scaled * self.coeffs).sum(axis=-1)
        # input gradient: base branch plus clamped spline branch
        grad_x = (grad @ self.base_w) * silu_grad(x)
        scaled = (self.spline_w[:, :, None] * self.coeffs).reshape(self.out_dim, -1)
        t = (grad @ scaled).reshape(n, self.in_dim, nb)
        spline_gx = (t * dbasis).sum(axis=-1)
        inside = (x >= self.grid.lo) & (x <= self.grid.hi)
        grad_x += np.where(inside, spline_gx, 0.0)
        return grad_x


class KanNetwork:
    """Chained KAN layers; the final width is the class count."""

    def __init__(self, dims: list[int], grid: SplineGrid, seed: int = 0, dtype=np.float32):
        self.dims = list(dims)
        self.grid = grid
        self.seed = seed
        self.dtype = np.dtype(dtype)
        rng = np.random.default_rng([seed, 0])
        self.layers = [
            KanLayer(d_in, d_out, grid, rng, dtype=dtype)
            for d_in, d_out in zip(dims, dims[1:])
        ]

    @property
    def header(self) -> dict:
        return {"arch": "kan", "widths": self.dims, "grid": self.grid.to_dict(),
                "seed": self.seed}

    def forward(self, x: np.ndarray) -> np.ndarray:
        for i, layer in enumerate(self.layers):
            x = layer.forward(x)
            if tensorkit.DEBUG_CHECKS:
                check_finite(x, f"kan forward layer {i}")
        return x

    def backward(self, grad: np.ndarray) -> np.ndarray:
        for i, layer in reversed(list(enumerate(self.layers))):
            grad = layer.backward(grad)
            if tensorkit.DEBUG_CHECKS:
                check_finite(grad, f"kan backward layer {i}")
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


def build_kan(
    widths: list[int],
    input_dim: int = 768,
    grid: SplineGrid | None = None,
    n_classes: int = 12,
    seed: int = 0,
    dtype=np.float32,
) -> KanNetwork:
    """Assemble a KAN from a width list.

    When the first width equals `input_dim` (and there is more than one
    width) the list is read as the full layer chain; otherwise the widths
    are hidden-then-output sizes appended to the input dimension. The last
    width must equal the class count.
    """
    if not widths:
        raise ValueError("widths must be non-empty")
    if any(w <= 0 for w in widths):
        raise ValueError("widths must be positive")
    if widths[-1] != n_classes:
        raise ValueError(f"final width {widths[-1]} must equal n_classes {n_classes}")
    if grid is None:
        grid = SplineGrid()
    if len(widths) >= 2 and widths[0] == input_dim:
        dims = list(widths)
    else:
        dims = [input_dim] + list(widths)
    return KanNetwork(dims, grid, seed=seed, dtype=dtype)


def count_parameters(net) -> int:
    return sum(arr.size for _, arr in net.params())
