"""Centered patch grids, channel entropy, blur, and model-ready tensors.

Each painting is tiled by the largest centered grid of patch_size squares.
Per patch we compute the Shannon entropy of each color channel's 256-bin
intensity histogram (base 2, so the ceiling is 8 bits) and keep the mean as
the patch's information score. Low-entropy patches (background, borders) are
filtered out before training. Entropy is always computed on the unblurred
pixels so the filter decision is independent of the blur toggle.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .corpus import CorpusManifest
from .errors import DataError


@dataclass(frozen=True)
class PatchGrid:
    """Largest centered tiling of patch_size squares inside an image."""

    artwork_id: str
    patch_size: int
    n_rows: int
    n_cols: int
    origin_x: int
    origin_y: int

    @property
    def n_patches(self) -> int:
        return self.n_rows * self.n_cols

    def patch_bounds(self, row: int, col: int) -> tuple[int, int, int, int]:
        """Pixel bounds (x0, y0, x1, y1) of one patch, half-open."""
        if not (0 <= row < self.n_rows and 0 <= col < self.n_cols):
            raise ValueError(f"patch ({row}, {col}) outside grid")
        x0 = self.origin_x + col * self.patch_size
        y0 = self.origin_y + row * self.patch_size
        return x0, y0, x0 + self.patch_size, y0 + self.patch_size


@dataclass(frozen=True)
class Patch:
    """One extracted patch with its per-channel entropy statistics."""

    artwork_id: str
    row: int
    col: int
    pixels: np.ndarray  # (patch_size, patch_size, 3) uint8
    entropy_r: float
    entropy_g: float
    entropy_b: float
    mean_entropy: float


def plan_grid(width: int, height: int, patch_size: int = 256, artwork_id: str = "") -> PatchGrid:
    """Plan the centered patch grid for an image of the given size.

    The grid may be empty (zero rows or columns) for images smaller than one
    patch; downstream operations reject empty grids where it matters.
    """
    if patch_size < 1:
        raise ValueError("patch_size must be >= 1")
    n_cols = width // patch_size
    n_rows = height // patch_size
    origin_x = (width - n_cols * patch_size) // 2 if n_cols else 0
    origin_y = (height - n_rows * patch_size) // 2 if n_rows else 0
    return PatchGrid(
        artwork_id=artwork_id, patch_size=patch_size,
        n_rows=n_rows, n_cols=n_cols, origin_x=origin_x, origin_y=origin_y,
    )


def channel_entropy(channel: np.ndarray) -> float:
    """Shannon entropy (bits) of the 256-bin intensity histogram.

    Empty bins contribute nothing (0 log 0 := 0). For 8-bit data the result
    lies in [0, 8], reaching 8 only for an exactly uniform histogram.
    """
    values = np.asarray(channel).ravel()
    counts = np.bincount(values.astype(np.int64), minlength=256)
    p = counts[counts > 0].astype(np.float64) / values.size
    return float(-(p * np.log2(p)).sum())


def mean_entropy(patch: Patch) -> float:
    return (patch.entropy_r + patch.entropy_g + patch.entropy_b) / 3.0


def extract_patches(
    image: np.ndarray,
    grid: PatchGrid,
    entropy_source: np.ndarray | None = None,
) -> list[Patch]:
    """Cut an image into its grid patches, in (row, col) order.

    `entropy_source`, when given, supplies the pixels used for the entropy
    statistics (the unblurred image) while `image` supplies the stored patch
    pixels (possibly blurred).
    """
    if entropy_source is None:
        entropy_source = image
    patches = []
    for row in range(grid.n_rows):
        for col in range(grid.n_cols):
            x0, y0, x1, y1 = grid.patch_bounds(row, col)
            pixels = image[y0:y1, x0:x1]
            raw = entropy_source[y0:y1, x0:x1]
            er = channel_entropy(raw[:, :, 0])
            eg = channel_entropy(raw[:, :, 1])
            eb = channel_entropy(raw[:, :, 2])
            patches.append(
                Patch(
                    artwork_id=grid.artwork_id, row=row, col=col,
                    pixels=pixels, entropy_r=er, entropy_g=eg, entropy_b=eb,
                    mean_entropy=(er + eg + eb) / 3.0,
                )
            )
    return patches


def filter_by_entropy(patches: list[Patch], threshold: float) -> list[Patch]:
    """Keep patches with mean entropy strictly above the threshold."""
    return [p for p in patches if p.mean_entropy > threshold]


def gaussian_kernel(sigma: float) -> np.ndarray:
    """Sampled 1-D Gaussian with radius ceil(3 sigma), normalized to sum 1."""
    radius = math.ceil(3.0 * sigma)
    x = np.arange(-radius, radius + 1, dtype=np.float64)
    k = np.exp(-(x * x) / (2.0 * sigma * sigma))
    return k / k.sum()


def _convolve_axis(arr: np.ndarray, kernel: np.ndarray, axis: int) -> np.ndarray:
    radius = len(kernel) // 2
    pads = [(0, 0)] * arr.ndim
    pads[axis] = (radius, radius)
    padded = np.pad(arr, pads, mode="reflect")
    out = np.zeros(arr.shape, dtype=np.float64)
    index = [slice(None)] * arr.ndim
    for t, weight in enumerate(kernel):
        index[axis] = slice(t, t + arr.shape[axis])
        out += weight * padded[tuple(index)]
    return out


def gaussian_blur(image: np.ndarray, sigma: float) -> np.ndarray:
    """Separable Gaussian blur per channel with reflect padding.

    sigma = 0 returns the input unchanged. Integer images are rounded back
    to their dtype; float images keep theirs.
    """
    if sigma < 0:
        raise ValueError("sigma must be >= 0")
    if sigma == 0:
        return image.copy()
    kernel = gaussian_kernel(sigma)
    out = _convolve_axis(image.astype(np.float64), kernel, axis=1)
    out = _convolve_axis(out, kernel, axis=0)
    if np.issubdtype(image.dtype, np.integer):
        info = np.iinfo(image.dtype)
        return np.clip(np.rint(out), info.min, info.max).astype(image.dtype)
    return out.astype(image.dtype)


def patch_to_tensor(
    pixels: np.ndarray,
    side: int,
    value_range: str = "unit",
    layout: str = "flat",
    dtype=np.float32,
) -> np.ndarray:
    """Downsample a patch to side x side by block averaging and rescale.

    value_range "unit" maps intensities to [0, 1]; "symmetric" to [-1, 1].
    layout "flat" returns length 3*side*side in (row, col, channel) order;
    "chw" returns shape (3, side, side).
    """
    pixels = np.asarray(pixels)
    size = pixels.shape[0]
    if pixels.shape[:2] != (size, size) or pixels.shape[2] != 3:
        raise ValueError(f"expected square RGB patch, got {pixels.shape}")
    if side < 1 or size % side != 0:
        raise ValueError(f"side {side} does not divide patch size {size}")
    block = size // side
    small = (
        pixels.astype(np.float64)
        .reshape(side, block, side, block, 3)
        .mean(axis=(1, 3))
    )
    if value_range == "unit":
        small = small / 255.0
    elif value_range == "symmetric":
        small = small / 127.5 - 1.0
    else:
        raise ValueError(f"unknown value_range {value_range!r}")
    if layout == "flat":
        return small.reshape(-1).astype(dtype)
    if layout == "chw":
        return small.transpose(2, 0, 1).astype(dtype)
    raise ValueError(f"unknown layout {layout!r}")


@dataclass
class PatchSet:
    """Aligned per-patch arrays for one tensor spec over a whole corpus.

    Rows are in (artwork_id, row, col) sorted order. `features` is the
    model-ready tensor stack; `labels` are class indices in manifest order.
    """

    artwork_ids: list[str]
    rows: np.ndarray
    cols: np.ndarray
    labels: np.ndarray
    entropies: np.ndarray
    features: np.ndarray
    side: int
    value_range: str
    layout: str

    def __len__(self) -> int:
        return len(self.artwork_ids)

    def select(self, indices: np.ndarray) -> "PatchSet":
        return PatchSet(
            artwork_ids=[self.artwork_ids[i] for i in indices],
            rows=self.rows[indices], cols=self.cols[indices],
            labels=self.labels[indices], entropies=self.entropies[indices],
            features=self.features[indices],
            side=self.side, value_range=self.value_range, layout=self.layout,
        )


def load_image(path: str | Path) -> np.ndarray:
    from PIL import Image

    with Image.open(path) as img:
        return np.asarray(img.convert("RGB"))


def extract_corpus_patches(
    manifest: CorpusManifest,
    patch_size: int = 256,
    blur_sigma: float = 1.0,
    tensor_specs: dict[str, dict] | None = None,
    image_loader=load_image,
) -> tuple[list[Patch], dict[str, PatchSet]]:
    """Extract every patch of every artwork, plus tensor stacks per spec.

    Blur (when sigma > 0) is applied to the full image before patches are
    cut, so patch borders see blurred context; entropies always come from
    the unblurred pixels. `tensor_specs` maps a name to kwargs for
    `patch_to_tensor` (side, value_range, layout).
    """
    if tensor_specs is None:
        tensor_specs = {}
    inventory: list[Patch] = []
    feature_lists: dict[str, list[np.ndarray]] = {name: [] for name in tensor_specs}
    labels: list[int] = []
    for rec in sorted(manifest.artworks, key=lambda r: r.id):
        image = image_loader(rec.path)
        if image.shape[0] != rec.height or image.shape[1] != rec.width:
            raise DataError(
                f"image size {image.shape[1]}x{image.shape[0]} does not match "
                f"manifest entry {rec.width}x{rec.height} for id {rec.id!r}"
            )
        grid = plan_grid(rec.width, rec.height, patch_size, artwork_id=rec.id)
        blurred = gaussian_blur(image, blur_sigma) if blur_sigma > 0 else image
        patches = extract_patches(blurred, grid, entropy_source=image)
        inventory.extend(patches)
        labels.extend([manifest.class_index(rec.artist)] * len(patches))
        for name, spec in tensor_specs.items():
            for p in patches:
                feature_lists[name].append(patch_to_tensor(p.pixels, **spec))
    sets = {}
    for name, spec in tensor_specs.items():
        feats = feature_lists[name]
        sets[name] = PatchSet(
            artwork_ids=[p.artwork_id for p in inventory],
            rows=np.array([p.row for p in inventory], dtype=np.int64),
            cols=np.array([p.col for p in inventory], dtype=np.int64),
            labels=np.array(labels, dtype=np.int64),
            entropies=np.array([p.mean_entropy for p in inventory], dtype=np.float64),
            features=np.stack(feats) if feats else np.zeros((0,), dtype=np.float32),
            side=spec["side"],
            value_range=spec.get("value_range", "unit"),
            layout=spec.get("layout", "flat"),
        )
    return inventory, sets


INVENTORY_HEADER = "artwork_id,row,col,entropy_r,entropy_g,entropy_b,mean_entropy"


def save_inventory(patches: list[Patch], path: str | Path) -> None:
    lines = [INVENTORY_HEADER]
    for p in patches:
        lines.append(
            f"{p.artwork_id},{p.row},{p.col},"
            f"{p.entropy_r!r},{p.entropy_g!r},{p.entropy_b!r},{p.mean_entropy!r}"
        )
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def load_inventory(path: str | Path) -> list[dict]:
    rows = []
    with open(path, encoding="utf-8") as fh:
        header = fh.readline().strip()
        if header != INVENTORY_HEADER:
            raise DataError(f"unexpected inventory header: {header!r}")
        for line in fh:
            aid, row, col, er, eg, eb, em = line.strip().split(",")
            rows.append(
                {"artwork_id": aid, "row": int(row), "col": int(col),
                 "entropy_r": float(er), "entropy_g": float(eg),
                 "entropy_b": float(eb), "mean_entropy": float(em)}
            )
    return rows


def save_patch_tensors(patchset: PatchSet, path: str | Path) -> None:
    """Write features as flat little-endian float32 plus a JSON sidecar."""
    path = Path(path)
    data = np.ascontiguousarray(patchset.features, dtype="<f4")
    path.with_suffix(".bin").write_bytes(data.tobytes())
    sidecar = {
        "side": patchset.side,
        "range": patchset.value_range,
        "order": "row,col,channel" if patchset.layout == "flat" else "channel,row,col",
        "count": len(patchset),
        "shape": list(patchset.features.shape),
        "layout": patchset.layout,
        "artwork_ids": patchset.artwork_ids,
        "rows": patchset.rows.tolist(),
        "cols": patchset.cols.tolist(),
        "labels": patchset.labels.tolist(),
        "entropies": patchset.entropies.tolist(),
    }
    path.with_suffix(".json").write_text(
        json.dumps(sidecar, sort_keys=True) + "\n", encoding="utf-8"
    )


def load_patch_tensors(path: str | Path) -> PatchSet:
    path = Path(path)
    sidecar = json.loads(path.with_suffix(".json").read_text(encoding="utf-8"))
    data = np.frombuffer(path.with_suffix(".bin").read_bytes(), dtype="<f4")
    features = data.reshape(sidecar["shape"]).copy()
    if sidecar["count"] != features.shape[0]:
        raise DataError(f"tensor cache count mismatch in {path}")
    return PatchSet(
        artwork_ids=list(sidecar["artwork_ids"]),
        rows=np.array(sidecar["rows"], dtype=np.int64),
        cols=np.array(sidecar["cols"], dtype=np.int64),
        labels=np.array(sidecar["labels"], dtype=np.int64),
        entropies=np.array(sidecar["entropies"], dtype=np.float64),
        features=features,
        side=sidecar["side"], value_range=sidecar["range"], layout=sidecar["layout"],
    )
