"""Deterministic synthetic painting corpus for desk-scale runs.

Each class gets a distinct hue palette and stripe frequency; per-image
pixel noise varies so the patch entropy spread exercises the entropy
filter (noise-free images fall below 2.5 bits, single-step noise lands
between 2.5 and 3, stronger noise passes both thresholds). The first
three images of every class carry solid noise so every class survives
any reasonable threshold with enough patches to train on.
"""

from __future__ import annotations

import colorsys
import csv
from pathlib import Path

import numpy as np

from .corpus import CorpusManifest, ingest_manifest

_NOISE_CHOICES = np.array([0, 1, 2, 4, 6, 8, 12, 16, 20])


def class_names(n_classes: int) -> list[str]:
    if n_classes < 2:
        raise ValueError("need at least 2 classes")
    return [f"artist_{i:02d}" for i in range(n_classes - 1)] + ["forger"]


def _palette(class_idx: int, n_classes: int) -> tuple[np.ndarray, np.ndarray]:
    hue = class_idx / n_classes
    a = np.array(colorsys.hsv_to_rgb(hue, 0.85, 0.88)) * 255.0
    b = np.array(colorsys.hsv_to_rgb(hue, 0.35, 0.48)) * 255.0
    return a, b


def synth_image(class_idx: int, n_classes: int, image_idx: int, seed: int) -> np.ndarray:
    """One striped, noised RGB image, at least 768 pixels wide.

    The per-image noise amplitude controls patch entropy: amplitude 0 gives
    two-valued stripes (about 1 bit per channel), amplitude 1 lands between
    the 2.5 and 3 bit thresholds, amplitude 2 and up clears both.
    """
    rng = np.random.default_rng([seed, class_idx, image_idx])
    width = 768 + 32 * int(rng.integers(0, 3))
    height = 512 + 32 * int(rng.integers(0, 2))
    color_a, color_b = _palette(class_idx, n_classes)
    period = 24 + 12 * class_idx
    xs = np.arange(width)
    stripe = ((xs // (period // 2)) % 2).astype(np.float64)
    base = stripe[None, :, None] * color_a + (1.0 - stripe[None, :, None]) * color_b
    base = np.broadcast_to(base, (height, width, 3)).copy()
    if image_idx < 3:
        amp = 6
    else:
        amp = int(rng.choice(_NOISE_CHOICES))
    if amp >= 2:
        # two-level horizontal bands add texture on the noisier images only,
        # keeping the low-amplitude tiers below the entropy thresholds
        ys = np.arange(height)
        wave = 6.0 * (np.sin(2.0 * np.pi * ys / (40.0 + 4.0 * class_idx)) > 0)
        base += wave[:, None, None]
    if amp > 0:
        base += rng.integers(-amp, amp + 1, size=(height, width, 3))
    base += int(rng.integers(-8, 9))
    return np.clip(np.rint(base), 0, 255).astype(np.uint8)


def synth_corpus(out_dir: str | Path, n_classes: int = 12, per_class: int = 10,
                 seed: int = 0) -> tuple[Path, CorpusManifest]:
    """Generate images plus a manifest CSV; returns (manifest path, manifest)."""
    from PIL import Image

    if per_class < 3:
        raise ValueError("per_class must be >= 3")
    out_dir = Path(out_dir)
    image_dir = out_dir / "images"
    image_dir.mkdir(parents=True, exist_ok=True)
    names = class_names(n_classes)
    rows = []
    for ci, name in enumerate(names):
        for j in range(per_class):
            pixels = synth_image(ci, n_classes, j, seed)
            artwork_id = f"{name}_{j:03d}"
            path = image_dir / f"{artwork_id}.png"
            Image.fromarray(pixels).save(path, format="PNG")
            rows.append({
                "id": artwork_id, "artist": name, "path": str(path),
                "width": pixels.shape[1], "height": pixels.shape[0],
            })
    manifest_path = out_dir / "manifest.csv"
    with open(manifest_path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.DictWriter(fh, fieldnames=["id", "artist", "path", "width", "height"])
        writer.writeheader()
        writer.writerows(rows)
    manifest = ingest_manifest(manifest_path, forger_class="forger")
    return manifest_path, manifest
