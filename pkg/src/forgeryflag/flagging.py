"""Aggregate test-set predictions into painting-level forger evidence.

A patch is "disputed" when a model attributes it to the forger class while
its painting is labeled as a genuine artist. Per trained model and split we
keep the top-k patches by forger probability, count them per painting, and
flag paintings reaching the configured count. Nothing here claims actual
forgery; outputs are labeled disputed patches throughout.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import DataError
from .patching import PatchGrid


@dataclass(frozen=True)
class PatchPrediction:
    artwork_id: str
    row: int
    col: int
    true_class: int
    softmax: tuple[float, ...]
    forger_score: float

    @classmethod
    def make(cls, artwork_id: str, row: int, col: int, true_class: int,
             softmax, forger_index: int) -> "PatchPrediction":
        probs = tuple(float(p) for p in softmax)
        total = sum(probs)
        if abs(total - 1.0) > 1e-6:
            raise ValueError(f"softmax sums to {total}, expected 1")
        return cls(artwork_id=artwork_id, row=row, col=col, true_class=true_class,
                   softmax=probs, forger_score=probs[forger_index])

    @property
    def argmax_class(self) -> int:
        return int(np.argmax(self.softmax))


def predictions_from_eval(artwork_ids, rows, cols, labels, probs,
                          forger_index: int) -> list[PatchPrediction]:
    return [
        PatchPrediction.make(artwork_ids[i], int(rows[i]), int(cols[i]),
                             int(labels[i]), probs[i], forger_index)
        for i in range(len(artwork_ids))
    ]


def save_predictions(predictions: list[PatchPrediction], path: str | Path) -> None:
    n_classes = len(predictions[0].softmax) if predictions else 0
    header = ["artwork_id", "row", "col", "true_class", "argmax_class"]
    header += [f"p_{i}" for i in range(n_classes)]
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        for p in predictions:
            writer.writerow(
                [p.artwork_id, p.row, p.col, p.true_class, p.argmax_class]
                + [repr(v) for v in p.softmax]
            )


def load_predictions(path: str | Path, forger_index: int) -> list[PatchPrediction]:
    out = []
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        prob_cols = sorted(
            (c for c in reader.fieldnames if c.startswith("p_")),
            key=lambda c: int(c[2:]),
        )
        for row in reader:
            out.append(PatchPrediction.make(
                row["artwork_id"], int(row["row"]), int(row["col"]),
                int(row["true_class"]), [float(row[c]) for c in prob_cols],
                forger_index,
            ))
    return out


def top_k_forger(predictions: list[PatchPrediction], k: int,
                 forger_index: int) -> list[PatchPrediction]:
    """The k patches of genuine-labeled paintings most attributed to the forger.

    Forger-labeled paintings are excluded. Ties in score are broken by
    (artwork_id, row, col) ascending; fewer than k predictions return all.
    """
    if k < 1:
        raise ValueError("k must be >= 1")
    if not predictions:
        raise ValueError("empty prediction list")
    eligible = [p for p in predictions if p.true_class != forger_index]
    ordered = sorted(eligible, key=lambda p: (-p.forger_score, p.artwork_id, p.row, p.col))
    return ordered[:k]


def flag_paintings(top_patches: list[PatchPrediction],
                   min_patches: int = 2) -> list[tuple[str, int]]:
    """Paintings with at least `min_patches` top-k patches, counts attached.

    Ordered by count descending, then artwork id ascending.
    """
    if min_patches < 1:
        raise ValueError("min_patches must be >= 1")
    counts: dict[str, int] = {}
    for p in top_patches:
        counts[p.artwork_id] = counts.get(p.artwork_id, 0) + 1
    flagged = [(aid, c) for aid, c in counts.items() if c >= min_patches]
    flagged.sort(key=lambda item: (-item[1], item[0]))
    return flagged


def painting_counts(top_patches: list[PatchPrediction]) -> dict[str, int]:
    counts: dict[str, int] = {}
    for p in top_patches:
        counts[p.artwork_id] = counts.get(p.artwork_id, 0) + 1
    return dict(sorted(counts.items()))


def count_misattributed(predictions: list[PatchPrediction],
                        forger_index: int) -> tuple[int, int]:
    """Originals predicted as the forger: (patch count, painting count)."""
    paintings = set()
    patches = 0
    for p in predictions:
        if p.true_class != forger_index and p.argmax_class == forger_index:
            patches += 1
            paintings.add(p.artwork_id)
    return patches, len(paintings)


@dataclass
class FlagReport:
    split_id: str
    model_id: str
    model_family: str
    k: int
    min_patches: int
    top_patches: list[dict]
    painting_counts: dict[str, int]
    flagged: list[dict]
    misattributed_patches: int
    misattributed_paintings: int
    evaluated_paintings: list[str] = field(default_factory=list)

    def flagged_ids(self) -> set[str]:
        return {f["artwork_id"] for f in self.flagged}

    def to_dict(self) -> dict:
        return {
            "split_id": self.split_id, "model_id": self.model_id,
            "model_family": self.model_family, "k": self.k,
            "min_patches": self.min_patches, "top_patches": self.top_patches,
            "painting_counts": self.painting_counts, "flagged": self.flagged,
            "misattributed_patches": self.misattributed_patches,
            "misattributed_paintings": self.misattributed_paintings,
            "evaluated_paintings": self.evaluated_paintings,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "FlagReport":
        return cls(**d)


def build_flag_report(predictions: list[PatchPrediction], split_id: str,
                      model_id: str, model_family: str, forger_index: int,
                      k: int = 20, min_patches: int = 2) -> FlagReport:
    top = top_k_forger(predictions, k, forger_index)
    counts = painting_counts(top)
    flagged = flag_paintings(top, min_patches)
    mis_patches, mis_paintings = count_misattributed(predictions, forger_index)
    return FlagReport(
        split_id=split_id, model_id=model_id, model_family=model_family,
        k=k, min_patches=min_patches,
        top_patches=[
            {"artwork_id": p.artwork_id, "row": p.row, "col": p.col,
             "forger_score": p.forger_score}
            for p in top
        ],
        painting_counts=counts,
        flagged=[{"artwork_id": aid, "count": c} for aid, c in flagged],
        misattributed_patches=mis_patches,
        misattributed_paintings=mis_paintings,
        evaluated_paintings=sorted({p.artwork_id for p in predictions
                                    if p.true_class != forger_index}),
    )


def model_agreement(reports: list[FlagReport]) -> tuple[dict, list[str]]:
    """Which (model, split) pairs flagged each painting.

    Returns the per-painting matrix and the list of agreement paintings,
    those flagged by at least two distinct model families.
    """
    if len(reports) < 2:
        raise ValueError("need at least 2 reports")
    matrix: dict[str, list[dict]] = {}
    for report in reports:
        for aid in sorted(report.flagged_ids()):
            matrix.setdefault(aid, []).append({
                "model_id": report.model_id,
                "model_family": report.model_family,
                "split_id": report.split_id,
            })
    agreement = sorted(
        aid for aid, hits in matrix.items()
        if len({h["model_family"] for h in hits}) >= 2
    )
    return dict(sorted(matrix.items())), agreement


def _patch_rects(grid: PatchGrid, flags, scale: float = 1.0) -> list[tuple[float, float, float, float]]:
    rects = []
    for row, col in flags:
        x0, y0, x1, y1 = grid.patch_bounds(row, col)
        rects.append((x0 / scale, y0 / scale, x1 / scale, y1 / scale))
    return rects


def _region_areas(rects_a, rects_b) -> tuple[float, float]:
    """Exact intersection/union areas of two rectangle sets via the cell
    decomposition induced by all rectangle edges."""
    xs = sorted({r[0] for r in rects_a + rects_b} | {r[2] for r in rects_a + rects_b})
    ys = sorted({r[1] for r in rects_a + rects_b} | {r[3] for r in rects_a + rects_b})
    inter = union = 0.0
    for i in range(len(xs) - 1):
        cx = (xs[i] + xs[i + 1]) / 2.0
        w = xs[i + 1] - xs[i]
        for j in range(len(ys) - 1):
            cy = (ys[j] + ys[j + 1]) / 2.0
            h = ys[j + 1] - ys[j]
            in_a = any(r[0] <= cx < r[2] and r[1] <= cy < r[3] for r in rects_a)
            in_b = any(r[0] <= cx < r[2] and r[1] <= cy < r[3] for r in rects_b)
            if in_a and in_b:
                inter += w * h
            if in_a or in_b:
                union += w * h
    return inter, union


def cross_resolution_compare(grid_a: PatchGrid, flags_a, grid_b: PatchGrid,
                             flags_b, scale: float) -> float:
    """Intersection-over-union of flagged pixel regions across resolutions.

    `grid_b` must belong to the same artwork rendered at `scale` times
    grid_a's resolution; its patches are mapped into grid_a's pixel frame
    by exact affine scaling. Returns IoU in [0, 1]; two empty flag sets
    give 0.
    """
    if grid_a.artwork_id != grid_b.artwork_id:
        raise DataError(
            f"mismatched artwork ids: {grid_a.artwork_id!r} vs {grid_b.artwork_id!r}"
        )
    if scale <= 0:
        raise ValueError("scale must be positive")
    rects_a = _patch_rects(grid_a, flags_a)
    rects_b = _patch_rects(grid_b, flags_b, scale=scale)
    inter, union = _region_areas(rects_a, rects_b)
    if union == 0.0:
        return 0.0
    return inter / union


FAMILY_COLORS = {
    "patchnet": (230, 159, 0),
    "kan": (86, 180, 233),
}
_EXTRA_COLORS = [(0, 158, 115), (204, 121, 167), (240, 228, 66), (213, 94, 0)]
OUTLINE_WIDTH = 3
LEGEND_HEIGHT = 40


def family_color(family: str) -> tuple[int, int, int]:
    if family in FAMILY_COLORS:
        return FAMILY_COLORS[family]
    return _EXTRA_COLORS[sum(family.encode()) % len(_EXTRA_COLORS)]


def render_overlay(image: np.ndarray, grid: PatchGrid, flagged, out_path: str | Path) -> Path:
    """Write a PNG of the image with disputed patches outlined.

    `flagged` is an iterable of (row, col, model_family). Outlines are
    3 pixels wide, drawn just inside the patch bounds, colored per model
    family. A legend strip is appended below the image; with no flagged
    patches the image region is pixel-identical to the input.
    """
    from PIL import Image, ImageDraw

    image = np.asarray(image)
    h, w = image.shape[:2]
    canvas = Image.new("RGB", (w, h + LEGEND_HEIGHT), (24, 24, 24))
    canvas.paste(Image.fromarray(image.astype(np.uint8)), (0, 0))
    draw = ImageDraw.Draw(canvas)
    families = []
    for row, col, family in flagged:
        x0, y0, x1, y1 = grid.patch_bounds(row, col)
        if x1 > w or y1 > h:
            raise ValueError(f"patch ({row}, {col}) outside image bounds")
        draw.rectangle([x0, y0, x1 - 1, y1 - 1],
                       outline=family_color(family), width=OUTLINE_WIDTH)
        if family not in families:
            families.append(family)
    x = 8
    draw.text((x, h + 14), "disputed patches:", fill=(255, 255, 255))
    x += 110
    for family in families:
        draw.rectangle([x, h + 12, x + 14, h + 26], fill=family_color(family))
        draw.text((x + 20, h + 14), family, fill=(255, 255, 255))
        x += 30 + 8 * len(family)
    out_path = Path(out_path)
    canvas.save(out_path, format="PNG")
    return out_path


def save_flag_report(report: FlagReport, path: str | Path) -> None:
    Path(path).write_text(
        json.dumps(report.to_dict(), sort_keys=True) + "\n", encoding="utf-8"
    )


def load_flag_report(path: str | Path) -> FlagReport:
    return FlagReport.from_dict(json.loads(Path(path).read_text(encoding="utf-8")))


def suite_summary_rows(reports: list[FlagReport], artists: dict[str, str],
                       families: tuple[str, str] = ("patchnet", "kan")) -> list[dict]:
    """Per-painting summary across splits and model families.

    For each family, the mean top-k patch count over the splits where the
    painting was evaluated; "-" when a family never evaluated it.
    """
    paintings = sorted({
        aid for r in reports for aid in r.painting_counts
    })
    rows = []
    for aid in paintings:
        row: dict = {"painting": aid, "artist": artists.get(aid, "?")}
        flagged_by = []
        for family in families:
            fam_reports = [r for r in reports if r.model_family == family
                           and aid in r.evaluated_paintings]
            if not fam_reports:
                row[f"topk_patches_{family}"] = "-"
                continue
            counts = [r.painting_counts.get(aid, 0) for r in fam_reports]
            row[f"topk_patches_{family}"] = float(np.mean(counts))
            if any(aid in r.flagged_ids() for r in fam_reports):
                flagged_by.append(family)
        row["flagged_by"] = ";".join(flagged_by)
        rows.append(row)
    return rows


SUITE_SUMMARY_HEADER = "painting,artist,avg_topk_patches_cnn,topk_patches_kan,flagged_by"


def save_suite_summary(rows: list[dict], path: str | Path,
                       families: tuple[str, str] = ("patchnet", "kan")) -> None:
    """CSV per painting: mean top-k counts for the CNN family, counts for
    the KAN family, and which families flagged it ("-" = not evaluated)."""
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(SUITE_SUMMARY_HEADER.split(","))
        for row in rows:
            writer.writerow([
                row["painting"], row["artist"],
                row.get(f"topk_patches_{families[0]}", "-"),
                row.get(f"topk_patches_{families[1]}", "-"),
                row["flagged_by"],
            ])
