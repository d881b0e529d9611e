"""Painting manifests, resolution filtering, and stratified split suites.

A corpus is a CSV manifest of paintings (one row per artwork) over a fixed,
ordered list of artist classes, one of which is designated the forger class.
Splits are stratified per artist and fully deterministic: records are sorted
by id before any seeded shuffle, so ingestion order never affects a split.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import DataError

SUBSETS = ("train", "val", "test")


@dataclass(frozen=True)
class ArtworkRecord:
    """One painting: identity, artist label, image location, pixel size."""

    id: str
    artist: str
    path: str
    width: int
    height: int


@dataclass(frozen=True)
class CorpusManifest:
    """Validated set of artworks over an ordered class list.

    The class order is fixed and serialized with every split and checkpoint:
    a class's position in `classes` is its softmax output index.
    """

    artworks: tuple[ArtworkRecord, ...]
    classes: tuple[str, ...]
    forger_class: str

    def __post_init__(self):
        if not self.artworks:
            raise DataError("empty manifest")
        if self.forger_class not in self.classes:
            raise DataError(f"forger class {self.forger_class!r} not in class list")
        seen: set[str] = set()
        for rec in self.artworks:
            if rec.id in seen:
                raise DataError(f"duplicate id {rec.id!r}")
            seen.add(rec.id)
            if rec.artist not in self.classes:
                raise DataError(f"unknown artist label {rec.artist!r} (id {rec.id!r})")
            if rec.width < 1 or rec.height < 1:
                raise DataError(f"non-positive dimensions for id {rec.id!r}")

    def class_index(self, artist: str) -> int:
        return self.classes.index(artist)

    @property
    def forger_index(self) -> int:
        return self.classes.index(self.forger_class)

    def counts_by_artist(self) -> dict[str, int]:
        counts = {c: 0 for c in self.classes}
        for rec in self.artworks:
            counts[rec.artist] += 1
        return counts

    def ids_by_artist(self) -> dict[str, list[str]]:
        """Artwork ids grouped by artist, each group sorted by id."""
        groups: dict[str, list[str]] = {c: [] for c in self.classes}
        for rec in self.artworks:
            groups[rec.artist].append(rec.id)
        for ids in groups.values():
            ids.sort()
        return groups

    def record(self, artwork_id: str) -> ArtworkRecord:
        for rec in self.artworks:
            if rec.id == artwork_id:
                return rec
        raise KeyError(artwork_id)

    def to_dict(self) -> dict:
        return {
            "classes": list(self.classes),
            "forger_class": self.forger_class,
            "artworks": [
                {"id": r.id, "artist": r.artist, "path": r.path,
                 "width": r.width, "height": r.height}
                for r in self.artworks
            ],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "CorpusManifest":
        return cls(
            artworks=tuple(ArtworkRecord(**a) for a in d["artworks"]),
            classes=tuple(d["classes"]),
            forger_class=d["forger_class"],
        )


@dataclass(frozen=True)
class SplitPlan:
    """Assignment of every artwork id to exactly one of train/val/test."""

    seed: int
    assignment: dict[str, str]

    def subset_ids(self, subset: str) -> list[str]:
        if subset not in SUBSETS:
            raise ValueError(f"unknown subset {subset!r}")
        return sorted(i for i, s in self.assignment.items() if s == subset)

    def to_json(self) -> str:
        return json.dumps(
            {"seed": self.seed, "assignment": self.assignment}, sort_keys=True
        )

    @classmethod
    def from_json(cls, text: str) -> "SplitPlan":
        d = json.loads(text)
        return cls(seed=int(d["seed"]), assignment=dict(d["assignment"]))


def ingest_manifest(
    path: str | Path,
    classes: list[str] | None = None,
    forger_class: str | None = None,
) -> CorpusManifest:
    """Read a manifest CSV (header: id,artist,path,width,height).

    If `classes` is omitted the class list is the sorted set of artist labels
    found in the file. If `forger_class` is omitted, a class literally named
    "forger" is used when present, otherwise the last class in order.
    """
    path = Path(path)
    if not path.exists():
        raise DataError(f"manifest file not found: {path}")
    records = []
    try:
        with open(path, newline="", encoding="utf-8") as fh:
            reader = csv.DictReader(fh)
            expected = ["id", "artist", "path", "width", "height"]
            if reader.fieldnames is None or [f.strip() for f in reader.fieldnames] != expected:
                raise DataError(
                    f"malformed manifest header {reader.fieldnames!r}, expected {expected}"
                )
            for lineno, row in enumerate(reader, start=2):
                if row["width"] in (None, "") or row["height"] in (None, ""):
                    raise DataError(f"missing image dimensions at line {lineno}")
                try:
                    width = int(row["width"])
                    height = int(row["height"])
                except (TypeError, ValueError) as exc:
                    raise DataError(f"missing image dimensions at line {lineno}") from exc
                records.append(
                    ArtworkRecord(
                        id=row["id"], artist=row["artist"], path=row["path"],
                        width=width, height=height,
                    )
                )
    except csv.Error as exc:
        raise DataError(f"malformed manifest file: {exc}") from exc
    if not records:
        raise DataError("empty manifest")
    if classes is None:
        classes = sorted({r.artist for r in records})
    if forger_class is None:
        forger_class = "forger" if "forger" in classes else classes[-1]
    return CorpusManifest(
        artworks=tuple(records), classes=tuple(classes), forger_class=forger_class
    )


def filter_min_width(manifest: CorpusManifest, min_width: int) -> CorpusManifest:
    """Keep only artworks at least `min_width` pixels wide; class list unchanged."""
    if min_width < 1:
        raise ValueError("min_width must be >= 1")
    kept = tuple(r for r in manifest.artworks if r.width >= min_width)
    if not kept:
        raise DataError("no artworks survive resolution filter")
    return CorpusManifest(
        artworks=kept, classes=manifest.classes, forger_class=manifest.forger_class
    )


def _round_half_up(x: float) -> int:
    return int(math.floor(x + 0.5))


def _test_count(n: int, test_frac: float) -> int:
    # at least one test artwork per artist, never starving train+val
    return min(max(1, _round_half_up(n * test_frac)), n - 2)


def _apportion_val(rests: list[int], val_frac: float) -> list[int]:
    """Per-artist validation counts by largest-remainder apportionment.

    Targets round_half_up(total_rest * val_frac) globally while keeping every
    artist within +-1 of its proportional share, with at least 1 validation
    and 1 training artwork each. The global target can be exceeded when many
    artists need the minimum-1 bump; per-artist bounds always hold.
    """
    quotas = [r * val_frac for r in rests]
    target = _round_half_up(sum(rests) * val_frac)
    counts = [min(max(1, math.floor(q)), r - 1) for q, r in zip(quotas, rests)]
    need = target - sum(counts)
    if need > 0:
        order = sorted(
            range(len(rests)),
            key=lambda i: (-(quotas[i] - math.floor(quotas[i])), i),
        )
        for i in order:
            if need == 0:
                break
            if counts[i] < rests[i] - 1:
                counts[i] += 1
                need -= 1
    return counts


def _check_artist_sizes(manifest: CorpusManifest) -> dict[str, list[str]]:
    groups = manifest.ids_by_artist()
    for artist in manifest.classes:
        if len(groups[artist]) < 3:
            raise DataError(
                f"artist {artist!r} has {len(groups[artist])} artworks; "
                "at least 3 are needed to populate train, val and test"
            )
    return groups


def generate_split(
    manifest: CorpusManifest,
    seed: int,
    test_frac: float = 0.10,
    val_frac_of_rest: float = 0.20,
) -> SplitPlan:
    """One stratified train/val/test split.

    Per artist, round_half_up(n * test_frac) artworks (at least 1) go to test;
    validation counts for the remainder come from `_apportion_val`. Assignment
    is deterministic given the manifest and seed.
    """
    if not (0.0 < test_frac < 1.0) or not (0.0 < val_frac_of_rest < 1.0):
        raise ValueError("fractions must lie strictly between 0 and 1")
    groups = _check_artist_sizes(manifest)
    rng = np.random.default_rng(seed)
    test_counts = {
        a: _test_count(len(groups[a]), test_frac) for a in manifest.classes
    }
    rests = [len(groups[a]) - test_counts[a] for a in manifest.classes]
    val_counts = dict(zip(manifest.classes, _apportion_val(rests, val_frac_of_rest)))

    assignment: dict[str, str] = {}
    for artist in manifest.classes:
        ids = groups[artist]
        perm = rng.permutation(len(ids))
        n_test, n_val = test_counts[artist], val_counts[artist]
        for j, idx in enumerate(perm):
            if j < n_test:
                subset = "test"
            elif j < n_test + n_val:
                subset = "val"
            else:
                subset = "train"
            assignment[ids[idx]] = subset
    return SplitPlan(seed=seed, assignment=assignment)


def generate_split_suite(
    manifest: CorpusManifest,
    n_splits: int,
    test_frac: float = 0.10,
    val_frac_of_rest: float = 0.20,
    master_seed: int = 0,
) -> list[SplitPlan]:
    """A family of splits whose test sets jointly cover every artwork.

    Per artist, the artworks are shuffled once under the master seed and cut
    into `n_splits` near-equal folds; fold i is split i's test set, so each
    artwork appears in exactly one test set. Train/val are then drawn from
    the remainder with a split-specific sub-seed. Plan i carries seed
    master_seed + i as its identifier.
    """
    min_splits = math.ceil(1.0 / test_frac)
    if n_splits < min_splits:
        raise DataError(f"coverage requires ≥ {min_splits} splits")
    groups = _check_artist_sizes(manifest)

    folds: dict[str, list[list[str]]] = {}
    for ci, artist in enumerate(manifest.classes):
        ids = groups[artist]
        rng = np.random.default_rng([master_seed, 0, ci])
        perm = [ids[i] for i in rng.permutation(len(ids))]
        n = len(perm)
        bounds = [n * i // n_splits for i in range(n_splits + 1)]
        folds[artist] = [perm[bounds[i]:bounds[i + 1]] for i in range(n_splits)]

    plans = []
    for i in range(n_splits):
        rng = np.random.default_rng([master_seed, 1, i])
        rest_sizes = [
            len(groups[a]) - len(folds[a][i]) for a in manifest.classes
        ]
        val_counts = dict(
            zip(manifest.classes, _apportion_val(rest_sizes, val_frac_of_rest))
        )
        assignment: dict[str, str] = {}
        for artist in manifest.classes:
            test_ids = set(folds[artist][i])
            rest = [a for a in sorted(groups[artist]) if a not in test_ids]
            perm = rng.permutation(len(rest))
            n_val = val_counts[artist]
            for j, idx in enumerate(perm):
                assignment[rest[idx]] = "val" if j < n_val else "train"
            for a in test_ids:
                assignment[a] = "test"
        plans.append(SplitPlan(seed=master_seed + i, assignment=assignment))
    return plans


def save_split(plan: SplitPlan, path: str | Path) -> None:
    Path(path).write_text(plan.to_json() + "\n", encoding="utf-8")


def load_split(path: str | Path) -> SplitPlan:
    return SplitPlan.from_json(Path(path).read_text(encoding="utf-8"))
