import numpy as np
import pytest

from forgeryflag.corpus import ArtworkRecord, CorpusManifest

# Per-artist painting counts of a 12-class reference corpus totaling 1334.
REFERENCE_COUNTS = [420, 163, 109, 106, 99, 88, 81, 67, 65, 53, 42, 41]


def make_manifest(counts_by_artist: dict[str, int], width: int = 800,
                  height: int = 600, forger: str | None = None) -> CorpusManifest:
    records = []
    for artist, count in counts_by_artist.items():
        for i in range(count):
            records.append(ArtworkRecord(
                id=f"{artist}_{i:04d}", artist=artist,
                path=f"{artist}_{i:04d}.png", width=width, height=height,
            ))
    classes = tuple(counts_by_artist)
    return CorpusManifest(
        artworks=tuple(records), classes=classes,
        forger_class=forger or classes[-1],
    )


@pytest.fixture
def reference_manifest() -> CorpusManifest:
    counts = {f"artist_{i:02d}": n for i, n in enumerate(REFERENCE_COUNTS[:-1])}
    counts["forger"] = REFERENCE_COUNTS[-1]
    return make_manifest(counts, forger="forger")


@pytest.fixture
def small_manifest() -> CorpusManifest:
    return make_manifest({"a": 12, "b": 9, "c": 20, "forger": 6}, forger="forger")


@pytest.fixture
def rng() -> np.random.Generator:
    return np.random.default_rng(20240817)
