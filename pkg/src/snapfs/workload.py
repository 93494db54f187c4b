"""Synthetic release streams shaped like experiment software releases.

Presets use one year of release statistics from three large experiments:
releases per year and shared libraries/plug-ins per release.  The library
count is used as the file count of each synthetic release tree.
"""

from __future__ import annotations

import math
import os
import random
from dataclasses import dataclass
from pathlib import Path
from typing import Iterator

FILES_PER_DIR = 25
MAX_FILE_SIZE = 64 << 20


@dataclass(frozen=True)
class WorkloadProfile:
    releases: int
    artifacts_per_release: int
    overlap_fraction: float = 0.9
    median_size: int = 20 * 1024
    size_sigma: float = 1.0

    def __post_init__(self):
        if not 0.0 <= self.overlap_fraction <= 1.0:
            raise ValueError("overlap_fraction must lie in [0, 1]")
        if self.releases < 0 or self.artifacts_per_release < 0:
            raise ValueError("releases and artifacts_per_release must be non-negative")

    @property
    def changed_per_release(self) -> int:
        n = self.artifacts_per_release
        return n - round(self.overlap_fraction * n)


PRESETS = {
    "atlas": WorkloadProfile(releases=19, artifacts_per_release=3900),
    "cms": WorkloadProfile(releases=40, artifacts_per_release=2200),
    "alice": WorkloadProfile(releases=49, artifacts_per_release=210),
}


@dataclass
class SyntheticTree:
    index: int
    files: dict[str, bytes]
    changed: frozenset[str]

    @property
    def logical_bytes(self) -> int:
        return sum(len(b) for b in self.files.values())

    def write(self, target: str | os.PathLike, only_changed: bool = False) -> None:
        """Write the tree under ``target``.  With ``only_changed`` the target is
        assumed to hold the previous release and only changed files are rewritten."""
        target = Path(target)
        paths = self.changed if only_changed else self.files.keys()
        for rel in paths:
            path = target / rel
            path.parent.mkdir(parents=True, exist_ok=True)
            path.write_bytes(self.files[rel])


def file_path(i: int) -> str:
    d = i // FILES_PER_DIR
    return f"sw/pkg{d // 10:03d}/sub{d % 10}/lib{i:05d}.so"


def _draw_size(rng: random.Random, profile: WorkloadProfile) -> int:
    size = rng.lognormvariate(math.log(profile.median_size), profile.size_sigma)
    return max(1, min(MAX_FILE_SIZE, int(size)))


def generate_workload(profile: WorkloadProfile, seed: int) -> Iterator[SyntheticTree]:
    """Yield ``profile.releases`` trees; consecutive trees share exactly
    ``round(overlap_fraction * N)`` byte-identical files."""
    rng = random.Random(seed)
    paths = [file_path(i) for i in range(profile.artifacts_per_release)]
    files: dict[str, bytes] = {}
    for p in paths:
        files[p] = rng.randbytes(_draw_size(rng, profile))
    for index in range(profile.releases):
        if index == 0:
            changed = frozenset(paths)
        else:
            files = dict(files)
            changed = frozenset(rng.sample(paths, profile.changed_per_release))
            for p in sorted(changed):
                new = rng.randbytes(_draw_size(rng, profile))
                while new == files[p]:
                    new = rng.randbytes(len(new) + 1)
                files[p] = new
        yield SyntheticTree(index, files, changed)
