"""Release-stream benchmark: generate, publish, and watch clients pick it up."""

from __future__ import annotations

import hashlib
import logging
import shutil
import tempfile
import time
from dataclasses import dataclass, field
from pathlib import Path

from .client import HttpRemote, sync
from .publisher import Repository
from .server import origin_server, parse_stats
from .workload import PRESETS, WorkloadProfile, generate_workload

log = logging.getLogger(__name__)

HEADER = "snapfs-bench 1"
POLL_INTERVAL = 0.01


@dataclass
class ReleaseMetrics:
    index: int
    logical_bytes: int
    new_stored_bytes: int
    publish_seconds: float
    visible_seconds: float

    @property
    def marginal_fraction(self) -> float:
        return self.new_stored_bytes / self.logical_bytes if self.logical_bytes else 0.0


@dataclass
class BenchReport:
    profile: str
    workload: WorkloadProfile
    seed: int
    logical_bytes: int = 0
    stored_bytes: int = 0
    unique_content_bytes: int = 0
    client_requests: int = 0
    server_requests_total: int = 0
    releases: list[ReleaseMetrics] = field(default_factory=list)

    @property
    def dedup_ratio(self) -> float:
        return self.stored_bytes / self.logical_bytes if self.logical_bytes else 0.0

    def to_text(self) -> str:
        w = self.workload
        lines = [
            HEADER,
            f"profile {self.profile}",
            f"releases {w.releases}",
            f"files_per_release {w.artifacts_per_release}",
            f"overlap {w.overlap_fraction}",
            f"seed {self.seed}",
            f"logical_bytes {self.logical_bytes}",
            f"stored_bytes {self.stored_bytes}",
            f"unique_content_bytes {self.unique_content_bytes}",
            f"dedup_ratio {self.dedup_ratio:.6f}",
            f"client_requests {self.client_requests}",
            f"server_requests_total {self.server_requests_total}",
        ]
        lines += [
            f"release {r.index + 1} {r.logical_bytes} {r.new_stored_bytes} "
            f"{r.publish_seconds:.6f} {r.visible_seconds:.6f}"
            for r in self.releases
        ]
        return "\n".join(lines) + "\n"


def resolve_profile(name: str, releases: int | None = None, files: int | None = None,
                    overlap: float | None = None) -> WorkloadProfile:
    base = PRESETS.get(name.lower())
    if base is None:
        if releases is None or files is None:
            raise ValueError(f"unknown preset {name!r}; give --releases and --files")
        base = WorkloadProfile(releases, files)
    return WorkloadProfile(
        releases=base.releases if releases is None else releases,
        artifacts_per_release=base.artifacts_per_release if files is None else files,
        overlap_fraction=base.overlap_fraction if overlap is None else overlap,
        median_size=base.median_size,
        size_sigma=base.size_sigma,
    )


def run_bench(profile: WorkloadProfile, seed: int = 0, name: str = "custom",
              workdir: str | Path | None = None, manifest_ttl: int = 60,
              fsync: bool = True) -> BenchReport:
    """Publish every release of the workload into a fresh repository served
    over HTTP, timing publish and publish-to-visible latency per release."""
    own_dir = workdir is None
    base = Path(tempfile.mkdtemp(prefix="snapfs-bench-")) if own_dir else Path(workdir)
    try:
        return _run(profile, seed, name, base, manifest_ttl, fsync)
    finally:
        if own_dir:
            shutil.rmtree(base, ignore_errors=True)


def _run(profile, seed, name, base: Path, manifest_ttl: int, fsync: bool) -> BenchReport:
    repo = Repository.init(base / "repo", fsync=fsync)
    src = base / "src"
    report = BenchReport(name, profile, seed)
    seen: set[bytes] = set()
    with origin_server(repo, manifest_ttl=manifest_ttl) as server:
        remote = HttpRemote(server.url)
        for tree in generate_workload(profile, seed):
            tree.write(src, only_changed=tree.index > 0)
            for content in tree.files.values():
                digest = hashlib.sha256(content).digest()
                if digest not in seen:
                    seen.add(digest)
                    report.unique_content_bytes += len(content)
            logical = tree.logical_bytes
            before = repo.store.stats().stored_bytes
            start = time.perf_counter()
            manifest = repo.publish(src, note=f"release {tree.index + 1}")
            published = time.perf_counter()
            while True:
                try:
                    _, seen_manifest = sync(remote, "head")
                    if seen_manifest.revision >= manifest.revision:
                        break
                except LookupError:
                    pass
                time.sleep(POLL_INTERVAL)
            visible = time.perf_counter()
            new_stored = repo.store.stats().stored_bytes - before
            report.logical_bytes += logical
            report.releases.append(ReleaseMetrics(
                tree.index, logical, new_stored, published - start, visible - published))
            log.info("release %d: %d logical, %d new", tree.index + 1, logical, new_stored)
        report.stored_bytes = repo.store.stats().stored_bytes
        report.client_requests = remote.requests
        report.server_requests_total = parse_stats(
            remote.session.get("/v1/stats").body)["requests_total"]
        remote.session.close()
    return report
