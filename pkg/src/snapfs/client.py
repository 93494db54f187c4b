"""Client side: sync manifests, read snapshots lazily, checkout and verify.

Nothing is prefetched.  Opening a snapshot costs no requests; each stat,
list or read fetches only the catalogs on its path and, for reads, only the
objects (or chunks) overlapping the requested range.  Fetched objects are
verified against their ids before use and kept in an optional
:class:`~snapfs.cache.ObjectCache`.
"""

from __future__ import annotations

import os
import threading
from bisect import bisect_right
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterator, Protocol

from ._http import HttpSession
from .cache import UNLIMITED, ObjectCache
from .cas import ChunkList, ObjectId, decode_verified, is_object_id, object_id
from .catalog import (
    Catalog,
    DirEntry,
    join_path,
    parse_catalog,
    resolve_path,
)
from .errors import (
    CorruptObject,
    IntegrityError,
    MalformedData,
    NetworkError,
    NotADirectory,
    NotAFile,
    ObjectNotFound,
    RangeOutOfBounds,
    RefNotFound,
    Refused,
    SnapfsError,
)
from .publisher import Repository, SnapshotManifest

INCOMPLETE_MARKER = ".snapfs-checkout-incomplete"


class Remote(Protocol):
    def manifest(self, ref: str) -> tuple[ObjectId, bytes]: ...

    def object_encoded(self, oid: ObjectId) -> bytes: ...


class HttpRemote:
    """Talks to an origin or proxy over the /v1 protocol."""

    def __init__(self, url: str, timeout: float = 30.0):
        self.url = url.rstrip("/")
        self.session = HttpSession(url, timeout=timeout)
        self._lock = threading.Lock()
        self.requests = 0
        self.bytes_received = 0

    def _get(self, path: str):
        resp = self.session.get(path)
        with self._lock:
            self.requests += 1
            self.bytes_received += len(resp.body)
        return resp

    def manifest(self, ref: str) -> tuple[ObjectId, bytes]:
        if ref == "head":
            path = "/v1/manifests/head"
        elif is_object_id(ref):
            path = f"/v1/manifests/id/{ref}"
        else:
            path = f"/v1/manifests/tag/{ref}"
        resp = self._get(path)
        if resp.status == 404:
            raise RefNotFound(ref)
        if resp.status != 200:
            raise NetworkError(f"{self.url}{path}: HTTP {resp.status}")
        mid = object_id(resp.body)
        if is_object_id(ref) and mid != ref:
            raise CorruptObject(ref, "manifest does not match its id")
        return mid, resp.body

    def tags(self) -> bytes:
        resp = self._get("/v1/tags")
        if resp.status != 200:
            raise NetworkError(f"{self.url}/v1/tags: HTTP {resp.status}")
        return resp.body

    def object_encoded(self, oid: ObjectId) -> bytes:
        resp = self._get(f"/v1/objects/{oid}")
        if resp.status == 200:
            return resp.body
        if resp.status == 404:
            raise ObjectNotFound(oid)
        if resp.status == 500:
            raise CorruptObject(oid, "server refused to serve a corrupt object")
        raise NetworkError(f"{self.url}/v1/objects/{oid}: HTTP {resp.status}")


class LocalRemote:
    """Reads a repository directory directly, with the same interface."""

    def __init__(self, repo: Repository | str | os.PathLike):
        self.repo = repo if isinstance(repo, Repository) else Repository(repo)
        self.requests = 0
        self.bytes_received = 0

    def manifest(self, ref: str) -> tuple[ObjectId, bytes]:
        mid = self.repo.resolve_ref(ref)
        self.requests += 1
        return mid, (self.repo.manifest_dir / mid).read_bytes()

    def tags(self) -> bytes:
        return (self.repo.path / "tags").read_bytes()

    def object_encoded(self, oid: ObjectId) -> bytes:
        data = self.repo.store.read_encoded(oid)
        self.requests += 1
        self.bytes_received += len(data)
        return data


def open_remote(location: str) -> HttpRemote | LocalRemote:
    if location.startswith(("http://", "https://")):
        return HttpRemote(location)
    return LocalRemote(location)


class Fetcher:
    """Cache-backed object retrieval with per-kind fetch counters.

    ``fetches`` counts objects actually retrieved from the remote;
    ``lookups`` counts every request, including cache hits.
    """

    def __init__(self, remote: Remote, cache: ObjectCache | None = None):
        self.remote = remote
        self.cache = cache
        self.fetches: Counter[str] = Counter()
        self.lookups: Counter[str] = Counter()
        self._lock = threading.Lock()

    def __call__(self, oid: ObjectId, kind: str = "object") -> bytes:
        with self._lock:
            self.lookups[kind] += 1
        if self.cache is not None:
            payload = self.cache.get(oid)
            if payload is not None:
                return payload
        encoded = self.remote.object_encoded(oid)
        with self._lock:
            self.fetches[kind] += 1
        if self.cache is not None:
            return self.cache.admit(oid, encoded)
        return decode_verified(oid, encoded)

    def catalog(self, oid: ObjectId) -> bytes:
        return self(oid, "catalog")

    def reset_counters(self) -> None:
        with self._lock:
            self.fetches.clear()
            self.lookups.clear()

    @property
    def total_fetches(self) -> int:
        return sum(self.fetches.values())


def sync(remote: Remote, ref: str = "head") -> tuple[ObjectId, SnapshotManifest]:
    """Fetch and parse the manifest for ``ref`` (head, tag name or manifest id)."""
    mid, data = remote.manifest(ref)
    return mid, SnapshotManifest.parse(data)


class SnapshotHandle:
    """Read-only view of one snapshot; safe to share between threads."""

    def __init__(self, manifest: SnapshotManifest, fetcher: Fetcher):
        self.manifest = manifest
        self.fetcher = fetcher

    @property
    def root(self) -> ObjectId:
        return self.manifest.root

    def stat(self, path: str) -> DirEntry:
        return resolve_path(self.root, path, self.fetcher.catalog)

    def _catalog(self, entry: DirEntry) -> Catalog:
        return parse_catalog(self.fetcher.catalog(entry.content))

    def list(self, path: str = "") -> list[DirEntry]:
        entry = self.stat(path)
        if not entry.is_dir:
            raise NotADirectory(path)
        return list(self._catalog(entry))

    def readlink(self, path: str) -> str:
        entry = self.stat(path)
        if not entry.is_symlink:
            raise SnapfsError(f"{path!r}: not a symlink")
        return entry.target

    def read(self, path: str, offset: int = 0, length: int | None = None) -> bytes:
        entry = self.stat(path)
        if not entry.is_file:
            raise NotAFile(path)
        if length is None:
            length = entry.size - offset
        if offset < 0 or length < 0 or offset + length > entry.size:
            raise RangeOutOfBounds(
                f"{path!r}: range [{offset}, {offset + length}) outside file of {entry.size} bytes")
        if length == 0:
            return b""
        if not entry.chunked:
            data = self.fetcher(entry.content, "data")
            if len(data) != entry.size:
                raise IntegrityError(f"{path!r}: object size differs from catalog")
            return data[offset:offset + length]
        return b"".join(self._read_chunks(entry, offset, length))

    def _chunk_list(self, entry: DirEntry) -> ChunkList:
        clist = ChunkList.parse(self.fetcher(entry.content, "chunklist"))
        if clist.total_size != entry.size:
            raise IntegrityError(f"{entry.name!r}: chunk list size differs from catalog")
        return clist

    def _read_chunks(self, entry: DirEntry, offset: int, length: int) -> Iterator[bytes]:
        clist = self._chunk_list(entry)
        starts = clist.offsets()
        end = offset + length
        i = bisect_right(starts, offset) - 1
        while i < len(starts) and starts[i] < end:
            oid, size = clist.chunks[i]
            data = self.fetcher(oid, "chunk")
            if len(data) != size:
                raise IntegrityError(f"chunk {oid} size differs from chunk list")
            lo = max(offset - starts[i], 0)
            hi = min(end - starts[i], size)
            yield data[lo:hi]
            i += 1

    def iter_file(self, entry: DirEntry) -> Iterator[bytes]:
        """Whole-file content in pieces (one per chunk for chunked files)."""
        if entry.size == 0:
            return
        if entry.chunked:
            yield from self._read_chunks(entry, 0, entry.size)
        else:
            data = self.fetcher(entry.content, "data")
            if len(data) != entry.size:
                raise IntegrityError(f"{entry.name!r}: object size differs from catalog")
            yield data

    def walk(self, path: str = "") -> Iterator[tuple[str, DirEntry]]:
        """(path, entry) pairs below ``path``, parents before children."""
        start = self.stat(path)
        if not start.is_dir:
            raise NotADirectory(path)
        stack = [(path.strip("/"), start)]
        while stack:
            prefix, dirent = stack.pop()
            children = list(self._catalog(dirent))
            for child in children:
                yield join_path(prefix, child.name), child
            for child in reversed(children):
                if child.is_dir:
                    stack.append((join_path(prefix, child.name), child))


def open_snapshot(manifest: SnapshotManifest, fetcher: Fetcher) -> SnapshotHandle:
    return SnapshotHandle(manifest, fetcher)


@dataclass
class CheckoutStats:
    files: int = 0
    directories: int = 0
    symlinks: int = 0
    bytes_written: int = 0


def checkout(handle: SnapshotHandle, target: str | os.PathLike) -> CheckoutStats:
    """Materialize the snapshot into ``target`` (absent or empty).

    A marker file sits in ``target`` until the checkout completes, so an
    interrupted checkout is recognizable as such.
    """
    target = Path(target)
    if target.exists() and (not target.is_dir() or any(target.iterdir())):
        raise Refused(f"checkout target {target} exists and is not empty")
    target.mkdir(parents=True, exist_ok=True)
    marker = target / INCOMPLETE_MARKER
    marker.write_bytes(b"")
    stats = CheckoutStats()
    for path, entry in handle.walk():
        dest = target / path
        if entry.is_dir:
            dest.mkdir()
            stats.directories += 1
        elif entry.is_symlink:
            os.symlink(entry.target, dest)
            stats.symlinks += 1
        else:
            with open(dest, "wb") as f:
                for piece in handle.iter_file(entry):
                    f.write(piece)
                    stats.bytes_written += len(piece)
            os.chmod(dest, 0o755 if entry.executable else 0o644)
            stats.files += 1
    marker.unlink()
    return stats


@dataclass
class VerifyReport:
    objects_visited: int = 0
    bytes_verified: int = 0
    missing: list[tuple[ObjectId, str]] = field(default_factory=list)
    corrupt: list[tuple[ObjectId, str]] = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return not self.missing and not self.corrupt

    def to_text(self) -> str:
        lines = [f"objects {self.objects_visited}", f"bytes {self.bytes_verified}"]
        lines += [f"missing {oid} {path or '/'}" for oid, path in self.missing]
        lines += [f"corrupt {oid} {path or '/'}" for oid, path in self.corrupt]
        lines.append("ok" if self.ok else "failed")
        return "\n".join(lines) + "\n"


def verify(handle: SnapshotHandle) -> VerifyReport:
    """Re-hash every catalog and file object of the snapshot, collecting failures."""
    report = VerifyReport()
    seen: set[ObjectId] = set()
    fetch = handle.fetcher

    def check(oid: ObjectId, kind: str, path: str, size: int | None = None) -> bytes | None:
        if oid in seen:
            return None
        seen.add(oid)
        report.objects_visited += 1
        try:
            data = fetch(oid, kind)
        except ObjectNotFound:
            report.missing.append((oid, path))
            return None
        except CorruptObject:
            report.corrupt.append((oid, path))
            return None
        if size is not None and len(data) != size:
            report.corrupt.append((oid, path))
            return None
        report.bytes_verified += len(data)
        return data

    stack = [(handle.root, "")]
    while stack:
        cid, prefix = stack.pop()
        data = check(cid, "catalog", prefix)
        if data is None:
            continue
        try:
            catalog = parse_catalog(data)
        except MalformedData:
            report.corrupt.append((cid, prefix))
            continue
        for entry in catalog:
            path = join_path(prefix, entry.name)
            if entry.is_dir:
                stack.append((entry.content, path))
            elif entry.is_file and entry.chunked:
                raw = check(entry.content, "chunklist", path)
                if raw is None:
                    continue
                try:
                    clist = ChunkList.parse(raw)
                except MalformedData:
                    report.corrupt.append((entry.content, path))
                    continue
                if clist.total_size != entry.size:
                    report.corrupt.append((entry.content, path))
                for oid, size in clist.chunks:
                    check(oid, "chunk", path, size)
            elif entry.is_file:
                check(entry.content, "data", path, entry.size)
    return report


class Client:
    """Convenience bundle of a remote, an optional cache and a fetcher."""

    def __init__(self, location: str | Remote, cache_dir: str | os.PathLike | None = None,
                 quota: int = UNLIMITED):
        self.remote = open_remote(location) if isinstance(location, str) else location
        self.cache = ObjectCache(cache_dir, quota) if cache_dir is not None else None
        self.fetcher = Fetcher(self.remote, self.cache)
        self.synced: dict[ObjectId, SnapshotManifest] = {}

    def sync(self, ref: str = "head") -> SnapshotManifest:
        mid, manifest = sync(self.remote, ref)
        self.synced[mid] = manifest
        return manifest

    def open(self, manifest: SnapshotManifest | str = "head") -> SnapshotHandle:
        if isinstance(manifest, str):
            manifest = self.sync(manifest)
        return open_snapshot(manifest, self.fetcher)

    def close(self) -> None:
        if self.cache is not None:
            self.cache.close()
        session = getattr(self.remote, "session", None)
        if session is not None:
            session.close()

    def __enter__(self) -> "Client":
        return self

    def __exit__(self, *exc) -> None:
        self.close()
