"""Repository publishing: ingest trees, commit snapshots, tags, history, gc.

Repository layout::

    data/        object store (see :mod:`snapfs.cas`)
    manifests/   one file per committed manifest, named by its id
    tags         head pointer and tag table
    lock         publish lock (flock)

A publish writes objects first, then the manifest, then atomically replaces
``tags``.  Until that final rename nothing new is reachable, so a publisher
killed at any point leaves the previous head and history intact.
"""

from __future__ import annotations

import contextlib
import fcntl
import logging
import os
import re
import stat
import time
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import TYPE_CHECKING, Callable, Iterable, Iterator

from . import _text
from .cas import ChunkList, ObjectId, ObjectStore, StoreStats, atomic_write, is_object_id, object_id
from .catalog import (
    Catalog,
    DirEntry,
    load_catalog,
    parse_catalog,
    serialize_catalog,
    split_path,
    validate_name,
)
from .errors import (
    IngestError,
    IntegrityError,
    InvalidName,
    LockError,
    MalformedData,
    ObjectNotFound,
    Refused,
    RefNotFound,
    SnapfsError,
    UnsupportedNode,
)

if TYPE_CHECKING:
    from .recipe import BuildRecipe

log = logging.getLogger(__name__)

MANIFEST_HEADER = "snapfs-manifest 1"
TAGS_HEADER = "snapfs-tags 1"
MAX_NOTE_BYTES = 4096
RECIPE_PATH = ".snapfs/recipe"

_TAG_RE = re.compile(r"[A-Za-z0-9._-]{1,128}\Z")


@dataclass(frozen=True)
class SnapshotManifest:
    root: ObjectId
    revision: int
    parent: ObjectId | None
    created_at: int
    note: str = ""

    def __post_init__(self):
        if self.revision < 1:
            raise ValueError("revision must be positive")
        if (self.parent is None) != (self.revision == 1):
            raise ValueError("only revision 1 has no parent")
        if len(_text.to_bytes(self.note)) > MAX_NOTE_BYTES:
            raise ValueError(f"note longer than {MAX_NOTE_BYTES} bytes")

    def serialize(self) -> bytes:
        lines = [
            MANIFEST_HEADER,
            f"root {self.root}",
            f"revision {self.revision}",
            f"parent {self.parent or 'none'}",
            f"created {self.created_at}",
            f"note {_text.escape(self.note)}",
        ]
        return _text.to_bytes("\n".join(lines) + "\n")

    @property
    def id(self) -> ObjectId:
        return object_id(self.serialize())

    @classmethod
    def parse(cls, data: bytes) -> "SnapshotManifest":
        what = "manifest"
        lines = _text.split_lines(data, what)
        _text.expect_header(lines, MANIFEST_HEADER, what)
        if len(lines) != 6:
            raise MalformedData(what, f"expected 6 lines, got {len(lines)}")
        root = _text.keyvalue(lines[1], "root", what, 2)
        revision = _text.keyvalue(lines[2], "revision", what, 3)
        parent = _text.keyvalue(lines[3], "parent", what, 4)
        created = _text.keyvalue(lines[4], "created", what, 5)
        note = _text.keyvalue(lines[5], "note", what, 6)
        if not is_object_id(root):
            raise MalformedData(what, "bad root id", 2)
        if not revision.isdigit():
            raise MalformedData(what, "bad revision", 3)
        if parent != "none" and not is_object_id(parent):
            raise MalformedData(what, "bad parent id", 4)
        if not created.lstrip("-").isdigit():
            raise MalformedData(what, "bad timestamp", 5)
        try:
            manifest = cls(root, int(revision), None if parent == "none" else parent,
                           int(created), _text.unescape(note, what))
        except ValueError as exc:
            raise MalformedData(what, str(exc)) from None
        if manifest.serialize() != data:
            raise MalformedData(what, "non-canonical encoding")
        return manifest


def validate_tag_name(name: str) -> str:
    if not _TAG_RE.match(name) or name == "head":
        raise InvalidName(f"invalid tag name: {name!r}")
    return name


@dataclass
class TagDatabase:
    head: ObjectId | None = None
    tags: dict[str, ObjectId] = field(default_factory=dict)

    def serialize(self) -> bytes:
        lines = [TAGS_HEADER, f"head {self.head or 'none'}"]
        lines += [f"tag {name} {oid}" for name, oid in sorted(self.tags.items())]
        return ("\n".join(lines) + "\n").encode("ascii")

    @classmethod
    def parse(cls, data: bytes) -> "TagDatabase":
        what = "tags"
        lines = _text.split_lines(data, what)
        _text.expect_header(lines, TAGS_HEADER, what)
        if len(lines) < 2:
            raise MalformedData(what, "missing head line")
        head = _text.keyvalue(lines[1], "head", what, 2)
        if head != "none" and not is_object_id(head):
            raise MalformedData(what, "bad head id", 2)
        tags = {}
        for lineno, line in enumerate(lines[2:], start=3):
            parts = line.split(" ")
            if len(parts) != 3 or parts[0] != "tag" or not is_object_id(parts[2]):
                raise MalformedData(what, f"bad tag line {line!r}", lineno)
            tags[parts[1]] = parts[2]
        db = cls(None if head == "none" else head, tags)
        if db.serialize() != data:
            raise MalformedData(what, "tags not in canonical order")
        return db


@dataclass
class IngestResult:
    root: ObjectId
    stats: StoreStats


class Repository:
    """A publishing repository rooted at ``path``.

    Mutating operations (ingest, commit, tag, gc) run under the publish lock,
    a ``flock`` on ``<path>/lock``; the lock is released by the kernel if the
    process dies, so a crashed publisher never wedges the repository.
    """

    def __init__(self, path: str | os.PathLike, *, clock: Callable[[], float] = time.time,
                 **store_options):
        self.path = Path(path)
        if not (self.path / "tags").exists():
            raise SnapfsError(f"no repository at {self.path}")
        self.store = ObjectStore(self.path, **store_options)
        self.manifest_dir = self.path / "manifests"
        self.clock = clock
        self._lock_fd: int | None = None

    @classmethod
    def init(cls, path: str | os.PathLike, **kwargs) -> "Repository":
        path = Path(path)
        path.mkdir(parents=True, exist_ok=True)
        (path / "manifests").mkdir(exist_ok=True)
        (path / "data" / "txn").mkdir(parents=True, exist_ok=True)
        tags = path / "tags"
        if not tags.exists():
            atomic_write(tags, TagDatabase().serialize(), path / "data" / "txn")
        return cls(path, **kwargs)

    @classmethod
    def open_or_init(cls, path: str | os.PathLike, **kwargs) -> "Repository":
        if (Path(path) / "tags").exists():
            return cls(path, **kwargs)
        return cls.init(path, **kwargs)

    def fetch(self, oid: ObjectId) -> bytes:
        return self.store.get_object(oid)

    # -- locking ---------------------------------------------------------

    @property
    def locked(self) -> bool:
        return self._lock_fd is not None

    @contextlib.contextmanager
    def publish_lock(self) -> Iterator["Repository"]:
        if self.locked:
            yield self
            return
        fd = os.open(self.path / "lock", os.O_RDWR | os.O_CREAT, 0o644)
        try:
            fcntl.flock(fd, fcntl.LOCK_EX | fcntl.LOCK_NB)
        except BlockingIOError:
            os.close(fd)
            raise LockError(f"repository {self.path} is locked by another publisher") from None
        self._lock_fd = fd
        try:
            yield self
        finally:
            self._lock_fd = None
            fcntl.flock(fd, fcntl.LOCK_UN)
            os.close(fd)

    def _require_lock(self, what: str) -> None:
        if not self.locked:
            raise LockError(f"{what} requires the publish lock")

    # -- ingest ----------------------------------------------------------

    def ingest(self, source: str | os.PathLike) -> IngestResult:
        source = Path(source)
        if not source.is_dir() or source.is_symlink():
            raise IngestError(str(source), "not a directory")
        with self.publish_lock():
            before = self.store.stats()
            root = self._ingest_dir(source)
            return IngestResult(root, self.store.stats() - before)

    def _ingest_dir(self, directory: Path) -> ObjectId:
        try:
            with os.scandir(directory) as it:
                children = list(it)
        except OSError as exc:
            raise IngestError(str(directory), exc.strerror or str(exc)) from exc
        entries = []
        for child in children:
            entries.append(self._ingest_entry(child))
        return self.store.put_object(serialize_catalog(Catalog.from_entries(entries)))

    def _ingest_entry(self, child: os.DirEntry) -> DirEntry:
        path = child.path
        try:
            validate_name(child.name)
            st = child.stat(follow_symlinks=False)
            mode = st.st_mode
            if stat.S_ISLNK(mode):
                return DirEntry.symlink(child.name, os.readlink(path))
            if stat.S_ISDIR(mode):
                return DirEntry.directory(child.name, self._ingest_dir(Path(path)))
            if stat.S_ISREG(mode):
                with open(path, "rb") as f:
                    size = os.fstat(f.fileno()).st_size
                    content = self.store.put_file(f, size)
                executable = bool(mode & stat.S_IXUSR)
                if isinstance(content, ChunkList):
                    return DirEntry.file(child.name, content.id, size, executable, chunked=True)
                return DirEntry.file(child.name, content, size, executable)
        except SnapfsError:
            raise
        except (OSError, EOFError, InvalidName) as exc:
            raise IngestError(path, getattr(exc, "strerror", None) or str(exc)) from exc
        raise UnsupportedNode(path, _node_kind(mode))

    def graft(self, root: ObjectId, path: str, entry: DirEntry) -> ObjectId:
        """New root id with ``entry`` placed at ``path`` (parents created as needed)."""
        parts = split_path(path)
        if not parts:
            raise ValueError("cannot graft onto the root itself")
        return self._graft(root, parts, entry.renamed(parts[-1]), "")

    def _graft(self, catalog_id: ObjectId | None, parts: list[str], leaf: DirEntry,
               walked: str) -> ObjectId:
        catalog = load_catalog(self.fetch, catalog_id) if catalog_id else Catalog()
        if len(parts) == 1:
            new = catalog.with_entry(leaf)
        else:
            existing = catalog.get(parts[0])
            here = f"{walked}/{parts[0]}".lstrip("/")
            if existing is not None and not existing.is_dir:
                raise IngestError(here, "exists and is not a directory")
            child = self._graft(existing.content if existing else None, parts[1:], leaf, here)
            new = catalog.with_entry(DirEntry.directory(parts[0], child))
        return self.store.put_object(serialize_catalog(new))

    # -- snapshots -------------------------------------------------------

    def tags(self) -> TagDatabase:
        return TagDatabase.parse((self.path / "tags").read_bytes())

    def _write_tags(self, db: TagDatabase) -> None:
        atomic_write(self.path / "tags", db.serialize(), self.store.txn_dir, self.store.fsync)

    def manifest(self, mid: ObjectId) -> SnapshotManifest:
        if not is_object_id(mid):
            raise RefNotFound(mid)
        try:
            data = (self.manifest_dir / mid).read_bytes()
        except FileNotFoundError:
            raise RefNotFound(mid) from None
        if object_id(data) != mid:
            raise IntegrityError(f"manifest {mid} does not match its id")
        return SnapshotManifest.parse(data)

    def head(self) -> SnapshotManifest | None:
        head = self.tags().head
        return self.manifest(head) if head else None

    def resolve_ref(self, ref: str) -> ObjectId:
        """Manifest id for ``head``, a tag name, or a manifest id."""
        db = self.tags()
        if ref == "head":
            if db.head is None:
                raise RefNotFound(ref)
            return db.head
        if ref in db.tags:
            return db.tags[ref]
        if is_object_id(ref) and (self.manifest_dir / ref).exists():
            return ref
        raise RefNotFound(ref)

    def commit(self, root: ObjectId, note: str = "") -> SnapshotManifest:
        self._require_lock("commit")
        if not self.store.contains(root):
            raise ObjectNotFound(root, "snapshot root")
        parse_catalog(self.fetch(root))
        db = self.tags()
        if db.head is None:
            revision, parent = 1, None
        else:
            revision, parent = self.manifest(db.head).revision + 1, db.head
        manifest = SnapshotManifest(root, revision, parent, int(self.clock()), note)
        data = manifest.serialize()
        mid = self.store.put_object(data)
        atomic_write(self.manifest_dir / mid, data, self.store.txn_dir, self.store.fsync)
        db.head = mid
        self._write_tags(db)
        log.info("committed revision %d as %s", revision, mid)
        return manifest

    def tag(self, name: str, mid: ObjectId) -> TagDatabase:
        validate_tag_name(name)
        with self.publish_lock():
            self.manifest(mid)
            db = self.tags()
            db.tags[name] = mid
            self._write_tags(db)
            return db

    def history(self, limit: int | None = None) -> list[SnapshotManifest]:
        out: list[SnapshotManifest] = []
        mid = self.tags().head
        while mid is not None and (limit is None or len(out) < limit):
            try:
                manifest = self.manifest(mid)
            except RefNotFound:
                raise IntegrityError(f"history broken: manifest {mid} missing") from None
            if out and manifest.revision != out[-1].revision - 1:
                raise IntegrityError(
                    f"history broken: revision {manifest.revision} follows {out[-1].revision}")
            out.append(manifest)
            mid = manifest.parent
        if limit is None and out and out[-1].revision != 1:
            raise IntegrityError("history does not reach revision 1")
        return out

    def publish(self, source: str | os.PathLike, note: str = "", tag: str | None = None,
                recipe: "BuildRecipe | None" = None) -> SnapshotManifest:
        """Ingest, optionally embed a build recipe, commit and tag in one transaction."""
        if tag is not None:
            validate_tag_name(tag)
        with self.publish_lock():
            root = self.ingest(source).root
            if recipe is not None:
                root = self.embed_recipe(root, recipe)
            manifest = self.commit(root, note)
            if tag is not None:
                self.tag(tag, manifest.id)
            return manifest

    def embed_recipe(self, root: ObjectId, recipe: "BuildRecipe") -> ObjectId:
        recipe = replace(recipe, inputs=tuple(recipe.inputs) + (("tree", root),))
        data = recipe.serialize()
        oid = self.store.put_object(data)
        return self.graft(root, RECIPE_PATH, DirEntry.file("recipe", oid, len(data)))

    # -- garbage collection ----------------------------------------------

    def reachable(self, root: ObjectId) -> set[ObjectId]:
        """Every object id a snapshot tree rooted at ``root`` depends on."""
        seen = {root}
        stack = [root]
        while stack:
            for entry in load_catalog(self.fetch, stack.pop()):
                if entry.is_dir:
                    if entry.content not in seen:
                        seen.add(entry.content)
                        stack.append(entry.content)
                elif entry.is_file and entry.content not in seen:
                    seen.add(entry.content)
                    if entry.chunked:
                        clist = ChunkList.parse(self.fetch(entry.content))
                        seen.update(oid for oid, _ in clist.chunks)
        return seen

    def gc(self, retain: Iterable[ObjectId]) -> int:
        """Drop every object not needed by a retained snapshot.

        Manifests on the history chain (and tag targets) are always kept so
        ``history`` stays walkable; only the trees of non-retained revisions
        are removed.
        """
        retain = set(retain)
        with self.publish_lock():
            db = self.tags()
            if not retain:
                raise Refused("gc: retain set is empty")
            if db.head not in retain:
                raise Refused("gc: head must be retained")
            chain = {m.id for m in self.history()}
            unknown = retain - chain - set(db.tags.values())
            if unknown:
                raise RefNotFound(sorted(unknown)[0])
            keep = chain | set(db.tags.values())
            for mid in retain:
                keep |= self.reachable(self.manifest(mid).root)
            removed = 0
            for oid in list(self.store.iter_ids()):
                if oid not in keep and self.store.delete(oid):
                    removed += 1
            for path in self.manifest_dir.iterdir():
                if path.name not in keep:
                    path.unlink()
            self.store.clean_txn()
            log.info("gc removed %d objects", removed)
            return removed


def _node_kind(mode: int) -> str:
    for test, name in ((stat.S_ISCHR, "character device"), (stat.S_ISBLK, "block device"),
                       (stat.S_ISFIFO, "fifo"), (stat.S_ISSOCK, "socket")):
        if test(mode):
            return name
    return "unknown"
