"""What changed between two snapshots, by Merkle-pruned tree comparison.

Two directories with equal catalog ids are identical, so the walk only
descends where ids differ: the number of catalogs fetched grows with the
size of the change, not of the tree.

Canonical text form::

    snapfs-diff 1
    from <revision> <manifest-id> <created> <note>    (manifest diffs only)
    to <revision> <manifest-id> <created> <note>      (manifest diffs only)
    <change> <path> [<before>] [<after>]
    count <change> <n>                                (one per change class)
    cost <catalogs fetched>

where ``before``/``after`` summarize an entry as ``f:<size>:<id>`` (file),
``x:<size>:<id>`` (executable file), ``d:<id>`` (directory) or
``l:<target>`` (symlink).
"""

from __future__ import annotations

from collections import Counter
from dataclasses import dataclass, field
from typing import Callable, Iterator

from . import _text
from .cas import ObjectId, is_object_id
from .catalog import DIRECTORY, FILE, SYMLINK, DirEntry, join_path, parse_catalog
from .errors import MalformedData, ObjectNotFound
from .publisher import SnapshotManifest

ADDED = "added"
REMOVED = "removed"
MODIFIED_CONTENT = "modified-content"
MODIFIED_MODE = "modified-mode"
TYPE_CHANGED = "type-changed"
CHANGES = (ADDED, REMOVED, MODIFIED_CONTENT, MODIFIED_MODE, TYPE_CHANGED)

HEADER = "snapfs-diff 1"


@dataclass(frozen=True)
class Summary:
    kind: str
    size: int = 0
    id: str | None = None  # content or catalog id; symlink target for symlinks
    executable: bool = False

    @classmethod
    def of(cls, entry: DirEntry) -> "Summary":
        if entry.is_symlink:
            return cls(SYMLINK, id=entry.target)
        return cls(entry.kind, entry.size, entry.content, entry.executable)

    def token(self) -> str:
        if self.kind == FILE:
            return f"{'x' if self.executable else 'f'}:{self.size}:{self.id}"
        if self.kind == DIRECTORY:
            return f"d:{self.id}"
        return f"l:{_text.escape(self.id)}"

    @classmethod
    def parse(cls, token: str) -> "Summary":
        tag, _, rest = token.partition(":")
        if tag in ("f", "x"):
            size, _, oid = rest.partition(":")
            if size.isdigit() and is_object_id(oid):
                return cls(FILE, int(size), oid, tag == "x")
        elif tag == "d" and is_object_id(rest):
            return cls(DIRECTORY, id=rest)
        elif tag == "l" and rest:
            return cls(SYMLINK, id=_text.unescape(rest, "diff"))
        raise MalformedData("diff", f"bad entry summary {token!r}")


@dataclass(frozen=True)
class DiffEntry:
    path: str
    change: str
    before: Summary | None = None
    after: Summary | None = None

    def swapped(self) -> "DiffEntry":
        change = {ADDED: REMOVED, REMOVED: ADDED}.get(self.change, self.change)
        return DiffEntry(self.path, change, self.after, self.before)

    def to_line(self) -> str:
        parts = [self.change, _text.escape(self.path)]
        parts += [s.token() for s in (self.before, self.after) if s is not None]
        return " ".join(parts)

    @classmethod
    def parse(cls, line: str, lineno: int) -> "DiffEntry":
        parts = line.split(" ")
        change = parts[0]
        if change not in CHANGES:
            raise MalformedData("diff", f"unknown change {change!r}", lineno)
        expected = 3 if change in (ADDED, REMOVED) else 4
        if len(parts) != expected:
            raise MalformedData("diff", f"wrong field count for {change}", lineno)
        path = _text.unescape(parts[1], "diff")
        summaries = [Summary.parse(t) for t in parts[2:]]
        if change == ADDED:
            return cls(path, change, None, summaries[0])
        if change == REMOVED:
            return cls(path, change, summaries[0], None)
        return cls(path, change, summaries[0], summaries[1])


def _path_key(entry: DiffEntry) -> bytes:
    return _text.to_bytes(entry.path)


@dataclass
class DiffReport:
    entries: list[DiffEntry] = field(default_factory=list)
    cost: int = 0

    @property
    def stats(self) -> dict[str, int]:
        counts = Counter(e.change for e in self.entries)
        return {c: counts.get(c, 0) for c in CHANGES}

    @property
    def identical(self) -> bool:
        return not self.entries

    def paths(self) -> set[str]:
        return {e.path for e in self.entries}

    def body_lines(self, stat_only: bool = False) -> list[str]:
        lines = [] if stat_only else [e.to_line() for e in self.entries]
        lines += [f"count {c} {n}" for c, n in self.stats.items()]
        lines.append(f"cost {self.cost}")
        return lines

    def to_text(self, stat_only: bool = False) -> str:
        return "\n".join([HEADER] + self.body_lines(stat_only)) + "\n"

    @classmethod
    def parse(cls, text: str) -> "DiffReport":
        return ManifestDiff.parse(text).report


def _manifest_line(label: str, mid: ObjectId, m: SnapshotManifest) -> str:
    return f"{label} {m.revision} {mid} {m.created_at} {_text.escape(m.note)}"


@dataclass
class ManifestDiff:
    report: DiffReport
    before: SnapshotManifest | None = None
    after: SnapshotManifest | None = None
    before_id: ObjectId | None = None
    after_id: ObjectId | None = None
    header: dict[str, tuple] = field(default_factory=dict)

    def to_text(self, stat_only: bool = False) -> str:
        lines = [HEADER]
        if self.before is not None:
            lines.append(_manifest_line("from", self.before_id, self.before))
            lines.append(_manifest_line("to", self.after_id, self.after))
        lines += self.report.body_lines(stat_only)
        return "\n".join(lines) + "\n"

    @classmethod
    def parse(cls, text: str) -> "ManifestDiff":
        """Inverse of :meth:`to_text` for full (not stat-only) output.

        Manifest headers carry revision, id, timestamp and note but not the
        roots, so they are returned as ``(revision, id, created, note)``
        tuples in ``header``.
        """
        lines = _text.split_lines(text.encode("utf-8", "surrogateescape"), "diff")
        _text.expect_header(lines, HEADER, "diff")
        out = cls(DiffReport())
        counts: dict[str, int] = {}
        for lineno, line in enumerate(lines[1:], start=2):
            key, _, rest = line.partition(" ")
            if key in ("from", "to"):
                rev, mid, created, note = (rest.split(" ") + [""] * 4)[:4]
                out.header[key] = (int(rev), mid, int(created), _text.unescape(note, "diff"))
            elif key == "count":
                change, _, n = rest.partition(" ")
                counts[change] = int(n)
            elif key == "cost":
                out.report.cost = int(rest)
            else:
                out.report.entries.append(DiffEntry.parse(line, lineno))
        if counts and counts != out.report.stats:
            raise MalformedData("diff", "counts do not match entries")
        return out


class _Differ:
    def __init__(self, fetch: Callable[[ObjectId], bytes]):
        self.fetch = fetch
        self.cost = 0
        self.entries: list[DiffEntry] = []

    def catalog(self, oid: ObjectId, path: str):
        try:
            data = self.fetch(oid)
        except ObjectNotFound as exc:
            raise ObjectNotFound(oid, path or "/") from exc
        self.cost += 1
        return parse_catalog(data)

    def emit(self, path: str, change: str, before: DirEntry | None, after: DirEntry | None):
        self.entries.append(DiffEntry(
            path, change,
            Summary.of(before) if before is not None else None,
            Summary.of(after) if after is not None else None,
        ))

    def one_sided(self, entry: DirEntry, path: str, change: str) -> None:
        """Report ``entry`` and, for directories, every descendant."""
        side = (entry, None) if change == REMOVED else (None, entry)
        self.emit(path, change, *side)
        if entry.is_dir:
            self.descendants(entry, path, change)

    def descendants(self, entry: DirEntry, path: str, change: str) -> None:
        for child in self.catalog(entry.content, path):
            self.one_sided(child, join_path(path, child.name), change)

    def dirs(self, a: ObjectId, b: ObjectId, prefix: str) -> None:
        if a == b:
            return
        ca = {key: e for key, e in _keyed(self.catalog(a, prefix))}
        cb = {key: e for key, e in _keyed(self.catalog(b, prefix))}
        for key in sorted(ca.keys() | cb.keys()):
            ea, eb = ca.get(key), cb.get(key)
            path = join_path(prefix, (ea or eb).name)
            if eb is None:
                self.one_sided(ea, path, REMOVED)
            elif ea is None:
                self.one_sided(eb, path, ADDED)
            else:
                self.pair(ea, eb, path)

    def pair(self, ea: DirEntry, eb: DirEntry, path: str) -> None:
        if ea.kind != eb.kind:
            self.emit(path, TYPE_CHANGED, ea, eb)
            if ea.is_dir:
                self.descendants(ea, path, REMOVED)
            if eb.is_dir:
                self.descendants(eb, path, ADDED)
        elif ea.is_dir:
            self.dirs(ea.content, eb.content, path)
        elif ea.is_symlink:
            if ea.target != eb.target:
                self.emit(path, MODIFIED_CONTENT, ea, eb)
        elif ea.content != eb.content:
            self.emit(path, MODIFIED_CONTENT, ea, eb)
        elif ea.executable != eb.executable:
            self.emit(path, MODIFIED_MODE, ea, eb)


def _keyed(catalog) -> Iterator[tuple[bytes, DirEntry]]:
    for entry in catalog:
        yield _text.to_bytes(entry.name), entry


def diff(a: ObjectId, b: ObjectId, fetch: Callable[[ObjectId], bytes]) -> DiffReport:
    """Changes turning tree ``a`` into tree ``b``; ``cost`` counts catalogs fetched."""
    differ = _Differ(fetch)
    differ.dirs(a, b, "")
    entries = sorted(differ.entries, key=_path_key)
    return DiffReport(entries, differ.cost)


def diff_manifests(a: SnapshotManifest, b: SnapshotManifest,
                   fetch: Callable[[ObjectId], bytes]) -> ManifestDiff:
    return ManifestDiff(diff(a.root, b.root, fetch), a, b, a.id, b.id)
