"""Per-directory catalogs: the nodes of the Merkle tree.

A catalog lists a directory's entries sorted bytewise by name.  Its canonical
serialization is stored as an object, and that object's id is the identity
of the directory.  Child directories are referenced by their catalog ids, so
a root id covers the whole tree.

Wire format (LF-terminated lines)::

    snapfs-catalog 1
    F <size> <hex-id> <x|-> <name>        regular file
    C <size> <hex-chunklist-id> <x|-> <name>   chunked file
    D <hex-id> <name>                     directory
    L <target> <name>                     symlink
"""

from __future__ import annotations

from bisect import bisect_left
from dataclasses import dataclass, field
from typing import Callable, Iterable, Iterator

from . import _text
from .cas import ObjectId, is_object_id
from .errors import (
    InvalidName,
    MalformedData,
    NotADirectory,
    PathNotFound,
)

HEADER = "snapfs-catalog 1"

FILE = "file"
DIRECTORY = "directory"
SYMLINK = "symlink"
KINDS = (FILE, DIRECTORY, SYMLINK)

Fetch = Callable[[ObjectId], bytes]


def validate_name(name: str) -> str:
    if not name or name in (".", "..") or "/" in name or "\0" in name:
        raise InvalidName(f"invalid entry name: {name!r}")
    return name


def name_key(name: str) -> bytes:
    return _text.to_bytes(name)


def split_path(path: str) -> list[str]:
    """Components of a slash-separated snapshot path; ``""`` and ``"/"`` are the root."""
    stripped = path.strip("/")
    if not stripped:
        return []
    parts = stripped.split("/")
    for part in parts:
        if part in ("", ".", ".."):
            raise ValueError(f"path is not normalized: {path!r}")
    return parts


def join_path(prefix: str, name: str) -> str:
    return f"{prefix}/{name}" if prefix else name


@dataclass(frozen=True)
class DirEntry:
    name: str
    kind: str
    executable: bool = False
    size: int = 0
    # file object or chunk-list id for files, child catalog id for directories
    content: ObjectId | None = None
    chunked: bool = False
    target: str | None = None

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown entry kind {self.kind!r}")
        if self.kind == FILE:
            if not is_object_id(self.content) or self.size < 0 or self.target is not None:
                raise ValueError(f"bad file entry {self.name!r}")
        elif self.kind == DIRECTORY:
            if not is_object_id(self.content) or self.executable or self.chunked or self.size:
                raise ValueError(f"bad directory entry {self.name!r}")
        else:
            if not self.target or self.content is not None or self.executable or self.size:
                raise ValueError(f"bad symlink entry {self.name!r}")

    @classmethod
    def file(cls, name: str, content: ObjectId, size: int, executable: bool = False,
             chunked: bool = False) -> "DirEntry":
        return cls(name, FILE, executable=executable, size=size, content=content, chunked=chunked)

    @classmethod
    def directory(cls, name: str, catalog: ObjectId) -> "DirEntry":
        return cls(name, DIRECTORY, content=catalog)

    @classmethod
    def symlink(cls, name: str, target: str) -> "DirEntry":
        return cls(name, SYMLINK, target=target)

    @property
    def is_dir(self) -> bool:
        return self.kind == DIRECTORY

    @property
    def is_file(self) -> bool:
        return self.kind == FILE

    @property
    def is_symlink(self) -> bool:
        return self.kind == SYMLINK

    def renamed(self, name: str) -> "DirEntry":
        return DirEntry(name, self.kind, self.executable, self.size, self.content,
                        self.chunked, self.target)

    def to_line(self) -> str:
        name = _text.escape(validate_name(self.name))
        if self.kind == FILE:
            tag = "C" if self.chunked else "F"
            flags = "x" if self.executable else "-"
            return f"{tag} {self.size} {self.content} {flags} {name}"
        if self.kind == DIRECTORY:
            return f"D {self.content} {name}"
        return f"L {_text.escape(self.target)} {name}"


@dataclass(frozen=True)
class Catalog:
    entries: tuple[DirEntry, ...] = ()
    _keys: tuple[bytes, ...] = field(default=(), repr=False, compare=False)

    def __post_init__(self):
        keys = tuple(name_key(e.name) for e in self.entries)
        for a, b in zip(keys, keys[1:]):
            if a == b:
                raise InvalidName(f"duplicate entry name {_text.from_bytes(a)!r}")
            if a > b:
                raise ValueError("catalog entries are not sorted")
        object.__setattr__(self, "_keys", keys)

    @classmethod
    def from_entries(cls, entries: Iterable[DirEntry]) -> "Catalog":
        return cls(tuple(sorted(entries, key=lambda e: name_key(e.name))))

    def get(self, name: str) -> DirEntry | None:
        key = name_key(name)
        i = bisect_left(self._keys, key)
        if i < len(self._keys) and self._keys[i] == key:
            return self.entries[i]
        return None

    def __iter__(self) -> Iterator[DirEntry]:
        return iter(self.entries)

    def __len__(self) -> int:
        return len(self.entries)

    def with_entry(self, entry: DirEntry) -> "Catalog":
        """Copy with ``entry`` added or replacing the same-named one."""
        others = [e for e in self.entries if e.name != entry.name]
        return Catalog.from_entries(others + [entry])


def serialize_catalog(catalog: Catalog) -> bytes:
    lines = [HEADER] + [e.to_line() for e in catalog.entries]
    return _text.to_bytes("\n".join(lines) + "\n")


def _parse_line(line: str, lineno: int) -> DirEntry:
    def bad(reason: str):
        return MalformedData("catalog", reason, lineno)

    tag, _, rest = line.partition(" ")
    parts = rest.split(" ")
    try:
        if tag in ("F", "C"):
            if len(parts) != 4:
                raise bad(f"expected 4 fields after {tag!r}")
            size, oid, flags, name = parts
            if not size.isdigit() or flags not in ("x", "-") or not is_object_id(oid):
                raise bad("bad file fields")
            entry = DirEntry.file(_text.unescape(name, "catalog"), oid, int(size),
                                  executable=flags == "x", chunked=tag == "C")
        elif tag == "D":
            if len(parts) != 2 or not is_object_id(parts[0]):
                raise bad("bad directory fields")
            entry = DirEntry.directory(_text.unescape(parts[1], "catalog"), parts[0])
        elif tag == "L":
            if len(parts) != 2:
                raise bad("bad symlink fields")
            entry = DirEntry.symlink(_text.unescape(parts[1], "catalog"),
                                     _text.unescape(parts[0], "catalog"))
        else:
            raise bad(f"unknown entry type {tag!r}")
        validate_name(entry.name)
    except MalformedData as exc:
        if exc.position is None:
            raise MalformedData("catalog", exc.reason, lineno) from None
        raise
    except ValueError as exc:
        raise bad(str(exc)) from None
    return entry


def parse_catalog(data: bytes) -> Catalog:
    lines = _text.split_lines(data, "catalog")
    _text.expect_header(lines, HEADER, "catalog")
    entries = []
    prev: bytes | None = None
    for lineno, line in enumerate(lines[1:], start=2):
        entry = _parse_line(line, lineno)
        key = name_key(entry.name)
        if prev is not None and key <= prev:
            reason = "duplicate name" if key == prev else "entries out of order"
            raise MalformedData("catalog", reason, lineno)
        prev = key
        entries.append(entry)
    catalog = Catalog(tuple(entries))
    if serialize_catalog(catalog) != data:
        raise MalformedData("catalog", "non-canonical encoding")
    return catalog


def load_catalog(fetch: Fetch, oid: ObjectId) -> Catalog:
    return parse_catalog(fetch(oid))


def root_entry(root: ObjectId) -> DirEntry:
    # the root has no name of its own; bypasses name validation
    return DirEntry("", DIRECTORY, content=root)


def resolve_path(root: ObjectId, path: str, fetch: Fetch) -> DirEntry:
    """Walk one catalog per component to the entry at ``path``.

    Symlinks are not followed; walking through one is a not-a-directory error.
    """
    parts = split_path(path)
    entry = root_entry(root)
    walked = ""
    for part in parts:
        if not entry.is_dir:
            raise NotADirectory(walked)
        catalog = load_catalog(fetch, entry.content)
        child = catalog.get(part)
        walked = join_path(walked, part)
        if child is None:
            raise PathNotFound(path, walked)
        entry = child
    return entry


def walk(root: ObjectId, fetch: Fetch, prefix: str = "") -> Iterator[tuple[str, DirEntry]]:
    """Depth-first (path, entry) pairs below ``root``, parents before children."""
    for entry in load_catalog(fetch, root):
        path = join_path(prefix, entry.name)
        yield path, entry
        if entry.is_dir:
            yield from walk(entry.content, fetch, path)
