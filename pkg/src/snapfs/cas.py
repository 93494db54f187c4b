"""Content-addressable object store.

Objects are immutable blobs named by the SHA-256 of their raw payload.  On
disk every object is stored zlib-deflated under ``data/<2 hex>/<62 hex>``;
writes go to ``data/txn/`` first and are atomically renamed into place, so a
crashed writer never leaves a partially visible object behind.

Files larger than the chunk threshold are split into fixed-size chunks, each
stored as its own object, plus a chunk-list object naming them in order.
"""

from __future__ import annotations

import hashlib
import io
import os
import re
import tempfile
import threading
import zlib
from dataclasses import dataclass, fields
from pathlib import Path
from typing import BinaryIO, Iterator, Union

from . import _text
from .errors import CorruptObject, MalformedData, ObjectNotFound

CHUNK_SIZE = 1 << 20
CHUNK_THRESHOLD = 4 << 20
COMPRESS_LEVEL = 6

ObjectId = str  # 64 lowercase hex characters

_ID_RE = re.compile(r"[0-9a-f]{64}\Z")
_READ_SIZE = 1 << 20

EMPTY_ID = hashlib.sha256(b"").hexdigest()


def object_id(payload: bytes) -> ObjectId:
    return hashlib.sha256(payload).hexdigest()


def is_object_id(value: object) -> bool:
    return isinstance(value, str) and _ID_RE.match(value) is not None


def check_object_id(value: str) -> ObjectId:
    if not is_object_id(value):
        raise ValueError(f"not an object id: {value!r}")
    return value


def decode_verified(oid: ObjectId, encoded: bytes) -> bytes:
    """Inflate a stored/wire body and check that it hashes to ``oid``."""
    try:
        payload = zlib.decompress(encoded)
    except zlib.error as exc:
        raise CorruptObject(oid, f"undecodable: {exc}") from None
    if object_id(payload) != oid:
        raise CorruptObject(oid)
    return payload


def atomic_write(path: Path, data: bytes, tmpdir: Path, fsync: bool = True) -> None:
    """Write ``data`` to ``path`` so that readers see either nothing or all of it."""
    tmpdir.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=tmpdir, prefix="w-")
    try:
        with os.fdopen(fd, "wb") as f:
            f.write(data)
            if fsync:
                f.flush()
                os.fsync(f.fileno())
        path.parent.mkdir(parents=True, exist_ok=True)
        os.replace(tmp, path)
    except BaseException:
        _unlink_quiet(tmp)
        raise


def _unlink_quiet(path) -> None:
    try:
        os.unlink(path)
    except FileNotFoundError:
        pass


@dataclass(frozen=True)
class ChunkList:
    total_size: int
    chunks: tuple[tuple[ObjectId, int], ...]

    HEADER = "snapfs-chunks 1"

    def __post_init__(self):
        if sum(length for _, length in self.chunks) != self.total_size:
            raise ValueError("chunk lengths do not add up to total_size")

    def serialize(self) -> bytes:
        lines = [self.HEADER] + [f"{length} {oid}" for oid, length in self.chunks]
        return ("\n".join(lines) + "\n").encode("ascii")

    @property
    def id(self) -> ObjectId:
        return object_id(self.serialize())

    def offsets(self) -> list[int]:
        """Start offset of every chunk."""
        out, pos = [], 0
        for _, length in self.chunks:
            out.append(pos)
            pos += length
        return out

    @classmethod
    def parse(cls, data: bytes) -> "ChunkList":
        lines = _text.split_lines(data, "chunk list")
        _text.expect_header(lines, cls.HEADER, "chunk list")
        chunks = []
        for lineno, line in enumerate(lines[1:], start=2):
            length, sep, oid = line.partition(" ")
            if not sep or not length.isdigit() or not is_object_id(oid):
                raise MalformedData("chunk list", f"bad chunk line {line!r}", lineno)
            chunks.append((oid, int(length)))
        if not chunks:
            raise MalformedData("chunk list", "no chunks")
        clist = cls(sum(n for _, n in chunks), tuple(chunks))
        if clist.serialize() != data:
            raise MalformedData("chunk list", "non-canonical encoding")
        return clist


@dataclass
class StoreStats:
    object_count: int = 0
    logical_bytes: int = 0
    stored_bytes: int = 0
    dedup_hits: int = 0

    def __sub__(self, other: "StoreStats") -> "StoreStats":
        return StoreStats(
            *(getattr(self, f.name) - getattr(other, f.name) for f in fields(self))
        )

    def copy(self) -> "StoreStats":
        return StoreStats(**vars(self))


FileContent = Union[ObjectId, ChunkList]


class ObjectStore:
    """Immutable blobs keyed by SHA-256 under ``<root>/data``.

    ``stats()`` counts activity through this handle: a freshly opened store
    reports zeros even if the directory already holds objects.  Use
    :meth:`recount` to derive object count and stored bytes from disk.
    """

    def __init__(
        self,
        root: str | os.PathLike,
        *,
        chunk_size: int = CHUNK_SIZE,
        chunk_threshold: int = CHUNK_THRESHOLD,
        compress_level: int = COMPRESS_LEVEL,
        fsync: bool = True,
    ):
        if chunk_size <= 0 or chunk_threshold <= 0:
            raise ValueError("chunk sizes must be positive")
        self.root = Path(root)
        self.data_dir = self.root / "data"
        self.txn_dir = self.data_dir / "txn"
        self.chunk_size = chunk_size
        self.chunk_threshold = chunk_threshold
        self.compress_level = compress_level
        self.fsync = fsync
        self._stats = StoreStats()
        self._lock = threading.Lock()
        self.txn_dir.mkdir(parents=True, exist_ok=True)

    def path_for(self, oid: ObjectId) -> Path:
        return self.data_dir / oid[:2] / oid[2:]

    # -- writing ---------------------------------------------------------

    def put_object(self, payload: bytes | BinaryIO) -> ObjectId:
        if isinstance(payload, (bytes, bytearray, memoryview)):
            return self._put_bytes(bytes(payload))
        return self._put_stream(payload)

    def _put_bytes(self, payload: bytes) -> ObjectId:
        oid = object_id(payload)
        if self.path_for(oid).exists():
            self._count(len(payload), new=False)
            return oid
        encoded = zlib.compress(payload, self.compress_level)
        fd, tmp = tempfile.mkstemp(dir=self.txn_dir, prefix="o-")
        try:
            with os.fdopen(fd, "wb") as f:
                f.write(encoded)
                self._sync(f)
            self._admit(tmp, oid, len(payload))
        except BaseException:
            _unlink_quiet(tmp)
            raise
        return oid

    def _put_stream(self, stream: BinaryIO) -> ObjectId:
        hasher = hashlib.sha256()
        comp = zlib.compressobj(self.compress_level)
        size = 0
        fd, tmp = tempfile.mkstemp(dir=self.txn_dir, prefix="o-")
        try:
            with os.fdopen(fd, "wb") as f:
                while block := stream.read(_READ_SIZE):
                    hasher.update(block)
                    size += len(block)
                    f.write(comp.compress(block))
                f.write(comp.flush())
                self._sync(f)
            oid = hasher.hexdigest()
            self._admit(tmp, oid, size)
        except BaseException:
            _unlink_quiet(tmp)
            raise
        return oid

    def _sync(self, f) -> None:
        if self.fsync:
            f.flush()
            os.fsync(f.fileno())

    def _admit(self, tmp: str, oid: ObjectId, size: int) -> None:
        target = self.path_for(oid)
        with self._lock:
            if target.exists():
                os.unlink(tmp)
                self._count_locked(size, new=False)
                return
            target.parent.mkdir(exist_ok=True)
            os.replace(tmp, target)
            self._count_locked(size, new=True)

    def _count(self, size: int, new: bool) -> None:
        with self._lock:
            self._count_locked(size, new)

    def _count_locked(self, size: int, new: bool) -> None:
        self._stats.logical_bytes += size
        if new:
            self._stats.object_count += 1
            self._stats.stored_bytes += size
        else:
            self._stats.dedup_hits += 1

    def put_encoded(self, oid: ObjectId, encoded: bytes) -> bytes:
        """Admit an already-deflated body (as served over the wire) after
        verifying it; returns the decoded payload."""
        payload = decode_verified(oid, encoded)
        if self.path_for(oid).exists():
            self._count(len(payload), new=False)
            return payload
        fd, tmp = tempfile.mkstemp(dir=self.txn_dir, prefix="o-")
        try:
            with os.fdopen(fd, "wb") as f:
                f.write(encoded)
                self._sync(f)
            self._admit(tmp, oid, len(payload))
        except BaseException:
            _unlink_quiet(tmp)
            raise
        return payload

    def put_file(self, stream: BinaryIO, length: int) -> FileContent:
        """Store a file of known length: one object, or chunks plus a chunk list
        when ``length`` exceeds the chunk threshold."""
        if length <= self.chunk_threshold:
            data = _read_exact(stream, length)
            return self._put_bytes(data)
        chunks = []
        remaining = length
        while remaining:
            block = _read_exact(stream, min(self.chunk_size, remaining))
            chunks.append((self._put_bytes(block), len(block)))
            remaining -= len(block)
        clist = ChunkList(length, tuple(chunks))
        self._put_bytes(clist.serialize())
        return clist

    # -- reading ---------------------------------------------------------

    def read_encoded(self, oid: ObjectId) -> bytes:
        """Stored (deflated) bytes of an object, unverified."""
        if not is_object_id(oid):
            raise ObjectNotFound(oid)
        try:
            return self.path_for(oid).read_bytes()
        except FileNotFoundError:
            raise ObjectNotFound(oid) from None

    def get_object(self, oid: ObjectId) -> bytes:
        return decode_verified(oid, self.read_encoded(oid))

    def open_object(self, oid: ObjectId) -> BinaryIO:
        return io.BytesIO(self.get_object(oid))

    def has_object(self, oid: ObjectId) -> bool:
        try:
            self.get_object(oid)
        except (ObjectNotFound, CorruptObject):
            return False
        return True

    def contains(self, oid: ObjectId) -> bool:
        """Cheap presence check; does not verify content."""
        return is_object_id(oid) and self.path_for(oid).exists()

    def read_file(self, content: FileContent) -> bytes:
        if isinstance(content, ChunkList):
            return b"".join(self.get_object(oid) for oid, _ in content.chunks)
        return self.get_object(content)

    # -- maintenance -----------------------------------------------------

    def iter_ids(self) -> Iterator[ObjectId]:
        if not self.data_dir.exists():
            return
        for sub in sorted(self.data_dir.iterdir()):
            if len(sub.name) != 2 or not sub.is_dir():
                continue
            for obj in sorted(sub.iterdir()):
                oid = sub.name + obj.name
                if is_object_id(oid):
                    yield oid

    def delete(self, oid: ObjectId) -> bool:
        try:
            os.unlink(self.path_for(oid))
        except FileNotFoundError:
            return False
        return True

    def clean_txn(self) -> int:
        """Remove leftover temporaries of interrupted writes."""
        removed = 0
        for tmp in self.txn_dir.iterdir():
            _unlink_quiet(tmp)
            removed += 1
        return removed

    def stats(self) -> StoreStats:
        with self._lock:
            return self._stats.copy()

    def recount(self) -> StoreStats:
        """Object count and stored payload bytes as found on disk."""
        count = size = 0
        for oid in self.iter_ids():
            count += 1
            size += len(zlib.decompress(self.read_encoded(oid)))
        return StoreStats(object_count=count, logical_bytes=size, stored_bytes=size)


def _read_exact(stream: BinaryIO, length: int) -> bytes:
    buf = bytearray()
    while len(buf) < length:
        block = stream.read(length - len(buf))
        if not block:
            raise EOFError(f"stream ended after {len(buf)} of {length} bytes")
        buf += block
    return bytes(buf)
