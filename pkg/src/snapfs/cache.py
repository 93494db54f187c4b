"""Bounded local object cache for clients.

Layout mirrors the object store (``data/<2>/<62>``, deflated bodies as
received from the wire) plus ``journal``, an append-only access log of
``<ordinal> <hex-id> <size>`` lines from which LRU order is rebuilt on open,
and ``lock``, which keeps the directory owned by a single process.

Sizes are payload (decompressed) bytes, so quotas are independent of how
well objects compress.
"""

from __future__ import annotations

import fcntl
import os
import threading
from collections import OrderedDict
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable

from .cas import ObjectId, ObjectStore, atomic_write, decode_verified, is_object_id
from .errors import CacheError, CorruptObject, ObjectNotFound

UNLIMITED = 1 << 62


@dataclass
class CacheStats:
    resident_objects: int
    resident_bytes: int
    quota: int
    pinned_objects: int
    pinned_bytes: int
    hits: int
    misses: int
    evictions: int


class ObjectCache:
    def __init__(self, directory: str | os.PathLike, quota: int = UNLIMITED):
        if quota < 0:
            raise ValueError("quota must be non-negative")
        self.directory = Path(directory)
        self.directory.mkdir(parents=True, exist_ok=True)
        self.quota = quota
        self._lock_fd = os.open(self.directory / "lock", os.O_RDWR | os.O_CREAT, 0o644)
        try:
            fcntl.flock(self._lock_fd, fcntl.LOCK_EX | fcntl.LOCK_NB)
        except BlockingIOError:
            os.close(self._lock_fd)
            raise CacheError(f"cache {self.directory} is in use by another process") from None
        self.store = ObjectStore(self.directory, fsync=False)
        self._mutex = threading.RLock()
        self._resident: OrderedDict[ObjectId, int] = OrderedDict()
        self._used = 0
        self._pinned: set[ObjectId] = set()
        self._ordinal = 0
        self.hits = self.misses = self.evictions = 0
        self._journal_path = self.directory / "journal"
        self._replay()
        self._journal = open(self._journal_path, "a", encoding="ascii")
        self.evict_to_quota()

    def _replay(self) -> None:
        last: dict[ObjectId, tuple[int, int]] = {}
        lines = 0
        if self._journal_path.exists():
            for line in self._journal_path.read_text("ascii", errors="replace").splitlines():
                parts = line.split(" ")
                if len(parts) != 3 or not parts[0].isdigit() or not parts[2].isdigit() \
                        or not is_object_id(parts[1]):
                    continue  # torn trailing write
                lines += 1
                last[parts[1]] = (int(parts[0]), int(parts[2]))
        on_disk = set(self.store.iter_ids())
        for oid, (ordinal, size) in sorted(last.items(), key=lambda kv: kv[1][0]):
            if oid in on_disk:
                self._resident[oid] = size
                self._used += size
                self._ordinal = max(self._ordinal, ordinal)
        for oid in on_disk - set(self._resident):
            self.store.delete(oid)  # admitted but never journaled
        self.store.clean_txn()
        if lines > 2 * len(self._resident) + 64:
            self._compact()

    def _compact(self) -> None:
        body = "".join(f"{i} {oid} {size}\n"
                       for i, (oid, size) in enumerate(self._resident.items(), start=1))
        self._ordinal = len(self._resident)
        atomic_write(self._journal_path, body.encode("ascii"), self.store.txn_dir, fsync=False)

    def _record(self, oid: ObjectId, size: int) -> None:
        self._ordinal += 1
        self._journal.write(f"{self._ordinal} {oid} {size}\n")
        self._journal.flush()

    def close(self) -> None:
        with self._mutex:
            if self._lock_fd is None:
                return
            self._journal.close()
            fcntl.flock(self._lock_fd, fcntl.LOCK_UN)
            os.close(self._lock_fd)
            self._lock_fd = None

    def __enter__(self) -> "ObjectCache":
        return self

    def __exit__(self, *exc) -> None:
        self.close()

    # -- access ----------------------------------------------------------

    def __contains__(self, oid: ObjectId) -> bool:
        with self._mutex:
            return oid in self._resident

    def get(self, oid: ObjectId) -> bytes | None:
        """Verified payload if resident (refreshing its LRU position), else None."""
        with self._mutex:
            size = self._resident.get(oid)
            if size is None:
                self.misses += 1
                return None
            try:
                payload = decode_verified(oid, self.store.read_encoded(oid))
            except (ObjectNotFound, CorruptObject):
                self._drop(oid)
                self.misses += 1
                return None
            self._resident.move_to_end(oid)
            self._record(oid, size)
            self.hits += 1
            return payload

    def admit(self, oid: ObjectId, encoded: bytes) -> bytes:
        """Verify a wire body and keep it if it fits; returns the payload."""
        payload = decode_verified(oid, encoded)
        size = len(payload)
        with self._mutex:
            if oid in self._resident:
                self._resident.move_to_end(oid)
                self._record(oid, size)
                return payload
            if not self._make_room(size):
                return payload
            self.store.put_encoded(oid, encoded)
            self._resident[oid] = size
            self._used += size
            self._record(oid, size)
        return payload

    def _make_room(self, size: int) -> bool:
        pinned = sum(self._resident[o] for o in self._pinned)
        if size > self.quota - pinned:
            return False
        self._evict_until(self.quota - size)
        return self._used + size <= self.quota

    def _evict_until(self, limit: int) -> None:
        if self._used <= limit:
            return
        # LRU order: the OrderedDict front is the least recently used entry
        victims = iter(list(self._resident))
        while self._used > limit:
            victim = next(victims, None)
            if victim is None:
                break
            if victim in self._pinned:
                continue
            self._drop(victim)
            self.evictions += 1

    def _drop(self, oid: ObjectId) -> None:
        size = self._resident.pop(oid, None)
        if size is not None:
            self._used -= size
        self._pinned.discard(oid)
        self.store.delete(oid)

    # -- management ------------------------------------------------------

    def evict_to_quota(self) -> int:
        with self._mutex:
            before = self.evictions
            self._evict_until(self.quota)
            return self.evictions - before

    def pin(self, oids: Iterable[ObjectId]) -> None:
        oids = set(oids)
        with self._mutex:
            missing = [o for o in oids if o not in self._resident]
            if missing:
                raise CacheError(f"cannot pin non-resident object {missing[0]}")
            total = sum(self._resident[o] for o in self._pinned | oids)
            if total > self.quota:
                raise CacheError(f"pinned set ({total} bytes) would exceed quota ({self.quota})")
            self._pinned |= oids

    def unpin(self, oids: Iterable[ObjectId]) -> None:
        with self._mutex:
            self._pinned -= set(oids)

    def resident(self) -> dict[ObjectId, int]:
        """Resident objects in LRU order (least recently used first)."""
        with self._mutex:
            return dict(self._resident)

    def stats(self) -> CacheStats:
        with self._mutex:
            return CacheStats(
                resident_objects=len(self._resident),
                resident_bytes=self._used,
                quota=self.quota,
                pinned_objects=len(self._pinned),
                pinned_bytes=sum(self._resident[o] for o in self._pinned),
                hits=self.hits,
                misses=self.misses,
                evictions=self.evictions,
            )
