"""Exception hierarchy shared by every snapfs layer."""

from __future__ import annotations


class SnapfsError(Exception):
    """Base class for all snapfs failures."""


class ObjectNotFound(SnapfsError, KeyError):
    def __init__(self, oid: str, context: str | None = None):
        self.oid = oid
        self.context = context
        msg = f"object not found: {oid}"
        if context:
            msg += f" (at {context!r})"
        super().__init__(msg)

    def __str__(self) -> str:
        return self.args[0]


class CorruptObject(SnapfsError):
    def __init__(self, oid: str, reason: str = "digest mismatch"):
        self.oid = oid
        super().__init__(f"corrupt object {oid}: {reason}")


class MalformedData(SnapfsError, ValueError):
    """A serialized structure (catalog, manifest, tags, ...) failed to parse."""

    def __init__(self, what: str, reason: str, position: int | None = None):
        self.what = what
        self.reason = reason
        self.position = position
        where = f" at line {position}" if position is not None else ""
        super().__init__(f"malformed {what}{where}: {reason}")


class InvalidName(SnapfsError, ValueError):
    pass


class PathNotFound(SnapfsError, FileNotFoundError):
    def __init__(self, path: str, component: str):
        self.path = path
        self.component = component
        super().__init__(f"{path!r}: no such entry {component!r}")


class NotADirectory(SnapfsError, NotADirectoryError):
    def __init__(self, path: str):
        self.path = path
        super().__init__(f"{path!r}: not a directory")


class NotAFile(SnapfsError, IsADirectoryError):
    def __init__(self, path: str):
        self.path = path
        super().__init__(f"{path!r}: not a regular file")


class RangeOutOfBounds(SnapfsError, ValueError):
    pass


class IntegrityError(SnapfsError):
    pass


class LockError(SnapfsError):
    pass


class UnsupportedNode(SnapfsError):
    def __init__(self, path: str, kind: str):
        self.path = path
        super().__init__(f"{path}: unsupported file type ({kind})")


class NetworkError(SnapfsError, ConnectionError):
    pass


class CacheError(SnapfsError):
    pass


class RefNotFound(SnapfsError, LookupError):
    def __init__(self, ref: str):
        self.ref = ref
        super().__init__(f"unknown ref: {ref}")


class IngestError(SnapfsError):
    def __init__(self, path: str, reason: str):
        self.path = path
        super().__init__(f"cannot ingest {path}: {reason}")


class Refused(SnapfsError):
    """An operation whose preconditions would make it unsafe."""
