"""Helpers for the line-oriented canonical text formats.

All formats are LF-terminated; fields are separated by single spaces, so
backslash, space and newline inside a field are escaped as ``\\\\``, ``\\s``
and ``\\n``.
"""

from __future__ import annotations

from .errors import MalformedData

_ESCAPES = {"\\": "\\\\", " ": "\\s", "\n": "\\n"}
_UNESCAPES = {"\\": "\\", "s": " ", "n": "\n"}


def escape(value: str) -> str:
    if not any(c in value for c in _ESCAPES):
        return value
    return "".join(_ESCAPES.get(c, c) for c in value)


def unescape(value: str, what: str = "field") -> str:
    if "\\" not in value:
        return value
    out = []
    it = iter(value)
    for c in it:
        if c != "\\":
            out.append(c)
            continue
        nxt = next(it, None)
        if nxt is None or nxt not in _UNESCAPES:
            raise MalformedData(what, f"bad escape sequence in {value!r}")
        out.append(_UNESCAPES[nxt])
    return "".join(out)


def to_bytes(text: str) -> bytes:
    # surrogateescape keeps arbitrary POSIX file names round-trippable
    return text.encode("utf-8", "surrogateescape")


def from_bytes(data: bytes) -> str:
    return data.decode("utf-8", "surrogateescape")


def split_lines(data: bytes, what: str) -> list[str]:
    if not data.endswith(b"\n"):
        raise MalformedData(what, "missing trailing newline (truncated?)")
    return from_bytes(data[:-1]).split("\n")


def expect_header(lines: list[str], header: str, what: str) -> None:
    if not lines or lines[0] != header:
        raise MalformedData(what, f"expected header {header!r}", 1)


def keyvalue(line: str, key: str, what: str, lineno: int) -> str:
    k, sep, v = line.partition(" ")
    if k != key or not sep:
        raise MalformedData(what, f"expected {key!r} line", lineno)
    return v
