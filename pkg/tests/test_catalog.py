from pathlib import Path

import pytest
from hypothesis import given, settings, strategies as st

from oracles import sha256_hex
from snapfs.catalog import (
    Catalog, DirEntry, join_path, parse_catalog, serialize_catalog, split_path, validate_name,
)
from snapfs.errors import InvalidName, MalformedData

GOLDEN = Path(__file__).parent / "golden" / "catalog3.txt"
EMPTY_CATALOG = sha256_hex(b"snapfs-catalog 1\n")
HELLO = sha256_hex(b"hello\n")


def golden_catalog() -> Catalog:
    # deliberately given out of order
    return Catalog.from_entries([
        DirEntry.symlink("libfoo.so", "../lib/libfoo.so.1"),
        DirEntry.file("hello world.txt", HELLO, 6),
        DirEntry.directory("bin", EMPTY_CATALOG),
    ])


def test_empty_catalog_encoding():
    assert serialize_catalog(Catalog()) == b"snapfs-catalog 1\n"


def test_golden_three_entry_catalog():
    expected = GOLDEN.read_bytes()
    assert serialize_catalog(golden_catalog()) == expected
    assert parse_catalog(expected) == golden_catalog()
    assert sha256_hex(expected) == sha256_hex(serialize_catalog(golden_catalog()))


def test_order_is_bytewise():
    names = ["b", "B", "a", "é", "Z", "_", "a b"]
    cat = Catalog.from_entries(DirEntry.symlink(n, "t") for n in names)
    assert [e.name for e in cat] == sorted(names, key=lambda n: n.encode())
    assert cat.get("é").target == "t"
    assert cat.get("missing") is None


def test_parse_rejects_non_canonical():
    good = GOLDEN.read_bytes()
    lines = good.split(b"\n")
    swapped = b"\n".join([lines[0], lines[2], lines[1], lines[3], b""])
    cases = [
        good[:-1],                                  # missing trailing newline
        good.replace(b"1\n", b"2\n", 1),            # wrong version
        swapped,                                    # out of order
        good + lines[3] + b"\n",                    # duplicate
        good.replace(b" - ", b" ? "),               # bad flag
        good.replace(b"F 6", b"F 06"),              # non-canonical size
        good.replace(b"hello\\sworld", b"hello world"),  # unescaped space
        good.replace(b"bin", b"bin/x"),             # slash in name
        good + b"Q 1 2\n",                          # unknown tag
        good.replace(b"aa1e", b"AA1E"),             # uppercase hex
    ]
    for bad in cases:
        with pytest.raises(MalformedData):
            parse_catalog(bad)


def test_invalid_names():
    for bad in ["", ".", "..", "a/b", "a\x00b"]:
        with pytest.raises((InvalidName, ValueError)):
            validate_name(bad)
    with pytest.raises(InvalidName):
        Catalog.from_entries([DirEntry.symlink("x", "1"), DirEntry.symlink("x", "2")])


def test_split_and_join():
    assert split_path("") == []
    assert split_path("/") == []
    assert split_path("/a/b/") == ["a", "b"]
    for bad in ["a//b", "a/./b", "../x"]:
        with pytest.raises(ValueError):
            split_path(bad)
    assert join_path("", "a") == "a"
    assert join_path("a", "b") == "a/b"


names = st.text(st.characters(blacklist_categories=("Cs",), blacklist_characters="/\x00"),
                min_size=1, max_size=12).filter(lambda n: n not in (".", ".."))
ids = st.binary(min_size=1, max_size=8).map(sha256_hex)
entries = st.one_of(
    st.builds(lambda n, i, s, x, c: DirEntry.file(n, i, s, x, c), names, ids,
              st.integers(0, 1 << 40), st.booleans(), st.booleans()),
    st.builds(DirEntry.directory, names, ids),
    st.builds(DirEntry.symlink, names, st.text(min_size=1, max_size=20).filter(
        lambda t: "\x00" not in t)),
)


@given(st.lists(entries, max_size=20, unique_by=lambda e: e.name.encode()))
@settings(max_examples=200, deadline=None)
def test_roundtrip_property(items):
    cat = Catalog.from_entries(items)
    data = serialize_catalog(cat)
    assert parse_catalog(data) == cat
    # canonical: any permutation encodes identically
    assert serialize_catalog(Catalog.from_entries(reversed(items))) == data
    if items:
        first = items[0]
        assert cat.get(first.name) == first
