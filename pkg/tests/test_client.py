import os
import random
import zlib

import pytest

from oracles import MiB, file_modes, random_tree, scan_tree, with_parents, write_tree
from snapfs.cache import ObjectCache
from snapfs.cas import object_id
from snapfs.client import (
    INCOMPLETE_MARKER, Client, Fetcher, HttpRemote, LocalRemote, checkout, open_remote, sync,
    verify,
)
from snapfs.errors import (
    NotADirectory, NotAFile, ObjectNotFound, PathNotFound, RangeOutOfBounds, RefNotFound, Refused,
)
from snapfs.server import origin_server

BIG = bytes(random.Random(0).randbytes(6 * MiB + 123))


@pytest.fixture
def snapshot(repo, make_tree):
    tree = {
        "bin/run": ("f", b"#!/bin/sh\necho hi\n", True),
        "lib/libz.so.1": ("f", b"zlib" * 100, False),
        "lib/libz.so": ("l", "libz.so.1"),
        "data/big.bin": ("f", BIG, False),
        "empty": ("d",),
        "zero": ("f", b"", False),
    }
    m = repo.publish(make_tree(tree), tag="v1")
    return repo, m, tree


def test_random_access(snapshot):
    repo, m, tree = snapshot
    client = Client(LocalRemote(repo))
    h = client.open("v1")
    assert [e.name for e in h.list()] == ["bin", "data", "empty", "lib", "zero"]
    assert h.list("empty") == []
    assert h.readlink("lib/libz.so") == "libz.so.1"
    assert h.read("bin/run") == tree["bin/run"][1]
    assert h.read("lib/libz.so.1", 4, 8) == b"zlibzlib"
    assert h.read("zero") == b""
    assert h.stat("").is_dir
    with pytest.raises(PathNotFound):
        h.stat("bin/nope")
    with pytest.raises(NotADirectory):
        h.list("bin/run")
    with pytest.raises(NotAFile):
        h.read("lib")
    with pytest.raises(RangeOutOfBounds):
        h.read("bin/run", 10, 100)


def test_chunked_read_fetches_only_needed_chunks(snapshot):
    repo, m, _ = snapshot
    fetcher = Fetcher(LocalRemote(repo))
    _, manifest = sync(fetcher.remote, "head")
    from snapfs.client import open_snapshot
    h = open_snapshot(manifest, fetcher)
    start = 3 * MiB - 10
    assert h.read("data/big.bin", start, 20) == BIG[start:start + 20]
    assert fetcher.fetches["chunk"] == 2
    assert fetcher.fetches["chunklist"] == 1
    fetcher.reset_counters()
    assert h.read("data/big.bin", 6 * MiB, 123) == BIG[6 * MiB:]
    assert fetcher.fetches["chunk"] == 1
    assert h.read("data/big.bin") == BIG


def test_checkout_roundtrip_and_modes(snapshot, tmp_path):
    repo, m, tree = snapshot
    out = tmp_path / "out"
    stats = checkout(Client(LocalRemote(repo)).open(), out)
    assert scan_tree(out) == with_parents(tree)
    assert stats.files == 4 and stats.symlinks == 1
    modes = file_modes(out)
    assert modes["bin/run"] == 0o755 and modes["lib/libz.so.1"] == 0o644
    assert not (out / INCOMPLETE_MARKER).exists()


def test_checkout_refuses_non_empty_target(snapshot, tmp_path):
    repo, _, _ = snapshot
    target = tmp_path / "busy"
    target.mkdir()
    (target / "x").write_bytes(b"")
    with pytest.raises(Refused):
        checkout(Client(LocalRemote(repo)).open(), target)


def test_interrupted_checkout_leaves_marker(snapshot, tmp_path):
    repo, m, _ = snapshot
    oid = object_id(b"zlib" * 100)
    repo.store.delete(oid)
    out = tmp_path / "out"
    with pytest.raises(ObjectNotFound):
        checkout(Client(LocalRemote(repo)).open(), out)
    assert (out / INCOMPLETE_MARKER).exists()


def test_verify_reports_damage(snapshot):
    repo, m, _ = snapshot
    client = Client(LocalRemote(repo))
    report = verify(client.open())
    assert report.ok and report.to_text().endswith("ok\n")
    assert report.bytes_verified >= len(BIG)
    missing = object_id(b"zlib" * 100)
    repo.store.delete(missing)
    rotten = object_id(b"#!/bin/sh\necho hi\n")
    repo.store.path_for(rotten).write_bytes(zlib.compress(b"tampered"))
    report = verify(Client(LocalRemote(repo)).open())
    assert not report.ok
    assert report.missing == [(missing, "lib/libz.so.1")]
    assert report.corrupt == [(rotten, "bin/run")]
    assert report.to_text().endswith("failed\n")


def test_http_remote_and_cache(snapshot, tmp_path):
    repo, m, tree = snapshot
    with origin_server(repo) as server:
        with Client(server.url, tmp_path / "cache") as client:
            assert isinstance(client.remote, HttpRemote)
            h = client.open("v1")
            assert h.read("bin/run") == tree["bin/run"][1]
            first = client.fetcher.total_fetches
            assert client.open(m.id).read("bin/run") == tree["bin/run"][1]
            assert client.fetcher.total_fetches == first
            with pytest.raises(RefNotFound):
                client.sync("nope")
        # cache persists across client instances
        with Client(server.url, tmp_path / "cache") as client:
            h = client.open(m.id)
            h.read("bin/run")
            assert client.fetcher.fetches["catalog"] == 0
            assert client.fetcher.fetches["data"] == 0


def test_cache_quota_bounds_client(snapshot, tmp_path):
    repo, m, tree = snapshot
    with Client(LocalRemote(repo), tmp_path / "cache", quota=2 * MiB) as client:
        assert client.open().read("data/big.bin") == BIG
        assert client.cache.stats().resident_bytes <= 2 * MiB


def test_open_remote_selects_transport(repo):
    assert isinstance(open_remote(str(repo.path)), LocalRemote)
    assert isinstance(open_remote("http://127.0.0.1:9"), HttpRemote)


def test_random_trees_roundtrip_over_http(repo, tmp_path):
    rng = random.Random(11)
    with origin_server(repo) as server:
        for i in range(3):
            tree = random_tree(rng, max_files=40)
            m = repo.publish(write_tree(tree, tmp_path / f"src{i}"))
            with Client(server.url) as client:
                checkout(client.open(m.id), tmp_path / f"out{i}")
            assert scan_tree(tmp_path / f"out{i}") == with_parents(tree)


def test_cache_directory_is_exclusive(tmp_path, repo):
    with ObjectCache(tmp_path / "c"):
        with pytest.raises(Exception):
            Client(LocalRemote(repo), tmp_path / "c")
    assert os.path.isdir(tmp_path / "c")
