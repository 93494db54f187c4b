import random

import pytest
from hypothesis import given, settings, strategies as st

from oracles import brute_force_diff, mutate_tree, random_tree, report_as_tuples, write_tree
from snapfs.diff import (
    ADDED, MODIFIED_CONTENT, MODIFIED_MODE, REMOVED, TYPE_CHANGED, DiffEntry, DiffReport,
    ManifestDiff, Summary, diff, diff_manifests,
)
from snapfs.errors import MalformedData


class CountingFetch:
    def __init__(self, repo):
        self.repo = repo
        self.calls = 0

    def __call__(self, oid):
        self.calls += 1
        return self.repo.fetch(oid)


@pytest.fixture
def ingest(repo, tmp_path):
    counter = iter(range(10**6))

    def do(tree):
        return repo.ingest(write_tree(tree, tmp_path / f"t{next(counter)}")).root

    return do


def test_identical_trees_cost_nothing(repo, ingest):
    root = ingest({"a/b": ("f", b"1", False)})
    report = diff(root, root, repo.fetch)
    assert report.identical and report.cost == 0


def test_every_change_class(repo, ingest):
    a = ingest({
        "keep": ("f", b"same", False),
        "content": ("f", b"v1", False),
        "mode": ("f", b"m", False),
        "link": ("l", "one"),
        "gone/inner": ("f", b"bye", False),
        "flip": ("f", b"file", False),
        "dir2file/x": ("f", b"x", False),
    })
    b = ingest({
        "keep": ("f", b"same", False),
        "content": ("f", b"v2", False),
        "mode": ("f", b"m", True),
        "link": ("l", "two"),
        "new/inner": ("f", b"hi", False),
        "flip/child": ("f", b"c", False),
        "dir2file": ("f", b"now a file", False),
    })
    report = diff(a, b, repo.fetch)
    got = [(e.path, e.change) for e in report.entries]
    assert got == [
        ("content", MODIFIED_CONTENT),
        ("dir2file", TYPE_CHANGED),
        ("dir2file/x", REMOVED),
        ("flip", TYPE_CHANGED),
        ("flip/child", ADDED),
        ("gone", REMOVED),
        ("gone/inner", REMOVED),
        ("link", MODIFIED_CONTENT),
        ("mode", MODIFIED_MODE),
        ("new", ADDED),
        ("new/inner", ADDED),
    ]
    assert report.stats == {ADDED: 3, REMOVED: 3, MODIFIED_CONTENT: 2, MODIFIED_MODE: 1,
                            TYPE_CHANGED: 2}


def test_pruning_cost_is_proportional_to_change(repo, ingest):
    tree = {f"d{i}/e{j}/f{k}": ("f", f"{i}{j}{k}".encode(), False)
            for i in range(10) for j in range(10) for k in range(5)}
    a = ingest(tree)
    tree["d3/e7/f2"] = ("f", b"changed", False)
    b = ingest(tree)
    fetch = CountingFetch(repo)
    report = diff(a, b, fetch)
    assert [(e.path, e.change) for e in report.entries] == [("d3/e7/f2", MODIFIED_CONTENT)]
    assert report.cost == fetch.calls == 6  # root, d3, d3/e7 on both sides


@pytest.mark.parametrize("seed", range(40))
def test_matches_brute_force(repo, ingest, seed):
    rng = random.Random(seed)
    ta = random_tree(rng, max_files=25, max_depth=4, chunked_probability=0)
    tb = mutate_tree(rng, ta, n=rng.randint(0, 6))
    report = diff(ingest(ta), ingest(tb), repo.fetch)
    assert report_as_tuples(report) == brute_force_diff(ta, tb)


@pytest.mark.parametrize("seed", range(10))
def test_symmetry_identity_triangle(repo, ingest, seed):
    rng = random.Random(1000 + seed)
    ta = random_tree(rng, max_files=20, max_depth=3, chunked_probability=0)
    tb = mutate_tree(rng, ta, 4)
    tc = mutate_tree(rng, tb, 4)
    a, b, c = ingest(ta), ingest(tb), ingest(tc)
    ab, ba = diff(a, b, repo.fetch), diff(b, a, repo.fetch)
    assert ba.entries == [e.swapped() for e in ab.entries]
    assert ab.cost == ba.cost
    assert diff(a, a, repo.fetch).identical
    ac, bc = diff(a, c, repo.fetch), diff(b, c, repo.fetch)
    assert ac.paths() <= ab.paths() | bc.paths()


def test_text_roundtrip(repo, ingest, make_tree):
    m1 = repo.publish(make_tree({"a b": ("f", b"1", False), "l": ("l", "x y")}), note="one two")
    m2 = repo.publish(make_tree({"a b": ("f", b"2", True), "d/e": ("f", b"", False)}))
    md = diff_manifests(m1, m2, repo.fetch)
    text = md.to_text()
    lines = text.splitlines()
    assert lines[0] == "snapfs-diff 1"
    assert lines[1].startswith(f"from 1 {m1.id} ") and lines[1].endswith("one\\stwo")
    assert lines[2].startswith(f"to 2 {m2.id} ")
    assert lines[-1] == f"cost {md.report.cost}"
    parsed = ManifestDiff.parse(text)
    assert parsed.report.entries == md.report.entries
    assert parsed.report.cost == md.report.cost
    assert parsed.header["from"][:2] == (1, m1.id)
    assert DiffReport.parse(text).entries == md.report.entries
    stat = md.to_text(stat_only=True)
    assert not [line for line in stat.splitlines() if line.startswith(("added", "removed"))]
    assert "count added 2" in stat.splitlines()


summaries = st.one_of(
    st.builds(Summary, st.just("file"), st.integers(0, 10**9),
              st.sampled_from(["0" * 64, "a" * 64]), st.booleans()),
    st.builds(lambda i: Summary("directory", id=i), st.sampled_from(["b" * 64])),
    st.builds(lambda t: Summary("symlink", id=t), st.text(min_size=1, max_size=10)),
)


@given(summaries)
@settings(max_examples=100, deadline=None)
def test_summary_token_roundtrip(s):
    assert Summary.parse(s.token()) == s


def test_parse_rejects_bad_lines():
    for bad in ["snapfs-diff 1\nadded\n", "snapfs-diff 1\nchanged x f:1:" + "0" * 64 + "\n",
                "snapfs-diff 1\nadded p f:1:" + "0" * 64 + "\ncount added 2\n"]:
        with pytest.raises(MalformedData):
            ManifestDiff.parse(bad)
    with pytest.raises(MalformedData):
        DiffEntry.parse("added p q:1", 2)
