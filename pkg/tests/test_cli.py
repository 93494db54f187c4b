import re
import subprocess
import sys
from pathlib import Path

import pytest

from oracles import scan_tree, with_parents, write_tree
from snapfs.cli import command_inventory, main

README = Path(__file__).resolve().parent.parent / "README.md"


@pytest.fixture
def env(tmp_path, monkeypatch):
    repo = tmp_path / "repo"
    monkeypatch.setenv("SNAPFS_REPO", str(repo))
    src = write_tree({"bin/tool": ("f", b"#!/bin/sh\n", True), "README": ("f", b"v1\n", False),
                      "link": ("l", "README")}, tmp_path / "src")
    return repo, src, tmp_path


def run(capsys, *argv):
    code = main(list(argv))
    out = capsys.readouterr()
    return code, out.out, out.err


def test_publish_history_tags(env, capsys):
    repo, src, tmp = env
    assert run(capsys, "init")[0] == 0
    code, out, _ = run(capsys, "--machine", "publish", str(src), "--tag", "v1", "--note", "a b")
    assert code == 0 and out.startswith("snapfs-manifest 1\n") and "note a\\sb" in out
    (src / "README").write_bytes(b"v2\n")
    assert run(capsys, "publish", str(src))[0] == 0
    code, out, _ = run(capsys, "--machine", "history")
    assert [line.split()[0] for line in out.splitlines()] == ["2", "1"]
    code, out, _ = run(capsys, "tags")
    assert out.startswith("snapfs-tags 1\nhead ") and "tag v1 " in out
    assert run(capsys, "tag", "latest")[0] == 0
    assert "tag latest" in run(capsys, "tags")[1]


def test_read_commands(env, capsys):
    repo, src, tmp = env
    run(capsys, "publish", str(src), "--tag", "v1")
    code, out, _ = run(capsys, "--machine", "ls")
    assert code == 0 and out.startswith("snapfs-catalog 1\n")
    assert "L README link" in out
    code, out, _ = run(capsys, "stat", "bin/tool")
    assert out.startswith("x ")
    code, out, _ = run(capsys, "cat", "link")
    assert out == "README\n"
    code, out, _ = run(capsys, "--machine", "sync", "--ref", "v1")
    assert out.startswith("snapfs-manifest 1\n")
    code, out, _ = run(capsys, "verify")
    assert code == 0 and out.endswith("ok\n")
    target = tmp / "out"
    assert run(capsys, "checkout", str(target), "--cache", str(tmp / "cache"))[0] == 0
    assert scan_tree(target) == with_parents(scan_tree(src))


def test_cat_bytes(env, capfdbinary):
    repo, src, tmp = env
    main(["publish", str(src)])
    capfdbinary.readouterr()
    proc = subprocess.run([sys.executable, "-m", "snapfs", "cat", "bin/tool"],
                          capture_output=True, env={"SNAPFS_REPO": str(repo), "PATH": ""})
    assert proc.returncode == 0 and proc.stdout == b"#!/bin/sh\n"


def test_diff_exit_codes(env, capsys):
    repo, src, _ = env
    run(capsys, "publish", str(src), "--tag", "v1")
    code, out, _ = run(capsys, "diff", "v1", "head")
    assert code == 0 and out.startswith("snapfs-diff 1\n")
    (src / "README").write_bytes(b"changed\n")
    run(capsys, "publish", str(src))
    code, out, _ = run(capsys, "diff", "v1", "head")
    assert code == 1 and "\nmodified-content README f:3:" in out
    code, out, _ = run(capsys, "diff", "--stat-only", "v1", "head")
    assert "count modified-content 1" in out and "\nmodified-content " not in out
    assert run(capsys, "diff", "v1", "no-such-tag")[0] == 2


def test_usage_and_runtime_errors(env, capsys, monkeypatch):
    repo, src, _ = env
    assert run(capsys, "frobnicate")[0] == 2
    assert run(capsys)[0] == 2
    assert run(capsys, "publish")[0] == 2
    assert run(capsys, "bench", "nosuch")[0] == 2
    assert run(capsys, "recipe")[0] == 2
    code, _, err = run(capsys, "history")
    assert code == 3 and "no repository" in err
    monkeypatch.delenv("SNAPFS_REPO")
    assert run(capsys, "history")[0] == 2
    assert run(capsys, "--version")[0] == 0


def test_verify_failure_exit_code(env, capsys):
    repo, src, _ = env
    run(capsys, "publish", str(src))
    from snapfs.cas import ObjectStore, object_id
    ObjectStore(repo).delete(object_id(b"v1\n"))
    code, out, _ = run(capsys, "verify")
    assert code == 1 and "missing" in out


def test_gc(env, capsys):
    repo, src, _ = env
    run(capsys, "publish", str(src))
    (src / "README").write_bytes(b"v2\n")
    run(capsys, "publish", str(src))
    assert run(capsys, "--machine", "gc")[1] == "removed 0\n"
    code, out, _ = run(capsys, "--machine", "gc", "--retain", "head")
    assert code == 0 and out != "removed 0\n"


def test_recipe_commands(env, capsys, monkeypatch):
    repo, src, _ = env
    monkeypatch.setenv("SNAPFS_TEST_FLAG", "on")
    code, _, _ = run(capsys, "publish", str(src), "--recipe-env", "SNAPFS_TEST_*",
                     "--recipe-probe", f"{sys.executable} --version",
                     "--recipe-action", "make all")
    assert code == 0
    code, out, _ = run(capsys, "recipe", "show")
    assert "env SNAPFS_TEST_FLAG on" in out and "action make\\sall" in out
    assert run(capsys, "recipe", "check")[0] == 0
    monkeypatch.setenv("SNAPFS_TEST_FLAG", "off")
    code, out, _ = run(capsys, "recipe", "check")
    assert code == 1 and out.startswith("mismatch env SNAPFS_TEST_FLAG on off")


def test_serve_subprocess(env, capsys, tmp_path):
    repo, src, tmp = env
    run(capsys, "publish", str(src), "--tag", "v1")
    proc = subprocess.Popen([sys.executable, "-m", "snapfs", "serve", "--repo", str(repo),
                             "--listen", "127.0.0.1:0"], stderr=subprocess.PIPE, text=True)
    try:
        line = proc.stderr.readline()
        url = re.search(r"http://\S+", line).group(0)
        code, out, _ = run(capsys, "--machine", "sync", "--repo", url, "--ref", "v1")
        assert code == 0 and out.startswith("snapfs-manifest 1")
        target = tmp_path / "via-http"
        assert run(capsys, "checkout", "--repo", url, str(target))[0] == 0
        assert (target / "bin" / "tool").read_bytes() == b"#!/bin/sh\n"
    finally:
        proc.terminate()
        proc.wait(10)


def test_bench_small(capsys, tmp_path):
    code, out, _ = run(capsys, "bench", "custom", "--releases", "3", "--files", "20",
                       "--workdir", str(tmp_path / "w"))
    assert code == 0
    lines = out.splitlines()
    assert lines[0] == "snapfs-bench 1"
    assert sum(line.startswith("release ") for line in lines) == 3


def _readme_sections() -> dict[str, str]:
    text = README.read_text()
    parts = re.split(r"^### `snapfs ([a-z ]+)`\n", text, flags=re.M)
    return {parts[i]: parts[i + 1] for i in range(1, len(parts), 2)}


def test_readme_documents_every_command_and_option():
    inventory = command_inventory()
    sections = _readme_sections()
    for command, options in inventory.items():
        has_children = any(other.startswith(command + " ") for other in inventory)
        if has_children and not options:
            continue
        assert command in sections, f"README lacks section for snapfs {command}"
        documented = set(re.findall(r"`(--[a-z-]+)`", sections[command]))
        assert documented == set(options), command
    assert set(sections) <= set(inventory)
