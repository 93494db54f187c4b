from __future__ import annotations

import sys
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))

from snapfs import Repository  # noqa: E402


class FakeClock:
    def __init__(self, start: float = 1_000_000.0):
        self.now = start

    def __call__(self) -> float:
        return self.now

    def advance(self, seconds: float) -> None:
        self.now += seconds


@pytest.fixture
def clock() -> FakeClock:
    return FakeClock()


@pytest.fixture
def repo(tmp_path) -> Repository:
    return Repository.init(tmp_path / "repo", fsync=False)


@pytest.fixture
def make_tree(tmp_path):
    """Write an in-memory tree under a fresh directory and return its path."""
    from oracles import write_tree

    counter = iter(range(10**6))

    def make(tree: dict) -> Path:
        return write_tree(tree, tmp_path / f"src{next(counter)}")

    return make


# one PASS/FAIL line per acceptance criterion, repeated in the terminal summary
ACCEPTANCE_RESULTS: list[str] = []


def record_acceptance(number: int, ok: bool, detail: str) -> None:
    line = f"acceptance {number}: {'PASS' if ok else 'FAIL'} {detail}"
    print(line)
    ACCEPTANCE_RESULTS.append(line)


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_RESULTS:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_RESULTS, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)
