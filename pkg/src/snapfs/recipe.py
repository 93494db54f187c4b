"""Build recipes: a declarative record of how a published tree was produced.

A recipe captures an allowlisted slice of the environment, the version
strings reported by tool probes, and the build actions the publisher
declares.  It is stored inside the snapshot at ``/.snapfs/recipe``.  Actions
are never executed here.
"""

from __future__ import annotations

import fnmatch
import os
import shlex
import subprocess
import time
from dataclasses import dataclass
from typing import Callable, Iterable, Mapping, Sequence

from . import _text
from .cas import ObjectId, is_object_id, object_id
from .errors import MalformedData

HEADER = "snapfs-recipe 1"
UNAVAILABLE = "unavailable"
PROBE_TIMEOUT = 10.0

Runner = Callable[[str], "str | None"]


@dataclass(frozen=True)
class BuildRecipe:
    environment: tuple[tuple[str, str], ...] = ()
    tools: tuple[tuple[str, str], ...] = ()
    actions: tuple[str, ...] = ()
    inputs: tuple[tuple[str, ObjectId], ...] = ()
    created_at: int = 0
    schema: int = 1

    def __post_init__(self):
        object.__setattr__(self, "environment", tuple(sorted(self.environment)))

    @property
    def env(self) -> dict[str, str]:
        return dict(self.environment)

    def serialize(self) -> bytes:
        e = _text.escape
        lines = [HEADER, f"created {self.created_at}"]
        lines += [f"env {e(k)} {e(v)}" for k, v in self.environment]
        lines += [f"tool {e(cmd)} {e(ver)}" for cmd, ver in self.tools]
        lines += [f"action {e(a)}" for a in self.actions]
        lines += [f"input {e(label)} {oid}" for label, oid in self.inputs]
        return _text.to_bytes("\n".join(lines) + "\n")

    @property
    def id(self) -> ObjectId:
        return object_id(self.serialize())

    @classmethod
    def parse(cls, data: bytes) -> "BuildRecipe":
        what = "recipe"
        lines = _text.split_lines(data, what)
        _text.expect_header(lines, HEADER, what)
        if len(lines) < 2:
            raise MalformedData(what, "missing created line")
        created = _text.keyvalue(lines[1], "created", what, 2)
        if not created.lstrip("-").isdigit():
            raise MalformedData(what, "bad timestamp", 2)
        env, tools, actions, inputs = [], [], [], []
        un = lambda s: _text.unescape(s, what)  # noqa: E731
        for lineno, line in enumerate(lines[2:], start=3):
            key, _, rest = line.partition(" ")
            parts = rest.split(" ")
            if key == "env" and len(parts) == 2:
                env.append((un(parts[0]), un(parts[1])))
            elif key == "tool" and len(parts) == 2:
                tools.append((un(parts[0]), un(parts[1])))
            elif key == "action" and len(parts) == 1:
                actions.append(un(parts[0]))
            elif key == "input" and len(parts) == 2 and is_object_id(parts[1]):
                inputs.append((un(parts[0]), parts[1]))
            else:
                raise MalformedData(what, f"bad line {line!r}", lineno)
        recipe = cls(tuple(env), tuple(tools), tuple(actions), tuple(inputs), int(created))
        if recipe.serialize() != data:
            raise MalformedData(what, "non-canonical encoding")
        return recipe


def run_probe(command: str) -> str | None:
    """First non-empty output line of ``command``, or None if it cannot run."""
    try:
        proc = subprocess.run(shlex.split(command), capture_output=True, text=True,
                              timeout=PROBE_TIMEOUT, errors="replace")
    except (OSError, ValueError, subprocess.SubprocessError):
        return None
    if proc.returncode != 0:
        return None
    for stream in (proc.stdout, proc.stderr):
        for line in stream.splitlines():
            if line.strip():
                return line.strip()
    return ""


def filter_environment(environ: Mapping[str, str], allowlist: Iterable[str]) -> dict[str, str]:
    patterns = list(allowlist)
    return {k: v for k, v in environ.items()
            if any(fnmatch.fnmatchcase(k, p) for p in patterns)}


def capture_recipe(
    actions: Sequence[str] = (),
    probes: Sequence[str] = (),
    env_allowlist: Iterable[str] = (),
    *,
    environ: Mapping[str, str] | None = None,
    runner: Runner = run_probe,
    created_at: int | None = None,
    inputs: Sequence[tuple[str, ObjectId]] = (),
) -> BuildRecipe:
    environ = os.environ if environ is None else environ
    env = filter_environment(environ, env_allowlist)
    tools = []
    for cmd in probes:
        version = runner(cmd)
        tools.append((cmd, UNAVAILABLE if version is None else version))
    return BuildRecipe(
        environment=tuple(env.items()),
        tools=tuple(tools),
        actions=tuple(actions),
        inputs=tuple(inputs),
        created_at=int(time.time()) if created_at is None else created_at,
    )


MATCH = "match"
MISMATCH = "mismatch"
ABSENT = "absent"


@dataclass(frozen=True)
class FieldCheck:
    field: str  # "env" or "tool"
    key: str
    expected: str
    actual: str | None
    status: str

    def to_line(self) -> str:
        e = _text.escape
        actual = "-" if self.actual is None else e(self.actual)
        return f"{self.status} {self.field} {e(self.key)} {e(self.expected)} {actual}"


@dataclass
class RecipeCheck:
    results: list[FieldCheck]

    @property
    def ok(self) -> bool:
        return all(r.status == MATCH for r in self.results)

    def problems(self) -> list[FieldCheck]:
        return [r for r in self.results if r.status != MATCH]

    def to_text(self) -> str:
        return "".join(r.to_line() + "\n" for r in self.results)


def check_recipe(recipe: BuildRecipe, environ: Mapping[str, str] | None = None,
                 runner: Runner = run_probe) -> RecipeCheck:
    """Compare a recipe's recorded conditions with the current environment."""
    environ = os.environ if environ is None else environ
    results = []
    for key, expected in recipe.environment:
        actual = environ.get(key)
        if actual is None:
            status = ABSENT
        else:
            status = MATCH if actual == expected else MISMATCH
        results.append(FieldCheck("env", key, expected, actual, status))
    for cmd, expected in recipe.tools:
        version = runner(cmd)
        if version is None:
            status = MATCH if expected == UNAVAILABLE else ABSENT
            actual = None
        else:
            status = MATCH if version == expected else MISMATCH
            actual = version
        results.append(FieldCheck("tool", cmd, expected, actual, status))
    return RecipeCheck(results)
