"""The ``snapfs`` command-line tool.

Exit codes: 0 success, 1 expected negative result (differences found,
verification or recipe check failed), 2 usage error, 3 runtime error.
``snapfs diff`` reports any failure as 2, like diff(1).
"""

from __future__ import annotations

import argparse
import logging
import os
import sys
from datetime import datetime, timezone
from typing import Sequence

from . import __version__
from .bench import resolve_profile, run_bench
from .cache import UNLIMITED
from .catalog import DirEntry, serialize_catalog, Catalog
from .client import Client, checkout, verify
from .diff import diff_manifests
from .errors import SnapfsError
from .publisher import RECIPE_PATH, Repository
from .recipe import BuildRecipe, capture_recipe, check_recipe
from .server import DEFAULT_MANIFEST_TTL, origin_server, proxy_server

log = logging.getLogger("snapfs")

EXIT_OK, EXIT_NEGATIVE, EXIT_USAGE, EXIT_RUNTIME = 0, 1, 2, 3


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(f"{self.prog}: error: {message}")


def _size(text: str) -> int:
    units = {"k": 1 << 10, "m": 1 << 20, "g": 1 << 30, "t": 1 << 40}
    t = text.strip().lower().removesuffix("ib").removesuffix("b")
    if t and t[-1] in units:
        return int(float(t[:-1]) * units[t[-1]])
    return int(t)


def _add_repo(p: argparse.ArgumentParser, what: str) -> None:
    p.add_argument("--repo", default=os.environ.get("SNAPFS_REPO"),
                   help=f"{what} (default: $SNAPFS_REPO)")


def _add_client(p: argparse.ArgumentParser, ref: bool = True) -> None:
    _add_repo(p, "repository URL or local repository path")
    if ref:
        p.add_argument("--ref", default="head", help="head, a tag name or a manifest id")
    p.add_argument("--cache", help="local object cache directory")
    p.add_argument("--quota", type=_size, default=None, help="cache quota in bytes (k/m/g suffixes)")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="snapfs", description="Versioned content-addressed software distribution.")
    parser.add_argument("--version", action="version", version=f"snapfs {__version__}")
    parser.add_argument("--machine", action="store_true", help="byte-stable canonical output")
    parser.add_argument("-v", "--verbose", action="count", default=0)
    sub = parser.add_subparsers(dest="command", metavar="COMMAND", parser_class=_Parser)

    p = sub.add_parser("init", help="create an empty repository")
    _add_repo(p, "repository path")

    p = sub.add_parser("publish", help="ingest a directory and commit it as a new snapshot")
    _add_repo(p, "repository path")
    p.add_argument("source")
    p.add_argument("--note", default="")
    p.add_argument("--tag")
    p.add_argument("--recipe-action", action="append", default=[], metavar="CMD")
    p.add_argument("--recipe-probe", action="append", default=[], metavar="CMD")
    p.add_argument("--recipe-env", action="append", default=[], metavar="PATTERN")

    p = sub.add_parser("tag", help="point a tag at a snapshot")
    _add_repo(p, "repository path")
    p.add_argument("name")
    p.add_argument("ref", nargs="?", default="head")

    p = sub.add_parser("tags", help="print the tag table")
    _add_repo(p, "repository URL or path")

    p = sub.add_parser("history", help="list snapshots, newest first")
    _add_repo(p, "repository path")
    p.add_argument("--limit", type=int)

    p = sub.add_parser("gc", help="remove objects not needed by retained snapshots")
    _add_repo(p, "repository path")
    p.add_argument("--retain", action="append", default=[], metavar="REF",
                   help="snapshot to keep (repeatable; default: all of history)")

    p = sub.add_parser("serve", help="serve a repository over HTTP")
    _add_repo(p, "repository path")
    p.add_argument("--listen", default="127.0.0.1:8000")
    p.add_argument("--manifest-ttl", type=int, default=DEFAULT_MANIFEST_TTL)

    p = sub.add_parser("proxy", help="run a pull-through caching proxy")
    p.add_argument("--upstream", required=True)
    p.add_argument("--cache", required=True)
    p.add_argument("--listen", default="127.0.0.1:8001")
    p.add_argument("--manifest-ttl", type=int, default=DEFAULT_MANIFEST_TTL)

    p = sub.add_parser("sync", help="fetch and print a snapshot manifest")
    _add_client(p)

    for name, help_text in (("ls", "list a directory"), ("stat", "show one entry"),
                            ("cat", "print a file")):
        p = sub.add_parser(name, help=help_text)
        _add_client(p)
        p.add_argument("path", nargs="?" if name == "ls" else None, default="")

    p = sub.add_parser("checkout", help="materialize a snapshot into a directory")
    _add_client(p)
    p.add_argument("target")

    p = sub.add_parser("verify", help="re-hash every object of a snapshot")
    _add_client(p)

    p = sub.add_parser("diff", help="what changed between two snapshots")
    _add_client(p, ref=False)
    p.add_argument("ref_a")
    p.add_argument("ref_b")
    p.add_argument("--stat-only", action="store_true")

    p = sub.add_parser("recipe", help="show or check a snapshot's build recipe")
    rsub = p.add_subparsers(dest="recipe_command", metavar="ACTION", parser_class=_Parser)
    for name in ("show", "check"):
        rp = rsub.add_parser(name)
        _add_client(rp, ref=False)
        rp.add_argument("ref", nargs="?", default="head")

    p = sub.add_parser("bench", help="publish a synthetic release stream and report metrics")
    p.add_argument("preset", help="atlas, cms, alice, or 'custom' with --releases/--files")
    p.add_argument("--releases", type=int)
    p.add_argument("--files", type=int)
    p.add_argument("--overlap", type=float)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--workdir")
    p.add_argument("--manifest-ttl", type=int, default=DEFAULT_MANIFEST_TTL)
    return parser


def command_inventory(parser: argparse.ArgumentParser | None = None) -> dict[str, list[str]]:
    """Subcommand -> sorted long option names, for documentation checks."""
    parser = parser or build_parser()
    out: dict[str, list[str]] = {}

    def visit(p: argparse.ArgumentParser, prefix: str) -> None:
        for action in p._actions:
            if isinstance(action, argparse._SubParsersAction):
                for name, child in action.choices.items():
                    visit(child, f"{prefix} {name}".strip())
        if prefix:
            out[prefix] = sorted(
                opt for a in p._actions for opt in a.option_strings
                if opt.startswith("--") and opt != "--help")

    visit(parser, "")
    return dict(sorted(out.items()))


def _need_repo(args) -> str:
    if not args.repo:
        raise UsageError("snapfs: error: --repo is required (or set SNAPFS_REPO)")
    return args.repo


def _client(args) -> Client:
    cache = getattr(args, "cache", None)
    quota = UNLIMITED if args.quota is None else args.quota
    return Client(_need_repo(args), cache, quota)


def _fmt_time(epoch: int) -> str:
    return datetime.fromtimestamp(epoch, timezone.utc).strftime("%Y-%m-%dT%H:%M:%SZ")


def _human_entry(e: DirEntry) -> str:
    if e.is_dir:
        return f"d          -  {e.name}/"
    if e.is_symlink:
        return f"l          -  {e.name} -> {e.target}"
    return f"{'x' if e.executable else 'f'} {e.size:>10}  {e.name}"


def _out(text: str) -> None:
    sys.stdout.write(text)


def cmd_init(args) -> int:
    repo = Repository.init(_need_repo(args))
    if not args.machine:
        _out(f"initialized repository at {repo.path}\n")
    return EXIT_OK


def cmd_publish(args) -> int:
    repo = Repository.open_or_init(_need_repo(args))
    recipe = None
    if args.recipe_action or args.recipe_probe or args.recipe_env:
        recipe = capture_recipe(args.recipe_action, args.recipe_probe, args.recipe_env)
    manifest = repo.publish(args.source, note=args.note, tag=args.tag, recipe=recipe)
    if args.machine:
        _out(manifest.serialize().decode("utf-8", "surrogateescape"))
    else:
        _out(f"published revision {manifest.revision} {manifest.id}\n")
    return EXIT_OK


def cmd_tag(args) -> int:
    repo = Repository(_need_repo(args))
    mid = repo.resolve_ref(args.ref)
    db = repo.tag(args.name, mid)
    _out(db.serialize().decode() if args.machine else f"{args.name} -> {mid}\n")
    return EXIT_OK


def cmd_tags(args) -> int:
    client = Client(_need_repo(args))
    _out(client.remote.tags().decode())
    return EXIT_OK


def cmd_history(args) -> int:
    repo = Repository(_need_repo(args))
    for m in repo.history(args.limit):
        if args.machine:
            _out(f"{m.revision} {m.id}\n")
        else:
            _out(f"r{m.revision}  {m.id[:12]}  {_fmt_time(m.created_at)}  {m.note}\n")
    return EXIT_OK


def cmd_gc(args) -> int:
    repo = Repository(_need_repo(args))
    if args.retain:
        retain = {repo.resolve_ref(r) for r in args.retain}
    else:
        retain = {m.id for m in repo.history()}
    removed = repo.gc(retain)
    _out(f"removed {removed}\n" if args.machine else f"removed {removed} objects\n")
    return EXIT_OK


def cmd_serve(args) -> int:
    server = origin_server(_need_repo(args), args.listen, args.manifest_ttl)
    print(f"serving {args.repo} at {server.url}", file=sys.stderr)
    try:
        server.serve_forever()
    except KeyboardInterrupt:
        pass
    finally:
        server.stop()
    return EXIT_OK


def cmd_proxy(args) -> int:
    server = proxy_server(args.upstream, args.cache, args.listen, args.manifest_ttl)
    print(f"proxying {args.upstream} at {server.url}", file=sys.stderr)
    try:
        server.serve_forever()
    except KeyboardInterrupt:
        pass
    finally:
        server.stop()
    return EXIT_OK


def cmd_sync(args) -> int:
    with _client(args) as client:
        m = client.sync(args.ref)
        if args.machine:
            _out(m.serialize().decode("utf-8", "surrogateescape"))
        else:
            _out(f"revision {m.revision} {m.id} {_fmt_time(m.created_at)} {m.note}\n")
    return EXIT_OK


def cmd_ls(args) -> int:
    with _client(args) as client:
        entries = client.open(args.ref).list(args.path)
        if args.machine:
            _out(serialize_catalog(Catalog(tuple(entries))).decode("utf-8", "surrogateescape"))
        else:
            _out("".join(_human_entry(e) + "\n" for e in entries))
    return EXIT_OK


def cmd_stat(args) -> int:
    with _client(args) as client:
        e = client.open(args.ref).stat(args.path)
        if args.machine:
            _out((e.to_line() if e.name else f"D {e.content} /") + "\n")
        else:
            _out(_human_entry(e) + (f"  {e.content}" if e.content else "") + "\n")
    return EXIT_OK


def cmd_cat(args) -> int:
    with _client(args) as client:
        handle = client.open(args.ref)
        entry = handle.stat(args.path)
        if entry.is_symlink:
            sys.stdout.write(entry.target + "\n")
            return EXIT_OK
        handle.read(args.path, 0, 0)  # type/range checks
        for piece in handle.iter_file(entry):
            sys.stdout.buffer.write(piece)
        sys.stdout.flush()
    return EXIT_OK


def cmd_checkout(args) -> int:
    with _client(args) as client:
        stats = checkout(client.open(args.ref), args.target)
        _out(f"files {stats.files}\nbytes {stats.bytes_written}\n" if args.machine
             else f"checked out {stats.files} files ({stats.bytes_written} bytes) to {args.target}\n")
    return EXIT_OK


def cmd_verify(args) -> int:
    with _client(args) as client:
        report = verify(client.open(args.ref))
        _out(report.to_text())
        return EXIT_OK if report.ok else EXIT_NEGATIVE


def cmd_diff(args) -> int:
    with _client(args) as client:
        a = client.sync(args.ref_a)
        b = client.sync(args.ref_b)
        result = diff_manifests(a, b, client.fetcher.catalog)
        _out(result.to_text(stat_only=args.stat_only))
        return EXIT_OK if result.report.identical else EXIT_NEGATIVE


def _load_recipe(client: Client, ref: str) -> BuildRecipe:
    handle = client.open(ref)
    return BuildRecipe.parse(handle.read(RECIPE_PATH))


def cmd_recipe(args) -> int:
    if args.recipe_command is None:
        raise UsageError("snapfs recipe: error: expected 'show' or 'check'")
    with _client(args) as client:
        recipe = _load_recipe(client, args.ref)
        if args.recipe_command == "show":
            _out(recipe.serialize().decode("utf-8", "surrogateescape"))
            return EXIT_OK
        result = check_recipe(recipe)
        _out(result.to_text())
        return EXIT_OK if result.ok else EXIT_NEGATIVE


def cmd_bench(args) -> int:
    try:
        profile = resolve_profile(args.preset, args.releases, args.files, args.overlap)
    except ValueError as exc:
        raise UsageError(f"snapfs bench: error: {exc}") from None
    report = run_bench(profile, seed=args.seed, name=args.preset.lower(),
                       workdir=args.workdir, manifest_ttl=args.manifest_ttl)
    _out(report.to_text())
    return EXIT_OK


COMMANDS = {
    "init": cmd_init, "publish": cmd_publish, "tag": cmd_tag, "tags": cmd_tags,
    "history": cmd_history, "gc": cmd_gc, "serve": cmd_serve, "proxy": cmd_proxy,
    "sync": cmd_sync, "ls": cmd_ls, "stat": cmd_stat, "cat": cmd_cat,
    "checkout": cmd_checkout, "verify": cmd_verify, "diff": cmd_diff,
    "recipe": cmd_recipe, "bench": cmd_bench,
}


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as exc:
        print(exc, file=sys.stderr)
        return EXIT_USAGE
    except SystemExit as exc:  # --help / --version
        return int(exc.code or 0)
    logging.basicConfig(level=logging.WARNING - 10 * min(args.verbose, 2),
                        format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)
    if args.command is None:
        parser.print_usage(sys.stderr)
        return EXIT_USAGE
    runtime_code = EXIT_USAGE if args.command == "diff" else EXIT_RUNTIME
    try:
        return COMMANDS[args.command](args)
    except UsageError as exc:
        print(exc, file=sys.stderr)
        return EXIT_USAGE
    except (SnapfsError, OSError, ValueError) as exc:
        print(f"snapfs {args.command}: {exc}", file=sys.stderr)
        return runtime_code


if __name__ == "__main__":
    sys.exit(main())
