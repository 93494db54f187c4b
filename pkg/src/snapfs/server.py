"""HTTP distribution: an origin serving a repository, and a pull-through proxy.

Routes (all GET)::

    /v1/objects/<id>              deflated object body, immutable
    /v1/manifests/id/<id>         manifest, immutable
    /v1/manifests/head            manifest, cacheable for manifest_ttl
    /v1/manifests/tag/<name>      manifest, cacheable for manifest_ttl
    /v1/tags                      tags file, cacheable for manifest_ttl
    /v1/stats                     request counters (not counted themselves)

Objects and manifests-by-id never change, so proxies keep them forever.
Head, tags and tag lookups are mutable pointers and expire after the TTL.
"""

from __future__ import annotations

import logging
import socket
import threading
import time
from dataclasses import dataclass
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer
from pathlib import Path
from typing import Callable

from ._http import HttpSession
from .cas import ObjectStore, atomic_write, decode_verified, is_object_id, object_id
from .errors import CorruptObject, NetworkError, ObjectNotFound
from .publisher import Repository

log = logging.getLogger(__name__)

DEFAULT_MANIFEST_TTL = 60
IMMUTABLE = "public, max-age=31536000, immutable"
POLL_INTERVAL = 0.05  # shutdown latency of a background server


@dataclass
class Reply:
    status: int
    body: bytes = b""
    headers: dict[str, str] | None = None

    def __post_init__(self):
        if self.headers is None:
            self.headers = {}


def _text_reply(status: int, message: str) -> Reply:
    return Reply(status, (message + "\n").encode(), {"Content-Type": "text/plain"})


def _etag(value: str) -> str:
    return f'"{value}"'


def _object_reply(oid: str, encoded: bytes) -> Reply:
    return Reply(200, encoded, {
        "Content-Type": "application/octet-stream",
        "Content-Encoding": "deflate",
        "Cache-Control": IMMUTABLE,
        "ETag": _etag(oid),
    })


def _manifest_reply(mid: str, data: bytes, cache_control: str) -> Reply:
    return Reply(200, data, {
        "Content-Type": "text/plain; charset=utf-8",
        "Cache-Control": cache_control,
        "ETag": _etag(mid),
    })


class Counters:
    FIELDS = ("requests_total", "upstream_requests_total", "cache_hits_total")

    def __init__(self):
        self._lock = threading.Lock()
        self.values = dict.fromkeys(self.FIELDS, 0)

    def incr(self, name: str) -> None:
        with self._lock:
            self.values[name] += 1

    def snapshot(self) -> dict[str, int]:
        with self._lock:
            return dict(self.values)

    def render(self) -> bytes:
        return "".join(f"{k} {v}\n" for k, v in self.snapshot().items()).encode()


def parse_stats(data: bytes) -> dict[str, int]:
    out = {}
    for line in data.decode().splitlines():
        key, _, value = line.partition(" ")
        out[key] = int(value)
    return out


def _route(path: str) -> tuple[str, str | None]:
    parts = path.split("/")
    if len(parts) < 3 or parts[0] != "" or parts[1] != "v1":
        return "unknown", None
    rest = parts[2:]
    if rest == ["tags"]:
        return "tags", None
    if rest == ["stats"]:
        return "stats", None
    if len(rest) == 2 and rest[0] == "objects":
        return "object", rest[1]
    if rest == ["manifests", "head"]:
        return "head", None
    if len(rest) == 3 and rest[:2] == ["manifests", "tag"]:
        return "tag", rest[2]
    if len(rest) == 3 and rest[:2] == ["manifests", "id"]:
        return "manifest", rest[2]
    return "unknown", None


class OriginBackend:
    """Serves a repository directory; holds no per-client state."""

    mode = "origin"

    def __init__(self, repo: str | Path | Repository, manifest_ttl: int = DEFAULT_MANIFEST_TTL):
        if manifest_ttl < 1:
            raise ValueError("manifest_ttl must be at least 1 second")
        self.repo = repo if isinstance(repo, Repository) else Repository(repo)
        self.manifest_ttl = manifest_ttl
        self.counters = Counters()

    def handle(self, path: str) -> Reply:
        kind, arg = _route(path)
        if kind == "stats":
            return Reply(200, self.counters.render(), {"Content-Type": "text/plain",
                                                       "Cache-Control": "no-store"})
        self.counters.incr("requests_total")
        mutable = f"max-age={self.manifest_ttl}"
        if kind == "object":
            return self._object(arg)
        if kind == "manifest":
            if not is_object_id(arg):
                return _text_reply(400, "malformed id")
            return self._manifest(arg, IMMUTABLE)
        if kind == "head":
            head = self.repo.tags().head
            if head is None:
                return _text_reply(404, "no snapshot published")
            return self._manifest(head, mutable)
        if kind == "tag":
            tid = self.repo.tags().tags.get(arg)
            if tid is None:
                return _text_reply(404, f"unknown tag {arg}")
            return self._manifest(tid, mutable)
        if kind == "tags":
            data = (self.repo.path / "tags").read_bytes()
            return Reply(200, data, {"Content-Type": "text/plain", "Cache-Control": mutable,
                                     "ETag": _etag(object_id(data))})
        return _text_reply(404, "no such endpoint")

    def _object(self, oid: str) -> Reply:
        if not is_object_id(oid):
            return _text_reply(400, "malformed id")
        try:
            encoded = self.repo.store.read_encoded(oid)
            decode_verified(oid, encoded)
        except ObjectNotFound:
            return _text_reply(404, "unknown object")
        except CorruptObject:
            log.error("refusing to serve corrupt object %s", oid)
            return _text_reply(500, "corrupt object")
        return _object_reply(oid, encoded)

    def _manifest(self, mid: str, cache_control: str) -> Reply:
        try:
            data = (self.repo.manifest_dir / mid).read_bytes()
        except FileNotFoundError:
            return _text_reply(404, "unknown manifest")
        if object_id(data) != mid:
            return _text_reply(500, "corrupt manifest")
        return _manifest_reply(mid, data, cache_control)


class ProxyBackend:
    """Pull-through cache in front of an upstream origin or proxy.

    Immutable replies are verified and admitted to ``cache_dir`` for good;
    mutable replies are held in memory for ``manifest_ttl`` seconds.
    Concurrent misses on the same path share one upstream request.
    """

    mode = "proxy"

    def __init__(self, upstream: str, cache_dir: str | Path,
                 manifest_ttl: int = DEFAULT_MANIFEST_TTL,
                 clock: Callable[[], float] = time.monotonic, timeout: float = 30.0):
        if manifest_ttl < 1:
            raise ValueError("manifest_ttl must be at least 1 second")
        self.upstream = HttpSession(upstream, timeout=timeout)
        self.cache_dir = Path(cache_dir)
        self.objects = ObjectStore(self.cache_dir)
        self.manifest_dir = self.cache_dir / "manifests"
        self.manifest_dir.mkdir(parents=True, exist_ok=True)
        self.manifest_ttl = manifest_ttl
        self.clock = clock
        self.counters = Counters()
        self._mutable: dict[str, tuple[float, Reply]] = {}
        self._inflight: dict[str, threading.Lock] = {}
        self._guard = threading.Lock()

    def _path_lock(self, path: str) -> threading.Lock:
        with self._guard:
            return self._inflight.setdefault(path, threading.Lock())

    def _fetch(self, path: str):
        self.counters.incr("upstream_requests_total")
        return self.upstream.get(path)

    def handle(self, path: str) -> Reply:
        kind, arg = _route(path)
        if kind == "stats":
            return Reply(200, self.counters.render(), {"Content-Type": "text/plain",
                                                       "Cache-Control": "no-store"})
        self.counters.incr("requests_total")
        if kind in ("object", "manifest"):
            if not is_object_id(arg):
                return _text_reply(400, "malformed id")
            return self._immutable(kind, arg, path)
        if kind in ("head", "tag", "tags"):
            return self._pointer(path)
        return _text_reply(404, "no such endpoint")

    def _cached_immutable(self, kind: str, oid: str) -> Reply | None:
        try:
            if kind == "object":
                return _object_reply(oid, self.objects.read_encoded(oid))
            return _manifest_reply(oid, (self.manifest_dir / oid).read_bytes(), IMMUTABLE)
        except (ObjectNotFound, FileNotFoundError):
            return None

    def _immutable(self, kind: str, oid: str, path: str) -> Reply:
        with self._path_lock(path):
            reply = self._cached_immutable(kind, oid)
            if reply is not None:
                self.counters.incr("cache_hits_total")
                return reply
            try:
                resp = self._fetch(path)
            except NetworkError as exc:
                return _text_reply(502, f"upstream unreachable: {exc}")
            if resp.status != 200:
                return Reply(resp.status, resp.body, {"Content-Type": "text/plain"})
            try:
                if kind == "object":
                    self.objects.put_encoded(oid, resp.body)
                else:
                    if object_id(resp.body) != oid:
                        raise CorruptObject(oid)
                    atomic_write(self.manifest_dir / oid, resp.body, self.objects.txn_dir)
            except CorruptObject:
                log.error("upstream sent corrupt %s %s", kind, oid)
                return _text_reply(502, "upstream sent corrupt data")
            return self._cached_immutable(kind, oid)

    def _pointer(self, path: str) -> Reply:
        with self._path_lock(path):
            now = self.clock()
            hit = self._mutable.get(path)
            if hit is not None and hit[0] > now:
                self.counters.incr("cache_hits_total")
                return hit[1]
            try:
                resp = self._fetch(path)
            except NetworkError as exc:
                return _text_reply(502, f"upstream unreachable: {exc}")
            if resp.status != 200:
                return Reply(resp.status, resp.body, {"Content-Type": "text/plain"})
            headers = {"Content-Type": resp.header("content-type", "text/plain"),
                       "Cache-Control": f"max-age={self.manifest_ttl}"}
            if resp.header("etag"):
                headers["ETag"] = resp.header("etag")
            reply = Reply(200, resp.body, headers)
            self._mutable[path] = (now + self.manifest_ttl, reply)
            return reply


def _etag_matches(if_none_match: str | None, etag: str | None) -> bool:
    if not if_none_match or not etag:
        return False
    for candidate in if_none_match.split(","):
        candidate = candidate.strip()
        if candidate.startswith("W/"):
            candidate = candidate[2:]
        if candidate == "*" or candidate == etag:
            return True
    return False


class _Handler(BaseHTTPRequestHandler):
    protocol_version = "HTTP/1.1"
    server_version = "snapfs/1"
    timeout = 60
    # headers and body go out as separate writes; without TCP_NODELAY the
    # second one waits for the peer's delayed ACK on every keep-alive request
    disable_nagle_algorithm = True

    def setup(self):
        super().setup()
        self.server.track(self.request)

    def finish(self):
        try:
            super().finish()
        finally:
            self.server.untrack(self.request)

    def _send(self, reply: Reply, with_body: bool) -> None:
        headers = dict(reply.headers)
        status, body = reply.status, reply.body
        if status == 200 and _etag_matches(self.headers.get("If-None-Match"), headers.get("ETag")):
            status, body = 304, b""
            headers.pop("Content-Encoding", None)
        self.send_response(status)
        for k, v in headers.items():
            self.send_header(k, v)
        self.send_header("Content-Length", str(len(body)))
        self.end_headers()
        if with_body and body:
            self.wfile.write(body)

    def _serve(self, with_body: bool) -> None:
        path = self.path.split("?", 1)[0]
        try:
            reply = self.server.backend.handle(path)
        except Exception:
            log.exception("error handling %s", path)
            reply = _text_reply(500, "internal error")
        self._send(reply, with_body)

    def do_GET(self):
        self._serve(True)

    def do_HEAD(self):
        self._serve(False)

    def log_message(self, format, *args):
        log.debug("%s %s", self.address_string(), format % args)


class _Server(ThreadingHTTPServer):
    daemon_threads = True
    allow_reuse_address = True

    def __init__(self, address, backend):
        self.backend = backend
        self._conns: set[socket.socket] = set()
        self._conns_lock = threading.Lock()
        super().__init__(address, _Handler)

    def track(self, sock):
        with self._conns_lock:
            self._conns.add(sock)

    def untrack(self, sock):
        with self._conns_lock:
            self._conns.discard(sock)

    def close_connections(self):
        with self._conns_lock:
            conns = list(self._conns)
        for sock in conns:
            try:
                sock.shutdown(socket.SHUT_RDWR)
            except OSError:
                pass


def parse_listen(listen: str) -> tuple[str, int]:
    host, sep, port = listen.rpartition(":")
    if not sep:
        host, port = "127.0.0.1", listen
    if not port.isdigit():
        raise ValueError(f"bad listen address {listen!r}")
    return host or "127.0.0.1", int(port)


class SnapfsServer:
    """An HTTP server around a backend; ``start`` runs it on a background thread."""

    def __init__(self, backend, listen: str = "127.0.0.1:0"):
        self.backend = backend
        self._httpd = _Server(parse_listen(listen), backend)
        self._thread: threading.Thread | None = None

    @property
    def address(self) -> tuple[str, int]:
        return self._httpd.server_address[:2]

    @property
    def url(self) -> str:
        host, port = self.address
        return f"http://{host}:{port}"

    def start(self) -> "SnapfsServer":
        self._thread = threading.Thread(target=self._httpd.serve_forever,
                                        args=(POLL_INTERVAL,), name=f"snapfs-{self.backend.mode}", daemon=True)
        self._thread.start()
        return self

    def serve_forever(self) -> None:
        self._httpd.serve_forever()

    def stop(self) -> None:
        if self._thread is not None:
            self._httpd.shutdown()
            self._thread.join()
            self._thread = None
        self._httpd.close_connections()
        self._httpd.server_close()

    def __enter__(self) -> "SnapfsServer":
        return self.start()

    def __exit__(self, *exc) -> None:
        self.stop()


def origin_server(repo, listen: str = "127.0.0.1:0",
                  manifest_ttl: int = DEFAULT_MANIFEST_TTL) -> SnapfsServer:
    return SnapfsServer(OriginBackend(repo, manifest_ttl), listen)


def proxy_server(upstream: str, cache_dir, listen: str = "127.0.0.1:0",
                 manifest_ttl: int = DEFAULT_MANIFEST_TTL, **kwargs) -> SnapfsServer:
    return SnapfsServer(ProxyBackend(upstream, cache_dir, manifest_ttl, **kwargs), listen)
