"""Minimal keep-alive HTTP GET client shared by the proxy and the client."""

from __future__ import annotations

import http.client
import threading
from urllib.parse import urlsplit

from .errors import NetworkError

_RETRYABLE = (http.client.RemoteDisconnected, ConnectionResetError, BrokenPipeError,
              http.client.CannotSendRequest, http.client.BadStatusLine)


class Response:
    __slots__ = ("status", "headers", "body")

    def __init__(self, status: int, headers: dict[str, str], body: bytes):
        self.status = status
        self.headers = headers
        self.body = body

    def header(self, name: str, default: str | None = None) -> str | None:
        return self.headers.get(name.lower(), default)


class HttpSession:
    """One persistent connection per thread to a single base URL."""

    def __init__(self, base_url: str, timeout: float = 30.0):
        parts = urlsplit(base_url)
        if parts.scheme != "http" or not parts.hostname:
            raise ValueError(f"unsupported URL {base_url!r} (only http:// is supported)")
        self.base_url = base_url.rstrip("/")
        self.host = parts.hostname
        self.port = parts.port or 80
        self.prefix = parts.path.rstrip("/")
        self.timeout = timeout
        self._local = threading.local()

    def _conn(self) -> http.client.HTTPConnection:
        conn = getattr(self._local, "conn", None)
        if conn is None:
            conn = http.client.HTTPConnection(self.host, self.port, timeout=self.timeout)
            self._local.conn = conn
        return conn

    def _drop(self) -> None:
        conn = getattr(self._local, "conn", None)
        if conn is not None:
            conn.close()
            self._local.conn = None

    def get(self, path: str, headers: dict[str, str] | None = None) -> Response:
        for attempt in (0, 1):
            conn = self._conn()
            try:
                conn.request("GET", self.prefix + path, headers=headers or {})
                resp = conn.getresponse()
                body = resp.read()
            except _RETRYABLE as exc:
                # stale keep-alive connection: reconnect once
                self._drop()
                if attempt:
                    raise NetworkError(f"GET {self.base_url}{path}: {exc}") from exc
                continue
            except (OSError, http.client.HTTPException) as exc:
                self._drop()
                raise NetworkError(f"GET {self.base_url}{path}: {exc}") from exc
            if resp.will_close:
                self._drop()
            return Response(resp.status, {k.lower(): v for k, v in resp.getheaders()}, body)
        raise AssertionError("unreachable")

    def close(self) -> None:
        self._drop()
