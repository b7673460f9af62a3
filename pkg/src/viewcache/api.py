"""REST surface over a :class:`CacheEngine`.

Routes::

    GET  /views                      listing (JSON)
    GET  /views/{name}               content, Accept: application/xml (default) | application/json
    PUT  /views/{name}               write through a writable view
    POST /views/{name}/refresh       manual refresh
    POST /views/{name}/transform     apply a transform template (XML body)
    POST /notify/{event}             fire notification triggers
    GET  /snapshot?views=a,b         consistent multi-view read

No authentication: deploy behind a trusted boundary.
"""

from __future__ import annotations

import json
import logging
import threading
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer
from typing import Optional
from urllib.parse import parse_qs, unquote, urlsplit

from .clock import rfc3339
from .document import doc_parse, serialize_text
from .engine import CacheEngine
from .errors import (NotWritable, OutdatedCache, ParseError, SnapshotUnavailable, TransformError,
                     UnknownView, ViewCacheError, ViewInError)
from .query import TransformTemplate

log = logging.getLogger(__name__)

ERROR_STATUS = {
    "UNKNOWN_VIEW": 404,
    "OUTDATED_CACHE": 503,
    "VIEW_IN_ERROR": 502,
    "SNAPSHOT_UNAVAILABLE": 409,
    "BAD_TRANSFORM": 400,
    "NOT_WRITABLE": 405,
    "SOURCE_ERROR": 502,
    "BAD_DOCUMENT": 400,
    "NOT_FOUND": 404,
}


class ApiError(Exception):
    def __init__(self, code: str, detail: str = ""):
        self.code = code
        self.http_status = ERROR_STATUS[code]
        self.detail = detail
        super().__init__(f"{code}: {detail}")


def api_error_for(exc: Exception) -> ApiError:
    if isinstance(exc, ApiError):
        return exc
    if isinstance(exc, UnknownView):
        return ApiError("UNKNOWN_VIEW", str(exc))
    if isinstance(exc, OutdatedCache):
        return ApiError("OUTDATED_CACHE", str(exc))
    if isinstance(exc, ViewInError):
        return ApiError("VIEW_IN_ERROR", str(exc))
    if isinstance(exc, SnapshotUnavailable):
        return ApiError("SNAPSHOT_UNAVAILABLE", str(exc))
    if isinstance(exc, TransformError):
        return ApiError("BAD_TRANSFORM", str(exc))
    if isinstance(exc, NotWritable):
        return ApiError("NOT_WRITABLE", str(exc))
    return ApiError("SOURCE_ERROR", f"{type(exc).__name__}: {exc}")


def negotiate(accept: Optional[str]) -> str:
    if not accept:
        return "xml"
    for part in accept.split(","):
        mime = part.split(";")[0].strip().lower()
        if mime in ("application/json", "text/json"):
            return "json"
        if mime in ("application/xml", "text/xml", "*/*"):
            return "xml"
    return "xml"


CONTENT_TYPES = {"xml": "application/xml; charset=utf-8", "json": "application/json; charset=utf-8"}


class _Handler(BaseHTTPRequestHandler):
    server_version = "viewcache"
    protocol_version = "HTTP/1.1"

    @property
    def engine(self) -> CacheEngine:
        return self.server.engine

    def log_message(self, fmt, *args):
        log.debug("%s " + fmt, self.address_string(), *args)

    # -- plumbing ------------------------------------------------------------

    def _send(self, status: int, body: bytes, ctype: str, headers=()):
        self.send_response(status)
        self.send_header("Content-Type", ctype)
        self.send_header("Content-Length", str(len(body)))
        for k, v in headers:
            self.send_header(k, v)
        self.end_headers()
        if self.command != "HEAD":
            self.wfile.write(body)

    def _json(self, status: int, obj):
        self._send(status, json.dumps(obj).encode("utf-8"), CONTENT_TYPES["json"])

    def _error(self, err: ApiError):
        self._json(err.http_status, {"code": err.code, "detail": err.detail})

    def _body(self) -> bytes:
        length = int(self.headers.get("Content-Length") or 0)
        return self.rfile.read(length) if length else b""

    def _dispatch(self, method: str):
        parts = urlsplit(self.path)
        segs = [unquote(s) for s in parts.path.strip("/").split("/") if s]
        try:
            handler = self._route(method, segs)
            if handler is None:
                raise ApiError("NOT_FOUND", f"no route for {method} {parts.path}")
            handler(segs, parse_qs(parts.query))
        except Exception as exc:
            if not isinstance(exc, (ViewCacheError, ApiError)):
                log.exception("unhandled error for %s %s", method, self.path)
            self._error(api_error_for(exc))

    def _route(self, method: str, segs: list):
        n = len(segs)
        if method == "GET":
            if segs == ["views"]:
                return self.get_listing
            if n == 2 and segs[0] == "views":
                return self.get_view
            if segs == ["snapshot"]:
                return self.get_snapshot
        elif method == "POST":
            if n == 3 and segs[0] == "views" and segs[2] == "refresh":
                return self.post_refresh
            if n == 3 and segs[0] == "views" and segs[2] == "transform":
                return self.post_transform
            if n == 2 and segs[0] == "notify":
                return self.post_notify
        elif method == "PUT":
            if n == 2 and segs[0] == "views":
                return self.put_view
        return None

    def do_GET(self):
        self._dispatch("GET")

    def do_POST(self):
        self._dispatch("POST")

    def do_PUT(self):
        self._dispatch("PUT")

    # -- endpoints -----------------------------------------------------------

    def get_listing(self, segs, query):
        self._json(200, self.engine.listing())

    def get_view(self, segs, query):
        fmt = negotiate(self.headers.get("Accept"))
        doc, meta = self.engine.read_view(segs[1])
        self._send(200, serialize_text(doc, fmt).encode("utf-8"), CONTENT_TYPES[fmt], [
            ("X-Generation", str(meta.generation)),
            ("X-Generated-At", rfc3339(meta.generated_at)),
            ("X-Age-Ms", str(meta.age_ms)),
        ])

    def post_refresh(self, segs, query):
        outcome = self.engine.refresh_view(segs[1], "manual")
        if outcome.kind == "failed":
            raise ApiError("SOURCE_ERROR", f"{outcome.error_class}: {outcome.detail}")
        self._json(200, {"outcome": outcome.kind, "generation": outcome.generation})

    def post_notify(self, segs, query):
        self._json(200, {"triggered": self.engine.notify(segs[1])})

    def post_transform(self, segs, query):
        body = self._body()
        try:
            tpl = TransformTemplate.parse(body, "xml")
        except TransformError as exc:
            raise ApiError("BAD_TRANSFORM", str(exc)) from None
        doc, _ = self.engine.read_view(segs[1])
        out = tpl.apply(doc)
        fmt = negotiate(self.headers.get("Accept"))
        self._send(200, serialize_text(out, fmt).encode("utf-8"), CONTENT_TYPES[fmt])

    def get_snapshot(self, segs, query):
        names = [n for v in query.get("views", []) for n in v.split(",") if n]
        snap = self.engine.read_snapshot(names)
        # documents are embedded as their JSON wire form, verbatim
        members = []
        for name, (doc, meta) in snap.items():
            members.append(f'{json.dumps(name)}:{{"content":{serialize_text(doc, "json")},'
                           f'"generation":{meta.generation},"epoch":{meta.epoch}}}')
        self._send(200, ("{" + ",".join(members) + "}").encode("utf-8"), CONTENT_TYPES["json"])

    def put_view(self, segs, query):
        name = segs[1]
        self.engine._config(name)
        ctype = (self.headers.get("Content-Type") or "application/xml").lower()
        fmt = "json" if "json" in ctype else "xml"
        try:
            doc = doc_parse(self._body(), fmt)
        except ParseError as exc:
            raise ApiError("BAD_DOCUMENT", str(exc)) from None
        self.engine.write_view(name, doc)
        self.send_response(204)
        self.send_header("Content-Length", "0")
        self.end_headers()


class ApiServer(ThreadingHTTPServer):
    daemon_threads = True
    allow_reuse_address = True
    request_queue_size = 128

    def __init__(self, engine: CacheEngine, host: str = "127.0.0.1", port: int = 0):
        self.engine = engine
        super().__init__((host, port), _Handler)
        self._thread: Optional[threading.Thread] = None

    @property
    def port(self) -> int:
        return self.server_address[1]

    @property
    def url(self) -> str:
        return f"http://{self.server_address[0]}:{self.port}"

    def start(self) -> "ApiServer":
        self._thread = threading.Thread(target=self.serve_forever, args=(0.05,), name="viewcache-api", daemon=True)
        self._thread.start()
        return self

    def stop(self) -> None:
        self.shutdown()
        self.server_close()
        if self._thread is not None:
            self._thread.join(timeout=5)
