"""Source adapters: turn a legacy source into a Document.

Every failure surfaces as exactly one of SourceUnavailable,
SourceTimeout, SourceMalformed, HttpStatus, DependencyUnsatisfied or
TransformError; the cache engine's fallback rules match on that class.
"""

from __future__ import annotations

import http.client
import os
import socket
import time
import urllib.error
import urllib.request
import uuid
from dataclasses import dataclass, field
from typing import Callable, Optional

from .document import NAME_RE, Document, Node, doc_parse, doc_serialize
from .errors import (DependencyUnsatisfied, HttpStatus, IoError, NotWritable, ParseError,
                     SourceMalformed, SourceTimeout, SourceUnavailable)


@dataclass(frozen=True)
class AdapterSpec:
    kind: str                          # file | http | table | derived
    path: Optional[str] = None
    format: str = "xml"                # file: xml | json | csv
    writable: bool = False
    url: Optional[str] = None
    headers: tuple = ()
    expect_format: str = "xml"
    delimiter: str = ","
    has_header: bool = True
    row_element: str = "row"
    table_element: str = "table"
    base_views: tuple = ()
    transform: object = None           # TransformTemplate
    join: object = None                # JoinSpec, for composed site views


@dataclass
class GenerationContext:
    bases: dict = field(default_factory=dict)
    deadline: Optional[float] = None                 # time.monotonic() value
    resolve_path: Callable[[str], str] = lambda p: p

    def remaining(self) -> Optional[float]:
        if self.deadline is None:
            return None
        return self.deadline - time.monotonic()


# -- file / table ------------------------------------------------------------

def _read_bytes(path: str) -> bytes:
    try:
        with open(path, "rb") as fh:
            return fh.read()
    except OSError as exc:
        raise SourceUnavailable(f"cannot read {path}: {exc.strerror or exc}") from exc


def _parse(data: bytes, fmt: str, what: str) -> Document:
    try:
        return doc_parse(data, fmt)
    except ParseError as exc:
        raise SourceMalformed(f"{what}: {exc}") from exc


def table_from_bytes(data: bytes, delimiter: str = ",", has_header: bool = True,
                     table_element: str = "table", row_element: str = "row") -> Document:
    try:
        text = data.decode("utf-8")
    except UnicodeDecodeError as exc:
        raise SourceMalformed(f"invalid UTF-8 at byte {exc.start}") from exc
    lines = text.split("\n")
    if lines and lines[-1] == "":
        lines.pop()
    rows = [line[:-1] if line.endswith("\r") else line for line in lines]
    cells = [r.split(delimiter) for r in rows]
    if not cells:
        return Document(Node(table_element))
    if has_header:
        header, cells = cells[0], cells[1:]
        for h in header:
            if not NAME_RE.match(h):
                raise SourceMalformed(f"header {h!r} is not a valid attribute name")
        if len(set(header)) != len(header):
            raise SourceMalformed("duplicate header names")
    else:
        header = [f"col{i + 1}" for i in range(len(cells[0]))]
    out = []
    for lineno, row in enumerate(cells, start=2 if has_header else 1):
        if len(row) != len(header):
            raise SourceMalformed(f"line {lineno}: {len(row)} cells, expected {len(header)}")
        out.append(Node(row_element, tuple(zip(header, row))))
    return Document(Node(table_element, (), tuple(out)))


def table_adapter(path: str, delimiter: str = ",", has_header: bool = True,
                  table_element: str = "table", row_element: str = "row") -> Document:
    return table_from_bytes(_read_bytes(path), delimiter, has_header, table_element, row_element)


def file_adapter(path: str, fmt: str = "xml") -> Document:
    if fmt == "csv":
        return table_adapter(path)
    return _parse(_read_bytes(path), fmt, path)


# -- http --------------------------------------------------------------------

# sources are reached directly, never through an environment proxy
_opener = urllib.request.build_opener(urllib.request.ProxyHandler({}))


def http_adapter(url: str, headers=(), expect_format: str = "xml",
                 deadline: Optional[float] = None) -> Document:
    timeout = None
    if deadline is not None:
        timeout = deadline - time.monotonic()
        if timeout <= 0:
            raise SourceTimeout(f"deadline passed before requesting {url}")
    req = urllib.request.Request(url, headers=dict(headers), method="GET")
    try:
        with _opener.open(req, timeout=timeout) as resp:
            body = resp.read()
    except urllib.error.HTTPError as exc:
        exc.close()
        raise HttpStatus(exc.code, url) from None
    except urllib.error.URLError as exc:
        if isinstance(exc.reason, (socket.timeout, TimeoutError)):
            raise SourceTimeout(f"{url}: timed out") from None
        raise SourceUnavailable(f"{url}: {exc.reason}") from None
    except (socket.timeout, TimeoutError):
        raise SourceTimeout(f"{url}: timed out") from None
    except (OSError, http.client.HTTPException) as exc:
        raise SourceUnavailable(f"{url}: {exc!r}") from None
    if deadline is not None and time.monotonic() > deadline:
        raise SourceTimeout(f"{url}: response arrived after deadline")
    return _parse(body, expect_format, url)


# -- derived -----------------------------------------------------------------

def derived_adapter(base_contents: dict, transform) -> Document:
    if len(base_contents) == 1:
        (doc,) = base_contents.values()
    else:
        wrapped = tuple(Node("base", (("view", name),), (d.root,)) for name, d in base_contents.items())
        doc = Document(Node("bases", (), wrapped))
    return transform.apply(doc)


def adapter_generate(spec: AdapterSpec, ctx: Optional[GenerationContext] = None) -> Document:
    ctx = ctx or GenerationContext()
    if spec.kind == "file":
        return file_adapter(ctx.resolve_path(spec.path), spec.format)
    if spec.kind == "table":
        return table_adapter(ctx.resolve_path(spec.path), spec.delimiter, spec.has_header,
                             spec.table_element, spec.row_element)
    if spec.kind == "http":
        return http_adapter(spec.url, spec.headers, spec.expect_format, ctx.deadline)
    if spec.kind == "derived":
        missing = [b for b in spec.base_views if b not in ctx.bases]
        if missing:
            raise DependencyUnsatisfied(f"no content for base views {', '.join(missing)}")
        contents = {b: ctx.bases[b] for b in spec.base_views}
        if spec.join is not None:
            from .composition import join_by_key
            return join_by_key(spec.join, contents)
        down = [b for b, d in contents.items() if not isinstance(d, Document)]
        if down:
            raise DependencyUnsatisfied(f"base views unavailable: {', '.join(down)}")
        return derived_adapter(contents, spec.transform)
    raise ValueError(f"unknown adapter kind {spec.kind!r}")


# -- writes ------------------------------------------------------------------

class LocalFs:
    """Filesystem operations used for atomic writes; swapped out by fault injection."""

    def open_temp(self, path: str):
        return open(path, "wb")

    def replace(self, src: str, dst: str) -> None:
        os.replace(src, dst)

    def remove(self, path: str) -> None:
        try:
            os.remove(path)
        except FileNotFoundError:
            pass


def write_atomic(path: str, data: bytes, fs: Optional[LocalFs] = None) -> None:
    fs = fs or LocalFs()
    tmp = f"{path}.{uuid.uuid4().hex[:8]}.tmp"
    try:
        with fs.open_temp(tmp) as fh:
            fh.write(data)
            fh.flush()
            os.fsync(fh.fileno())
        fs.replace(tmp, path)
    except OSError as exc:
        fs.remove(tmp)
        raise IoError(f"writing {path}: {os.strerror(exc.errno) if exc.errno else exc}") from exc


def write_view(spec: AdapterSpec, doc: Document, resolve_path=None, fs: Optional[LocalFs] = None,
               on_write: Optional[Callable[[], None]] = None) -> None:
    if spec.kind != "file" or not spec.writable or spec.format not in ("xml", "json"):
        raise NotWritable(f"{spec.kind} adapter is not writable")
    path = (resolve_path or (lambda p: p))(spec.path)
    write_atomic(path, doc_serialize(doc, spec.format), fs)
    if on_write is not None:
        on_write()

