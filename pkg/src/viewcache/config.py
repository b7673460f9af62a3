"""Service configuration: a single JSON document describing every view.

Shape::

    {
      "listen": "127.0.0.1:8080",
      "data_dir": ".",
      "schemas": {"sites": {"root": "sites", "elements": {...}}},
      "views": [
        {"name": "...",
         "adapter": {"kind": "file|http|table|derived", ...},
         "cache": {"type": "memory|disk|none", "ttl_ms": 1000, "timeout_ms": 10000,
                   "disk_path": "...", "validation": "none|wellformed|schema",
                   "schema": "...", "group": "..."},
         "triggers": [{"kind": "interval", "every_ms": 500}, ...],
         "fallbacks": [{"match": "HttpStatus(500-599)", "action": "retry",
                        "retries": 2, "backoff_ms": 10, "final": "error"}],
         "depends_on": ["..."]}
      ],
      "joins": [{"name": "...", "sources": [{"view": ..., "key_path": ..., "record_path": ...}],
                 "key_attr": "name", "output_root": "sites", "entry_element": "site"}]
    }

Durations are integer milliseconds.  ``${DATA_DIR}`` in paths expands
to the data directory; other relative paths resolve against it.
"""

from __future__ import annotations

import json
import os
import re
from dataclasses import dataclass, field
from typing import Optional

from .adapters import AdapterSpec
from .composition import JoinSpec, JoinSource, site_view_config
from .document import NAME_RE, serialize_text
from .errors import (ConfigSemanticError, ConfigSyntaxError, PathSyntaxError, TransformError)
from .query import TransformTemplate, vpath_parse
from .schema import CARDINALITIES, ElementRule, StructSchema

CACHE_TYPES = ("memory", "disk", "none")
VALIDATION_MODES = ("none", "wellformed", "schema")
TRIGGER_KINDS = ("interval", "notification", "on_read", "on_write", "on_expiry", "on_dependency")
ACTIONS = ("ignore", "error", "retry")
ERROR_CLASSES = ("SourceUnavailable", "SourceTimeout", "HttpStatus", "SourceMalformed",
                 "ValidationError", "Any")
DEFAULT_TIMEOUT_MS = 10_000

_STATUS_PATTERN = re.compile(r"HttpStatus(?:\((\d{3})(?:-(\d{3}))?\))?\Z")


@dataclass(frozen=True)
class CachePolicy:
    cache_type: str = "memory"
    disk_path: Optional[str] = None
    ttl_ms: Optional[int] = None
    timeout_ms: int = DEFAULT_TIMEOUT_MS
    validation: str = "none"
    schema_ref: Optional[str] = None
    group: Optional[str] = None


@dataclass(frozen=True)
class TriggerRule:
    kind: str
    every_ms: Optional[int] = None
    event: Optional[str] = None
    source: Optional[str] = None


@dataclass(frozen=True)
class FallbackRule:
    match: str
    action: str
    retries: int = 0
    backoff_ms: int = 0
    final: str = "error"

    def matches(self, exc: BaseException) -> bool:
        if self.match == "Any":
            return True
        cls = getattr(exc, "error_class", type(exc).__name__)
        m = _STATUS_PATTERN.match(self.match)
        if m:
            if cls != "HttpStatus":
                return False
            if m.group(1) is None:
                return True
            lo = int(m.group(1))
            hi = int(m.group(2)) if m.group(2) else lo
            return lo <= exc.code <= hi
        return cls == self.match


IMPLICIT_FALLBACK = FallbackRule("Any", "error")


@dataclass(frozen=True)
class ViewConfig:
    name: str
    adapter: AdapterSpec
    policy: CachePolicy = CachePolicy()
    triggers: tuple = ()
    fallbacks: tuple = ()
    depends_on: tuple = ()
    join_name: Optional[str] = None      # set on views expanded from a join

    @property
    def dependencies(self) -> tuple:
        deps = list(self.depends_on)
        for b in self.adapter.base_views:
            if b not in deps:
                deps.append(b)
        return tuple(deps)

    def fallback_for(self, exc: BaseException) -> FallbackRule:
        for rule in self.fallbacks:
            if rule.matches(exc):
                return rule
        return IMPLICIT_FALLBACK


@dataclass(frozen=True)
class ServiceConfig:
    views: tuple = ()
    schemas: dict = field(default_factory=dict)
    joins: tuple = ()
    listen: str = "127.0.0.1:8080"
    data_dir: str = "."
    base_dir: str = field(default=".", compare=False)

    def all_views(self) -> tuple:
        return tuple(self.views) + tuple(site_view_config(j) for j in self.joins)

    def view(self, name: str) -> Optional[ViewConfig]:
        for v in self.all_views():
            if v.name == name:
                return v
        return None

    @property
    def data_path(self) -> str:
        return os.path.normpath(os.path.join(self.base_dir, self.data_dir))

    def resolve_path(self, path: str) -> str:
        path = path.replace("${DATA_DIR}", self.data_path)
        return os.path.normpath(os.path.join(self.data_path, path))

    @property
    def host_port(self) -> tuple:
        host, _, port = self.listen.rpartition(":")
        return host or "127.0.0.1", int(port)


# -- parsing -----------------------------------------------------------------

class _Obj:
    """Typed access to one JSON object with location tracking."""

    def __init__(self, value, loc: str, allowed: tuple):
        if not isinstance(value, dict):
            raise ConfigSyntaxError(loc, "expected an object")
        unknown = sorted(set(value) - set(allowed))
        if unknown:
            raise ConfigSyntaxError(f"{loc}.{unknown[0]}", "unknown key")
        self.value = value
        self.loc = loc

    def at(self, key):
        return f"{self.loc}.{key}"

    def get(self, key, kind, default=None, required=False):
        if key not in self.value or self.value[key] is None:
            if required:
                raise ConfigSyntaxError(self.at(key), "required")
            return default
        v = self.value[key]
        if kind is int and (isinstance(v, bool) or not isinstance(v, int)):
            raise ConfigSyntaxError(self.at(key), "expected an integer")
        if kind is not int and not isinstance(v, kind):
            raise ConfigSyntaxError(self.at(key), f"expected {kind.__name__}")
        return v

    def text(self, key, default=None, required=False):
        return self.get(key, str, default, required)

    def choice(self, key, options, default=None, required=False):
        v = self.text(key, default, required)
        if v is not None and v not in options:
            raise ConfigSyntaxError(self.at(key), f"must be one of {', '.join(options)}")
        return v

    def millis(self, key, default=None):
        v = self.get(key, int, default)
        if v is not None and v < 0:
            raise ConfigSyntaxError(self.at(key), "must be >= 0")
        return v

    def names(self, key):
        items = self.get(key, list, [])
        for i, x in enumerate(items):
            if not isinstance(x, str):
                raise ConfigSyntaxError(f"{self.at(key)}[{i}]", "expected string")
        return tuple(items)


def _element_name(value: str, loc: str) -> str:
    if not NAME_RE.match(value):
        raise ConfigSyntaxError(loc, f"invalid element name {value!r}")
    return value


def _path(value: str, loc: str):
    try:
        return vpath_parse(value)
    except PathSyntaxError as exc:
        raise ConfigSyntaxError(loc, str(exc)) from None


def _adapter(value, loc: str) -> AdapterSpec:
    if not isinstance(value, dict):
        raise ConfigSyntaxError(loc, "expected an object")
    kind = value.get("kind")
    if kind not in ("file", "http", "table", "derived"):
        raise ConfigSyntaxError(f"{loc}.kind", "must be one of file, http, table, derived")
    if kind == "file":
        o = _Obj(value, loc, ("kind", "path", "format", "writable"))
        return AdapterSpec("file", path=o.text("path", required=True),
                           format=o.choice("format", ("xml", "json", "csv"), "xml"),
                           writable=o.get("writable", bool, False))
    if kind == "http":
        o = _Obj(value, loc, ("kind", "url", "method", "headers", "expect_format"))
        o.choice("method", ("GET",), "GET")
        headers = o.get("headers", dict, {})
        for k, v in headers.items():
            if not isinstance(v, str):
                raise ConfigSyntaxError(f"{o.at('headers')}.{k}", "expected string")
        return AdapterSpec("http", url=o.text("url", required=True),
                           headers=tuple(headers.items()),
                           expect_format=o.choice("expect_format", ("xml", "json"), "xml"))
    if kind == "table":
        o = _Obj(value, loc, ("kind", "path", "delimiter", "has_header", "row_element", "table_element"))
        delim = o.text("delimiter", ",")
        if len(delim) != 1 or delim in "\r\n":
            raise ConfigSyntaxError(o.at("delimiter"), "must be a single character")
        return AdapterSpec("table", path=o.text("path", required=True), delimiter=delim,
                           has_header=o.get("has_header", bool, True),
                           row_element=_element_name(o.text("row_element", "row"), o.at("row_element")),
                           table_element=_element_name(o.text("table_element", "table"), o.at("table_element")))
    o = _Obj(value, loc, ("kind", "base_views", "transform"))
    src = o.text("transform", required=True)
    try:
        tpl = TransformTemplate.parse(src)
    except TransformError as exc:
        raise ConfigSyntaxError(o.at("transform"), str(exc)) from None
    return AdapterSpec("derived", base_views=o.names("base_views"), transform=tpl)


def _policy(value, loc: str) -> CachePolicy:
    o = _Obj(value, loc, ("type", "ttl_ms", "timeout_ms", "disk_path", "validation", "schema", "group"))
    return CachePolicy(cache_type=o.choice("type", CACHE_TYPES, "memory"),
                       disk_path=o.text("disk_path"),
                       ttl_ms=o.millis("ttl_ms"),
                       timeout_ms=o.millis("timeout_ms", DEFAULT_TIMEOUT_MS),
                       validation=o.choice("validation", VALIDATION_MODES, "none"),
                       schema_ref=o.text("schema"),
                       group=o.text("group"))


def _trigger(value, loc: str) -> TriggerRule:
    o = _Obj(value, loc, ("kind", "every_ms", "event", "source"))
    kind = o.choice("kind", TRIGGER_KINDS, required=True)
    if kind == "interval":
        every = o.millis("every_ms")
        if not every:
            raise ConfigSyntaxError(o.at("every_ms"), "interval needs every_ms > 0")
        return TriggerRule(kind, every_ms=every)
    if kind == "notification":
        return TriggerRule(kind, event=o.text("event", required=True))
    if kind == "on_dependency":
        return TriggerRule(kind, source=o.text("source", required=True))
    return TriggerRule(kind)


def _fallback(value, loc: str) -> FallbackRule:
    o = _Obj(value, loc, ("match", "action", "retries", "backoff_ms", "final"))
    match = o.text("match", required=True)
    if match not in ERROR_CLASSES and not _STATUS_PATTERN.match(match):
        raise ConfigSyntaxError(o.at("match"), f"unknown error class {match!r}")
    action = o.choice("action", ACTIONS, required=True)
    return FallbackRule(match, action, retries=o.millis("retries", 0),
                        backoff_ms=o.millis("backoff_ms", 0),
                        final=o.choice("final", ("error", "ignore"), "error"))


def _list(o: _Obj, key: str, parse) -> tuple:
    items = o.get(key, list, [])
    return tuple(parse(x, f"{o.at(key)}[{i}]") for i, x in enumerate(items))


def _view(value, loc: str) -> ViewConfig:
    o = _Obj(value, loc, ("name", "adapter", "cache", "triggers", "fallbacks", "depends_on"))
    return ViewConfig(name=o.text("name", required=True),
                      adapter=_adapter(o.get("adapter", dict, required=True), o.at("adapter")),
                      policy=_policy(o.get("cache", dict, {}), o.at("cache")),
                      triggers=_list(o, "triggers", _trigger),
                      fallbacks=_list(o, "fallbacks", _fallback),
                      depends_on=o.names("depends_on"))


def _schema(value, loc: str) -> StructSchema:
    o = _Obj(value, loc, ("root", "elements"))
    root = _element_name(o.text("root", required=True), o.at("root"))
    elements = o.get("elements", dict, {})
    rules = {}
    for name, rv in elements.items():
        rloc = f"{o.at('elements')}.{name}"
        _element_name(name, rloc)
        r = _Obj(rv, rloc, ("required_attrs", "children", "allow_text"))
        children = r.get("children", dict, {})
        for cname, card in children.items():
            _element_name(cname, f"{rloc}.children.{cname}")
            if card not in CARDINALITIES:
                raise ConfigSyntaxError(f"{rloc}.children.{cname}", f"must be one of {', '.join(CARDINALITIES)}")
        rules[name] = ElementRule(frozenset(r.names("required_attrs")), tuple(children.items()),
                                  r.get("allow_text", bool, False))
    return StructSchema(root, rules)


def _join(value, loc: str) -> JoinSpec:
    o = _Obj(value, loc, ("name", "sources", "key_attr", "output_root", "entry_element",
                          "cache", "triggers", "fallbacks"))
    sources = []
    for i, sv in enumerate(o.get("sources", list, required=True)):
        sloc = f"{o.at('sources')}[{i}]"
        s = _Obj(sv, sloc, ("view", "key_path", "record_path"))
        sources.append(JoinSource(s.text("view", required=True),
                                  _path(s.text("key_path", required=True), s.at("key_path")),
                                  _path(s.text("record_path", required=True), s.at("record_path"))))
    key_attr = o.text("key_attr", "name")
    if not NAME_RE.match(key_attr):
        raise ConfigSyntaxError(o.at("key_attr"), "invalid attribute name")
    return JoinSpec(name=o.text("name", required=True), sources=tuple(sources), key_attr=key_attr,
                    output_root=_element_name(o.text("output_root", "sites"), o.at("output_root")),
                    entry_element=_element_name(o.text("entry_element", "site"), o.at("entry_element")),
                    policy=_policy(o.get("cache", dict, {}), o.at("cache")),
                    triggers=_list(o, "triggers", _trigger),
                    fallbacks=_list(o, "fallbacks", _fallback))


def config_parse(text, base_dir: str = ".") -> ServiceConfig:
    """Parse without semantic validation."""
    if isinstance(text, (bytes, bytearray)):
        try:
            text = bytes(text).decode("utf-8")
        except UnicodeDecodeError as exc:
            raise ConfigSyntaxError(f"byte {exc.start}", "invalid UTF-8") from None
    try:
        raw = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigSyntaxError(f"line {exc.lineno} column {exc.colno}", exc.msg) from None
    except RecursionError:
        raise ConfigSyntaxError("$", "nesting too deep") from None
    o = _Obj(raw, "$", ("listen", "data_dir", "schemas", "views", "joins"))
    listen = o.text("listen", "127.0.0.1:8080")
    host, sep, port = listen.rpartition(":")
    if not sep or not port.isdigit() or not (0 <= int(port) <= 65535):
        raise ConfigSyntaxError(o.at("listen"), "expected host:port")
    schemas = {}
    for name, sv in o.get("schemas", dict, {}).items():
        schemas[name] = _schema(sv, f"$.schemas.{name}")
    return ServiceConfig(views=_list(o, "views", _view), schemas=schemas,
                         joins=_list(o, "joins", _join), listen=listen,
                         data_dir=o.text("data_dir", "."), base_dir=base_dir)


# -- validation --------------------------------------------------------------

def _cycles(graph: dict) -> list:
    """One cycle path per strongly connected component (Tarjan)."""
    index, low, on_stack, stack, sccs = {}, {}, set(), [], []
    counter = [0]

    def strongconnect(root):
        work = [(root, iter(graph.get(root, ())))]
        index[root] = low[root] = counter[0]
        counter[0] += 1
        stack.append(root)
        on_stack.add(root)
        while work:
            v, it = work[-1]
            advanced = False
            for w in it:
                if w not in graph:
                    continue
                if w not in index:
                    index[w] = low[w] = counter[0]
                    counter[0] += 1
                    stack.append(w)
                    on_stack.add(w)
                    work.append((w, iter(graph.get(w, ()))))
                    advanced = True
                    break
                if w in on_stack:
                    low[v] = min(low[v], index[w])
            if advanced:
                continue
            work.pop()
            if work:
                low[work[-1][0]] = min(low[work[-1][0]], low[v])
            if low[v] == index[v]:
                comp = []
                while True:
                    w = stack.pop()
                    on_stack.discard(w)
                    comp.append(w)
                    if w == v:
                        break
                sccs.append(comp)

    for v in graph:
        if v not in index:
            strongconnect(v)

    cycles = []
    for comp in sccs:
        members = set(comp)
        start = min(comp, key=list(graph).index)
        if len(comp) == 1 and start not in graph.get(start, ()):
            continue
        # walk inside the component until a node repeats
        path, seen = [start], {start: 0}
        node = start
        while True:
            node = next(w for w in graph[node] if w in members)
            if node in seen:
                cycle = path[seen[node]:] + [node]
                break
            seen[node] = len(path)
            path.append(node)
        cycles.append(cycle)
    return cycles


def config_validate(cfg: ServiceConfig) -> list:
    """Return a list of error strings; empty means valid."""
    errors = []
    views = cfg.all_views()
    names = [v.name for v in views]
    declared = set(names)
    for n in sorted({n for n in names if names.count(n) > 1}):
        errors.append(f"duplicate view name {n!r}")

    for j in cfg.joins:
        for s in j.sources:
            if s.view not in declared:
                errors.append(f"join {j.name!r}: source view {s.view!r} is not declared")

    groups = {}
    for v in views:
        where = f"view {v.name!r}"
        p, a = v.policy, v.adapter
        if p.cache_type == "disk" and not p.disk_path:
            errors.append(f"{where}: cache type disk requires disk_path")
        if p.validation == "schema" and not p.schema_ref:
            errors.append(f"{where}: schema validation requires a schema")
        if p.schema_ref and p.schema_ref not in cfg.schemas:
            errors.append(f"{where}: unknown schema {p.schema_ref!r}")
        if p.cache_type == "none" and p.ttl_ms is not None:
            errors.append(f"{where}: cache type none forbids ttl")
        if p.cache_type == "none" and p.group:
            errors.append(f"{where}: cache type none forbids consistency group")
        if p.group:
            groups.setdefault(p.group, []).append(v)
        if a.kind == "derived" and not a.base_views:
            errors.append(f"{where}: derived adapter needs at least one base view")
        if a.kind == "file" and a.format == "csv" and a.writable:
            errors.append(f"{where}: csv files are read-only")
        if a.kind == "http" and not a.url.startswith(("http://", "https://")):
            errors.append(f"{where}: url must be http(s)")
        if v.join_name is None:
            for dep in v.dependencies:
                if dep not in declared:
                    errors.append(f"{where}: dependency {dep!r} is not declared")
        deps = set(v.dependencies)
        for t in v.triggers:
            if t.kind == "on_dependency" and t.source not in deps:
                errors.append(f"{where}: on_dependency source {t.source!r} is not a declared dependency")

    for g, members in groups.items():
        periods = {t.every_ms for m in members for t in m.triggers if t.kind == "interval"}
        if len(periods) > 1:
            errors.append(f"group {g!r}: members have conflicting interval periods {sorted(periods)}")

    graph = {v.name: [d for d in v.dependencies if d in declared] for v in views}
    for cycle in _cycles(graph):
        errors.append("dependency cycle: " + " -> ".join(cycle))
    return errors


def config_load(text, base_dir: str = ".") -> ServiceConfig:
    cfg = config_parse(text, base_dir)
    errors = config_validate(cfg)
    if errors:
        raise ConfigSemanticError(errors)
    return cfg


def load_file(path: str) -> ServiceConfig:
    with open(path, "rb") as fh:
        data = fh.read()
    return config_load(data, base_dir=os.path.dirname(os.path.abspath(path)))


# -- dumping -----------------------------------------------------------------

def _dump_policy(p: CachePolicy) -> dict:
    out = {"type": p.cache_type, "timeout_ms": p.timeout_ms, "validation": p.validation}
    for key, val in (("ttl_ms", p.ttl_ms), ("disk_path", p.disk_path),
                     ("schema", p.schema_ref), ("group", p.group)):
        if val is not None:
            out[key] = val
    return out


def _dump_trigger(t: TriggerRule) -> dict:
    out = {"kind": t.kind}
    for key, val in (("every_ms", t.every_ms), ("event", t.event), ("source", t.source)):
        if val is not None:
            out[key] = val
    return out


def _dump_fallback(f: FallbackRule) -> dict:
    return {"match": f.match, "action": f.action, "retries": f.retries,
            "backoff_ms": f.backoff_ms, "final": f.final}


def _dump_adapter(a: AdapterSpec) -> dict:
    if a.kind == "file":
        return {"kind": "file", "path": a.path, "format": a.format, "writable": a.writable}
    if a.kind == "http":
        return {"kind": "http", "url": a.url, "method": "GET", "headers": dict(a.headers),
                "expect_format": a.expect_format}
    if a.kind == "table":
        return {"kind": "table", "path": a.path, "delimiter": a.delimiter, "has_header": a.has_header,
                "row_element": a.row_element, "table_element": a.table_element}
    return {"kind": "derived", "base_views": list(a.base_views),
            "transform": serialize_text(a.transform.document, "xml")}


def config_dump(cfg: ServiceConfig) -> str:
    schemas = {}
    for name, s in cfg.schemas.items():
        schemas[name] = {"root": s.root, "elements": {
            el: {"required_attrs": sorted(r.required_attrs), "children": dict(r.children),
                 "allow_text": r.allow_text} for el, r in s.rules.items()}}
    views = [{"name": v.name, "adapter": _dump_adapter(v.adapter), "cache": _dump_policy(v.policy),
              "triggers": [_dump_trigger(t) for t in v.triggers],
              "fallbacks": [_dump_fallback(f) for f in v.fallbacks],
              "depends_on": list(v.depends_on)} for v in cfg.views]
    joins = [{"name": j.name, "key_attr": j.key_attr, "output_root": j.output_root,
              "entry_element": j.entry_element,
              "sources": [{"view": s.view, "key_path": s.key_path.source,
                           "record_path": s.record_path.source} for s in j.sources],
              "cache": _dump_policy(j.policy),
              "triggers": [_dump_trigger(t) for t in j.triggers],
              "fallbacks": [_dump_fallback(f) for f in j.fallbacks]} for j in cfg.joins]
    return json.dumps({"listen": cfg.listen, "data_dir": cfg.data_dir, "schemas": schemas,
                       "views": views, "joins": joins}, indent=2)
