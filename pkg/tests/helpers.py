"""Small builders shared by the engine, composition and service tests."""

import json

from viewcache.config import config_load
from viewcache.engine import CacheEngine


def view(name, adapter, cache=None, triggers=(), fallbacks=(), depends_on=()):
    v = {"name": name, "adapter": adapter, "cache": cache or {"type": "memory"}}
    if triggers:
        v["triggers"] = list(triggers)
    if fallbacks:
        v["fallbacks"] = list(fallbacks)
    if depends_on:
        v["depends_on"] = list(depends_on)
    return v


def http(url, fmt="xml"):
    return {"kind": "http", "url": url, "expect_format": fmt}


def derived(bases, transform):
    return {"kind": "derived", "base_views": list(bases), "transform": transform}


def config(tmp_path, views, joins=(), schemas=None):
    raw = {"data_dir": str(tmp_path), "views": list(views), "joins": list(joins),
           "schemas": schemas or {}}
    return config_load(json.dumps(raw), str(tmp_path))


def engine(tmp_path, views, clock=None, joins=(), schemas=None, **kw):
    return CacheEngine(config(tmp_path, views, joins, schemas), clock=clock, **kw)


COPY = '<copy vf:value-of="/*/@v"/>'


# -- http client ---------------------------------------------------------------

import urllib.error
import urllib.request

_opener = urllib.request.build_opener(urllib.request.ProxyHandler({}))


class Reply:
    def __init__(self, status, headers, body):
        self.status = status
        self.headers = headers
        self.body = body

    def json(self):
        return json.loads(self.body)


def call(base, method, path, body=None, headers=None):
    req = urllib.request.Request(base + path, data=body, method=method, headers=headers or {})
    try:
        with _opener.open(req, timeout=10) as r:
            return Reply(r.status, r.headers, r.read())
    except urllib.error.HTTPError as e:
        with e:
            return Reply(e.code, e.headers, e.read())
