import pytest

from viewcache.api import ApiServer, ERROR_STATUS, negotiate
from viewcache.document import doc_equal, doc_parse
from viewcache.simulator import Fail, Respond, Scenario

from helpers import COPY, call, derived, engine, http, view


@pytest.fixture
def api(tmp_path, clock, sim):
    (tmp_path / "sites.xml").write_text('<sites><site name="A" v="1"/></sites>')
    (tmp_path / "a.xml").write_text('<a v="1"/>')
    sim.set_scenario("/bad", Scenario([Respond("<ok/>"), Fail(503)]))
    g = {"type": "memory", "group": "g"}
    views = [
        view("sites", {"kind": "file", "path": "sites.xml", "writable": True},
             triggers=[{"kind": "on_read"}, {"kind": "on_write"}]),
        view("ttl", {"kind": "file", "path": "a.xml"}, cache={"type": "memory", "ttl_ms": 100}),
        view("a", {"kind": "file", "path": "a.xml"}, cache=g,
             triggers=[{"kind": "notification", "event": "e"}]),
        view("b", derived(["a"], COPY), cache=g),
        view("ro", {"kind": "file", "path": "a.xml"}),
        view("flaky", http(sim.url("/bad"))),
        view("empty", {"kind": "file", "path": "a.xml"}),
    ]
    e = engine(tmp_path, views, clock)
    server = ApiServer(e).start()
    yield server
    server.stop()


def test_listing(api):
    r = call(api.url, "GET", "/views")
    assert r.status == 200
    assert {row["name"] for row in r.json()} == {"sites", "ttl", "a", "b", "ro", "flaky", "empty"}


def test_get_view_xml_and_json_agree(api):
    x = call(api.url, "GET", "/views/sites")
    j = call(api.url, "GET", "/views/sites", headers={"Accept": "application/json"})
    assert x.status == j.status == 200
    assert x.headers["Content-Type"].startswith("application/xml")
    assert j.headers["Content-Type"].startswith("application/json")
    assert x.headers["X-Generation"] == j.headers["X-Generation"] == "1"
    assert doc_equal(doc_parse(x.body, "xml"), doc_parse(j.body, "json"))
    assert x.headers["X-Generated-At"].endswith("Z")
    assert x.headers["X-Age-Ms"] == "0"


def test_refresh_and_notify(api):
    r = call(api.url, "POST", "/views/ttl/refresh")
    assert r.status == 200 and r.json() == {"outcome": "refreshed", "generation": 1}
    r = call(api.url, "POST", "/notify/e")
    assert r.json() == {"triggered": ["a"]}


def test_snapshot(api):
    call(api.url, "POST", "/views/a/refresh")
    r = call(api.url, "GET", "/snapshot?views=a,b")
    body = r.json()
    assert r.status == 200
    assert body["a"]["epoch"] == body["b"]["epoch"] == 1
    assert body["b"]["content"] == {"copy": {"#text": "1"}}


def test_transform(api):
    tpl = b'<names><n vf:for-each="/sites/site" vf:value-of="@name"/></names>'
    r = call(api.url, "POST", "/views/sites/transform", tpl)
    assert r.status == 200
    assert doc_equal(doc_parse(r.body), doc_parse(b"<names><n>A</n></names>"))


def test_put_xml_and_json(api):
    r = call(api.url, "PUT", "/views/sites", b'<sites><site name="Z"/></sites>',
             {"Content-Type": "application/xml"})
    assert r.status == 204
    got = call(api.url, "GET", "/views/sites")
    assert doc_parse(got.body).root.children[0].get("name") == "Z"
    r = call(api.url, "PUT", "/views/sites", b'{"sites":{"site":{"@name":"Y"}}}',
             {"Content-Type": "application/json"})
    assert r.status == 204
    assert b'name="Y"' in call(api.url, "GET", "/views/sites").body


def _expect(r, code):
    assert r.status == ERROR_STATUS[code], (r.status, r.body)
    assert r.json()["code"] == code
    assert r.json()["detail"]


def test_error_code_matrix(api, clock):
    _expect(call(api.url, "GET", "/views/nope"), "UNKNOWN_VIEW")
    _expect(call(api.url, "POST", "/views/nope/refresh"), "UNKNOWN_VIEW")
    call(api.url, "POST", "/views/ttl/refresh")
    clock.advance(0.2)
    _expect(call(api.url, "GET", "/views/ttl"), "OUTDATED_CACHE")
    call(api.url, "POST", "/views/flaky/refresh")
    _expect(call(api.url, "POST", "/views/flaky/refresh"), "SOURCE_ERROR")
    _expect(call(api.url, "GET", "/views/flaky"), "VIEW_IN_ERROR")
    _expect(call(api.url, "GET", "/views/empty"), "VIEW_IN_ERROR")
    _expect(call(api.url, "GET", "/snapshot?views=a,b"), "SNAPSHOT_UNAVAILABLE")
    _expect(call(api.url, "POST", "/views/sites/transform", b"<r vf:bogus='1'/>"), "BAD_TRANSFORM")
    _expect(call(api.url, "PUT", "/views/ro", b"<a/>"), "NOT_WRITABLE")
    _expect(call(api.url, "PUT", "/views/sites", b"<sites>"), "BAD_DOCUMENT")
    _expect(call(api.url, "GET", "/nothing/here"), "NOT_FOUND")


def test_negotiate():
    assert negotiate(None) == "xml"
    assert negotiate("application/json") == "json"
    assert negotiate("text/html, application/json;q=0.9") == "json"
    assert negotiate("*/*") == "xml"
    assert negotiate("image/png") == "xml"
