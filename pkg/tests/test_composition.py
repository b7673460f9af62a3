import random

import pytest

from viewcache.composition import JoinSource, JoinSpec, Unavailable, join_by_key, site_view_config
from viewcache.config import ServiceConfig, ViewConfig
from viewcache.adapters import AdapterSpec
from viewcache.document import Document, Node, doc_equal, doc_parse, doc_serialize
from viewcache.errors import CompositionError, ConfigError
from viewcache.query import vpath_parse

from helpers import engine, http, view
from viewcache.simulator import Fail, Respond, Scenario


def _src(name, record, key="@site"):
    return JoinSource(name, vpath_parse(key), vpath_parse(record))


SPEC = JoinSpec("summary", (_src("ggus", "/tickets/ticket"), _src("sam", "/probes/probe")))

GGUS = doc_parse(b'<tickets><ticket site="B" id="1"/><ticket site="A" id="2"/><ticket site="B" id="3"/></tickets>')
SAM = doc_parse(b'<probes><probe site="A" status="OK"/><probe site="C" status="CRIT"/></probes>')


def test_join_example():
    out = join_by_key(SPEC, {"ggus": GGUS, "sam": SAM})
    expected = doc_parse(
        b'<sites>'
        b'<site name="A"><source name="ggus" status="ok"><ticket site="A" id="2"/></source>'
        b'<source name="sam" status="ok"><probe site="A" status="OK"/></source></site>'
        b'<site name="B"><source name="ggus" status="ok"><ticket site="B" id="1"/><ticket site="B" id="3"/></source>'
        b'<source name="sam" status="ok"/></site>'
        b'<site name="C"><source name="ggus" status="ok"/>'
        b'<source name="sam" status="ok"><probe site="C" status="CRIT"/></source></site>'
        b'</sites>')
    assert doc_equal(out, expected)


def test_stale_and_unavailable_sources():
    out = join_by_key(SPEC, {"ggus": GGUS, "sam": Unavailable(SAM, 42.9)})
    src = out.root.children[0].children[1]
    assert (src.get("status"), src.get("age")) == ("stale", "42")
    assert len(src.children) == 1
    out = join_by_key(SPEC, {"ggus": GGUS, "sam": Unavailable()})
    assert [s.get("status") for s in out.root.children[0].children] == ["ok", "unavailable"]
    assert [s.get("name") for s in out.root.children] == ["A", "B"]


def test_record_without_key_is_an_error():
    with pytest.raises(CompositionError):
        join_by_key(SPEC, {"ggus": doc_parse(b"<tickets><ticket/></tickets>"), "sam": SAM})
    with pytest.raises(CompositionError):
        join_by_key(SPEC, {"ggus": GGUS})


def _flat_scan(spec, contents):
    """Oracle: for each key, rescan every source document end to end."""
    def recs(doc, src):
        root_name = src.record_path.steps[0].selector
        leaf = src.record_path.steps[1].selector
        if doc.root.name != root_name:
            return []
        return [(c.get("site"), c) for c in doc.root.children if c.name == leaf]

    keys = set()
    for src in spec.sources:
        keys.update(k for k, _ in recs(contents[src.view], src))
    sites = []
    for k in sorted(keys):
        kids = [Node("source", (("name", s.view), ("status", "ok")),
                     tuple(r for kk, r in recs(contents[s.view], s) if kk == k)) for s in spec.sources]
        sites.append(Node("site", (("name", k),), tuple(kids)))
    return Document(Node("sites", (), tuple(sites)))


def _random_source(rng, root, leaf, sites):
    rows = [Node(leaf, (("site", rng.choice(sites)), ("n", str(i)))) for i in range(rng.randint(0, 15))]
    return Document(Node(root, (), tuple(rows)))


def test_join_matches_flat_scan_oracle():
    rng = random.Random(12)
    spec = JoinSpec("s", (_src("g", "/tickets/ticket"), _src("o", "/downtimes/downtime"),
                          _src("m", "/probes/probe")))
    for _ in range(100):
        sites = [f"SITE-{i}" for i in range(rng.randint(1, 20))]
        contents = {"g": _random_source(rng, "tickets", "ticket", sites),
                    "o": _random_source(rng, "downtimes", "downtime", sites),
                    "m": _random_source(rng, "probes", "probe", sites)}
        assert doc_equal(join_by_key(spec, contents), _flat_scan(spec, contents))


def test_join_is_deterministic():
    a = doc_serialize(join_by_key(SPEC, {"ggus": GGUS, "sam": SAM}))
    b = doc_serialize(join_by_key(SPEC, {"ggus": GGUS, "sam": SAM}))
    assert a == b


def test_site_view_config():
    v = site_view_config(SPEC)
    assert v.adapter.kind == "derived" and v.adapter.base_views == ("ggus", "sam")
    assert {t.source for t in v.triggers if t.kind == "on_dependency"} == {"ggus", "sam"}
    declared = ServiceConfig(views=(ViewConfig("ggus", AdapterSpec("file", path="g")),))
    with pytest.raises(ConfigError):
        site_view_config(SPEC, declared)


def test_join_view_in_engine(tmp_path, clock, sim):
    sim.set_scenario("/ggus", Scenario([Respond(doc_serialize(GGUS).decode())]))
    sim.set_scenario("/sam", Scenario([Respond(doc_serialize(SAM).decode()), Fail(503)]))
    joins = [{"name": "summary", "sources": [
        {"view": "ggus", "key_path": "@site", "record_path": "/tickets/ticket"},
        {"view": "sam", "key_path": "@site", "record_path": "/probes/probe"}]}]
    e = engine(tmp_path, [view("ggus", http(sim.url("/ggus"))),
                          view("sam", http(sim.url("/sam")),
                               fallbacks=[{"match": "Any", "action": "ignore"}])], clock, joins=joins)
    e.refresh_view("ggus")
    e.refresh_view("sam")
    doc, _ = e.read_view("summary")
    assert doc_equal(doc, join_by_key(SPEC, {"ggus": GGUS, "sam": SAM}))
    clock.advance(30)
    assert e.refresh_view("sam").kind == "served_stale_kept"
    e.refresh_view("ggus")
    doc, _ = e.read_view("summary")
    sam = [s for s in doc.root.children[0].children if s.get("name") == "sam"][0]
    assert (sam.get("status"), sam.get("age")) == ("stale", "30")
