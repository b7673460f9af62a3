import random

import pytest
from hypothesis import given, settings, strategies as st

from viewcache.document import (Document, Node, doc_equal, doc_parse, doc_serialize, element,
                                serialize_text)
from viewcache.errors import MixedContentError, ParseError

from oracles import random_document

A_WITH_B = Document(Node("a", (("x", "1"),), (Node("b"),)))


def test_parse_xml_example():
    assert doc_equal(doc_parse(b'<a x="1"><b/></a>', "xml"), A_WITH_B)


def test_parse_json_example():
    assert doc_equal(doc_parse(b'{"a":{"@x":"1","b":{}}}', "json"), A_WITH_B)


@pytest.mark.parametrize("bad", [b"<a><b></a>", b"", b"<a>", b"<a/><b/>", b"<1a/>", b"text"])
def test_parse_xml_malformed(bad):
    with pytest.raises(ParseError):
        doc_parse(bad, "xml")


def test_parse_error_carries_position():
    with pytest.raises(ParseError) as info:
        doc_parse(b"<a>\n  <b></a>", "xml")
    assert info.value.position[0] == 2


@pytest.mark.parametrize("bad", [
    b"", b"[]", b'{"a":{},"b":{}}', b'{"a":"text"}', b'{"a":{"@x":1}}', b'{"a":{"#text":3}}',
    b'{"1a":{}}', b'{"a":{"@x":"1","@x":"2"}}', b'{"a":', b"\xff",
])
def test_parse_json_malformed(bad):
    with pytest.raises(ParseError):
        doc_parse(bad, "json")


def test_mixed_content_rejected():
    with pytest.raises(MixedContentError):
        doc_parse(b"<a>text<b/></a>", "xml")
    with pytest.raises(MixedContentError):
        doc_parse(b'{"a":{"#text":"t","b":{}}}', "json")
    # whitespace between elements is not content
    assert doc_equal(doc_parse(b"<a>\n  <b/>\n</a>"), doc_parse(b"<a><b/></a>"))


def test_xml_subset():
    with pytest.raises(ParseError):
        doc_parse(b'<?xml version="1.0"?><!DOCTYPE a><a/>')
    with pytest.raises(ParseError):
        doc_parse(b"<a><?pi data?></a>")
    with pytest.raises(ParseError):
        doc_parse(b"<a>&custom;</a>")
    with pytest.raises(ParseError):
        doc_parse(b'<ns:a xmlns:ns="urn:x"/>')
    assert doc_equal(doc_parse(b"<a><!-- note --><b/></a>"), doc_parse(b"<a><b/></a>"))
    assert doc_parse(b"<a>&lt;&amp;&gt;&quot;&apos;</a>").root.text == "<&>\"'"


def test_serialize_empty_element():
    d = Document(Node("a"))
    assert doc_serialize(d, "xml") == b'<?xml version="1.0" encoding="UTF-8"?><a/>'
    assert doc_serialize(d, "json") == b'{"a":{}}'


def test_serialize_deterministic():
    rng = random.Random(7)
    d = random_document(rng)
    for fmt in ("xml", "json"):
        assert doc_serialize(d, fmt) == doc_serialize(d, fmt)


def test_json_mapping_shape():
    d = doc_parse(b'<a x="1"><b/><b/></a>')
    assert serialize_text(d, "json") == '{"a":{"@x":"1","b":[{},{}]}}'
    assert serialize_text(doc_parse(b"<a>t</a>"), "json") == '{"a":{"#text":"t"}}'


def test_json_interleaved_siblings_keep_order():
    d = doc_parse(b"<a><b/><c/><b/></a>")
    text = serialize_text(d, "json")
    assert text == '{"a":{"b":{},"c":{},"b":{}}}'
    assert doc_equal(doc_parse(text, "json"), d)


def test_attribute_order_preserved_and_ignored_by_equality():
    d = doc_parse(b'<a y="2" x="1"/>')
    assert serialize_text(d).endswith('<a y="2" x="1"/>')
    assert doc_equal(doc_parse(b'<a x="1" y="2"/>'), doc_parse(b'<a y="2" x="1"/>'))


def test_child_order_significant():
    assert not doc_equal(doc_parse(b"<a><b/><c/></a>"), doc_parse(b"<a><c/><b/></a>"))


def test_node_invariants():
    with pytest.raises(ValueError):
        Node("1bad")
    with pytest.raises(ValueError):
        Node("a", (("x", "1"), ("x", "2")))
    with pytest.raises(MixedContentError):
        Node("a", (), (Node("b"),), "text")
    assert Node("a", (), (Node("b"),), "  ").text is None
    assert element("a", {"x": "1"}, Node("b")).get("x") == "1"


def test_json_round_trip_100_random_documents():
    rng = random.Random(100)
    for _ in range(100):
        d = random_document(rng)
        assert doc_equal(doc_parse(doc_serialize(d, "json"), "json"), d)


# -- properties -----------------------------------------------------------------

names = st.sampled_from(["a", "b", "site", "x-y", "_z"])
values = st.text(alphabet=st.characters(blacklist_categories=("Cs", "Cc", "Cn")), max_size=8) | \
    st.sampled_from(["\t", "\n", "\r\n", " "])


@st.composite
def nodes(draw, depth=0):
    attr_names = draw(st.lists(st.sampled_from(["k", "v", "id"]), unique=True, max_size=3))
    attrs = tuple((n, draw(values)) for n in attr_names)
    children = ()
    if depth < 3:
        children = tuple(draw(st.lists(nodes(depth + 1), max_size=3)))
    text = None if children else draw(st.none() | values)
    return Node(draw(names), attrs, children, text)


documents = nodes().map(Document)


@settings(max_examples=200, deadline=None)
@given(documents, st.sampled_from(["xml", "json"]))
def test_round_trip_property(d, fmt):
    assert doc_equal(doc_parse(doc_serialize(d, fmt), fmt), d)


@settings(max_examples=100, deadline=None)
@given(documents)
def test_cross_format_property(d):
    assert doc_equal(doc_parse(doc_serialize(d, "xml"), "xml"), doc_parse(doc_serialize(d, "json"), "json"))


@settings(max_examples=100, deadline=None)
@given(documents, documents, documents)
def test_doc_equal_is_an_equivalence(a, b, c):
    assert doc_equal(a, a)
    assert doc_equal(a, b) == doc_equal(b, a)
    if doc_equal(a, b) and doc_equal(b, c):
        assert doc_equal(a, c)
    # copies through the wire are equal, so transitivity gets exercised too
    a2 = doc_parse(doc_serialize(a, "json"), "json")
    a3 = doc_parse(doc_serialize(a2, "xml"), "xml")
    assert doc_equal(a, a2) and doc_equal(a2, a3) and doc_equal(a, a3)
