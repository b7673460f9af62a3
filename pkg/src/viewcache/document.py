"""Immutable document trees and their XML / JSON wire forms.

A document is a tree of named elements carrying string attributes and,
for leaves only, text.  Both serializations are deterministic and map
onto each other one to one.

JSON mapping::

    <a x="1"><b/><b/></a>   <->   {"a":{"@x":"1","b":[{},{}]}}
    <a>t</a>                <->   {"a":{"#text":"t"}}

Each contiguous run of same-named children becomes one member (an
object for a run of one, an array otherwise).  Should a name reappear
after a different sibling, it is emitted as a further member with the
same key so that child order survives the round trip.
"""

from __future__ import annotations

import json
import re
from dataclasses import dataclass
from typing import Iterator, Optional
from xml.parsers import expat

from .errors import MixedContentError, ParseError

NAME_RE = re.compile(r"[A-Za-z_][A-Za-z0-9_.-]*\Z")
# attribute names may carry a literal prefix such as "vf:"
ATTR_NAME_RE = re.compile(r"[A-Za-z_][A-Za-z0-9_.:-]*\Z")

XML_DECL = '<?xml version="1.0" encoding="UTF-8"?>'


@dataclass(frozen=True, eq=False)
class Node:
    name: str
    attributes: tuple = ()
    children: tuple = ()
    text: Optional[str] = None

    def __post_init__(self):
        if not isinstance(self.name, str) or not NAME_RE.match(self.name):
            raise ValueError(f"invalid element name {self.name!r}")
        attrs = self.attributes
        if isinstance(attrs, dict):
            attrs = tuple(attrs.items())
        attrs = tuple((str(k), str(v)) for k, v in attrs)
        seen = set()
        for k, _ in attrs:
            if not ATTR_NAME_RE.match(k):
                raise ValueError(f"invalid attribute name {k!r}")
            if k in seen:
                raise ValueError(f"duplicate attribute {k!r}")
            seen.add(k)
        object.__setattr__(self, "attributes", attrs)
        children = tuple(self.children)
        for c in children:
            if not isinstance(c, Node):
                raise TypeError("children must be Node instances")
        object.__setattr__(self, "children", children)
        text = self.text
        if text == "":
            text = None
        if text is not None and children:
            if text.strip():
                raise MixedContentError(self.name, "element has both text and child elements")
            text = None
        object.__setattr__(self, "text", text)

    def get(self, name: str, default=None):
        for k, v in self.attributes:
            if k == name:
                return v
        return default

    @property
    def attrib(self) -> dict:
        return dict(self.attributes)

    def iter(self) -> Iterator["Node"]:
        """Pre-order (document order) traversal including this node."""
        stack = [self]
        while stack:
            node = stack.pop()
            yield node
            stack.extend(reversed(node.children))

    def string_value(self) -> str:
        return "".join(n.text or "" for n in self.iter())

    def __repr__(self):
        return f"Node({self.name!r}, attrs={dict(self.attributes)!r}, children={len(self.children)}, text={self.text!r})"


@dataclass(frozen=True, eq=False)
class Document:
    root: Node

    def __post_init__(self):
        if not isinstance(self.root, Node):
            raise TypeError("root must be a Node")

    def __repr__(self):
        return f"Document({serialize_text(self, 'xml')!r})"


def element(name: str, attrs=None, *children: Node, text: Optional[str] = None) -> Node:
    return Node(name, tuple((attrs or {}).items()), children, text)


# -- equality ----------------------------------------------------------------

def node_equal(a: Node, b: Node) -> bool:
    stack = [(a, b)]
    while stack:
        x, y = stack.pop()
        if x is y:
            continue
        if x.name != y.name or (x.text or None) != (y.text or None):
            return False
        if len(x.attributes) != len(y.attributes) or dict(x.attributes) != dict(y.attributes):
            return False
        if len(x.children) != len(y.children):
            return False
        stack.extend(zip(x.children, y.children))
    return True


def doc_equal(a: Document, b: Document) -> bool:
    """Structural equality ignoring attribute order."""
    return node_equal(a.root, b.root)


# -- XML ---------------------------------------------------------------------

def _escape_text(s: str) -> str:
    return s.replace("&", "&amp;").replace("<", "&lt;").replace(">", "&gt;").replace("\r", "&#13;")


def _escape_attr(s: str) -> str:
    return (s.replace("&", "&amp;").replace("<", "&lt;").replace(">", "&gt;")
            .replace('"', "&quot;").replace("\n", "&#10;").replace("\r", "&#13;")
            .replace("\t", "&#9;"))


def _xml_node(node: Node, out: list) -> None:
    out.append("<" + node.name)
    for k, v in node.attributes:
        out.append(f' {k}="{_escape_attr(v)}"')
    if node.children:
        out.append(">")
        for c in node.children:
            _xml_node(c, out)
        out.append(f"</{node.name}>")
    elif node.text:
        out.append(">" + _escape_text(node.text) + f"</{node.name}>")
    else:
        out.append("/>")


class _XmlBuilder:
    def __init__(self, parser):
        self.parser = parser
        # each frame: [name, attrs, children, text_chunks]
        self.stack = []
        self.root = None

    def _pos(self):
        return (self.parser.CurrentLineNumber, self.parser.CurrentColumnNumber)

    def start(self, name, attrs):
        if self.root is not None:
            raise ParseError(self._pos(), "content after root element")
        if not NAME_RE.match(name):
            raise ParseError(self._pos(), f"invalid element name {name!r}")
        pairs = list(zip(attrs[0::2], attrs[1::2]))
        for k, _ in pairs:
            if not ATTR_NAME_RE.match(k):
                raise ParseError(self._pos(), f"invalid attribute name {k!r}")
        self.stack.append([name, pairs, [], []])

    def end(self, name):
        name, attrs, children, chunks = self.stack.pop()
        text = "".join(chunks)
        if children and text.strip():
            raise MixedContentError(self._pos(), f"element {name!r} has both text and child elements")
        node = Node(name, tuple(attrs), tuple(children), None if children else text)
        if self.stack:
            self.stack[-1][2].append(node)
        else:
            self.root = node

    def chars(self, data):
        if self.stack:
            self.stack[-1][3].append(data)
        elif data.strip():
            raise ParseError(self._pos(), "text outside root element")

    def reject_pi(self, target, data):
        raise ParseError(self._pos(), "processing instructions are not supported")

    def reject_doctype(self, *args):
        raise ParseError(self._pos(), "DTDs are not supported")


def _parse_xml(data: bytes) -> Document:
    parser = expat.ParserCreate("UTF-8")
    parser.ordered_attributes = True
    parser.buffer_text = True
    parser.SetParamEntityParsing(expat.XML_PARAM_ENTITY_PARSING_NEVER)
    b = _XmlBuilder(parser)
    parser.StartElementHandler = b.start
    parser.EndElementHandler = b.end
    parser.CharacterDataHandler = b.chars
    parser.ProcessingInstructionHandler = b.reject_pi
    parser.StartDoctypeDeclHandler = b.reject_doctype
    parser.CommentHandler = lambda data: None
    try:
        parser.Parse(data, True)
    except expat.ExpatError as exc:
        raise ParseError((exc.lineno, exc.offset), expat.ErrorString(exc.code)) from None
    if b.root is None:
        raise ParseError((1, 0), "no root element")
    return Document(b.root)


# -- JSON --------------------------------------------------------------------

def _json_str(s: str) -> str:
    return json.dumps(s, ensure_ascii=False)


def _json_body(node: Node, out: list) -> None:
    members = []
    for k, v in node.attributes:
        members.append(f"{_json_str('@' + k)}:{_json_str(v)}")
    if node.children:
        runs = []
        for c in node.children:
            if runs and runs[-1][0] == c.name:
                runs[-1][1].append(c)
            else:
                runs.append((c.name, [c]))
        for name, run in runs:
            if len(run) == 1:
                members.append(f"{_json_str(name)}:{_json_obj(run[0])}")
            else:
                members.append(f"{_json_str(name)}:[" + ",".join(_json_obj(c) for c in run) + "]")
    elif node.text:
        members.append(f'"#text":{_json_str(node.text)}')
    out.append("{" + ",".join(members) + "}")


def _json_obj(node: Node) -> str:
    out = []
    _json_body(node, out)
    return out[0]


class _Pairs(list):
    """Marks a decoded JSON object (kept as ordered key/value pairs)."""


def _node_from_pairs(name: str, pairs, where: str) -> Node:
    if not isinstance(pairs, _Pairs):
        raise ParseError(where, f"element {name!r} must map to an object")
    if not NAME_RE.match(name):
        raise ParseError(where, f"invalid element name {name!r}")
    attrs, children, text = [], [], None
    seen = set()
    for key, value in pairs:
        if key.startswith("@"):
            attr = key[1:]
            if not ATTR_NAME_RE.match(attr):
                raise ParseError(where, f"invalid attribute name {attr!r}")
            if attr in seen:
                raise ParseError(where, f"duplicate attribute {attr!r}")
            if not isinstance(value, str):
                raise ParseError(where, f"attribute {attr!r} must be a string")
            seen.add(attr)
            attrs.append((attr, value))
        elif key == "#text":
            if text is not None:
                raise ParseError(where, "duplicate #text member")
            if not isinstance(value, str):
                raise ParseError(where, "#text must be a string")
            text = value
        elif isinstance(value, list) and not isinstance(value, _Pairs):
            for i, item in enumerate(value):
                children.append(_node_from_pairs(key, item, f"{where}/{key}[{i}]"))
        else:
            children.append(_node_from_pairs(key, value, f"{where}/{key}"))
    if children and text is not None and text.strip():
        raise MixedContentError(where, f"element {name!r} has both #text and child elements")
    return Node(name, tuple(attrs), tuple(children), None if children else text)


def _parse_json(data: bytes) -> Document:
    try:
        text = data.decode("utf-8")
    except UnicodeDecodeError as exc:
        raise ParseError(exc.start, "invalid UTF-8") from None
    try:
        obj = json.loads(text, object_pairs_hook=_Pairs)
    except json.JSONDecodeError as exc:
        raise ParseError((exc.lineno, exc.colno), exc.msg) from None
    except RecursionError:
        raise ParseError((1, 0), "nesting too deep") from None
    if not isinstance(obj, _Pairs) or len(obj) != 1:
        raise ParseError("/", "root must be an object with exactly one member")
    name, body = obj[0]
    try:
        return Document(_node_from_pairs(name, body, "/" + name))
    except RecursionError:
        raise ParseError("/", "nesting too deep") from None


# -- public API --------------------------------------------------------------

FORMATS = ("xml", "json")


def doc_parse(data, fmt: str = "xml") -> Document:
    """Parse a complete serialized document.

    Raises :class:`ParseError` on malformed input and
    :class:`MixedContentError` when an element carries both
    non-whitespace text and child elements.
    """
    if isinstance(data, str):
        data = data.encode("utf-8")
    if fmt == "xml":
        return _parse_xml(bytes(data))
    if fmt == "json":
        return _parse_json(bytes(data))
    raise ValueError(f"unknown format {fmt!r}")


def serialize_text(doc: Document, fmt: str = "xml") -> str:
    if fmt == "xml":
        out = [XML_DECL]
        _xml_node(doc.root, out)
        return "".join(out)
    if fmt == "json":
        return "{" + _json_str(doc.root.name) + ":" + _json_obj(doc.root) + "}"
    raise ValueError(f"unknown format {fmt!r}")


def doc_serialize(doc: Document, fmt: str = "xml") -> bytes:
    return serialize_text(doc, fmt).encode("utf-8")

