"""VPath expressions and two-directive transform templates.

Grammar::

    path     := '/'? step ('/' step)*
    step     := selector pred?
    selector := NAME | '*' | '@' NAME
    pred     := '[' ( '@' NAME '=' "'" LITERAL "'" | INT ) ']'

Templates are ordinary documents whose elements may carry
``vf:for-each="<path>"`` and ``vf:value-of="<path>"``.
"""

from __future__ import annotations

import re
from dataclasses import dataclass
from typing import Optional

from .document import Document, Node, doc_parse
from .errors import ParseError, PathSyntaxError, TransformError

_NAME = re.compile(r"[A-Za-z_][A-Za-z0-9_.-]*")
_INT = re.compile(r"[0-9]+")

FOR_EACH = "vf:for-each"
VALUE_OF = "vf:value-of"
DIRECTIVE_PREFIX = "vf:"


@dataclass(frozen=True)
class Step:
    selector: str                        # element name, "*", or "@name"
    attr_pred: Optional[tuple] = None    # (attribute name, literal)
    position: Optional[int] = None

    @property
    def is_attribute(self) -> bool:
        return self.selector.startswith("@")


@dataclass(frozen=True)
class PathExpr:
    absolute: bool
    steps: tuple
    source: str = ""

    def __str__(self):
        return self.source


def vpath_parse(expr: str) -> PathExpr:
    if not isinstance(expr, str):
        raise PathSyntaxError(repr(expr), 0, "path must be a string")
    pos = 0
    n = len(expr)
    absolute = expr.startswith("/")
    if absolute:
        pos = 1
    steps = []
    while True:
        if pos >= n:
            raise PathSyntaxError(expr, pos, "expected step")
        if expr[pos] == "*":
            selector = "*"
            pos += 1
        else:
            attr = expr[pos] == "@"
            if attr:
                pos += 1
            m = _NAME.match(expr, pos)
            if not m:
                raise PathSyntaxError(expr, pos, "expected name")
            selector = ("@" if attr else "") + m.group()
            pos = m.end()
        attr_pred = position = None
        if pos < n and expr[pos] == "[":
            pos += 1
            if pos < n and expr[pos] == "@":
                m = _NAME.match(expr, pos + 1)
                if not m:
                    raise PathSyntaxError(expr, pos + 1, "expected attribute name")
                pos = m.end()
                if pos >= n or expr[pos] != "=":
                    raise PathSyntaxError(expr, pos, "expected '='")
                pos += 1
                if pos >= n or expr[pos] != "'":
                    raise PathSyntaxError(expr, pos, "expected quoted literal")
                end = expr.find("'", pos + 1)
                if end < 0:
                    raise PathSyntaxError(expr, pos, "unterminated literal")
                attr_pred = (m.group(), expr[pos + 1:end])
                pos = end + 1
            else:
                m = _INT.match(expr, pos)
                if not m:
                    raise PathSyntaxError(expr, pos, "expected attribute test or position")
                position = int(m.group())
                if position < 1:
                    raise PathSyntaxError(expr, pos, "positions start at 1")
                pos = m.end()
            if pos >= n or expr[pos] != "]":
                raise PathSyntaxError(expr, pos, "expected ']'")
            pos += 1
        steps.append(Step(selector, attr_pred, position))
        if pos == n:
            break
        if expr[pos] != "/":
            raise PathSyntaxError(expr, pos, "expected '/'")
        if selector.startswith("@"):
            raise PathSyntaxError(expr, pos, "attribute selector must be the last step")
        pos += 1
    return PathExpr(absolute, tuple(steps), expr)


def _filter(step: Step, candidates: list) -> list:
    if step.attr_pred is not None:
        name, literal = step.attr_pred
        candidates = [c for c in candidates if c.get(name) == literal]
    if step.position is not None:
        candidates = candidates[step.position - 1:step.position]
    return candidates


def vpath_eval(doc: Document, path, context: Optional[Node] = None) -> list:
    """Evaluate ``path`` and return nodes or attribute strings in document order.

    Absolute paths start at the root, whose name must match the first
    step.  Relative paths select among the children (or attributes) of
    ``context``, which defaults to the root.  Positional predicates count
    within each parent's matches for the step.
    """
    if isinstance(path, str):
        path = vpath_parse(path)
    steps = path.steps
    if path.absolute:
        first = steps[0]
        if first.is_attribute:
            return []
        root = doc.root
        current = _filter(first, [root] if first.selector in ("*", root.name) else [])
        steps = steps[1:]
    else:
        current = [context if context is not None else doc.root]
    for step in steps:
        if step.is_attribute:
            name = step.selector[1:]
            out = []
            for node in current:
                value = node.get(name)
                # attribute "nodes" have no attributes and count as one match
                if value is None or step.attr_pred is not None:
                    continue
                if step.position not in (None, 1):
                    continue
                out.append(value)
            return out
        nxt = []
        for node in current:
            matched = [c for c in node.children if step.selector == "*" or c.name == step.selector]
            nxt.extend(_filter(step, matched))
        current = nxt
    return current


def string_value(item) -> str:
    return item if isinstance(item, str) else item.string_value()


# -- transforms --------------------------------------------------------------

@dataclass(frozen=True)
class _TplNode:
    name: str
    attributes: tuple
    text: Optional[str]
    children: tuple
    for_each: Optional[PathExpr]
    value_of: Optional[PathExpr]


class TransformTemplate:
    """A compiled template.  ``document`` is the template as submitted."""

    def __init__(self, document: Document):
        self.document = document
        self._root = self._compile(document.root)

    def __eq__(self, other):
        from .document import doc_equal
        return isinstance(other, TransformTemplate) and doc_equal(self.document, other.document)

    def __hash__(self):
        return hash(self.document.root.name)

    @classmethod
    def parse(cls, data, fmt: str = "xml") -> "TransformTemplate":
        try:
            return cls(doc_parse(data, fmt))
        except ParseError as exc:
            raise TransformError(f"template does not parse: {exc}") from exc

    def _compile(self, node: Node) -> _TplNode:
        for_each = value_of = None
        attrs = []
        for k, v in node.attributes:
            if k == FOR_EACH or k == VALUE_OF:
                try:
                    p = vpath_parse(v)
                except PathSyntaxError as exc:
                    raise TransformError(f"bad {k} on <{node.name}>: {exc}") from exc
                if k == FOR_EACH:
                    if p.steps[-1].is_attribute:
                        raise TransformError(f"{k} on <{node.name}> must select elements")
                    for_each = p
                else:
                    value_of = p
            elif k.startswith(DIRECTIVE_PREFIX):
                raise TransformError(f"unknown directive {k!r} on <{node.name}>")
            else:
                attrs.append((k, v))
        if value_of is not None and node.children:
            raise TransformError(f"<{node.name}> has vf:value-of and children")
        return _TplNode(node.name, tuple(attrs), node.text,
                        tuple(self._compile(c) for c in node.children), for_each, value_of)

    def _expand(self, tpl: _TplNode, doc: Document, context: Node) -> list:
        if tpl.for_each is not None:
            contexts = vpath_eval(doc, tpl.for_each, context)
        else:
            contexts = [context]
        out = []
        for ctx in contexts:
            if tpl.value_of is not None:
                hits = vpath_eval(doc, tpl.value_of, ctx)
                out.append(Node(tpl.name, tpl.attributes, (), string_value(hits[0]) if hits else None))
            else:
                children = []
                for c in tpl.children:
                    children.extend(self._expand(c, doc, ctx))
                out.append(Node(tpl.name, tpl.attributes, tuple(children),
                                None if children else tpl.text))
        return out

    def apply(self, doc: Document) -> Document:
        roots = self._expand(self._root, doc, doc.root)
        if len(roots) != 1:
            raise TransformError(f"template root produced {len(roots)} elements, expected 1")
        return Document(roots[0])


def transform_apply(doc: Document, tpl) -> Document:
    if isinstance(tpl, Document):
        tpl = TransformTemplate(tpl)
    return tpl.apply(doc)
