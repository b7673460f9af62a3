"""Minimal structural schemas for generated views."""

from __future__ import annotations

from dataclasses import dataclass, field

from .document import Document, Node
from .errors import ValidationError

CARDINALITIES = ("one", "optional", "many")
MAX_VIOLATIONS = 10


@dataclass(frozen=True)
class ElementRule:
    required_attrs: frozenset = frozenset()
    children: tuple = ()            # ((name, cardinality), ...)
    allow_text: bool = False


@dataclass(frozen=True)
class StructSchema:
    """Per-element rules; elements without a rule are unconstrained."""

    root: str
    rules: dict = field(default_factory=dict)

    def check(self, doc: Document) -> list:
        violations = []
        if doc.root.name != self.root:
            violations.append(f"root is <{doc.root.name}>, expected <{self.root}>")
        for node in doc.root.iter():
            if len(violations) >= MAX_VIOLATIONS:
                break
            rule = self.rules.get(node.name)
            if rule is not None:
                violations.extend(_check_node(node, rule))
        return violations[:MAX_VIOLATIONS]


def _check_node(node: Node, rule: ElementRule) -> list:
    out = []
    present = {k for k, _ in node.attributes}
    for attr in sorted(rule.required_attrs - present):
        out.append(f"<{node.name}> missing attribute {attr}")
    allowed = dict(rule.children)
    counts = {}
    for c in node.children:
        counts[c.name] = counts.get(c.name, 0) + 1
    for name in counts:
        if name not in allowed:
            out.append(f"<{node.name}> does not allow child <{name}>")
    for name, card in rule.children:
        n = counts.get(name, 0)
        if card == "one" and n != 1:
            out.append(f"<{node.name}> needs exactly one <{name}>, found {n}")
        elif card == "optional" and n > 1:
            out.append(f"<{node.name}> allows at most one <{name}>, found {n}")
    if node.text and node.text.strip() and not rule.allow_text:
        out.append(f"<{node.name}> does not allow text")
    return out


def validate_content(doc: Document, mode: str, schema: StructSchema = None) -> None:
    """Raise :class:`ValidationError` unless ``doc`` passes ``mode``.

    ``wellformed`` always passes: a constructed Document cannot be
    malformed.
    """
    if mode in ("none", "wellformed"):
        return
    if mode != "schema":
        raise ValueError(f"unknown validation mode {mode!r}")
    if schema is None:
        raise ValueError("schema validation requires a schema")
    violations = schema.check(doc)
    if violations:
        raise ValidationError(violations)
