"""Per-key synoptic summaries joined from several source views.

Output shape (one entry per distinct key, keys sorted)::

    <sites>
      <site name="A">
        <source name="ggus" status="ok"> ...records... </source>
        <source name="sam" status="stale" age="30"> ...last known records... </source>
        <source name="gocdb" status="unavailable"/>
      </site>
    </sites>
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

from .document import Document, Node
from .errors import CompositionError, ConfigError
from .query import PathExpr, string_value, vpath_eval


@dataclass(frozen=True)
class JoinSource:
    view: str
    key_path: PathExpr
    record_path: PathExpr


@dataclass(frozen=True)
class JoinSpec:
    name: str
    sources: tuple
    key_attr: str = "name"
    output_root: str = "sites"
    entry_element: str = "site"
    policy: object = None        # CachePolicy for the generated view
    triggers: tuple = ()         # extra triggers besides the implicit on_dependency ones
    fallbacks: tuple = ()


@dataclass(frozen=True)
class Unavailable:
    """A source that cannot currently be read; ``last`` is its last good content, if any."""

    last: Optional[Document] = None
    age: float = 0.0


def _records(doc: Document, src: JoinSource) -> dict:
    by_key = {}
    for rec in vpath_eval(doc, src.record_path):
        if isinstance(rec, str):
            raise CompositionError(f"record path {src.record_path} selects attributes, not elements")
        keys = vpath_eval(doc, src.key_path, rec)
        if not keys:
            raise CompositionError(f"record <{rec.name}> in {src.view!r} has no key at {src.key_path}")
        by_key.setdefault(string_value(keys[0]), []).append(rec)
    return by_key


def join_by_key(spec: JoinSpec, contents: dict) -> Document:
    per_source = []
    for src in spec.sources:
        if src.view not in contents:
            raise CompositionError(f"no content supplied for source {src.view!r}")
        value = contents[src.view]
        if isinstance(value, Unavailable):
            if value.last is None:
                per_source.append((src, "unavailable", None, {}))
            else:
                per_source.append((src, "stale", str(int(value.age)), _records(value.last, src)))
        else:
            per_source.append((src, "ok", None, _records(value, src)))

    keys = sorted({k for _, _, _, recs in per_source for k in recs})
    entries = []
    for key in keys:
        children = []
        for src, status, age, recs in per_source:
            attrs = [("name", src.view), ("status", status)]
            if age is not None:
                attrs.append(("age", age))
            # nodes are immutable, so sharing them is a deep copy in effect
            children.append(Node("source", tuple(attrs), tuple(recs.get(key, ()))))
        entries.append(Node(spec.entry_element, ((spec.key_attr, key),), tuple(children)))
    return Document(Node(spec.output_root, (), tuple(entries)))


def site_view_config(spec: JoinSpec, cfg=None):
    """Expand a join into a derived view declaration.

    The view depends on every source and refreshes whenever one of them
    does.  With ``cfg`` given, unknown source views raise ConfigError.
    """
    from .adapters import AdapterSpec
    from .config import CachePolicy, TriggerRule, ViewConfig

    if cfg is not None:
        declared = {v.name for v in cfg.views}
        missing = [s.view for s in spec.sources if s.view not in declared]
        if missing:
            raise ConfigError(f"join {spec.name!r} names undeclared views: {', '.join(missing)}")
    bases = []
    for s in spec.sources:
        if s.view not in bases:
            bases.append(s.view)
    triggers = tuple(TriggerRule("on_dependency", source=b) for b in bases) + tuple(spec.triggers)
    return ViewConfig(name=spec.name,
                      adapter=AdapterSpec("derived", base_views=tuple(bases), join=spec),
                      policy=spec.policy or CachePolicy(),
                      triggers=triggers, fallbacks=tuple(spec.fallbacks),
                      join_name=spec.name)
