"""Named data views generated from heterogeneous sources, with declarative cache policies."""

from .document import Document, Node, doc_equal, doc_parse, doc_serialize, element
from .query import PathExpr, TransformTemplate, transform_apply, vpath_eval, vpath_parse
from .config import ServiceConfig, ViewConfig, config_load, config_validate
from .engine import CacheEngine, RefreshOutcome
from .composition import JoinSpec, Unavailable, join_by_key

__version__ = "0.1.0"

__all__ = [
    "Document", "Node", "doc_equal", "doc_parse", "doc_serialize", "element",
    "PathExpr", "TransformTemplate", "transform_apply", "vpath_eval", "vpath_parse",
    "ServiceConfig", "ViewConfig", "config_load", "config_validate",
    "CacheEngine", "RefreshOutcome",
    "JoinSpec", "Unavailable", "join_by_key",
]
