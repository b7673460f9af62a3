"""Exception hierarchy shared across the package."""

from __future__ import annotations


class ViewCacheError(Exception):
    """Base class for every error raised by this package."""


# -- documents -------------------------------------------------------------

class ParseError(ViewCacheError):
    def __init__(self, position, reason: str):
        self.position = position
        self.reason = reason
        super().__init__(f"{reason} at {position}")


class MixedContentError(ParseError):
    pass


# -- queries ---------------------------------------------------------------

class PathSyntaxError(ViewCacheError):
    def __init__(self, expr: str, position: int, reason: str = "syntax error"):
        self.expr = expr
        self.position = position
        self.reason = reason
        super().__init__(f"{reason} at position {position} in {expr!r}")


class TransformError(ViewCacheError):
    pass


# -- sources ---------------------------------------------------------------

class SourceError(ViewCacheError):
    """A view could not be generated from its source.

    ``error_class`` is the name fallback rules match against.
    """

    error_class = "SourceError"


class SourceUnavailable(SourceError):
    error_class = "SourceUnavailable"


class SourceTimeout(SourceError):
    error_class = "SourceTimeout"


class SourceMalformed(SourceError):
    error_class = "SourceMalformed"


class HttpStatus(SourceError):
    error_class = "HttpStatus"

    def __init__(self, code: int, detail: str = ""):
        self.code = code
        super().__init__(f"HTTP {code}{': ' + detail if detail else ''}")


class DependencyUnsatisfied(SourceError):
    error_class = "DependencyUnsatisfied"


class NotWritable(ViewCacheError):
    pass


class IoError(ViewCacheError):
    pass


# -- cache engine ----------------------------------------------------------

class ValidationError(ViewCacheError):
    error_class = "ValidationError"

    def __init__(self, violations):
        self.violations = list(violations)[:10]
        super().__init__("; ".join(self.violations))


class UnknownView(ViewCacheError):
    def __init__(self, name: str):
        self.name = name
        super().__init__(f"unknown view {name!r}")


class OutdatedCache(ViewCacheError):
    pass


class ViewInError(ViewCacheError):
    pass


class ViewEmpty(ViewInError):
    """No content has been generated for the view yet."""


class SnapshotUnavailable(ViewCacheError):
    pass


class GroupPrepareFailed(ViewCacheError):
    def __init__(self, member: str, error_class: str, detail: str = ""):
        self.member = member
        self.error_class = error_class
        super().__init__(f"group member {member!r} failed: {error_class} {detail}".rstrip())


class CompositionError(ViewCacheError):
    pass


# -- configuration ---------------------------------------------------------

class ConfigError(ViewCacheError):
    pass


class ConfigSyntaxError(ConfigError):
    def __init__(self, location: str, reason: str):
        self.location = location
        self.reason = reason
        super().__init__(f"{location}: {reason}")


class ConfigSemanticError(ConfigError):
    def __init__(self, errors):
        self.errors = list(errors)
        super().__init__("; ".join(self.errors))


# -- simulator -------------------------------------------------------------

class PortInUse(ViewCacheError):
    pass


class UnknownRoute(ViewCacheError):
    pass


def error_class_of(exc: BaseException) -> str:
    return getattr(exc, "error_class", type(exc).__name__)
