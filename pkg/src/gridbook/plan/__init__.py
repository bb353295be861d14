from . import stages
from .resolve import (
    ElementOutput,
    ResolvedColumn,
    ResolvedFilter,
    ResolvedLevel,
    ResolvedTable,
    ResolutionFailure,
    Resolver,
    SchemaProvider,
    resolution_errors,
    resolve_table,
)

__all__ = [
    "stages",
    "Resolver",
    "SchemaProvider",
    "ElementOutput",
    "ResolvedTable",
    "ResolvedLevel",
    "ResolvedColumn",
    "ResolvedFilter",
    "ResolutionFailure",
    "resolve_table",
    "resolution_errors",
]
