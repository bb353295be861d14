from . import ast
from .catalog import AGGREGATE, CATALOG, JOIN, SINGLE_ROW, WINDOW, FunctionSig
from .errors import (
    ArityError,
    FormulaError,
    MisplacedReferenceError,
    SyntaxFormulaError,
    TypeMismatchError,
    UnknownFunctionError,
    UnknownReferenceError,
)
from .parser import parse_formula
from .typecheck import (
    Classification,
    References,
    classify,
    extract_references,
    typecheck,
)

__all__ = [
    "ast",
    "parse_formula",
    "typecheck",
    "classify",
    "extract_references",
    "Classification",
    "References",
    "FunctionSig",
    "CATALOG",
    "SINGLE_ROW",
    "AGGREGATE",
    "WINDOW",
    "JOIN",
    "FormulaError",
    "SyntaxFormulaError",
    "UnknownReferenceError",
    "UnknownFunctionError",
    "ArityError",
    "TypeMismatchError",
    "MisplacedReferenceError",
]
