from .table import ColumnarTable, read_csv, write_csv
from .evaluate import evaluate_plan, SourceLookup
from .derive import derive_locally

__all__ = [
    "ColumnarTable",
    "read_csv",
    "write_csv",
    "evaluate_plan",
    "SourceLookup",
    "derive_locally",
]
