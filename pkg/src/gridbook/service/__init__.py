"""HTTP service mediating all warehouse access."""

from .core import GridbookService, QueryResult, ServiceConfig, ServiceError
from .driver import SqliteWarehouseDriver
from .queue import Superseded, WorkloadQueue

__all__ = [
    "GridbookService",
    "QueryResult",
    "ServiceConfig",
    "ServiceError",
    "SqliteWarehouseDriver",
    "Superseded",
    "WorkloadQueue",
]
