"""gridbook: declarative workbook tables compiled to SQL, with an in-memory
columnar evaluation oracle, a caching query service, and a CLI."""

__version__ = "0.1.0"
