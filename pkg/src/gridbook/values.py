"""Value types and scalar semantics shared by the evaluator and the SQL compiler.

The in-memory evaluator and the embedded SQL engine must agree cell-for-cell,
so scalar semantics here deliberately mirror SQLite's storage model:

* ``Logical`` is stored as an integer 0/1, ``Number`` as int/float, ``Text``
  and ``Json`` as strings, ``Date`` as an ISO-8601 UTC string (microsecond
  precision, fixed width) whose lexicographic order equals chronological order.
* The multi-value marker produced by ATTR is the text token ``#MULTIVALUE``;
  mixed-class comparisons and coercions follow SQLite rules (numerics sort
  before text, text coerces to its numeric prefix in arithmetic).
"""

from __future__ import annotations

import enum
import json
import math
import re
from datetime import datetime, timezone
from decimal import ROUND_DOWN, Decimal

MULTIVALUE_TOKEN = "#MULTIVALUE"

DATE_FORMAT = "%Y-%m-%d %H:%M:%S.%f"
DATE_WIDTH = 26  # len("2020-01-01 00:00:00.000000")


class ValueType(enum.Enum):
    LOGICAL = "Logical"
    NUMBER = "Number"
    TEXT = "Text"
    DATE = "Date"
    JSON = "Json"

    def __str__(self) -> str:
        return self.value


Storage = None | int | float | str


# ---------------------------------------------------------------------------
# Date representation

_DATE_INPUT_FORMATS = (
    "%Y-%m-%d %H:%M:%S.%f",
    "%Y-%m-%d %H:%M:%S",
    "%Y-%m-%dT%H:%M:%S.%f",
    "%Y-%m-%dT%H:%M:%S",
    "%Y-%m-%d",
)


def date_to_storage(dt: datetime) -> str:
    if dt.tzinfo is not None:
        dt = dt.astimezone(timezone.utc).replace(tzinfo=None)
    return dt.strftime(DATE_FORMAT)


def storage_to_date(text: str) -> datetime:
    return datetime.strptime(text, DATE_FORMAT)


def parse_date_text(text: str) -> str | None:
    """Parse a permissive ISO-ish date string to canonical storage form."""
    t = text.strip()
    for fmt in _DATE_INPUT_FORMATS:
        try:
            return date_to_storage(datetime.strptime(t, fmt))
        except ValueError:
            continue
    return None


# ---------------------------------------------------------------------------
# SQLite-compatible coercions

_NUM_PREFIX = re.compile(r"^\s*[+-]?(\d+(\.\d*)?|\.\d+)([eE][+-]?\d+)?")
_INT_TEXT = re.compile(r"^\s*[+-]?\d+\s*$")


def text_to_number(text: str) -> int | float:
    """Longest numeric prefix, the way SQLite coerces text in arithmetic."""
    m = _NUM_PREFIX.match(text)
    if not m:
        return 0
    token = m.group(0).strip()
    if _INT_TEXT.match(token):
        try:
            i = int(token)
            if -(2**63) <= i < 2**63:
                return i
        except ValueError:
            pass
    try:
        return float(token)
    except ValueError:
        return 0


def sum_number(v: Storage) -> int | float | None:
    """Coercion used by SUM (plain and windowed): fully numeric text keeps
    its natural type, partial or non-numeric text becomes REAL of the
    longest numeric prefix."""
    if v is None or isinstance(v, (int, float)):
        return v
    n = text_to_number(v)
    m = _NUM_PREFIX.match(v)
    if m is None or v[m.end():].strip():
        return float(n)
    return n


def to_number(v: Storage) -> int | float | None:
    if v is None:
        return None
    if isinstance(v, (int, float)):
        return v
    return text_to_number(v)


def is_truthy(v: Storage) -> bool | None:
    """SQLite boolean context: NULL propagates, otherwise nonzero numeric."""
    n = to_number(v)
    if n is None:
        return None
    return n != 0


def storage_class(v: Storage) -> int:
    """SQLite type ordering rank: NULL < numeric < text."""
    if v is None:
        return 0
    if isinstance(v, (int, float)):
        return 1
    return 2


def compare(a: Storage, b: Storage) -> int | None:
    """Three-valued SQLite comparison: None when either side is NULL."""
    if a is None or b is None:
        return None
    ca, cb = storage_class(a), storage_class(b)
    if ca != cb:
        return -1 if ca < cb else 1
    if a < b:  # type: ignore[operator]
        return -1
    if a > b:  # type: ignore[operator]
        return 1
    return 0


# ---------------------------------------------------------------------------
# Arithmetic mirroring SQLite operators

def add(a: Storage, b: Storage) -> Storage:
    x, y = to_number(a), to_number(b)
    if x is None or y is None:
        return None
    return x + y


def sub(a: Storage, b: Storage) -> Storage:
    x, y = to_number(a), to_number(b)
    if x is None or y is None:
        return None
    return x - y


def mul(a: Storage, b: Storage) -> Storage:
    x, y = to_number(a), to_number(b)
    if x is None or y is None:
        return None
    return x * y


def div(a: Storage, b: Storage) -> Storage:
    """Real division; division by zero yields NULL (compiled with a NULLIF
    guard on the SQL side so both routes agree)."""
    x, y = to_number(a), to_number(b)
    if x is None or y is None:
        return None
    y = float(y)
    if y == 0.0:
        return None
    return float(x) / y


def mod(a: Storage, b: Storage) -> Storage:
    """SQLite %: operands truncated to int64, C remainder semantics."""
    x, y = to_number(a), to_number(b)
    if x is None or y is None:
        return None
    ix, iy = _trunc64(x), _trunc64(y)
    if iy == 0:
        return None
    r = abs(ix) % abs(iy)
    return -r if ix < 0 else r


def _trunc64(n: int | float) -> int:
    if isinstance(n, float):
        if math.isnan(n):
            return 0
        n = max(min(n, 2.0**63 - 1024), -(2.0**63))
        return int(n)
    return n


def neg(a: Storage) -> Storage:
    n = to_number(a)
    if n is None:
        return None
    return -n


def concat(a: Storage, b: Storage) -> Storage:
    """SQLite ||: NULL-propagating text concatenation."""
    if a is None or b is None:
        return None
    return cast_text(a) + cast_text(b)


def cast_text(v: Storage) -> str:
    if isinstance(v, str):
        return v
    if isinstance(v, bool):  # defensive; storage never holds bool
        return "1" if v else "0"
    if isinstance(v, int):
        return str(v)
    s = "%.15g" % v
    if not any(c in s for c in ".einfa"):
        s += ".0"
    return s


def logical_and(a: Storage, b: Storage) -> Storage:
    ta, tb = is_truthy(a), is_truthy(b)
    if ta is False or tb is False:
        return 0
    if ta is None or tb is None:
        return None
    return 1


def logical_or(a: Storage, b: Storage) -> Storage:
    ta, tb = is_truthy(a), is_truthy(b)
    if ta is True or tb is True:
        return 1
    if ta is None or tb is None:
        return None
    return 0


def logical_not(a: Storage) -> Storage:
    t = is_truthy(a)
    if t is None:
        return None
    return 0 if t else 1


# ---------------------------------------------------------------------------
# Function library

def sqlite_round(v: Storage, digits: Storage = 0) -> Storage:
    """Mirror of the embedded engine's round().

    Values beyond 2^52 have no fractional part and pass through.  For zero
    digits the engine casts r+0.5 through int64.  Otherwise it formats the
    value through its printf "%.*f", which adds a rounding constant of
    0.5*10^-n (compensated by r*3e-16 at low magnitudes) and then prints at
    most 16 significant digits; we replicate that with exact decimal
    truncation.  The last of the 16 digits can still differ from the
    engine by one ulp of the decimal rendering on pathological inputs, a
    relative error around 1e-15, far inside the comparison tolerance.
    """
    x = to_number(v)
    if x is None:
        return None
    n = to_number(digits)
    if n is None:
        return None
    n = max(0, min(30, _trunc64(n)))
    r = float(x)
    if math.isnan(r) or math.isinf(r):
        return None
    if r < -4503599627370496.0 or r > 4503599627370496.0:
        return r
    if n == 0:
        if 0 <= r < 2**63 - 1:
            return float(int(r + 0.5))
        if r < 0 and -r < 2**63 - 1:
            return -float(int(-r + 0.5))
        return r
    neg = r < 0
    mag = -r if neg else r
    rounder = 0.5
    for _ in range(n):
        rounder *= 0.1
    if mag != 0.0:
        exponent = math.frexp(mag)[1] - 1
        if n + exponent // 3 < 15:
            rounder = rounder + mag * 3e-16
    mag = mag + rounder
    q = Decimal(mag)
    if q != 0:
        q = q.quantize(Decimal(1).scaleb(q.adjusted() - 15), rounding=ROUND_DOWN)
    q = q.quantize(Decimal(1).scaleb(-n), rounding=ROUND_DOWN)
    out = float(q)
    return -out if neg else out


_ASCII_LOWER = str.maketrans(
    "ABCDEFGHIJKLMNOPQRSTUVWXYZ", "abcdefghijklmnopqrstuvwxyz"
)
_ASCII_UPPER = str.maketrans(
    "abcdefghijklmnopqrstuvwxyz", "ABCDEFGHIJKLMNOPQRSTUVWXYZ"
)


def ascii_lower(v: Storage) -> Storage:
    if v is None:
        return None
    return cast_text(v).translate(_ASCII_LOWER)


def ascii_upper(v: Storage) -> Storage:
    if v is None:
        return None
    return cast_text(v).translate(_ASCII_UPPER)


def like(text: Storage, pattern: Storage) -> Storage:
    """SQLite LIKE: ASCII-case-insensitive, % and _ wildcards."""
    if text is None or pattern is None:
        return None
    t = cast_text(text).translate(_ASCII_LOWER)
    p = cast_text(pattern).translate(_ASCII_LOWER)
    rx = ["^"]
    for ch in p:
        if ch == "%":
            rx.append(".*")
        elif ch == "_":
            rx.append(".")
        else:
            rx.append(re.escape(ch))
    rx.append("$")
    return 1 if re.match("".join(rx), t, re.DOTALL) else 0


DATE_UNITS = ("year", "quarter", "month", "day", "hour")

_INT_PREFIX = re.compile(r"^\s*[+-]?\d+")


def _cast_int(text: str) -> int:
    """SQLite CAST(text AS INTEGER): longest integer prefix, else 0."""
    m = _INT_PREFIX.match(text)
    if not m:
        return 0
    i = int(m.group(0).strip())
    return max(min(i, 2**63 - 1), -(2**63))


def date_trunc(unit: Storage, d: Storage) -> Storage:
    if d is None or unit is None:
        return None
    s = str(d)
    if len(s) < 13:
        return None
    u = str(unit).lower()
    if u == "year":
        return s[:4] + "-01-01 00:00:00.000000"
    if u == "quarter":
        month = _cast_int(s[5:7])
        qm = ((month - 1) // 3) * 3 + 1
        return "%s-%02d-01 00:00:00.000000" % (s[:4], qm)
    if u == "month":
        return s[:7] + "-01 00:00:00.000000"
    if u == "day":
        return s[:10] + " 00:00:00.000000"
    if u == "hour":
        return s[:13] + ":00:00.000000"
    return None


def date_diff(unit: Storage, start: Storage, end: Storage) -> Storage:
    if start is None or end is None or unit is None:
        return None
    a, b = str(start), str(end)
    u = str(unit).lower()
    if len(a) < 10 or len(b) < 10:
        return None
    ya, ma = _cast_int(a[:4]), _cast_int(a[5:7])
    yb, mb = _cast_int(b[:4]), _cast_int(b[5:7])
    if u == "year":
        return yb - ya
    if u == "quarter":
        return (yb - ya) * 4 + ((mb - 1) // 3 - (ma - 1) // 3)
    if u == "month":
        return (yb - ya) * 12 + (mb - ma)
    if u in ("day", "hour"):
        try:  # invalid calendar text -> Null, like julianday() in SQL
            da = datetime(ya, ma, _cast_int(a[8:10]))
            db = datetime(yb, mb, _cast_int(b[8:10]))
        except ValueError:
            return None
        days = (db - da).days
        if u == "day":
            return days
        if len(a) < 13 or len(b) < 13:
            return None
        return days * 24 + (_cast_int(b[11:13]) - _cast_int(a[11:13]))
    return None


def date_year(d: Storage) -> Storage:
    if d is None or len(str(d)) < 4:
        return None
    return _cast_int(str(d)[:4])


def date_month(d: Storage) -> Storage:
    if d is None or len(str(d)) < 7:
        return None
    return _cast_int(str(d)[5:7])


# ---------------------------------------------------------------------------
# Typed boundary conversions (CSV fixtures, JSON API payloads)

def storage_to_json(v: Storage, vtype: ValueType):
    if v is None:
        return None
    if vtype is ValueType.LOGICAL:
        if isinstance(v, str):
            return v  # multi-value marker
        return bool(v)
    return v


def json_to_storage(v, vtype: ValueType) -> Storage:
    if v is None:
        return None
    if vtype is ValueType.LOGICAL:
        if isinstance(v, bool):
            return 1 if v else 0
        if isinstance(v, str):
            return v
        return 1 if v else 0
    if vtype is ValueType.NUMBER:
        if isinstance(v, bool):
            raise TypeError("boolean is not a Number")
        if isinstance(v, (int, float)):
            return v
        return text_to_number(str(v))
    if vtype is ValueType.DATE:
        parsed = parse_date_text(str(v))
        if parsed is None:
            raise ValueError(f"unparseable date: {v!r}")
        return parsed
    if vtype is ValueType.JSON and not isinstance(v, str):
        return json.dumps(v, sort_keys=True, separators=(",", ":"))
    return str(v)


def storage_to_csv(v: Storage, vtype: ValueType) -> str:
    if v is None:
        return ""
    if vtype is ValueType.LOGICAL and isinstance(v, (int, float)):
        return "true" if v else "false"
    if vtype is ValueType.DATE and isinstance(v, str):
        # ISO-8601 with the redundant microsecond tail trimmed
        return v[:-7] if v.endswith(".000000") else v
    return cast_text(v)


def csv_to_storage(text: str, vtype: ValueType) -> Storage:
    if text == "":
        return None
    if vtype is ValueType.LOGICAL:
        low = text.strip().lower()
        if low in ("true", "1", "t", "yes"):
            return 1
        if low in ("false", "0", "f", "no"):
            return 0
        return text  # marker or malformed; kept verbatim
    if vtype is ValueType.NUMBER:
        return text_to_number(text)
    if vtype is ValueType.DATE:
        parsed = parse_date_text(text)
        if parsed is None:
            raise ValueError(f"unparseable date: {text!r}")
        return parsed
    return text
