"""Reference analysis scenarios over a synthetic flights dataset.

Three end-to-end workbooks exercising the stack at realistic (100k-row)
scale: cohort analysis, sessionization, and ad-hoc data augmentation.
Each scenario builds its document programmatically, loads generated data
into a warehouse, and can be checked against independent brute-force
computations.  The synthetic generator replaces the very large public
on-time flights dataset with a seeded sample of the same shape.
"""

from __future__ import annotations

import datetime
import random
from dataclasses import dataclass
from typing import Optional

from .model import (
    AdhocTableSpec,
    ColumnSpec,
    Element,
    LevelSpec,
    Page,
    SourceSpec,
    TableElementSpec,
    WorkbookDocument,
)
from .values import ValueType

SCENARIO_NAMES = ("cohort", "sessionize", "augment")

_CARRIERS = ["AA", "DL", "UA", "WN", "B6", "AS", "NK", "F9"]
_AIRPORTS = [
    "ATL", "DFW", "DEN", "ORD", "LAX", "JFK", "LAS", "MCO",
    "MIA", "CLT", "SEA", "PHX", "EWR", "SFO", "IAH", "BOS",
]

FLIGHT_SCHEMA: list[tuple[str, ValueType]] = [
    ("flight_date", ValueType.DATE),
    ("tail_number", ValueType.TEXT),
    ("carrier", ValueType.TEXT),
    ("origin", ValueType.TEXT),
    ("dest", ValueType.TEXT),
    ("air_time_minutes", ValueType.NUMBER),
    ("cancelled", ValueType.LOGICAL),
]


def generate_flights(rows: int, seed: int) -> list[tuple]:
    """Seeded synthetic flight records.

    Tail numbers enter service at staggered dates (so cohorts differ) and
    fly on random days afterwards, with occasional long idle gaps (so
    sessionization finds more than one session per tail).
    """
    rng = random.Random(seed)
    n_tails = max(1, rows // 60)
    epoch = datetime.datetime(2019, 1, 1)
    horizon_days = 3 * 365
    tails = []
    for i in range(n_tails):
        tail = f"N{100 + i}GB"
        start = rng.randrange(horizon_days - 90)
        carrier = rng.choice(_CARRIERS)
        tails.append((tail, start, carrier))
    out: list[tuple] = []
    for _ in range(rows):
        tail, start, carrier = rng.choice(tails)
        # mostly soon after the previous activity window; sometimes a
        # far jump to create inactivity gaps
        if rng.random() < 0.12:
            day = start + rng.randrange(horizon_days - start)
        else:
            day = start + min(int(rng.expovariate(1 / 45.0)),
                              horizon_days - start - 1)
        when = epoch + datetime.timedelta(
            days=day, minutes=rng.randrange(24 * 60)
        )
        origin, dest = rng.sample(_AIRPORTS, 2)
        out.append((
            when.strftime("%Y-%m-%d %H:%M:%S.%f"),
            tail,
            carrier,
            origin,
            dest,
            float(rng.randrange(25, 400)),
            1 if rng.random() < 0.02 else 0,
        ))
    out.sort(key=lambda r: (r[0], r[1]))
    return out


# ---------------------------------------------------------------------------
# scenario documents


def cohort_document(table: str = "flights") -> WorkbookDocument:
    """Cohort analysis: group tails by first-flight quarter, then track
    what share of each cohort is still active in every later quarter."""
    dim = Element("firsts", "table", TableElementSpec(
        source=SourceSpec("warehouse-table", table),
        levels=[LevelSpec(), LevelSpec(keys=["f1"]), LevelSpec()],
        columns={
            "f1": ColumnSpec("f1", "Tail", "[tail_number]"),
            "f2": ColumnSpec("f2", "FirstFlight", "Min([flight_date])",
                             resident_level=1),
        },
    ))
    main = Element("cohorts", "table", TableElementSpec(
        source=SourceSpec("warehouse-table", table),
        levels=[
            LevelSpec(),
            LevelSpec(keys=["c3", "c4"]),
            LevelSpec(keys=["c3"]),
            LevelSpec(),
        ],
        columns={
            "c1": ColumnSpec("c1", "Tail", "[tail_number]"),
            "c2": ColumnSpec(
                "c2", "FirstFlight",
                'Rollup(Min([firsts/FirstFlight]), [Tail], [firsts/Tail])',
            ),
            "c3": ColumnSpec("c3", "CohortQuarter",
                             'DateTrunc("quarter", [FirstFlight])'),
            "c4": ColumnSpec("c4", "Quarter",
                             'DateTrunc("quarter", [flight_date])'),
            "c5": ColumnSpec("c5", "ActiveTails",
                             "CountDistinct([Tail])", resident_level=1),
            "c6": ColumnSpec("c6", "Population",
                             "CountDistinct([Tail])", resident_level=2),
            "c7": ColumnSpec(
                "c7", "ActivePct",
                "Round([ActiveTails] / [Population] * 100, 2)",
                resident_level=1,
            ),
        },
    ))
    return WorkbookDocument("scenario-cohort",
                            pages=[Page("p1", [dim, main])])


def sessionize_document(gap_days: int = 30,
                        table: str = "flights") -> WorkbookDocument:
    """Sessionization: previous-flight offset per tail, gap comparison,
    filled-down session start, then per-session statistics."""
    flag = f"If(Coalesce([GapDays], {gap_days + 1}) > {gap_days}, " \
           "[FlightDate], Null)"
    base = Element("sessions", "table", TableElementSpec(
        source=SourceSpec("warehouse-table", table),
        levels=[
            LevelSpec(ordering=[("s0", "asc")]),
            LevelSpec(keys=["s1"]),
            LevelSpec(),
        ],
        columns={
            "s0": ColumnSpec("s0", "FlightDate", "[flight_date]"),
            "s1": ColumnSpec("s1", "Tail", "[tail_number]"),
            "s2": ColumnSpec("s2", "AirTime", "[air_time_minutes]"),
            "s3": ColumnSpec("s3", "WasCancelled", "[cancelled]"),
            "s4": ColumnSpec("s4", "PrevFlight", "Lag([flight_date])"),
            "s5": ColumnSpec(
                "s5", "GapDays",
                'DateDiff("day", [PrevFlight], [FlightDate])',
            ),
            "s6": ColumnSpec("s6", "SessionStart", f"FillDown({flag})"),
            "s7": ColumnSpec("s7", "CumAirTime",
                             "CumulativeSum([AirTime])"),
            "s8": ColumnSpec("s8", "AirTimeBucket",
                             "Round([CumAirTime] / 1000, 0)"),
        },
    ))
    stats = Element("session_stats", "table", TableElementSpec(
        source=SourceSpec("element-ref", "sessions"),
        levels=[LevelSpec(), LevelSpec(keys=["t1", "t2"]), LevelSpec()],
        columns={
            "t1": ColumnSpec("t1", "Plane", "[Tail]"),
            "t2": ColumnSpec("t2", "Session", "[SessionStart]"),
            "t3": ColumnSpec("t3", "Flights", "Count()", resident_level=1),
            "t4": ColumnSpec(
                "t4", "CancelRate",
                "CountIf([WasCancelled]) / Count()", resident_level=1,
            ),
            "t5": ColumnSpec("t5", "SessionAirTime", "Sum([AirTime])",
                             resident_level=1),
        },
    ))
    return WorkbookDocument("scenario-sessionize",
                            pages=[Page("p1", [base, stats])])


def augment_document(table: str = "flights",
                     dim_table: str = "carrier_names") -> WorkbookDocument:
    """Augmentation: enrich flights with a looked-up carrier name from an
    editable ad-hoc dimension table."""
    dim = Element("carriers", "adhoc-table", AdhocTableSpec(
        schema=CARRIER_DIM_SCHEMA, warehouse_table_ref=dim_table,
    ))
    dim_view = Element("carrier_dim", "table", TableElementSpec(
        source=SourceSpec("warehouse-table", dim_table),
        levels=[LevelSpec(), LevelSpec()],
        columns={
            "d1": ColumnSpec("d1", "Code", "[code]"),
            "d2": ColumnSpec("d2", "Name", "[name]"),
        },
    ))
    main = Element("enriched", "table", TableElementSpec(
        source=SourceSpec("warehouse-table", table),
        levels=[LevelSpec(), LevelSpec(keys=["a2"]), LevelSpec()],
        columns={
            "a1": ColumnSpec("a1", "Carrier", "[carrier]"),
            "a2": ColumnSpec(
                "a2", "CarrierName",
                'Lookup([carrier_dim/Name], [Carrier], [carrier_dim/Code])',
            ),
            "a3": ColumnSpec("a3", "Flights", "Count()", resident_level=1),
        },
    ))
    return WorkbookDocument("scenario-augment",
                            pages=[Page("p1", [dim, dim_view, main])])


CARRIER_DIM_SCHEMA: list[tuple[str, ValueType]] = [
    ("code", ValueType.TEXT),
    ("name", ValueType.TEXT),
]

# "Southwest" deliberately misspelled; the scenario corrects it through
# an ad-hoc edit and watches the fix propagate through the Lookup.
CARRIER_DIM_ROWS: list[tuple] = [
    ("AA", "American Airlines"),
    ("DL", "Delta Air Lines"),
    ("UA", "United Airlines"),
    ("WN", "Southwst Airlines"),
    ("B6", "JetBlue Airways"),
    ("AS", "Alaska Airlines"),
    ("NK", "Spirit Airlines"),
    ("F9", "Frontier Airlines"),
]


# ---------------------------------------------------------------------------
# independent brute-force checkers


def brute_force_sessions(rows: list[tuple],
                         gap_days: int = 30) -> dict[tuple[str, str], int]:
    """Label sessions directly: sort each tail's flights by date and start
    a new session whenever the gap exceeds the threshold.  Returns flight
    counts keyed by (tail, session start date text)."""
    by_tail: dict[str, list[str]] = {}
    for r in rows:
        by_tail.setdefault(r[1], []).append(r[0])
    counts: dict[tuple[str, str], int] = {}
    for tail, dates in by_tail.items():
        dates.sort()
        start: Optional[str] = None
        prev: Optional[datetime.datetime] = None
        for text in dates:
            when = datetime.datetime.strptime(text, "%Y-%m-%d %H:%M:%S.%f")
            # calendar-day difference, matching DateDiff("day", ...)
            if prev is None or (when.date() - prev.date()).days > gap_days:
                start = text
            prev = when
            key = (tail, start)  # type: ignore[arg-type]
            counts[key] = counts.get(key, 0) + 1
    return counts


def brute_force_cohorts(rows: list[tuple]
                        ) -> dict[tuple[str, str], tuple[int, int]]:
    """(cohort quarter, quarter) -> (active tails, cohort population)."""
    first: dict[str, str] = {}
    for r in rows:
        tail, date = r[1], r[0]
        if tail not in first or date < first[tail]:
            first[tail] = date
    def quarter(text: str) -> str:
        when = datetime.datetime.strptime(text, "%Y-%m-%d %H:%M:%S.%f")
        month = 3 * ((when.month - 1) // 3) + 1
        return f"{when.year:04d}-{month:02d}-01 00:00:00.000000"
    population: dict[str, set] = {}
    for tail, date in first.items():
        population.setdefault(quarter(date), set()).add(tail)
    active: dict[tuple[str, str], set] = {}
    for r in rows:
        tail = r[1]
        key = (quarter(first[tail]), quarter(r[0]))
        active.setdefault(key, set()).add(tail)
    return {
        key: (len(tails), len(population[key[0]]))
        for key, tails in active.items()
    }


@dataclass
class ScenarioResult:
    name: str
    rows: int
    checked: int
    ok: bool
    detail: str
