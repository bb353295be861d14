"""Local derivation: answer a new plan from an already-fetched result.

``derive_locally`` is deliberately conservative — it returns a table only
when the requested plan provably reduces to replaying stages over rows the
cached result already contains, and returns ``None`` otherwise.  Soundness
(result equals full evaluation) is the only guarantee; returning ``None``
is always legal.

The mechanism: find the longest shared stage prefix of the two plans
(lowering is deterministic, so a shared document prefix lowers to
byte-identical stages).  If the cached plan adds nothing after that prefix
except its display sort/projection, invert the projection to recover the
prefix output — including the synthetic ordinal, which restores the exact
original row order — and replay the requested plan's remaining stages with
the reference evaluator.  Any reference to a table or column the cache did
not retain aborts the derivation.
"""

from __future__ import annotations

from typing import Optional

from ..plan import stages as st
from . import kernels
from .evaluate import ORD, _run_stage
from .table import ColumnarTable


class _NoLookup:
    """Derivation may not touch sources; any scan aborts it."""

    def scan_table(self, scan):
        raise KeyError(scan.table)


def derive_locally(cached_plan: st.Plan, cached_table: ColumnarTable,
                   requested_plan: st.Plan, complete: bool = True
                   ) -> Optional[ColumnarTable]:
    if not complete:
        return None
    if requested_plan.fingerprint() == cached_plan.fingerprint():
        return cached_table

    k = _shared_prefix(cached_plan.stages, requested_plan.stages)
    if k == 0 or len(requested_plan.stages) <= k:
        return None

    if k == len(cached_plan.stages):
        # cached plan is a strict prefix (e.g. the unpaged superset of a
        # paged request); its output table stands in for the prefix output
        env = {cached_plan.stages[-1].out: cached_table}
    else:
        recovered = _invert_projection(cached_plan, cached_table, k)
        if recovered is None:
            return None
        # the display tail may read an earlier stage than k-1 (base-view
        # plans sort the unaggregated rows even when summary stages were
        # computed), so bind the rows to the stage they actually came from
        name, base = recovered
        env = {name: base}

    try:
        for stage in requested_plan.stages[k:]:
            if isinstance(stage, st.Scan):
                return None
            env[stage.out] = _run_stage(stage, env, _NoLookup())
        return env[requested_plan.output]
    except KeyError:
        return None


def _shared_prefix(a: list[st.Stage], b: list[st.Stage]) -> int:
    k = 0
    for sa, sb in zip(a, b):
        if st._stage_text(sa) != st._stage_text(sb):
            break
        k += 1
    return k


def _invert_projection(cached_plan: st.Plan, cached_table: ColumnarTable,
                       k: int) -> Optional[tuple[str, ColumnarTable]]:
    """Recover a prefix stage's output from the cached display result,
    returning the name of the stage the rows belong to."""
    tail = cached_plan.stages[k:]
    if any(not isinstance(s, (st.Sort, st.Project)) for s in tail):
        return None  # cached computed more than display shaping; rows differ
    proj = cached_plan.stages[-1]
    if not isinstance(proj, st.Project):
        return None
    source_stage = next(
        (s.input for s in tail if isinstance(s, st.Sort)), proj.input
    )
    sources = [c[0] for c in proj.cols]
    if len(set(sources)) != len(sources) or ORD not in sources:
        return None
    if any(display not in cached_table.columns for _s, display, _t in proj.cols):
        return None
    base = ColumnarTable()
    for source, display, vtype in proj.cols:
        base.add_column(source, vtype, list(cached_table.columns[display]))
    order = kernels.sort_indices(
        list(range(base.nrows)), [(base.columns[ORD], False)]
    )
    return source_stage, base.select(order)
