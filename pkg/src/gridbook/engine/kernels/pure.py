"""Pure-Python reference kernels.

Ordering follows the embedded engine's storage model: Null sorts after
everything (we always emit NULLS LAST), numerics sort before text, and
within a class the natural value order applies.  Descending reverses the
non-null ordering but keeps nulls last.
"""

from __future__ import annotations

from ...values import Storage, sum_number, to_number


class _Desc:
    """Order-reversing wrapper usable inside composite sort keys."""

    __slots__ = ("v",)

    def __init__(self, v):
        self.v = v

    def __lt__(self, other):
        return other.v < self.v

    def __eq__(self, other):
        return other.v == self.v


def _asc_key(v: Storage):
    if v is None:
        return (1, 0, 0)
    if isinstance(v, (int, float)):
        return (0, 0, v)
    return (0, 1, v)


def _key_item(v: Storage, descending: bool):
    if not descending:
        return _asc_key(v)
    if v is None:
        return (1, _Desc((0, 0)))
    if isinstance(v, (int, float)):
        return (0, _Desc((0, v)))
    return (0, _Desc((1, v)))


def sort_indices(indices: list[int],
                 items: list[tuple[list[Storage], bool]]) -> list[int]:
    """Stable sort of row indices by (column, descending) items."""
    if not items:
        return list(indices)

    def key(i: int):
        return tuple(_key_item(col[i], desc) for col, desc in items)

    return sorted(indices, key=key)


def group_rows(key_cols: list[list[Storage]], indices: list[int]
               ) -> list[list[int]]:
    """Partition rows by key tuple, first-seen order.  Nulls group
    together; equal numeric values group regardless of int/float
    representation (dict equality already matches the engine)."""
    if not key_cols:
        return [list(indices)]
    groups: dict[tuple, list[int]] = {}
    for i in indices:
        k = tuple(col[i] for col in key_cols)
        bucket = groups.get(k)
        if bucket is None:
            groups[k] = [i]
        else:
            bucket.append(i)
    return list(groups.values())


def fill_down(ordered: list[Storage]) -> list[Storage]:
    out: list[Storage] = []
    last: Storage = None
    for v in ordered:
        if v is not None:
            last = v
        out.append(last)
    return out


def running_sum(ordered: list[Storage]) -> list[Storage]:
    """Cumulative sum that skips nulls; Null until the first non-null."""
    out: list[Storage] = []
    acc: Storage = None
    for v in ordered:
        if v is not None:
            n = sum_number(v)
            acc = n if acc is None else acc + n
        out.append(acc)
    return out


def moving_average(ordered: list[Storage], size: int) -> list[Storage]:
    """Mean of the current row and up to size-1 preceding rows, skipping
    nulls; Null when every row in the frame is null."""
    out: list[Storage] = []
    for j in range(len(ordered)):
        lo = max(0, j - size + 1)
        total = 0.0
        count = 0
        for v in ordered[lo:j + 1]:
            if v is not None:
                total += float(to_number(v))
                count += 1
        out.append(total / count if count else None)
    return out
