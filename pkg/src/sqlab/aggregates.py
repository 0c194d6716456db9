"""Integer aggregation functions considered for the window (f_w) and group (f_a) stages.

The same roster serves three purposes: the collision simulations, the
associativity checks, and the user-defined aggregates registered on the
embedded engine (the engine has no native ``bit_xor`` or ``checksum_agg``).
"""

from __future__ import annotations

import math
from functools import reduce
from typing import Callable, Iterable, Sequence

MASK64 = (1 << 64) - 1

ROSTER = (
    "avg",
    "count",
    "max",
    "min",
    "sum",
    "modular_sum",
    "quartile_1",
    "median",
    "quartile_3",
    "iqr",
    "bit_and",
    "bit_or",
    "bit_xor",
    "checksum_agg",
)

ASSOCIATIVE = frozenset({"sum", "bit_xor", "max", "min", "bit_or", "bit_and"})

# Display order of the partial-range collision ranking, fewest collisions first.
PARTIAL_RANGE_RANKING = (
    "checksum_agg",
    "sum",
    "bit_xor",
    "iqr",
    "quartile_3",
    "quartile_1",
    "median",
    "avg",
    "min",
    "max",
    "count",
    "bit_or",
    "bit_and",
)

# Ordered-set aggregates: they take a WITHIN GROUP clause in SQL and cannot
# stand as a plain argument-level aggregate inside a token formula.
ORDERED_SET = frozenset({"quartile_1", "median", "quartile_3", "iqr"})

CORE = frozenset({"avg", "count", "max", "min", "sum"})
PERCENTILE = ORDERED_SET
BITWISE = frozenset({"bit_and", "bit_or", "bit_xor"})

# Availability matrix (static data, not probed).
AVAILABILITY = {
    "DuckDB": CORE | PERCENTILE | BITWISE,
    "IBM Db2": CORE | PERCENTILE,
    "MySQL": CORE | BITWISE,
    "Oracle": CORE | PERCENTILE,
    "PostgreSQL": CORE | PERCENTILE | BITWISE,
    "Snowflake": CORE | PERCENTILE | BITWISE | {"checksum_agg"},
    "SQL Server": CORE | PERCENTILE | {"checksum_agg"},
    "SQLite": CORE,
}


def mix64(x: int) -> int:
    """SplitMix64 finalizer: a bijective avalanche mix on 64-bit words."""
    z = x & MASK64
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & MASK64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & MASK64
    return z ^ (z >> 31)


def checksum(values: Iterable[int]) -> int:
    # Commutative combine of mixed elements, so the result ignores order.
    total = 0
    for v in values:
        total = (total + mix64(v)) & MASK64
    return total


def percentile(values: Sequence[float], fraction: float) -> float:
    """Linear interpolation between closest ranks (``percentile_cont``)."""
    ordered = sorted(values)
    position = (len(ordered) - 1) * fraction
    low = math.floor(position)
    high = math.ceil(position)
    if low == high:
        return float(ordered[low])
    return ordered[low] + (ordered[high] - ordered[low]) * (position - low)


def _bit_and(values: Sequence[int]) -> int:
    return reduce(lambda a, b: a & b, values)


def _bit_or(values: Sequence[int]) -> int:
    return reduce(lambda a, b: a | b, values)


def _bit_xor(values: Sequence[int]) -> int:
    return reduce(lambda a, b: a ^ b, values)


_FUNCTIONS: dict[str, Callable[[Sequence[int]], float]] = {
    "avg": lambda v: sum(v) / len(v),
    "count": len,
    "max": max,
    "min": min,
    "sum": sum,
    "quartile_1": lambda v: percentile(v, 0.25),
    "median": lambda v: percentile(v, 0.5),
    "quartile_3": lambda v: percentile(v, 0.75),
    "iqr": lambda v: percentile(v, 0.75) - percentile(v, 0.25),
    "bit_and": _bit_and,
    "bit_or": _bit_or,
    "bit_xor": _bit_xor,
    "checksum_agg": checksum,
}


def aggregate(fn_id: str, multiset: Sequence[int], token_bits: int = 64) -> int | None:
    """Integer outcome of ``fn_id`` over ``multiset``; None for an empty input.

    Float-valued functions are truncated toward zero. ``modular_sum`` wraps at
    ``2**token_bits``; ``checksum_agg`` keeps the low ``token_bits`` bits.
    """
    if fn_id not in ROSTER:
        raise ValueError(f"unknown aggregation function {fn_id!r}")
    values = list(multiset)
    if not values:
        return None
    if fn_id == "modular_sum":
        return sum(values) % (1 << token_bits)
    if fn_id == "checksum_agg":
        return checksum(values) & ((1 << token_bits) - 1)
    return int(_FUNCTIONS[fn_id](values))


# -- engine-side aggregates ------------------------------------------------------
#
# Window-capable classes for sqlite3's create_window_function. Inputs are
# nullable integers; NULL inputs are skipped like the builtin aggregates do.
# Results are returned as signed 64-bit integers, the engine's native width.


def to_signed(x: int) -> int:
    x &= MASK64
    return x - (1 << 64) if x >= 1 << 63 else x


def to_unsigned(x: int) -> int:
    return int(x) & MASK64


class _Collecting:
    fn_id = ""

    def __init__(self) -> None:
        self.values: list[int] = []

    def step(self, value) -> None:
        if value is not None:
            self.values.append(to_unsigned(int(value)))

    def inverse(self, value) -> None:
        if value is not None:
            self.values.remove(to_unsigned(int(value)))

    def value(self):
        outcome = aggregate(self.fn_id, self.values)
        return None if outcome is None else to_signed(outcome)

    def finalize(self):
        return self.value()


class BitXor(_Collecting):
    fn_id = "bit_xor"


class BitAnd(_Collecting):
    fn_id = "bit_and"


class BitOr(_Collecting):
    fn_id = "bit_or"


class ModularSum(_Collecting):
    fn_id = "modular_sum"


class ChecksumAgg(_Collecting):
    fn_id = "checksum_agg"


class _Quantile:
    fraction = 0.5
    spread = False

    def __init__(self) -> None:
        self.values: list[float] = []

    def step(self, value) -> None:
        if value is not None:
            self.values.append(value)

    def inverse(self, value) -> None:
        if value is not None:
            self.values.remove(value)

    def value(self):
        if not self.values:
            return None
        if self.spread:
            return percentile(self.values, 0.75) - percentile(self.values, 0.25)
        return percentile(self.values, self.fraction)

    def finalize(self):
        return self.value()


class Quartile1(_Quantile):
    fraction = 0.25


class Median(_Quantile):
    fraction = 0.5


class Quartile3(_Quantile):
    fraction = 0.75


class Iqr(_Quantile):
    spread = True


ENGINE_AGGREGATES = {
    "bit_xor": BitXor,
    "bit_and": BitAnd,
    "bit_or": BitOr,
    "modular_sum": ModularSum,
    "checksum_agg": ChecksumAgg,
    "quartile_1": Quartile1,
    "median": Median,
    "quartile_3": Quartile3,
    "iqr": Iqr,
}
