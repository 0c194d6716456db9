"""Token formulas: class selection, rendering, control substitution and a pure reference evaluator."""

from __future__ import annotations

import enum
import math
import re
import string
from dataclasses import dataclass
from typing import Mapping, Sequence

from . import aggregates
from .aggregates import ASSOCIATIVE, MASK64, to_unsigned
from .crypto import DEFAULT_HASH, HashConfig, SaltSpec, nn, salt_apply, string_hash

PLACEHOLDER = "(0.0)"


class FormulaKind(enum.Enum):
    BASIC = "1.1"
    AGG = "1.2"
    BASIC_CTRL = "1.1c"
    AGG_CTRL = "1.2c"
    EXPR_ONLY = "1.c"

    @property
    def aggregated(self) -> bool:
        return self in (FormulaKind.AGG, FormulaKind.AGG_CTRL)

    @property
    def controlled(self) -> bool:
        return self in (FormulaKind.BASIC_CTRL, FormulaKind.AGG_CTRL, FormulaKind.EXPR_ONLY)

    @property
    def base(self) -> "FormulaKind":
        return {FormulaKind.BASIC_CTRL: FormulaKind.BASIC, FormulaKind.AGG_CTRL: FormulaKind.AGG}.get(self, self)


class FormulaError(ValueError):
    pass


DEFAULT_FW = "sum"
DEFAULT_AGG_PAIR = ("bit_xor", "sum")


@dataclass(frozen=True)
class FormulaClass:
    class_id: FormulaKind
    dimension: int
    fw_id: str | None = DEFAULT_FW
    fa_id: str | None = None
    fv_id: str = "add"
    fc_id: str | None = None

    def __post_init__(self) -> None:
        kind = self.class_id
        if kind is FormulaKind.EXPR_ONLY:
            if self.dimension != 0:
                raise FormulaError("an expression-only formula has dimension 0")
        elif self.dimension < 1:
            raise FormulaError(f"formula {kind.value} needs at least one table")
        if (self.fa_id is not None) != kind.aggregated:
            raise FormulaError(f"f_a must be given exactly for aggregated formulas, not {kind.value}")
        if (self.fc_id is not None) != kind.controlled:
            raise FormulaError(f"f_c must be given exactly for controlled formulas, not {kind.value}")
        if kind is not FormulaKind.EXPR_ONLY and self.fw_id is None:
            raise FormulaError("f_w is required")
        for fn in (self.fw_id, self.fa_id):
            if fn is not None and fn not in aggregates.ROSTER:
                raise FormulaError(f"unknown aggregation function {fn!r}")

    @classmethod
    def make(
        cls,
        kind: FormulaKind | str,
        dimension: int,
        fw: str | None = None,
        fa: str | None = None,
    ) -> "FormulaClass":
        """Build a class with the default function choices filled in."""
        if isinstance(kind, str):
            kind = FormulaKind[kind] if kind in FormulaKind.__members__ else FormulaKind(kind)
        if kind is FormulaKind.EXPR_ONLY:
            return cls(kind, 0, fw_id=None, fc_id="add")
        if kind.aggregated:
            fw = fw or DEFAULT_AGG_PAIR[0]
            fa = fa or DEFAULT_AGG_PAIR[1]
        else:
            fw = fw or DEFAULT_FW
            fa = None
        return cls(kind, dimension, fw_id=fw, fa_id=fa, fc_id="add" if kind.controlled else None)

    def validate_pairing(self) -> None:
        """Reject (f_w, f_a) pairs that blind the token to grouping or duplicates.

        Kept out of ``__post_init__`` so that demonstrations can build the
        forbidden pairs on purpose.
        """
        if not self.class_id.aggregated:
            return
        fw, fa = self.fw_id, self.fa_id
        if (fw, fa) == ("sum", "count"):
            raise FormulaError("sum over count is blind to how rows are grouped")
        if fw == fa and fw in ASSOCIATIVE:
            raise FormulaError(f"{fw} is associative: using it for both stages ignores the grouping")
        if fa == "bit_xor":
            raise FormulaError("bit_xor as group aggregate cancels duplicate rows")

    def with_control(self) -> "FormulaClass":
        if self.class_id.controlled:
            return self
        kind = FormulaKind.AGG_CTRL if self.class_id.aggregated else FormulaKind.BASIC_CTRL
        return FormulaClass(kind, self.dimension, self.fw_id, self.fa_id, self.fv_id, "add")

    def without_control(self) -> "FormulaClass":
        if self.class_id in (FormulaKind.BASIC, FormulaKind.AGG, FormulaKind.EXPR_ONLY):
            return self
        return FormulaClass(self.class_id.base, self.dimension, self.fw_id, self.fa_id, self.fv_id, None)


@dataclass(frozen=True)
class ControlBinding:
    value: int | float | str | None = None
    instruction: str = ""
    placeholder: str = PLACEHOLDER

    @property
    def missing(self) -> bool:
        return self.value is None or (not isinstance(self.value, str) and float(self.value) == 0.0)

    def literal(self, cfg: HashConfig = DEFAULT_HASH) -> str:
        """SQL text that replaces the placeholder."""
        value = self.numeric(cfg)
        return f"({value!r})" if isinstance(value, float) else f"({value})"

    def numeric(self, cfg: HashConfig = DEFAULT_HASH) -> int | float:
        if self.value is None:
            return 0
        if isinstance(self.value, str):
            return string_hash(self.value, cfg)
        if isinstance(self.value, bool):
            return int(self.value)
        return self.value


def select_formula(
    n_outer_tables: int,
    has_outer_grouping_or_aggregation: bool,
    post_select_ops: bool,
    fw: str | None = None,
    fa: str | None = None,
) -> FormulaClass:
    if n_outer_tables < 0:
        raise FormulaError("n_outer_tables must be non-negative")
    if n_outer_tables == 0:
        return FormulaClass.make(FormulaKind.EXPR_ONLY, 0)
    if has_outer_grouping_or_aggregation:
        kind = FormulaKind.AGG_CTRL if post_select_ops else FormulaKind.AGG
    else:
        kind = FormulaKind.BASIC_CTRL if post_select_ops else FormulaKind.BASIC
    return FormulaClass.make(kind, n_outer_tables, fw, fa)


def default_aliases(dimension: int) -> list[str]:
    return list(string.ascii_uppercase[:dimension])


def render_formula(cls: FormulaClass, salt: SaltSpec, aliases: Sequence[str] | None = None) -> str:
    aliases = default_aliases(cls.dimension) if aliases is None else list(aliases)
    if len(aliases) != cls.dimension:
        raise FormulaError(f"formula of dimension {cls.dimension} got {len(aliases)} aliases")
    if cls.class_id is FormulaKind.EXPR_ONLY:
        return f"{salt.function_name}({PLACEHOLDER}) AS token"
    combined = " + ".join(f"nn({alias}.hash)" for alias in aliases)
    if cls.fa_id is not None:
        combined = f"{cls.fa_id}({combined})"
    control = f"{PLACEHOLDER} + " if cls.class_id.controlled else ""
    return f"{salt.function_name}({control}{cls.fw_id}({combined}) OVER ()) AS token"


def substitute_control(formula_text: str, binding: ControlBinding, cfg: HashConfig = DEFAULT_HASH) -> str:
    count = formula_text.count(binding.placeholder)
    if count != 1:
        raise FormulaError(f"expected exactly one {binding.placeholder} placeholder, found {count}")
    return formula_text.replace(binding.placeholder, binding.literal(cfg))


_SALT_CALL = re.compile(r"\bsalt_(\d{3})\s*\(", re.IGNORECASE)


def salt_numbers(sql: str) -> list[int]:
    """Task numbers of every salt function called in ``sql``."""
    return [int(m.group(1)) for m in _SALT_CALL.finditer(sql)]


# -- reference evaluation ----------------------------------------------------------
#
# Mirrors what the embedded engine computes, including its numeric types:
# builtin aggregates keep floats, the bitwise and checksum family works on
# 64-bit words, and the salt function truncates its argument to an integer.

_WORD_FUNCTIONS = frozenset({"bit_and", "bit_or", "bit_xor", "checksum_agg", "modular_sum"})


def _engine_apply(fn_id: str, values: Sequence[int | float | None]) -> int | float | None:
    present = [v for v in values if v is not None]
    if fn_id == "count":
        return len(present)
    if not present:
        return None
    if fn_id in _WORD_FUNCTIONS:
        return aggregates.to_signed(aggregates.aggregate(fn_id, [to_unsigned(int(v)) for v in present]))
    if fn_id == "sum":
        if all(isinstance(v, int) for v in present):
            return aggregates.to_signed(sum(present))
        return math.fsum(present)
    if fn_id == "avg":
        return math.fsum(present) / len(present)
    if fn_id in ("min", "max"):
        return min(present) if fn_id == "min" else max(present)
    return aggregates._FUNCTIONS[fn_id](present)


def reference_token(
    cls: FormulaClass,
    salt: SaltSpec,
    hash_rows: Sequence[Sequence[Mapping[str, int | None]]],
    control: ControlBinding | None = None,
    cfg: HashConfig = DEFAULT_HASH,
) -> int:
    """Token computed in pure Python from the hashes reaching the outer SELECT.

    ``hash_rows`` is a list of groups, each a list of rows mapping an alias
    to its (nullable) row hash. Non-aggregated classes flatten the groups.
    """
    kind = cls.class_id
    if kind is FormulaKind.EXPR_ONLY:
        inner: int | float | None = 0
    else:
        def combine(row: Mapping[str, int | None]) -> int:
            if len(row) != cls.dimension:
                raise FormulaError(f"row {dict(row)} does not cover {cls.dimension} aliases")
            return sum(nn(h, cfg) for h in row.values()) & MASK64

        if kind.aggregated:
            per_group = [_engine_apply(cls.fa_id, [combine(r) for r in group]) for group in hash_rows]
            inner = _engine_apply(cls.fw_id, per_group)
        else:
            inner = _engine_apply(cls.fw_id, [combine(r) for group in hash_rows for r in group])
    if kind.controlled and inner is not None:
        x = (control or ControlBinding()).numeric(cfg)
        inner = x + inner
    if inner is None:
        return salt_apply(salt, None, cfg)
    return salt_apply(salt, int(inner), cfg)
