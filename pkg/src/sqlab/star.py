"""A clause-level parser for a restricted SQL subset, the starring transformation, and token execution.

Only the outer query is analysed. Parenthesised expressions (subqueries
included) are kept as opaque text, which is all the fingerprinting needs.
"""

from __future__ import annotations

import itertools
import json
import re
from dataclasses import dataclass, field
from typing import Iterable, Mapping, Sequence

from .crypto import canonical_scalar
from .engine import token_value
from .formulas import FormulaClass, FormulaKind, default_aliases, select_formula


class SqlSyntaxError(ValueError):
    def __init__(self, message: str, position: int | None = None):
        super().__init__(message if position is None else f"{message} (at offset {position})")
        self.position = position


class UnsupportedConstruct(ValueError):
    pass


class NonConstantToken(RuntimeError):
    pass


# -- tokenizer -------------------------------------------------------------------------


@dataclass(frozen=True)
class Tok:
    kind: str  # word, quoted, string, number, op, lparen, rparen, comma, semicolon, comment, ws
    text: str
    start: int
    end: int
    depth: int

    @property
    def upper(self) -> str:
        return self.text.upper() if self.kind == "word" else ""


_TOKEN_RE = re.compile(
    r"""
    (?P<ws>\s+)
  | (?P<comment>--[^\n]*|/\*.*?\*/)
  | (?P<string>'(?:[^']|'')*')
  | (?P<quoted>"(?:[^"]|"")*"|`[^`]*`|\[[^\]]*\])
  | (?P<number>(?:\d+\.?\d*|\.\d+)(?:[eE][+-]?\d+)?)
  | (?P<word>[A-Za-z_][A-Za-z0-9_$]*)
  | (?P<lparen>\()
  | (?P<rparen>\))
  | (?P<comma>,)
  | (?P<semicolon>;)
  | (?P<op><=|>=|<>|!=|==|\|\||<<|>>|[-+*/%<>=.~&|?:@$!])
    """,
    re.VERBOSE | re.DOTALL,
)


def tokenize(sql: str) -> list[Tok]:
    tokens: list[Tok] = []
    depth = 0
    pos = 0
    while pos < len(sql):
        m = _TOKEN_RE.match(sql, pos)
        if m is None:
            ch = sql[pos]
            if ch == "'":
                raise SqlSyntaxError("unterminated string literal", pos)
            if ch in "\"`[":
                raise SqlSyntaxError("unterminated quoted identifier", pos)
            if sql.startswith("/*", pos):
                raise SqlSyntaxError("unterminated comment", pos)
            raise SqlSyntaxError(f"unexpected character {ch!r}", pos)
        kind = m.lastgroup
        if kind == "rparen":
            depth -= 1
            if depth < 0:
                raise SqlSyntaxError("unbalanced ')'", pos)
        tokens.append(Tok(kind, m.group(), m.start(), m.end(), depth))
        if kind == "lparen":
            depth += 1
        pos = m.end()
    if depth:
        raise SqlSyntaxError("unbalanced '('", len(sql))
    return tokens


def _significant(tokens: Iterable[Tok]) -> list[Tok]:
    return [t for t in tokens if t.kind not in ("ws", "comment")]


# -- AST -----------------------------------------------------------------------------------


@dataclass(frozen=True)
class TableRef:
    name: str
    alias: str
    join_kind: str  # first, inner, left, right, full, cross, comma, natural
    condition: str | None = None
    derived: bool = False

    @property
    def key(self) -> str:
        return self.alias.lower()


@dataclass
class QueryAST:
    sql: str
    select_items: list[str]
    select_span: tuple[int, int]
    distinct: bool = False
    from_tables: list[TableRef] = field(default_factory=list)
    from_text: str | None = None
    where: str | None = None
    group_by: list[str] = field(default_factory=list)
    having: str | None = None
    order_by: str | None = None
    limit: str | None = None
    projected_aggregate: bool = False

    @property
    def aliases(self) -> list[str]:
        return [t.alias for t in self.from_tables]

    @property
    def has_derived_table(self) -> bool:
        return any(t.derived for t in self.from_tables)

    @property
    def aggregated(self) -> bool:
        return bool(self.group_by) or self.projected_aggregate or self.having is not None

    @property
    def post_select_ops(self) -> bool:
        return self.distinct or self.order_by is not None or self.limit is not None or self.projected_aggregate

    def traits(self) -> dict:
        return {
            "n_outer_tables": len(self.from_tables),
            "has_outer_grouping_or_aggregation": self.aggregated,
            "post_select_ops": self.post_select_ops,
        }

    def formula_class(self, **choices) -> FormulaClass:
        return select_formula(**self.traits(), **choices)


@dataclass(frozen=True)
class DmlStatement:
    kind: str  # INSERT, UPDATE, DELETE
    table: str
    sql: str


_CLAUSES = ("FROM", "WHERE", "GROUP", "HAVING", "ORDER", "LIMIT", "WINDOW")
_SET_OPERATORS = ("UNION", "INTERSECT", "EXCEPT")
_AGGREGATES = frozenset(
    {"count", "sum", "avg", "min", "max", "total", "group_concat", "string_agg", "json_group_array",
     "bit_xor", "bit_and", "bit_or", "checksum_agg", "median", "quartile_1", "quartile_3", "iqr",
     "modular_sum"}
)
_JOIN_WORDS = frozenset({"JOIN", "INNER", "LEFT", "RIGHT", "FULL", "CROSS", "NATURAL", "OUTER"})
_DML = {"INSERT": "INTO", "REPLACE": "INTO", "UPDATE": None, "DELETE": "FROM"}


def _unquote(name: str) -> str:
    if name[:1] in "\"`[" and len(name) >= 2:
        return name[1:-1]
    return name


def parse_select(sql: str) -> QueryAST | DmlStatement:
    """Parse one statement of the supported subset.

    SELECT statements give a ``QueryAST``; INSERT, UPDATE and DELETE give a
    ``DmlStatement`` naming the modified table.
    """
    tokens = tokenize(sql)
    sig = _significant(tokens)
    while sig and sig[-1].kind == "semicolon":
        sig.pop()
    if not sig:
        raise SqlSyntaxError("empty statement", 0)
    for t in sig:
        if t.kind == "semicolon":
            raise SqlSyntaxError("expected a single statement", t.start)
    head = sig[0].upper
    if head in _DML:
        return _parse_dml(sql, sig)
    if head == "WITH":
        raise UnsupportedConstruct("common table expressions are outside the supported subset")
    if head != "SELECT":
        raise UnsupportedConstruct(f"{sig[0].text} statements cannot be fingerprinted")
    return _parse_query(sql, sig)


def _parse_dml(sql: str, sig: list[Tok]) -> DmlStatement:
    kind = sig[0].upper
    i = 1
    if kind in ("INSERT", "REPLACE"):
        while i < len(sig) and sig[i].upper != "INTO":
            i += 1
        i += 1
    elif kind == "DELETE":
        if i < len(sig) and sig[i].upper == "FROM":
            i += 1
    else:
        while i < len(sig) and sig[i].upper == "OR":
            i += 2
    if i >= len(sig) or sig[i].kind not in ("word", "quoted"):
        raise SqlSyntaxError(f"{kind} without a target table", sig[min(i, len(sig) - 1)].start)
    return DmlStatement("INSERT" if kind == "REPLACE" else kind, _unquote(sig[i].text), sql)


def _parse_query(sql: str, sig: list[Tok]) -> QueryAST:
    for t in sig:
        if t.depth == 0 and t.upper in _SET_OPERATORS:
            raise UnsupportedConstruct(f"set operation {t.text} is outside the supported subset")

    # Locate top-level clause boundaries.
    marks: list[tuple[str, int]] = []  # (clause, index of first token after the keyword)
    i = 1
    distinct = False
    if i < len(sig) and sig[i].upper in ("DISTINCT", "ALL"):
        distinct = sig[i].upper == "DISTINCT"
        i += 1
    select_first = i
    positions: dict[str, int] = {}
    for j in range(i, len(sig)):
        t = sig[j]
        if t.depth != 0 or t.upper not in _CLAUSES:
            continue
        if t.upper in ("GROUP", "ORDER"):
            if j + 1 >= len(sig) or sig[j + 1].upper != "BY":
                raise SqlSyntaxError(f"{t.text} without BY", t.start)
        if t.upper == "WINDOW":
            raise UnsupportedConstruct("named windows are outside the supported subset")
        if t.upper in positions:
            raise SqlSyntaxError(f"duplicate {t.text} clause", t.start)
        if positions and list(positions) and _CLAUSES.index(t.upper) < _CLAUSES.index(list(positions)[-1]):
            raise SqlSyntaxError(f"misplaced {t.text} clause", t.start)
        positions[t.upper] = j
        marks.append((t.upper, j))

    def body(clause: str) -> tuple[int, int] | None:
        if clause not in positions:
            return None
        j = positions[clause] + (2 if clause in ("GROUP", "ORDER") else 1)
        later = [k for _, k in marks if k > positions[clause]]
        end = later[0] if later else len(sig)
        return j, end

    select_end = marks[0][1] if marks else len(sig)
    if select_end <= select_first:
        raise SqlSyntaxError("empty select list", sig[0].end)
    select_tokens = sig[select_first:select_end]
    span = (select_tokens[0].start, select_tokens[-1].end)
    items = _split_commas(sql, select_tokens)

    def text(rng: tuple[int, int] | None) -> str | None:
        if rng is None:
            return None
        a, b = rng
        if a >= b:
            raise SqlSyntaxError("empty clause", sig[a - 1].end)
        return sql[sig[a].start : sig[b - 1].end]

    ast = QueryAST(
        sql=sql,
        select_items=items,
        select_span=span,
        distinct=distinct,
        where=text(body("WHERE")),
        having=text(body("HAVING")),
        order_by=text(body("ORDER")),
        limit=text(body("LIMIT")),
        projected_aggregate=_has_aggregate(select_tokens),
    )
    group = body("GROUP")
    if group is not None:
        ast.group_by = _split_commas(sql, sig[group[0] : group[1]])
        if not ast.group_by:
            raise SqlSyntaxError("empty GROUP BY", sig[positions["GROUP"]].end)
    from_rng = body("FROM")
    if from_rng is not None:
        ast.from_text = text(from_rng)
        ast.from_tables = _parse_from(sql, sig[from_rng[0] : from_rng[1]])
        seen: set[str] = set()
        for ref in ast.from_tables:
            if ref.key in seen:
                raise SqlSyntaxError(f"alias {ref.alias} is used twice", sig[from_rng[0]].start)
            seen.add(ref.key)
    return ast


def _split_commas(sql: str, toks: Sequence[Tok]) -> list[str]:
    items, current = [], []
    for t in toks:
        if t.kind == "comma" and t.depth == toks[0].depth:
            if not current:
                raise SqlSyntaxError("empty list item", t.start)
            items.append(sql[current[0].start : current[-1].end])
            current = []
        else:
            current.append(t)
    if not current:
        raise SqlSyntaxError("trailing comma", toks[-1].start if toks else 0)
    items.append(sql[current[0].start : current[-1].end])
    return items


def _has_aggregate(toks: Sequence[Tok]) -> bool:
    base = toks[0].depth if toks else 0
    for k, t in enumerate(toks[:-1]):
        if t.depth != base or t.kind != "word" or t.text.lower() not in _AGGREGATES:
            continue
        if toks[k + 1].kind != "lparen" or (k > 0 and toks[k - 1].text == "."):
            continue
        # Skip window calls: the matching ')' is followed by OVER.
        level = 0
        for m in range(k + 1, len(toks)):
            if toks[m].kind == "lparen":
                level += 1
            elif toks[m].kind == "rparen":
                level -= 1
                if level == 0:
                    windowed = m + 1 < len(toks) and toks[m + 1].upper == "OVER"
                    break
        else:
            windowed = False
        if not windowed:
            return True
    return False


def _parse_from(sql: str, toks: Sequence[Tok]) -> list[TableRef]:
    refs: list[TableRef] = []
    i = 0
    kind = "first"
    n = len(toks)
    while i < n:
        t = toks[i]
        derived = False
        if t.kind == "lparen":
            close = _matching(toks, i)
            inner = _significant(toks[i + 1 : close])
            if not inner or inner[0].upper not in ("SELECT", "WITH"):
                raise UnsupportedConstruct("parenthesised joins are outside the supported subset")
            name = sql[t.start : toks[close].end]
            derived = True
            i = close + 1
        elif t.kind in ("word", "quoted"):
            name = _unquote(t.text)
            i += 1
            if i + 1 < n and toks[i].text == ".":
                name = f"{name}.{_unquote(toks[i + 1].text)}"
                i += 2
        else:
            raise SqlSyntaxError(f"expected a table, found {t.text!r}", t.start)
        alias = None
        if i < n and toks[i].upper == "AS":
            i += 1
            if i >= n:
                raise SqlSyntaxError("AS without alias", toks[i - 1].end)
        if i < n and toks[i].kind in ("word", "quoted") and toks[i].upper not in _JOIN_WORDS | {"ON", "USING"}:
            alias = _unquote(toks[i].text)
            i += 1
        if alias is None:
            if derived:
                raise SqlSyntaxError("a derived table needs an alias", t.start)
            alias = name
        condition = None
        if i < n and toks[i].upper in ("ON", "USING"):
            start = i
            i += 1
            while i < n and not (toks[i].kind == "comma" or toks[i].upper in _JOIN_WORDS):
                i += 1
            if i == start + 1:
                raise SqlSyntaxError(f"empty {toks[start].text} condition", toks[start].end)
            condition = sql[toks[start].start : toks[i - 1].end]
        refs.append(TableRef(name, alias, kind, condition, derived))
        if i >= n:
            break
        # Join operator before the next table.
        if toks[i].kind == "comma":
            kind = "comma"
            i += 1
            continue
        words = []
        while i < n and toks[i].upper in _JOIN_WORDS:
            words.append(toks[i].upper)
            i += 1
        if not words or words[-1] != "JOIN":
            raise SqlSyntaxError(f"unexpected {toks[min(i, n - 1)].text!r} in FROM", toks[min(i, n - 1)].start)
        if "NATURAL" in words:
            kind = "natural"
        elif "LEFT" in words:
            kind = "left"
        elif "RIGHT" in words:
            kind = "right"
        elif "FULL" in words:
            kind = "full"
        elif "CROSS" in words:
            kind = "cross"
        else:
            kind = "inner"
        if i >= n:
            raise SqlSyntaxError("JOIN without a table", toks[-1].end)
    return refs


def _matching(toks: Sequence[Tok], i: int) -> int:
    level = 0
    for k in range(i, len(toks)):
        if toks[k].kind == "lparen":
            level += 1
        elif toks[k].kind == "rparen":
            level -= 1
            if level == 0:
                return k
    raise SqlSyntaxError("unbalanced '('", toks[i].start)


# -- formula injection and starring ------------------------------------------------------


def inject_formula(ast: QueryAST, formula_text: str) -> str:
    """Append ``formula_text`` as the last item of the outer select list."""
    end = ast.select_span[1]
    return ast.sql[:end] + ", " + formula_text + ast.sql[end:]


def formula_aliases(ast: QueryAST, dimension: int) -> list[str]:
    """Aliases the formula refers to: A, B, ... when present, else the first tables."""
    present = {a.lower(): a for a in ast.aliases}
    letters = default_aliases(dimension)
    if all(x.lower() in present for x in letters):
        return [present[x.lower()] for x in letters]
    if len(ast.aliases) < dimension:
        raise UnsupportedConstruct(f"a {dimension}-dimensional formula needs {dimension} tables in FROM")
    return ast.aliases[:dimension]


def star(
    ast: QueryAST,
    cls: FormulaClass,
    columns: Mapping[str, Sequence[str]] | None = None,
    aliases: Sequence[str] | None = None,
) -> str:
    """Starred version of ``ast`` with respect to a formula class.

    The aggregated form needs ``columns``, the column names of each table
    (keyed by table name), to spell out the per-column bag aggregation.
    """
    kind = cls.class_id.base
    if kind not in (FormulaKind.BASIC, FormulaKind.AGG):
        raise UnsupportedConstruct("only the basic and aggregated formulas have a starred form")
    if ast.from_text is None:
        raise UnsupportedConstruct("a query without FROM has no starred form")
    if ast.has_derived_table:
        raise UnsupportedConstruct("queries with a derived table in FROM cannot be starred")
    aliases = list(aliases) if aliases is not None else formula_aliases(ast, cls.dimension)
    if kind is FormulaKind.BASIC:
        if ast.group_by or ast.having is not None:
            raise UnsupportedConstruct("a grouped query needs the aggregated formula")
        select = ", ".join(f"{a}.*" for a in aliases)
    else:
        if columns is None:
            raise ValueError("columns are required to star an aggregated query")
        by_alias = {t.alias.lower(): t.name for t in ast.from_tables}
        parts = []
        for alias in aliases:
            table = by_alias[alias.lower()]
            cols = columns.get(table) or columns.get(table.lower())
            if not cols:
                raise ValueError(f"no columns known for table {table}")
            parts.extend(f"star_bag({alias}.{c})" for c in cols)
        select = ", ".join(parts)
    out = f"SELECT {select} FROM {ast.from_text}"
    if ast.where is not None:
        out += f" WHERE {ast.where}"
    if kind is FormulaKind.AGG:
        if ast.group_by:
            out += " GROUP BY " + ", ".join(ast.group_by)
        if ast.having is not None:
            out += f" HAVING {ast.having}"
    return out


# Window functions that lose information on repeated inputs: x op x is x or 0.
_DUPLICATE_BLIND = frozenset({"bit_xor", "bit_or", "bit_and", "min", "max"})


def window_inputs(conn, ast: QueryAST, cls: FormulaClass, aliases: Sequence[str] | None = None) -> list:
    """The values the formula's window function aggregates, one per row or group."""
    aliases = list(aliases) if aliases is not None else formula_aliases(ast, cls.dimension)
    inner = " + ".join(f"nn({a}.hash)" for a in aliases) or "0"
    if cls.class_id.aggregated:
        inner = f"{cls.fa_id}({inner})"
    sql = f"SELECT {inner} FROM {ast.from_text}"
    if ast.where is not None:
        sql += f" WHERE {ast.where}"
    if cls.class_id.aggregated:
        if ast.group_by:
            sql += " GROUP BY " + ", ".join(ast.group_by)
        if ast.having is not None:
            sql += f" HAVING {ast.having}"
    return [r[0] for r in conn.execute(sql)]


def perfect_setting(conn, ast: QueryAST, cls: FormulaClass, aliases: Sequence[str] | None = None) -> bool:
    """Whether the query stays within the accuracy theorem's hypothesis.

    Row hashes are assumed distinct (the build guarantees it), so the only
    detectable failure is a window function that cannot see repeated inputs,
    as when bit_xor meets a row counted in two groups.
    """
    if cls.fw_id not in _DUPLICATE_BLIND:
        return True
    values = window_inputs(conn, ast, cls, aliases)
    return len(values) == len(set(values))


def table_columns(conn, tables: Iterable[str]) -> dict[str, list[str]]:
    out = {}
    for table in tables:
        rows = conn.execute(f'PRAGMA table_info("{table}")').fetchall()
        out[table] = [r[1] for r in rows]
    return out


# -- execution -----------------------------------------------------------------------------


def _token_column(description) -> int | None:
    names = [d[0].lower() for d in description or ()]
    for k in range(len(names) - 1, -1, -1):
        if names[k] == "token":
            return k
    return None


def execute_token(conn, sql_with_formula: str) -> int | None:
    """Token of a query carrying a formula; None for an empty result or no token column."""
    cursor = conn.execute(sql_with_formula)
    column = _token_column(cursor.description)
    rows = cursor.fetchall()
    if column is None or not rows:
        return None
    values = {row[column] for row in rows}
    if len(values) != 1:
        raise NonConstantToken(f"the token column takes {len(values)} distinct values; is OVER () missing?")
    return token_value(values.pop())


@dataclass(frozen=True)
class StarredTable:
    rows: tuple[tuple, ...]
    null_column_mask: tuple[bool, ...]

    @classmethod
    def from_rows(cls, rows: Sequence[Sequence]) -> "StarredTable":
        rows = tuple(tuple(r) for r in rows)
        width = len(rows[0]) if rows else 0
        mask = tuple(all(r[c] is None for r in rows) for c in range(width))
        return cls(rows, mask)

    def canonical(self) -> tuple:
        """Form that ignores null columns and the order of rows and columns."""
        keep = [c for c, null in enumerate(self.null_column_mask) if not null]
        cells = [[json.dumps(canonical_scalar(r[c]), ensure_ascii=False) for c in keep] for r in self.rows]
        if not keep:
            return (0, len(self.rows))
        signature = {c: tuple(sorted(row[k] for row in cells)) for k, c in enumerate(keep)}
        order = sorted(range(len(keep)), key=lambda k: signature[keep[k]])
        # Columns with equal value multisets are interchangeable; try their orders.
        groups = [list(g) for _, g in itertools.groupby(order, key=lambda k: signature[keep[k]])]
        best = None
        choices = [itertools.permutations(g) for g in groups]
        for n_tried, combo in enumerate(itertools.product(*choices)):
            if n_tried >= 720:
                break
            perm = [k for group in combo for k in group]
            candidate = tuple(sorted(tuple(row[k] for k in perm) for row in cells))
            if best is None or candidate < best:
                best = candidate
        return (len(keep), best)

    def __eq__(self, other) -> bool:
        if not isinstance(other, StarredTable):
            return NotImplemented
        return self.canonical() == other.canonical()

    def __hash__(self) -> int:
        return hash(self.canonical())


def starred_table(conn, starred_sql: str) -> StarredTable:
    return StarredTable.from_rows(conn.execute(starred_sql).fetchall())


def starred_match(
    conn,
    q1: QueryAST,
    q2: QueryAST,
    cls: FormulaClass,
    columns: Mapping[str, Sequence[str]] | None = None,
) -> bool:
    if q1.has_derived_table or q2.has_derived_table:
        raise UnsupportedConstruct("the starred oracle excludes derived tables")
    if columns is None and cls.class_id.aggregated:
        columns = table_columns(conn, {t.name for q in (q1, q2) for t in q.from_tables})
    return starred_table(conn, star(q1, cls, columns)) == starred_table(conn, star(q2, cls, columns))
