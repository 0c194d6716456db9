"""Adventure scripts: parsing, execution against the game database, the task graph and activity reports.

Script grammar (Markdown)::

    ## Episode [042] Title          or  ## Exercise [086] Title
    optional context paragraphs
    ### Statement
    statement paragraphs
    x = 1 # the first number on the column employees     (optional control line)
    ### Solution                    (one section per solution, the first one is primary)
    ```sql
    SELECT ... salt_042(sum(nn(A.hash)) OVER ()) AS token FROM employee A
    --> 050                         (target task, or exit)
    ```
    assert len(col("emp_id")) == 3
    ### Variant                     (optional, formula not required)
    ### Hint                        (optional)
    ```sql
    -- Hint: text shown to the student
    -- Formula: BASIC 1              (formula injected into the outer SELECT)
    SELECT ...
    ```
"""

from __future__ import annotations

import ast
import enum
import graphlib
import json
import re
from collections import Counter, defaultdict, deque
from dataclasses import dataclass, field
from typing import Any, Iterable, Sequence

from .crypto import HashConfig, SaltSpec
from .engine import Error as EngineError
from .engine import Manifest, open_message, token_value
from .formulas import (
    PLACEHOLDER,
    ControlBinding,
    FormulaClass,
    FormulaError,
    FormulaKind,
    render_formula,
    salt_numbers,
    substitute_control,
)
from .star import (
    DmlStatement,
    QueryAST,
    SqlSyntaxError,
    UnsupportedConstruct,
    formula_aliases,
    inject_formula,
    parse_select,
    tokenize,
)


class ScriptError(ValueError):
    def __init__(self, issues: Sequence["Issue"]):
        super().__init__("; ".join(str(i) for i in issues))
        self.issues = list(issues)


@dataclass(frozen=True)
class Issue:
    line: int
    message: str
    task: int | None = None

    def __str__(self) -> str:
        where = f"task {self.task:03d}, " if self.task is not None else ""
        return f"{where}line {self.line}: {self.message}"


class Role(str, enum.Enum):
    SOLUTION = "solution"
    VARIANT = "variant"
    HINT = "hint"


@dataclass
class QueryCell:
    role: Role
    source: str
    line: int
    comment: str = ""
    target: str | None = None
    hint_text: str = ""
    formula_directive: str | None = None
    control: ControlBinding | None = None
    assertions: list[tuple[int, str]] = field(default_factory=list)
    # Filled in by execute_records.
    shown_sql: str | None = None
    formula: str | None = None
    executed_sql: str | None = None
    columns: list[str] = field(default_factory=list)
    rows: list[tuple] = field(default_factory=list)
    token: int | None = None
    error: str | None = None
    failed_assertions: list[str] = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return self.error is None and not self.failed_assertions


@dataclass
class TaskRecord:
    number: int
    kind: str  # episode or exercise
    title: str
    line: int
    context: str = ""
    statement: str = ""
    control: ControlBinding | None = None
    solutions: list[QueryCell] = field(default_factory=list)
    variants: list[QueryCell] = field(default_factory=list)
    hints: list[QueryCell] = field(default_factory=list)

    @property
    def label(self) -> str:
        return f"{self.kind.capitalize()} [{self.number:03d}]"

    @property
    def cells(self) -> list[QueryCell]:
        return [*self.solutions, *self.variants, *self.hints]

    @property
    def formula(self) -> str | None:
        return self.solutions[0].formula if self.solutions else None


@dataclass
class Adventure:
    title: str
    records: list[TaskRecord]
    issues: list[Issue]


# -- parsing ----------------------------------------------------------------------------

_TASK_HEADER = re.compile(r"^##\s+(Episode|Exercise)\s+\[(\d{3})\]\s*\.?\s*(.*?)\s*$", re.IGNORECASE)
_ANY_TASK_HEADER = re.compile(r"^##\s+(?!#)")
_SECTION = re.compile(r"^###\s+(Context|Statement|Solution|Variant|Hint)\b\.?\s*(.*?)\s*$", re.IGNORECASE)
_FENCE = re.compile(r"^```\s*(\w*)\s*$")
_CONTROL = re.compile(r"^x\s*=\s*(?P<value>[^#]+?)\s*(?:#\s*(?P<instruction>.*?))?\s*$")
_ASSERT = re.compile(r"^assert\s+(.+)$")
_TARGET = re.compile(r"^\s*-->\s*(\d{3}|exit)\s*$", re.IGNORECASE)
_FORMULA = re.compile(r"^\s*--\s*Formula\s*:\s*(.+?)\s*$", re.IGNORECASE)
_HINT = re.compile(r"^\s*--\s*Hint\s*:\s*(.*?)\s*$", re.IGNORECASE)
_COMMENT_CONTINUATION = re.compile(r"^\s*--(?!>)\s?(.*)$")

_SECTION_RANK = {"context": 0, "statement": 1, "solution": 2, "variant": 3, "hint": 4}


def parse_control(value_text: str) -> int | float | str | None:
    """Literal value of a control line; Python syntax, so strings are quoted."""
    node = ast.parse(value_text.strip(), mode="eval").body
    value = ast.literal_eval(node)
    if value is not None and not isinstance(value, (int, float, str)):
        raise ValueError(f"unsupported control value {value!r}")
    return value


def parse_adventure(text: str, strict: bool = True) -> Adventure:
    """Split a script into task records.

    With ``strict`` the first conformity problems raise ``ScriptError``;
    otherwise they are collected in ``Adventure.issues`` and parsing goes on.
    """
    records: list[TaskRecord] = []
    issues: list[Issue] = []
    title = ""
    task: TaskRecord | None = None
    section: str | None = None
    sections_seen: list[tuple[str, int]] = []
    prose: list[str] = []
    control: ControlBinding | None = None
    last_cell: QueryCell | None = None
    fence: list[str] | None = None
    fence_line = 0
    numbers: set[int] = set()

    def issue(line: int, message: str) -> None:
        issues.append(Issue(line, message, task.number if task else None))

    def flush_prose() -> str:
        text = "\n".join(prose).strip()
        prose.clear()
        return text

    def close_section() -> None:
        nonlocal section
        if task is None:
            flush_prose()
            return
        text = flush_prose()
        if section is None or section == "context":
            task.context = "\n\n".join(p for p in (task.context, text) if p)
        elif section == "statement":
            task.statement = "\n\n".join(p for p in (task.statement, text) if p)
        elif text and last_cell is not None:
            last_cell.comment = "\n\n".join(p for p in (last_cell.comment, text) if p)

    def finish_task() -> None:
        nonlocal task
        close_section()
        if task is None:
            return
        ranks = [(_SECTION_RANK[name], name, line) for name, line in sections_seen]
        for (r1, n1, _), (r2, n2, l2) in zip(ranks, ranks[1:]):
            if r2 < r1 or (r2 == r1 and n2 in ("statement", "context")):
                issue(l2, f"section {n2} is out of order after {n1}")
        names = [n for n, _ in sections_seen]
        if "statement" not in names:
            issue(task.line, "missing statement")
        if not task.solutions:
            issue(task.line, "missing solution")
        records.append(task)
        task = None

    lines = text.splitlines()
    for lineno, raw in enumerate(lines, start=1):
        line = raw.rstrip()
        if fence is not None:
            if line.strip() == "```":
                cell_source = "\n".join(fence)
                if task is None or section not in ("solution", "variant", "hint"):
                    issue(fence_line, "code block outside a solution, variant or hint section")
                else:
                    last_cell = _make_cell(Role(section), cell_source, fence_line, flush_prose(), control, issue)
                    getattr(task, section + "s").append(last_cell)
                fence = None
            else:
                fence.append(raw)
            continue
        m = _TASK_HEADER.match(line)
        if m:
            finish_task()
            number = int(m.group(2))
            task = TaskRecord(number=number, kind=m.group(1).lower(), title=m.group(3), line=lineno)
            if number in numbers:
                issue(lineno, f"task number {number:03d} is used twice")
            numbers.add(number)
            section, sections_seen, control, last_cell = None, [], None, None
            continue
        if line.startswith("# ") and not title and task is None:
            title = line[2:].strip()
            continue
        if _ANY_TASK_HEADER.match(line):
            finish_task()
            issue(lineno, f"unrecognised header {line!r}")
            continue
        m = _SECTION.match(line)
        if m:
            name = m.group(1).lower()
            if task is None:
                issue(lineno, f"{m.group(1)} section before any task header")
                flush_prose()
                continue
            close_section()
            section = name
            sections_seen.append((name, lineno))
            last_cell = None
            continue
        m = _FENCE.match(line)
        if m:
            fence, fence_line = [], lineno
            continue
        if task is None:
            continue
        m = _CONTROL.match(line)
        if m:
            try:
                value = parse_control(m.group("value"))
            except (ValueError, SyntaxError) as exc:
                issue(lineno, f"bad control value: {exc}")
                continue
            instruction = (m.group("instruction") or "").strip()
            control = ControlBinding(value, instruction)
            if task.control is None:
                task.control = control
            continue
        m = _ASSERT.match(line.strip())
        if m:
            if last_cell is None:
                issue(lineno, "assertion without a preceding query")
            else:
                last_cell.assertions.append((lineno, m.group(1)))
            continue
        prose.append(line)
    if fence is not None:
        issue(fence_line, "unterminated code block")
    finish_task()
    if strict and issues:
        raise ScriptError(issues)
    return Adventure(title, records, issues)


def _make_cell(role: Role, source: str, line: int, comment: str, control, issue) -> QueryCell:
    cell = QueryCell(role=role, source=source, line=line, comment=comment, control=control)
    kept: list[str] = []
    in_hint = False
    for offset, raw in enumerate(source.splitlines(), start=1):
        m = _TARGET.match(raw)
        if m:
            if role is not Role.SOLUTION:
                issue(line + offset, f"arrow in a {role.value}")
            cell.target = m.group(1).lower()
            in_hint = False
            continue
        m = _FORMULA.match(raw)
        if m:
            cell.formula_directive = m.group(1)
            in_hint = False
            continue
        m = _HINT.match(raw)
        if m:
            cell.hint_text = m.group(1)
            in_hint = True
            continue
        if in_hint:
            m = _COMMENT_CONTINUATION.match(raw)
            if m:
                cell.hint_text = f"{cell.hint_text} {m.group(1).strip()}".strip()
                continue
            in_hint = False
        kept.append(raw)
    cell.source = "\n".join(kept).strip("\n")
    if role is Role.HINT and not cell.hint_text:
        cell.hint_text = comment
    if role is Role.SOLUTION and cell.target is None:
        issue(line, "solution without a --> target")
    return cell


# -- statements and formulas -------------------------------------------------------------


def split_statements(sql: str) -> list[str]:
    """Top-level statements of a script, comments kept with their statement."""
    toks = tokenize(sql)
    out, start = [], 0
    for t in toks:
        if t.kind == "semicolon" and t.depth == 0:
            out.append(sql[start : t.start])
            start = t.end
    out.append(sql[start:])
    kept = []
    for piece in out:
        if any(t.kind not in ("ws", "comment") for t in tokenize(piece)):
            kept.append(piece.strip())
    return kept


_SALT_START = re.compile(r"salt_\d{3}\s*\(", re.IGNORECASE)
_AS_TOKEN = re.compile(r"\s+AS\s+token\b", re.IGNORECASE)


def extract_formula(sql: str) -> str | None:
    """The ``salt_ddd(...) AS token`` expression written inline in a query."""
    for m in _SALT_START.finditer(sql):
        depth = 0
        for k in range(m.end() - 1, len(sql)):
            if sql[k] == "(":
                depth += 1
            elif sql[k] == ")":
                depth -= 1
                if depth == 0:
                    tail = _AS_TOKEN.match(sql, k + 1)
                    if tail:
                        return sql[m.start() : tail.end()]
                    break
    return None


_SHORTHAND = re.compile(
    r"^(?P<kind>BASIC_CTRL|AGG_CTRL|EXPR_ONLY|BASIC|AGG|AUTO)"
    r"(?:\s+(?P<dim>\d+))?(?P<options>(?:\s+\w+=\w+)*)\s*$",
    re.IGNORECASE,
)


def formula_for(directive: str, number: int, manifest: Manifest, query: QueryAST | None) -> str:
    """Formula text for a ``-- Formula:`` directive, either literal or a shorthand."""
    if re.match(r"^salt_\d{3}\s*\(", directive, re.IGNORECASE):
        return directive
    m = _SHORTHAND.match(directive)
    if not m:
        raise FormulaError(f"cannot read formula directive {directive!r}")
    options = dict(opt.split("=") for opt in m.group("options").split())
    kind = m.group("kind").upper()
    if kind == "AUTO":
        if query is None:
            raise FormulaError("automatic formulas need a SELECT query")
        guess = query.formula_class()
        fkind, dim = guess.class_id, guess.dimension
    else:
        fkind = FormulaKind[kind]
        dim = int(m.group("dim") or (0 if fkind is FormulaKind.EXPR_ONLY else 1))
    defaults = manifest.formula_defaults
    if fkind.aggregated:
        fw = options.get("fw") or defaults.get("agg_fw")
        fa = options.get("fa") or defaults.get("agg_fa")
    else:
        fw, fa = options.get("fw") or defaults.get("basic_fw"), None
    cls = FormulaClass.make(fkind, dim, fw, fa)
    cls.validate_pairing()
    aliases = None
    if query is not None and cls.dimension:
        aliases = formula_aliases(query, cls.dimension)
    return render_formula(cls, manifest.salt(number), aliases)


# -- assertions -----------------------------------------------------------------------------

_COMPARATORS = {
    ast.Eq: lambda a, b: a == b,
    ast.NotEq: lambda a, b: a != b,
    ast.Lt: lambda a, b: a < b,
    ast.LtE: lambda a, b: a <= b,
    ast.Gt: lambda a, b: a > b,
    ast.GtE: lambda a, b: a >= b,
    ast.In: lambda a, b: a in b,
    ast.NotIn: lambda a, b: a not in b,
}


class AssertionSyntaxError(ValueError):
    pass


def evaluate_assertion(expression: str, columns: Sequence[str], rows: Sequence[Sequence], x=None) -> bool:
    """Evaluate a predicate over the previous result table.

    Allowed: literals, lists, ``col("name")``, indexing, ``len()``, the
    control value ``x``, comparisons, ``and``/``or``/``not``.
    """
    names = [c.lower() for c in columns]

    def col(name: str) -> list:
        if not isinstance(name, str) or name.lower() not in names:
            raise AssertionSyntaxError(f"no column {name!r} in the result")
        k = names.index(name.lower())
        return [row[k] for row in rows]

    def ev(node: ast.AST):
        if isinstance(node, ast.Expression):
            return ev(node.body)
        if isinstance(node, ast.Constant):
            return node.value
        if isinstance(node, (ast.List, ast.Tuple)):
            return [ev(e) for e in node.elts]
        if isinstance(node, ast.UnaryOp) and isinstance(node.op, (ast.USub, ast.Not)):
            value = ev(node.operand)
            return -value if isinstance(node.op, ast.USub) else not value
        if isinstance(node, ast.Name) and node.id == "x":
            return x
        if isinstance(node, ast.Call) and isinstance(node.func, ast.Name) and not node.keywords:
            args = [ev(a) for a in node.args]
            if node.func.id == "col" and len(args) == 1:
                return col(args[0])
            if node.func.id == "len" and len(args) == 1:
                return len(args[0])
        if isinstance(node, ast.Subscript):
            index = ev(node.slice)
            if not isinstance(index, int):
                raise AssertionSyntaxError("only integer indexes are allowed")
            return ev(node.value)[index]
        if isinstance(node, ast.Compare):
            left = ev(node.left)
            for op, comparator in zip(node.ops, node.comparators):
                right = ev(comparator)
                if not _COMPARATORS[type(op)](left, right):
                    return False
                left = right
            return True
        if isinstance(node, ast.BoolOp):
            values = (ev(v) for v in node.values)
            return all(values) if isinstance(node.op, ast.And) else any(values)
        raise AssertionSyntaxError(f"unsupported expression: {ast.unparse(node)}")

    try:
        tree = ast.parse(expression, mode="eval")
    except SyntaxError as exc:
        raise AssertionSyntaxError(str(exc)) from exc
    return bool(ev(tree))


# -- execution --------------------------------------------------------------------------------


@dataclass
class QueryResult:
    columns: list[str]
    rows: list[tuple]


def run_script(conn, sql: str) -> QueryResult | None:
    """Execute every statement; the result is the table of the last one returning rows."""
    result = None
    for statement in split_statements(sql):
        cursor = conn.execute(statement)
        if cursor.description:
            result = QueryResult([d[0] for d in cursor.description], cursor.fetchall())
    return result


class NonConstantTokenError(RuntimeError):
    pass


def result_token(result: QueryResult | None) -> int | None:
    if result is None or not result.rows:
        return None
    names = [c.lower() for c in result.columns]
    if "token" not in names:
        return None
    k = len(names) - 1 - names[::-1].index("token")
    values = {row[k] for row in result.rows}
    if len(values) != 1:
        raise NonConstantTokenError(f"token column takes {len(values)} distinct values")
    return token_value(values.pop())


# Stand-in for {{x}} while parsing: a valid number whose comment marks it.
_X_MARK = "(0.0/*{{x}}*/)"


def _sql_literal(value) -> str:
    if value is None:
        return "NULL"
    if isinstance(value, str):
        return "'" + value.replace("'", "''") + "'"
    return repr(value)


def prepare_cell(cell: QueryCell, number: int, manifest: Manifest, cfg: HashConfig | None = None) -> None:
    """Fill ``shown_sql``, ``formula`` and ``executed_sql`` of a cell.

    ``{{x}}`` shows as the placeholder and runs as the control value, which
    inside the formula goes through the same substitution as the placeholder.
    """
    cfg = cfg or manifest.hash_config
    text = cell.source.replace("{{x}}", _X_MARK)
    statements = split_statements(text)
    if not statements:
        raise SqlSyntaxError("empty query")
    if cell.formula_directive is not None:
        last = statements[-1]
        query = parse_select(last)
        if isinstance(query, DmlStatement):
            raise UnsupportedConstruct("a formula must go into a SELECT statement")
        formula = formula_for(cell.formula_directive, number, manifest, query)
        at = text.rfind(last)
        text = text[:at] + inject_formula(query, formula) + text[at + len(last) :]
    else:
        formula = extract_formula(text)
    cell.shown_sql = text.replace(_X_MARK, PLACEHOLDER)
    cell.formula = formula.replace(_X_MARK, PLACEHOLDER) if formula else None
    if cell.control is None:
        cell.executed_sql = cell.shown_sql
        return
    literal = _sql_literal(cell.control.value)
    if not formula:
        cell.executed_sql = text.replace(_X_MARK, literal)
        return
    at = text.rfind(formula)
    executed_formula = cell.formula
    if PLACEHOLDER in cell.formula:
        executed_formula = substitute_control(cell.formula, cell.control, cfg)
    cell.executed_sql = (
        text[:at].replace(_X_MARK, literal) + executed_formula + text[at + len(formula) :].replace(_X_MARK, literal)
    )


def execute_cell(conn, cell: QueryCell, number: int, manifest: Manifest) -> None:
    try:
        prepare_cell(cell, number, manifest)
        result = run_script(conn, cell.executed_sql)
        if result is not None:
            cell.columns, cell.rows = result.columns, result.rows
        cell.token = result_token(result)
    except (EngineError, SqlSyntaxError, UnsupportedConstruct, FormulaError, NonConstantTokenError, KeyError) as exc:
        cell.error = f"{type(exc).__name__}: {exc}"
        return
    x = cell.control.value if cell.control else None
    for line, expression in cell.assertions:
        try:
            if not evaluate_assertion(expression, cell.columns, cell.rows, x):
                cell.failed_assertions.append(f"line {line}: assert {expression}")
        except (AssertionSyntaxError, IndexError, TypeError) as exc:
            cell.failed_assertions.append(f"line {line}: assert {expression} ({exc})")


def execute_records(conn, records: Sequence[TaskRecord], manifest: Manifest) -> list[TaskRecord]:
    """Run every query in script order and record results and tokens in place.

    Primary solutions keep their effects for the following tasks, as when the
    adventure is played in order; every other query is rolled back. At the
    end the whole run is rolled back so the database stays pristine.
    """
    conn.execute("SAVEPOINT sqlab_records")
    try:
        for record in records:
            for k, cell in enumerate(record.cells):
                if k == 0:
                    execute_cell(conn, cell, record.number, manifest)
                    continue
                conn.execute("SAVEPOINT sqlab_cell")
                try:
                    execute_cell(conn, cell, record.number, manifest)
                finally:
                    conn.execute("ROLLBACK TO sqlab_cell")
                    conn.execute("RELEASE sqlab_cell")
    finally:
        conn.execute("ROLLBACK TO sqlab_records")
        conn.execute("RELEASE sqlab_records")
    return list(records)


# -- graph ---------------------------------------------------------------------------------


class GraphError(ValueError):
    pass


@dataclass(frozen=True)
class Arc:
    source: str
    token: int | None
    target: str
    kind: str  # solution, variant, hint


@dataclass
class TaskGraph:
    nodes: dict[str, str]  # name -> role: entry, intermediate, hint, exit
    arcs: list[Arc]

    @property
    def entries(self) -> list[str]:
        return [n for n, role in self.nodes.items() if role == "entry"]

    def to_dict(self) -> dict:
        return {
            "nodes": dict(sorted(self.nodes.items())),
            "arcs": [[a.source, a.token, a.target, a.kind] for a in self.arcs],
        }

    @classmethod
    def from_dict(cls, data: dict) -> "TaskGraph":
        return cls(dict(data.get("nodes", {})), [Arc(*a) for a in data.get("arcs", [])])


def task_node(number: int) -> str:
    return f"{number:03d}"


def build_graph(records: Sequence[TaskRecord]) -> TaskGraph:
    numbers = {r.number for r in records}
    arcs: list[Arc] = []
    targeted: set[int] = set()
    successors: dict[str, set[str]] = defaultdict(set)
    for record in records:
        source = task_node(record.number)
        successors.setdefault(source, set())
        primary_target = None
        for cell in record.solutions:
            if cell.target is None:
                raise GraphError(f"{record.label}: solution at line {cell.line} has no target")
            if cell.target == "exit":
                target = f"exit_{source}"
            else:
                n = int(cell.target)
                if n not in numbers:
                    raise GraphError(f"{record.label}: target {cell.target} is not a task")
                targeted.add(n)
                target = task_node(n)
                successors[source].add(target)
            primary_target = primary_target or target
            arcs.append(Arc(source, cell.token, target, "solution"))
        solution_tokens = {c.token for c in record.solutions}
        for cell in record.variants:
            if cell.token is not None and cell.token not in solution_tokens and primary_target:
                arcs.append(Arc(source, cell.token, primary_target, "variant"))
        for k, cell in enumerate(record.hints, start=1):
            arcs.append(Arc(source, cell.token, f"{source}/hint{k}", "hint"))

    try:
        order = list(graphlib.TopologicalSorter(successors).static_order())
    except graphlib.CycleError as exc:
        raise GraphError(f"the task graph has a cycle: {' -> '.join(exc.args[1])}") from None

    nodes: dict[str, str] = {}
    for name in order:
        nodes[name] = "intermediate" if int(name) in targeted else "entry"
    for arc in arcs:
        if arc.kind == "hint":
            nodes[arc.target] = "hint"
        elif arc.target.startswith("exit_"):
            nodes[arc.target] = "exit"
    if records and not [n for n, role in nodes.items() if role == "entry"]:
        raise GraphError("the task graph has no entry point")
    reachable = _reachable([n for n, role in nodes.items() if role == "entry"], successors)
    unreachable = sorted(n for n, role in nodes.items() if role == "intermediate" and n not in reachable)
    if unreachable:
        raise GraphError(f"unreachable tasks: {', '.join(unreachable)}")
    return TaskGraph(nodes, arcs)


def _reachable(starts: Iterable[str], successors: dict[str, set[str]]) -> set[str]:
    seen = set(starts)
    queue = deque(seen)
    while queue:
        for nxt in successors.get(queue.popleft(), ()):
            if nxt not in seen:
                seen.add(nxt)
                queue.append(nxt)
    return seen


def export_map(graph: TaskGraph, title: str = "activity_map") -> str:
    """Graphviz rendering: green entries, red intermediates, blank hints, yellow exit stars."""
    styles = {
        "entry": 'style=filled, fillcolor="#4caf50", shape=circle',
        "intermediate": 'style=filled, fillcolor="#e53935", fontcolor=white, shape=circle',
        "hint": 'label="", shape=circle, width=0.15, height=0.15, fixedsize=true',
        "exit": 'style=filled, fillcolor="#fdd835", shape=star',
    }
    out = [f'digraph "{title}" {{', "  rankdir=LR;", '  node [fontname="Helvetica", fontsize=10];']
    for name, role in graph.nodes.items():
        label = f'label="{name[5:]}", ' if role == "exit" else ""
        out.append(f'  "{name}" [{label}{styles[role]}];')
    for arc in graph.arcs:
        label = "" if arc.token is None else f' [label="{arc.token}"]'
        style = " [style=dashed]" if arc.kind == "variant" and not label else ""
        out.append(f'  "{arc.source}" -> "{arc.target}"{label or style};')
    out.append("}")
    return "\n".join(out) + "\n"


# -- activity report -------------------------------------------------------------------------

_DECRYPT_CALL = re.compile(r"\bdecrypt\s*\(\s*(-?\d+)\s*\)", re.IGNORECASE)


@dataclass
class ActivityReport:
    lines: int = 0
    skipped: int = 0
    sessions: int = 0
    queries: int = 0
    token_frequencies: dict[int, int] = field(default_factory=dict)
    unmatched_tokens: list[int] = field(default_factory=list)
    per_task: dict[str, dict[str, Any]] = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "lines": self.lines,
            "skipped": self.skipped,
            "sessions": self.sessions,
            "queries": self.queries,
            "token_frequencies": {str(k): v for k, v in sorted(self.token_frequencies.items())},
            "unmatched_tokens": self.unmatched_tokens,
            "per_task": self.per_task,
        }


def decrypted_tokens(entry: dict) -> list[int]:
    payload = entry.get("payload")
    if entry.get("kind") == "decrypt" and isinstance(payload, int) and not isinstance(payload, bool):
        return [payload & ((1 << 64) - 1)]
    if isinstance(payload, str):
        return [int(t) & ((1 << 64) - 1) for t in _DECRYPT_CALL.findall(payload)]
    return []


def report(log_lines: Iterable[str], conn=None, messages: dict[int, tuple[int, str]] | None = None) -> ActivityReport:
    """Summarise a JSON-lines activity log.

    Tokens are classified with ``messages`` (token -> (task, kind)) when
    given, else by probing the message table of ``conn``.
    """
    out = ActivityReport()
    sessions: set = set()
    counts: Counter[int] = Counter()
    for raw in log_lines:
        if not raw.strip():
            continue
        out.lines += 1
        try:
            entry = json.loads(raw)
            if not isinstance(entry, dict) or entry.get("kind") not in ("query", "decrypt") or "session" not in entry:
                raise ValueError
        except ValueError:
            out.skipped += 1
            continue
        sessions.add(entry["session"])
        if entry["kind"] == "query":
            out.queries += 1
        counts.update(decrypted_tokens(entry))
    out.sessions = len(sessions)
    out.token_frequencies = dict(counts)
    known: dict[int, tuple[int, str] | None] = {}
    for token in counts:
        if messages is not None and token in messages:
            known[token] = messages[token]
        elif conn is not None:
            record = open_message(conn, token)
            known[token] = (record["task"], record["kind"]) if record else None
        else:
            known[token] = None
    out.unmatched_tokens = sorted(t for t, k in known.items() if k is None)
    per_task: dict[str, dict[str, Any]] = {}
    for token, n in counts.items():
        info = known[token]
        if info is None:
            continue
        task, kind = info
        stats = per_task.setdefault(f"{int(task):03d}", {"question": 0, "success": 0, "hint": 0})
        stats[kind] = stats.get(kind, 0) + n
    for stats in per_task.values():
        attempts = stats["success"] + stats["hint"]
        stats["failure_rate"] = round(stats["hint"] / attempts, 4) if attempts else None
    out.per_task = dict(sorted(per_task.items()))
    return out
