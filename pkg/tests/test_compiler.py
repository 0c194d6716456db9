import json

import pytest
from fixtures import company_connection

from sqlab import compiler
from sqlab.crypto import string_hash
from sqlab.formulas import PLACEHOLDER

SCRIPT = """# Trial

## Episode [010] Cheap projects

### Statement

Count the projects located in Sugarland.

x = 350 # the count, times 350

### Solution

```sql
-- Formula: BASIC_CTRL 1
SELECT count(*) * {{x}} AS n FROM project A WHERE location = 'Sugarland'
--> 020
```

assert col("n") == [x]

### Hint

```sql
-- Hint: Bellaire is not Sugarland.
-- Formula: BASIC_CTRL 1
SELECT count(*) * {{x}} AS n FROM project A WHERE location = 'Bellaire'
```

## Exercise [020] Everyone

### Statement

List every employee.

### Solution

```sql
SELECT emp_name, salt_020(sum(nn(A.hash)) OVER ()) AS token FROM employee A
--> exit
```

assert len(col("emp_name")) == 8
"""


def test_parse_script():
    adventure = compiler.parse_adventure(SCRIPT)
    assert adventure.title == "Trial"
    first, second = adventure.records
    assert (first.number, first.kind, first.title) == (10, "episode", "Cheap projects")
    assert first.control.value == 350
    assert first.solutions[0].target == "020"
    assert first.solutions[0].formula_directive == "BASIC_CTRL 1"
    assert first.hints[0].hint_text == "Bellaire is not Sugarland."
    assert second.solutions[0].target == "exit"
    assert second.solutions[0].assertions == [(42, 'len(col("emp_name")) == 8')]


def test_execute_script():
    conn, manifest, _ = company_connection(task_numbers=(10, 20))
    records = compiler.execute_records(conn, compiler.parse_adventure(SCRIPT).records, manifest)
    cell = records[0].solutions[0]
    assert cell.ok, (cell.error, cell.failed_assertions)
    assert cell.rows[0][0] == 350
    assert PLACEHOLDER in cell.shown_sql and "{{x}}" not in cell.shown_sql
    assert "(350)" in cell.executed_sql and PLACEHOLDER not in cell.executed_sql
    assert cell.token is not None
    assert records[0].hints[0].token not in (None, cell.token)
    assert records[1].solutions[0].ok and records[1].solutions[0].formula.startswith("salt_020(")
    graph = compiler.build_graph(records)
    assert graph.nodes == {"010": "entry", "020": "intermediate", "010/hint1": "hint", "exit_020": "exit"}


@pytest.mark.parametrize(
    "mutate, message",
    [
        (lambda s: s.replace("### Statement\n\nList", "### Solution\n\n```sql\nSELECT 1\n--> exit\n```\n\n### Statement\n\nList"), "out of order"),
        (lambda s: s.replace("--> exit\n", ""), "without a --> target"),
        (lambda s: s.replace("[020]", "[010]"), "used twice"),
        (lambda s: s.replace("x = 350", "x = [1]"), "control"),
        (lambda s: s + "\n```sql\nSELECT 1\n", "unterminated"),
        (lambda s: s.replace("## Episode", "## Chapter"), "unrecognised header"),
    ],
)
def test_conformity_errors(mutate, message):
    with pytest.raises(compiler.ScriptError, match=message):
        compiler.parse_adventure(mutate(SCRIPT))
    assert compiler.parse_adventure(mutate(SCRIPT), strict=False).issues


def test_assertions():
    columns, rows = ["a", "B"], [(1, "x"), (2, "y")]
    ev = lambda e, x=None: compiler.evaluate_assertion(e, columns, rows, x)
    assert ev('col("a") == [1, 2]')
    assert ev('col("b")[1] == "y" and len(col("a")) == 2')
    assert ev('col("a")[0] == x', x=1)
    assert not ev('2 < col("a")[0] <= 3')
    assert ev('"x" in col("b") and not "z" in col("b")')
    for bad in ['__import__("os")', 'col("c")', "col(", 'col("a")["k"]', "open"]:
        with pytest.raises(compiler.AssertionSyntaxError):
            ev(bad)


def test_split_and_extract():
    assert compiler.split_statements("UPDATE t SET a = ';'; -- c\nSELECT 1;;") == ["UPDATE t SET a = ';'", "-- c\nSELECT 1"]
    sql = "SELECT a, salt_001(sum(nn(A.hash)) OVER ()) AS token FROM t A"
    assert compiler.extract_formula(sql) == "salt_001(sum(nn(A.hash)) OVER ()) AS token"
    assert compiler.extract_formula("SELECT salt_001(1)") is None


def _cell(target, token=1, role=compiler.Role.SOLUTION):
    cell = compiler.QueryCell(role, "SELECT 1", 1, target=target)
    cell.token = token
    return cell


def _record(number, solutions, hints=(), variants=()):
    return compiler.TaskRecord(number, "episode", "", 1, solutions=list(solutions), hints=list(hints), variants=list(variants))


def test_graph_star_shape():
    records = [_record(n, [_cell("exit", n)]) for n in (1, 2, 3)]
    graph = compiler.build_graph(records)
    assert sorted(graph.entries) == ["001", "002", "003"]
    assert {a.target for a in graph.arcs} == {"exit_001", "exit_002", "exit_003"}


def test_graph_multiple_solutions_and_path():
    records = [
        _record(1, [_cell("002", 10), _cell("002", 11)], hints=[_cell(None, 12, compiler.Role.HINT)], variants=[_cell(None, 13, compiler.Role.VARIANT)]),
        _record(2, [_cell("exit", 20)]),
    ]
    graph = compiler.build_graph(records)
    assert [(a.source, a.token, a.target, a.kind) for a in graph.arcs] == [
        ("001", 10, "002", "solution"),
        ("001", 11, "002", "solution"),
        ("001", 13, "002", "variant"),
        ("001", 12, "001/hint1", "hint"),
        ("002", 20, "exit_002", "solution"),
    ]
    assert compiler.TaskGraph.from_dict(json.loads(json.dumps(graph.to_dict()))) == graph


@pytest.mark.parametrize(
    "records, message",
    [
        ([_record(1, [_cell("002")]), _record(2, [_cell("001")])], "cycle"),
        ([_record(1, [_cell("009")])], "not a task"),
        ([_record(1, [_cell(None)])], "no target"),
    ],
)
def test_graph_errors(records, message):
    with pytest.raises(compiler.GraphError, match=message):
        compiler.build_graph(records)


def test_export_map_colours():
    graph = compiler.build_graph([_record(1, [_cell("002", 5)], hints=[_cell(None, 6, compiler.Role.HINT)]), _record(2, [_cell("exit", 7)])])
    dot = compiler.export_map(graph)
    assert dot.startswith('digraph "activity_map" {')
    assert '"001" [style=filled, fillcolor="#4caf50"' in dot
    assert '"002" [style=filled, fillcolor="#e53935"' in dot
    assert '"exit_002" [label="002", style=filled, fillcolor="#fdd835", shape=star]' in dot
    assert '"001/hint1" [label=""' in dot
    assert '"001" -> "002" [label="5"];' in dot


def test_report():
    lines = [
        json.dumps({"ts": "t", "session": "a", "kind": "query", "payload": "SELECT decrypt(5)"}),
        json.dumps({"ts": "t", "session": "a", "kind": "decrypt", "payload": 5}),
        json.dumps({"ts": "t", "session": "b", "kind": "decrypt", "payload": 6}),
        json.dumps({"ts": "t", "session": "b", "kind": "decrypt", "payload": 9}),
        "not json",
        json.dumps({"kind": "query"}),
        "",
    ]
    out = compiler.report(lines, messages={5: (42, "success"), 6: (42, "hint")})
    assert (out.lines, out.skipped, out.sessions, out.queries) == (6, 2, 2, 1)
    assert out.token_frequencies == {5: 2, 6: 1, 9: 1}
    assert out.unmatched_tokens == [9]
    assert out.per_task == {"042": {"question": 0, "success": 2, "hint": 1, "failure_rate": 0.3333}}


def test_report_probes_database(game_build):
    token = next(iter(game_build.manifest.messages[0]["tokens"]))
    entry = json.dumps({"ts": "t", "session": "s", "kind": "decrypt", "payload": token})
    out = compiler.report([entry], game_build.conn)
    assert out.unmatched_tokens == []
    assert list(out.per_task) == [f"{game_build.manifest.messages[0]['task']:03d}"]


def test_prepare_cell_control_in_inline_formula():
    conn, manifest, _ = company_connection(task_numbers=(42,))
    source = (
        "SELECT count(*) AS n, salt_042({{x}} + bit_xor(sum(nn(A.hash) + nn(B.hash) + nn(C.hash))) OVER ()) AS token\n"
        "FROM employee A JOIN works_on B USING (emp_id) JOIN project C USING (prj_id) GROUP BY C.location"
    )
    cell = compiler.QueryCell(compiler.Role.SOLUTION, source, 1, control=compiler.ControlBinding(350))
    compiler.prepare_cell(cell, 42, manifest)
    assert cell.formula == "salt_042((0.0) + bit_xor(sum(nn(A.hash) + nn(B.hash) + nn(C.hash))) OVER ()) AS token"
    assert "salt_042((350) + bit_xor" in cell.executed_sql
    assert "{{x}}" not in cell.shown_sql
    assert compiler.run_script(conn, cell.executed_sql).rows


def test_prepare_cell_string_control():
    _, manifest, _ = company_connection(task_numbers=(42,))
    cell = compiler.QueryCell(
        compiler.Role.SOLUTION,
        "SELECT emp_name FROM employee A WHERE birth = {{x}}",
        1,
        formula_directive="BASIC_CTRL 1",
        control=compiler.ControlBinding("1965-01-09"),
    )
    compiler.prepare_cell(cell, 42, manifest)
    assert "WHERE birth = '1965-01-09'" in cell.executed_sql
    assert "WHERE birth = (0.0)" in cell.shown_sql
    assert f"salt_042(({string_hash('1965-01-09')}) + sum" in cell.executed_sql
