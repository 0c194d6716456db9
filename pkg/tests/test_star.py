import pytest
from fixtures import company_connection

from sqlab.formulas import FormulaClass, FormulaKind
from sqlab.star import (
    DmlStatement,
    SqlSyntaxError,
    StarredTable,
    UnsupportedConstruct,
    inject_formula,
    parse_select,
    star,
    starred_match,
    starred_table,
    table_columns,
    tokenize,
)

BASIC1 = FormulaClass.make(FormulaKind.BASIC, 1)
BASIC2 = FormulaClass.make(FormulaKind.BASIC, 2)
AGG1 = FormulaClass.make(FormulaKind.AGG, 1)


@pytest.fixture(scope="module")
def conn():
    conn, _, _ = company_connection()
    yield conn
    conn.close()


def test_parse_lowest_salary():
    ast = parse_select("SELECT emp_id, emp_name FROM employee A WHERE salary = (SELECT min(salary) FROM employee);")
    assert ast.select_items == ["emp_id", "emp_name"]
    assert ast.aliases == ["A"]
    assert ast.where == "salary = (SELECT min(salary) FROM employee)"
    assert not ast.aggregated
    assert ast.traits() == {"n_outer_tables": 1, "has_outer_grouping_or_aggregation": False, "post_select_ops": False}


def test_parse_grouped_join():
    ast = parse_select(
        "SELECT dpt_name, count(*) FROM department A JOIN employee B ON A.dpt_id = B.dpt_id "
        "WHERE address LIKE '%Houston%' GROUP BY dpt_name HAVING avg(salary) > 30000 ORDER BY 2 DESC LIMIT 3"
    )
    assert [(t.name, t.alias, t.join_kind) for t in ast.from_tables] == [
        ("department", "A", "first"),
        ("employee", "B", "inner"),
    ]
    assert ast.from_tables[1].condition == "ON A.dpt_id = B.dpt_id"
    assert ast.group_by == ["dpt_name"]
    assert ast.having == "avg(salary) > 30000"
    assert ast.order_by == "2 DESC" and ast.limit == "3"
    assert ast.aggregated and ast.post_select_ops


def test_parse_projected_aggregate_and_distinct():
    assert parse_select("SELECT count(*) FROM employee").projected_aggregate
    assert parse_select("SELECT DISTINCT location FROM project").distinct
    assert not parse_select("SELECT (SELECT count(*) FROM project) FROM employee").projected_aggregate


def test_parse_unaliased_and_derived_tables():
    ast = parse_select("SELECT * FROM employee, works_on w")
    assert ast.aliases == ["employee", "w"]
    assert parse_select("SELECT * FROM (SELECT 1) AS t").has_derived_table


def test_parse_dml():
    stmt = parse_select("UPDATE employee SET salary = 1 WHERE emp_id = '1'")
    assert stmt == DmlStatement("UPDATE", "employee", "UPDATE employee SET salary = 1 WHERE emp_id = '1'")
    assert parse_select("DELETE FROM works_on").table == "works_on"
    assert parse_select("INSERT INTO project VALUES (1)").kind == "INSERT"


@pytest.mark.parametrize("sql", ["CREATE TABLE t (x)", "DROP TABLE employee", "SELECT 1 UNION SELECT 2"])
def test_unsupported(sql):
    with pytest.raises(UnsupportedConstruct):
        parse_select(sql)


@pytest.mark.parametrize("sql", ["", ";", "SELECT (1", "SELECT 1; SELECT 2", "SELECT 'open"])
def test_syntax_errors(sql):
    with pytest.raises(SqlSyntaxError):
        parse_select(sql)


def test_tokenize_keeps_text():
    sql = "SELECT 'a''b', \"x y\" -- note\nFROM t /* c */"
    assert "".join(t.text for t in tokenize(sql)) == sql


def test_inject_formula_preserves_bytes():
    sql = "SELECT  emp_name\n  FROM employee A\n WHERE salary > 1 ORDER BY 1"
    out = inject_formula(parse_select(sql), "f() AS token")
    assert out == "SELECT  emp_name, f() AS token\n  FROM employee A\n WHERE salary > 1 ORDER BY 1"


def test_star_projection_join(conn):
    q = parse_select("SELECT DISTINCT emp_id, location FROM works_on A JOIN project B ON A.prj_id = B.prj_id ORDER BY emp_id")
    starred = star(q, BASIC2)
    assert starred == "SELECT A.*, B.* FROM works_on A JOIN project B ON A.prj_id = B.prj_id"
    assert len(conn.execute(q.sql).fetchall()) == 13
    assert len(conn.execute(starred).fetchall()) == 16


def test_star_grouping(conn):
    q = parse_select("SELECT location, count(*) FROM project A GROUP BY location")
    starred = star(q, AGG1, table_columns(conn, ["project"]))
    assert starred.startswith("SELECT star_bag(A.prj_name), star_bag(A.prj_id)")
    assert starred.endswith("FROM project A GROUP BY location")
    assert len(conn.execute(q.sql).fetchall()) == len(conn.execute(starred).fetchall()) == 4


def test_star_refuses():
    with pytest.raises(UnsupportedConstruct):
        star(parse_select("SELECT 1"), BASIC1)
    with pytest.raises(UnsupportedConstruct):
        star(parse_select("SELECT a FROM t A GROUP BY a"), BASIC1)
    with pytest.raises(UnsupportedConstruct):
        star(parse_select("SELECT x FROM (SELECT 1 AS x) A"), BASIC1)
    with pytest.raises(ValueError):
        star(parse_select("SELECT a FROM t A GROUP BY a"), AGG1)


def test_star_idempotent(conn):
    for sql, cls in [
        ("SELECT emp_name FROM employee A WHERE salary > 30000 ORDER BY 1", BASIC1),
        ("SELECT A.prj_name FROM project A JOIN works_on B USING (prj_id)", BASIC2),
    ]:
        once = star(parse_select(sql), cls)
        assert star(parse_select(once), cls) == once


def test_counterexample_aggregate():
    conn, _, _ = company_connection()
    q1 = parse_select("SELECT count(*) FROM employee A WHERE supervisor_id IS NOT NULL")
    q2 = parse_select("SELECT count(supervisor_id) FROM employee A")
    assert conn.execute(q1.sql).fetchall() == conn.execute(q2.sql).fetchall()
    assert not starred_match(conn, q1, q2, AGG1)


def test_counterexample_limit(conn):
    q1 = parse_select("SELECT emp_name FROM employee A WHERE salary = (SELECT max(salary) FROM employee)")
    q2 = parse_select("SELECT emp_name FROM employee A ORDER BY salary DESC LIMIT 1")
    assert conn.execute(q1.sql).fetchall() == conn.execute(q2.sql).fetchall()
    assert len(conn.execute(star(q2, BASIC1)).fetchall()) == 8
    assert not starred_match(conn, q1, q2, BASIC1)


def test_starred_match_ignores_alias_swap(conn):
    q1 = parse_select("SELECT A.emp_name FROM employee A JOIN works_on B USING (emp_id) WHERE hours = 5")
    q2 = parse_select("SELECT B.emp_name FROM employee B JOIN works_on A USING (emp_id) WHERE hours = 5")
    assert starred_match(conn, q1, q2, BASIC2)


def test_starred_table_equality():
    a = StarredTable.from_rows([(1, None, "x"), (2, None, "y")])
    b = StarredTable.from_rows([("y", 2), ("x", 1)])
    assert a == b and hash(a) == hash(b)
    assert a != StarredTable.from_rows([("x", 2), ("y", 1)])
    assert StarredTable.from_rows([]) == StarredTable.from_rows([])


def test_starred_table_values_from_database(conn):
    t = starred_table(conn, "SELECT A.* FROM project A WHERE prj_id = 30")
    assert len(t.rows) == 1 and not any(t.null_column_mask)
