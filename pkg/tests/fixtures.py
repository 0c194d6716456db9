"""Shared data for the test suite: the company game and the twenty-answers fixtures."""

from __future__ import annotations

import unicodedata
from pathlib import Path

from sqlab import builder
from sqlab.engine import Manifest, connect, install_runtime

GAME_DIR = Path(__file__).resolve().parents[1] / "src" / "sqlab" / "data" / "company"

ETC = "hours = 5 AND prj_id = '30'"

# Same question, twenty answers: gold (G), overly complicated (O), incorrect (I).
ANSWERS = {
    "G1": f"SELECT emp_name FROM employee A WHERE emp_id IN (SELECT emp_id FROM works_on WHERE {ETC})",
    "G2": "SELECT A.emp_name FROM employee A JOIN works_on B USING (emp_id) WHERE hours = 5 AND prj_id = '30'",
    "G3": "SELECT B.emp_name FROM employee B JOIN works_on A USING (emp_id) WHERE hours = 5 AND prj_id = '30'",
    "G4": f"SELECT A.emp_name FROM employee A, works_on B WHERE A.emp_id = B.emp_id AND {ETC}",
    "G5": f"SELECT B.emp_name FROM employee B, works_on A WHERE A.emp_id = B.emp_id AND {ETC}",
    "O1": f"SELECT A.emp_name FROM employee A RIGHT JOIN works_on B USING (emp_id) WHERE {ETC}",
    "O2": f"SELECT B.emp_name FROM employee B RIGHT JOIN works_on A USING (emp_id) WHERE {ETC}",
    "O3": f"SELECT A.emp_name FROM employee A JOIN employee B USING (emp_id) JOIN works_on O USING (emp_id) WHERE {ETC}",
    "O4": f"SELECT B.emp_name FROM employee B JOIN employee O USING (emp_id) JOIN works_on A USING (emp_id) WHERE {ETC}",
    "O5": f"SELECT O.emp_name FROM employee O JOIN employee A USING (emp_id) JOIN works_on B USING (emp_id) WHERE {ETC}",
    "O6": f"SELECT A.emp_name FROM employee A JOIN works_on B USING (emp_id) JOIN project O USING (prj_id) WHERE {ETC}",
    "O7": f"SELECT B.emp_name FROM employee B JOIN works_on O USING (emp_id) JOIN project A USING (prj_id) WHERE {ETC}",
    "O8": f"SELECT O.emp_name FROM employee O JOIN works_on A USING (emp_id) JOIN project B USING (prj_id) WHERE {ETC}",
    "I1": f"SELECT A.emp_name FROM employee A LEFT JOIN works_on B USING (emp_id) WHERE {ETC}",
    "I2": f"SELECT B.emp_name FROM employee B LEFT JOIN works_on A USING (emp_id) WHERE {ETC}",
    "I3": "SELECT 'Ahmad V. Jabbar'",
    "I4": "SELECT emp_name FROM employee A WHERE emp_name = 'Ahmad V. Jabbar'",
    "I5": "SELECT emp_name FROM employee A WHERE emp_id = '987987987'",
    "I6": "SELECT DISTINCT 'Ahmad V. Jabbar' FROM employee A",
    "I7": "SELECT DISTINCT 'Ahmad V. Jabbar' FROM employee A, works_on B",
    "I8": "SELECT emp_name FROM employee A JOIN works_on B USING (emp_id) WHERE hours = 5",
    "I9": "SELECT A.emp_name FROM employee A JOIN project B USING (dpt_id) WHERE prj_id = '30' and sex = 'M'",
    "I10": "SELECT B.emp_name FROM employee B JOIN project A USING (dpt_id) WHERE prj_id = '30' and sex = 'M'",
}

# Equality classes of the t1 and t2 columns; None marks the error cells.
ANSWERS_T1 = [
    {"G1", "G2", "G4", "O1", "O3", "O5", "O6", "I1", "I4", "I5", "I8", "I9"},
    {"G3", "G5", "O2", "O4", "O8", "I2"},
    {"O7", "I10"},
    {"I6"},
    {"I7"},
]
ANSWERS_T1_ERRORS = {"I3"}
ANSWERS_T2 = [
    {"G2", "G3", "G4", "G5", "O1", "O2", "O4", "O5", "O6", "I1", "I2", "I8"},
    {"O3"},
    {"O7", "I9", "I10"},
    {"O8"},
    {"I7"},
]
ANSWERS_T2_ERRORS = {"G1", "I3", "I4", "I5", "I6"}


def company_connection(task_numbers=(42,), seed: int = 7):
    """The company database with runtime functions and the given salts installed."""
    manifest = Manifest(seed=seed)
    manifest.add_salts(task_numbers)
    conn = connect()
    specs = builder.load_schema(conn, (GAME_DIR / "schema.sql").read_text(encoding="utf-8"))
    install_runtime(conn, manifest)
    builder.load_dataset(conn, GAME_DIR / "dataset", specs)
    builder.ensure_distinct_hashes(conn, specs, manifest)
    return conn, manifest, specs


def partition(results: dict[str, object]) -> tuple[list[set[str]], set[str]]:
    """Equality classes of non-None results, and the keys whose result is None."""
    classes: dict[object, set[str]] = {}
    errors = set()
    for key, value in results.items():
        if value is None:
            errors.add(key)
        else:
            classes.setdefault(value, set()).add(key)
    return list(classes.values()), errors


def same_partition(a: list[set[str]], b: list[set[str]]) -> bool:
    return sorted(map(sorted, a)) == sorted(map(sorted, b))


def plain_text(text: str) -> str:
    """Undo the Unicode letter styling so that message text can be searched."""
    # NFKC maps the mathematical alphanumerics back to ASCII (h included).
    return unicodedata.normalize("NFKC", text)
