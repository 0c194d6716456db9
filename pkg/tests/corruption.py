"""Seven damaged variants of the sample game, one per build check."""

from __future__ import annotations

from fixtures import GAME_DIR

from sqlab import builder

SCRIPT = (GAME_DIR / "adventure.md").read_text(encoding="utf-8")


def _edit(old: str, new: str) -> str:
    assert SCRIPT.count(old) == 1, old
    return SCRIPT.replace(old, new)


def _build(script: str | None = None, tamper=None) -> builder.CheckReport:
    return builder.build_game(GAME_DIR, adventure_text=script, tamper=tamper).report


def duplicate_hash():
    def tamper(conn):
        conn.execute("UPDATE department SET hash = (SELECT hash FROM employee ORDER BY rowid LIMIT 1) WHERE dpt_id = 5")

    return _build(tamper=tamper)


def failing_cell():
    return _build(_edit('assert len(col("emp_id")) == 3', 'assert len(col("emp_id")) == 4'))


STATEMENT_027 = "### Statement\n\nList the names of the projects controlled by the Research department.\n\n"


def misordered_sections():
    script = _edit(STATEMENT_027, "")
    marker = "## Exercise [086]"
    return _build(script.replace(marker, STATEMENT_027 + marker))


def mismatched_salt():
    return _build(_edit(
        "SELECT emp_id, emp_name, salary, salt_042(sum(nn(A.hash)) OVER ()) AS token\n  FROM employee A\n WHERE salary = (",
        "SELECT emp_id, emp_name, salary, salt_043(sum(nn(A.hash)) OVER ()) AS token\n  FROM employee A\n WHERE salary = (",
    ))


def tokenless_hint():
    return _build(_edit(
        "-- Hint: Only the projects of the Research department are expected.\n-- Formula: BASIC 1\n",
        "-- Hint: Only the projects of the Research department are expected.\n",
    ))


def colliding_tokens():
    hint = """### Hint

```sql
-- Hint: Your query does not read the name from the employee table.
-- Formula: BASIC 2
SELECT DISTINCT 'Ahmad V. Jabbar' AS emp_name
  FROM employee A, works_on B;
```
"""
    twin = hint.replace("Your query does not", "The name should not be typed, and the query does not")
    return _build(_edit(hint, hint + "\n" + twin))


def corrupted_envelope():
    def tamper(conn):
        (rowid, msg), = conn.execute("SELECT rowid, msg FROM sqlab_msg ORDER BY rowid LIMIT 1").fetchall()
        flipped = msg[:-2] + format(int(msg[-2:], 16) ^ 1, "02x")
        conn.execute("UPDATE sqlab_msg SET msg = ? WHERE rowid = ?", (flipped, rowid))

    return _build(tamper=tamper)


CORRUPTIONS = {
    "duplicate hash": (1, duplicate_hash),
    "failing cell": (2, failing_cell),
    "misordered sections": (3, misordered_sections),
    "mismatched salt number": (4, mismatched_salt),
    "token-less hint": (5, tokenless_hint),
    "colliding tokens": (6, colliding_tokens),
    "corrupted envelope": (7, corrupted_envelope),
}
