import io
import json
import shutil
from types import SimpleNamespace

import pytest
from fixtures import GAME_DIR, plain_text

from sqlab import cli

HINT_078 = """### Hint

```sql
-- Hint: Your query does not read the name from the employee table.
-- Formula: BASIC 2
SELECT DISTINCT 'Ahmad V. Jabbar' AS emp_name
  FROM employee A, works_on B;
```
"""


@pytest.fixture(scope="module")
def built(tmp_path_factory):
    out = tmp_path_factory.mktemp("build")
    assert cli.main(["build", str(GAME_DIR), "--out", str(out), "--db", str(out / "company.db")]) == cli.EXIT_OK
    return out


def test_build_writes_artifacts(built):
    assert sorted(p.name for p in built.iterdir()) == ["activity_map.dot", "company.db", "company.dump.sql", "manifest.json"]


def test_build_usage_errors(tmp_path, capsys):
    assert cli.main(["build", str(tmp_path / "nowhere")]) == cli.EXIT_USAGE
    game = tmp_path / "game"
    shutil.copytree(GAME_DIR, game)
    (game / "adventure.md").unlink()
    assert cli.main(["build", str(game)]) == cli.EXIT_USAGE
    assert "adventure.md" in capsys.readouterr().err
    assert cli.main([]) == cli.EXIT_USAGE
    assert cli.main(["simulate", "--plan", "half"]) == cli.EXIT_USAGE


def test_build_failed_check(tmp_path, capsys):
    game = tmp_path / "game"
    shutil.copytree(GAME_DIR, game, ignore=shutil.ignore_patterns("build"))
    script = (game / "adventure.md").read_text(encoding="utf-8")
    hint = HINT_078
    assert hint in script
    twin = hint.replace("Your query does not", "The name should not be typed, and the query does not")
    (game / "adventure.md").write_text(script.replace(hint, hint + "\n" + twin), encoding="utf-8")
    assert cli.main(["build", str(game)]) == cli.EXIT_CHECK_FAILED
    captured = capsys.readouterr()
    assert "checks 6" in captured.err
    assert not (game / "build").exists()


def _play(db, lines, log=None, manifest=None):
    out = io.StringIO()
    args = SimpleNamespace(database=str(db), manifest=manifest, log=log)
    assert cli.cmd_play(args, io.StringIO(lines), out) == cli.EXIT_OK
    return out.getvalue()


def test_play_session(built, tmp_path):
    log = tmp_path / "play.jsonl"
    text = _play(
        built / "company.dump.sql",
        "SELECT decrypt(42);\nSELECT count(*) AS n\n  FROM employee;\nSELEC nonsense;\nSELECT 1 AS one;\n",
        str(log),
    )
    assert "| n |" in text and "| 8 |" in text
    assert "error:" in text
    assert "| one |" in text
    entries = [json.loads(line) for line in log.read_text().splitlines()]
    assert [e["kind"] for e in entries] == ["decrypt", "query", "query", "query"]
    assert len({e["session"] for e in entries}) == 1


def test_play_decrypts_entry_message(built):
    manifest = json.loads((built / "manifest.json").read_text())
    question = next(m for m in manifest["messages"] if m["kind"] == "question")
    text = _play(built / "company.db", f"SELECT decrypt({question['tokens'][0]});\n")
    assert "Statement. Find every employee paid the minimum salary." in plain_text(text)


def test_check(built, capsys):
    assert cli.main(["check", str(built / "company.db")]) == cli.EXIT_OK
    assert cli.main(["check", str(built / "company.dump.sql")]) == cli.EXIT_OK
    assert cli.main(["check", str(built / "missing.db")]) == cli.EXIT_USAGE


def test_map(built, tmp_path, capsys):
    assert cli.main(["map", str(built / "company.db")]) == cli.EXIT_OK
    assert capsys.readouterr().out.startswith('digraph "activity_map"')
    target = tmp_path / "map.dot"
    assert cli.main(["map", str(GAME_DIR), "--dot", str(target)]) == cli.EXIT_OK
    assert '"042" -> "050"' in target.read_text()


def test_report(built, tmp_path):
    manifest = json.loads((built / "manifest.json").read_text())
    token = manifest["messages"][0]["tokens"][0]
    log = tmp_path / "log.jsonl"
    log.write_text(json.dumps({"ts": "t", "session": "s", "kind": "decrypt", "payload": f"SELECT decrypt({token})"}) + "\n")
    out = tmp_path / "report.json"
    args = ["report", str(log), "--manifest", str(built / "manifest.json"), "--out", str(out)]
    assert cli.main(args) == cli.EXIT_OK
    data = json.loads(out.read_text())
    assert data["sessions"] == 1 and data["unmatched_tokens"] == []
    assert cli.main(["report", str(tmp_path / "none.jsonl")]) == cli.EXIT_USAGE


def test_simulate(tmp_path, capsys):
    out = tmp_path / "sim.json"
    assert cli.main(["simulate", "--plan", "reduced", "--out", str(out)]) == cli.EXIT_OK
    assert "checksum_agg" in capsys.readouterr().out
    assert json.loads(out.read_text())


def test_format_table():
    assert cli.format_table(["a", "bb"], [(1, None)]) == "| a | bb   |\n+---+------+\n| 1 | NULL |"
