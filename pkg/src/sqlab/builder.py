"""Game database construction: schema, dataset, messages, verification and dumps."""

from __future__ import annotations

import datetime
import hashlib
import json
import os
import random
import re
from collections import defaultdict
from dataclasses import dataclass, field
from decimal import Decimal, InvalidOperation
from pathlib import Path
from sqlite3.dump import _iterdump
from typing import Iterable, Sequence

from . import compiler
from .compiler import Adventure, Role, TaskGraph, TaskRecord
from .crypto import HashConfig, SaltSpec, decrypt_probe, encrypt_message, row_hash
from .engine import DEFAULT_FALLBACK, Manifest, connect, install_runtime, read_messages
from .formulas import PLACEHOLDER, FormulaClass, render_formula, salt_numbers
from .star import DmlStatement, execute_token, parse_select


class BuildError(RuntimeError):
    pass


class GameSourceError(BuildError):
    """Missing or malformed source material (a usage error, not a failed check)."""


# -- schema ------------------------------------------------------------------------------


@dataclass(frozen=True)
class ColumnSpec:
    name: str
    declared_type: str
    notnull: bool


@dataclass(frozen=True)
class TableSpec:
    name: str
    columns: tuple[ColumnSpec, ...]
    has_hash_column: bool
    autoincrement: tuple[str, ...] = ()

    @property
    def data_columns(self) -> list[ColumnSpec]:
        return [c for c in self.columns if c.name.lower() != "hash"]

    @property
    def hashed_columns(self) -> list[str]:
        skip = {a.lower() for a in self.autoincrement}
        return [c.name for c in self.data_columns if c.name.lower() not in skip]


RESERVED_TABLES = {"sqlab_msg"}


def _user_tables(conn) -> list[tuple[str, str]]:
    return conn.execute(
        "SELECT name, sql FROM sqlite_master WHERE type = 'table' AND name NOT LIKE 'sqlite_%' ORDER BY rowid"
    ).fetchall()


def _quote(name: str) -> str:
    return '"' + name.replace('"', '""') + '"'


def load_schema(conn, ddl: str) -> list[TableSpec]:
    """(Re)create the core tables and their hash-maintenance triggers."""
    for (name, _) in _user_tables(conn):
        conn.execute(f"DROP TABLE IF EXISTS {_quote(name)}")
    try:
        conn.executescript(ddl)
    except Exception as exc:
        raise BuildError(f"DDL failed: {exc}") from exc
    specs = []
    for name, sql in _user_tables(conn):
        if name in RESERVED_TABLES:
            continue
        info = conn.execute(f"PRAGMA table_info({_quote(name)})").fetchall()
        columns = tuple(ColumnSpec(r[1], r[2] or "", bool(r[3])) for r in info)
        has_hash = any(c.name.lower() == "hash" for c in columns)
        if not has_hash:
            raise BuildError(f"table {name} has no hash column")
        auto = tuple(re.findall(r"(\w+)\s+INTEGER\s+PRIMARY\s+KEY\s+AUTOINCREMENT", sql or "", re.IGNORECASE))
        spec = TableSpec(name, columns, has_hash, auto)
        _install_triggers(conn, spec)
        specs.append(spec)
    return specs


def _install_triggers(conn, spec: TableSpec) -> None:
    table = _quote(spec.name)
    args = ", ".join(f"NEW.{_quote(c)}" for c in spec.hashed_columns)
    update = (
        f"UPDATE {table} SET hash = row_hash('{spec.name}'{', ' + args if args else ''}) "
        f"WHERE rowid = NEW.rowid;"
    )
    conn.execute(f"CREATE TRIGGER {_quote('sqlab_hash_ins_' + spec.name)} AFTER INSERT ON {table} BEGIN {update} END")
    if spec.hashed_columns:
        watched = ", ".join(_quote(c) for c in spec.hashed_columns)
        conn.execute(
            f"CREATE TRIGGER {_quote('sqlab_hash_upd_' + spec.name)} AFTER UPDATE OF {watched} ON {table} "
            f"BEGIN {update} END"
        )


def table_specs(conn) -> list[TableSpec]:
    specs = []
    for name, sql in _user_tables(conn):
        if name in RESERVED_TABLES:
            continue
        info = conn.execute(f"PRAGMA table_info({_quote(name)})").fetchall()
        columns = tuple(ColumnSpec(r[1], r[2] or "", bool(r[3])) for r in info)
        auto = tuple(re.findall(r"(\w+)\s+INTEGER\s+PRIMARY\s+KEY\s+AUTOINCREMENT", sql or "", re.IGNORECASE))
        specs.append(TableSpec(name, columns, any(c.name.lower() == "hash" for c in columns), auto))
    return specs


# -- dataset -------------------------------------------------------------------------------


class DatasetError(BuildError):
    pass


def _coerce(field_text: str, column: ColumnSpec, where: str):
    if field_text == "":
        if column.notnull:
            raise DatasetError(f"{where}: NULL in NOT NULL column {column.name}")
        return None
    declared = column.declared_type.upper()
    try:
        if "INT" in declared:
            return int(field_text)
        if any(k in declared for k in ("DEC", "NUMERIC", "REAL", "FLOA", "DOUB")):
            if not Decimal(field_text).is_finite():
                raise ValueError("not a finite number")
            return field_text
        if declared.startswith("DATETIME") or declared.startswith("TIMESTAMP"):
            datetime.datetime.fromisoformat(field_text)
        elif declared.startswith("DATE"):
            datetime.date.fromisoformat(field_text)
    except (ValueError, InvalidOperation) as exc:
        raise DatasetError(f"{where}: cannot read {field_text!r} as {column.declared_type}") from exc
    return field_text


def load_dataset(conn, directory: str | Path, specs: Sequence[TableSpec]) -> dict[str, int]:
    """Insert one TSV per table (no header, tab separated, empty field = NULL)."""
    directory = Path(directory)
    counts = {}
    for spec in specs:
        path = directory / f"{spec.name}.tsv"
        if not path.exists():
            raise DatasetError(f"missing dataset file {path.name}")
        columns = spec.data_columns
        placeholders = ", ".join("?" for _ in columns)
        names = ", ".join(_quote(c.name) for c in columns)
        rows = []
        for lineno, line in enumerate(path.read_text(encoding="utf-8").split("\n"), start=1):
            line = line.rstrip("\r")
            if not line:
                continue
            fields = line.split("\t")
            if len(fields) != len(columns):
                raise DatasetError(f"{path.name} line {lineno}: {len(fields)} fields, {len(columns)} expected")
            rows.append(
                [_coerce(f, c, f"{path.name} line {lineno} column {k + 1}") for k, (f, c) in enumerate(zip(fields, columns))]
            )
        conn.executemany(f"INSERT INTO {_quote(spec.name)} ({names}) VALUES ({placeholders})", rows)
        counts[spec.name] = len(rows)
    return counts


def all_hashes(conn, specs: Sequence[TableSpec]) -> list[tuple[str, int, int | None]]:
    out = []
    for spec in specs:
        for rowid, h in conn.execute(f"SELECT rowid, hash FROM {_quote(spec.name)} ORDER BY rowid"):
            out.append((spec.name, rowid, h))
    return out


def hash_problems(conn, specs: Sequence[TableSpec], cfg: HashConfig, disambiguator: str = "") -> list[str]:
    """Why the stored hashes are not a perfect setting (empty when they are)."""
    problems = []
    seen: dict[int, tuple[str, int]] = {}
    for spec in specs:
        cols = ", ".join(_quote(c) for c in spec.hashed_columns)
        select = f"SELECT rowid, hash{', ' + cols if cols else ''} FROM {_quote(spec.name)} ORDER BY rowid"
        for row in conn.execute(select):
            rowid, h, values = row[0], row[1], row[2:]
            where = f"{spec.name} row {rowid}"
            if h is None:
                problems.append(f"{where}: NULL hash")
                continue
            if h in (0, cfg.coalesce_constant) or not 0 < h < 1 << cfg.hash_bits:
                problems.append(f"{where}: hash {h} is not a valid positive hash")
            if h != row_hash(spec.name, values, cfg, disambiguator):
                problems.append(f"{where}: stored hash does not match the row")
            if h in seen:
                problems.append(f"{where}: hash {h} duplicates {seen[h][0]} row {seen[h][1]}")
            else:
                seen[h] = (spec.name, rowid)
    return problems


def rehash(conn, specs: Sequence[TableSpec]) -> None:
    for spec in specs:
        cols = ", ".join(_quote(c) for c in spec.hashed_columns)
        conn.execute(f"UPDATE {_quote(spec.name)} SET hash = row_hash('{spec.name}'{', ' + cols if cols else ''})")


def ensure_distinct_hashes(conn, specs: Sequence[TableSpec], manifest: Manifest, max_tries: int = 1000) -> None:
    """Pick the first disambiguator under which every hash is distinct, positive and not the coalescing constant."""
    cfg = manifest.hash_config
    values: list = []
    for attempt in range(max_tries):
        if attempt:
            manifest.disambiguator = f"#{attempt}"
            install_runtime(conn, manifest)
            rehash(conn, specs)
        values = [h for _, _, h in all_hashes(conn, specs)]
        if len(set(values)) == len(values) and not {0, cfg.coalesce_constant} & set(values):
            return
    raise BuildError(f"no disambiguator makes the {len(values)} row hashes distinct in {cfg.hash_bits} bits")


# -- messages ---------------------------------------------------------------------------------


@dataclass
class MessageRecord:
    task_number: int
    kind: str  # question, success, hint, fallback
    body: str
    unlock_tokens: set[int] = field(default_factory=set)

    def __post_init__(self) -> None:
        if self.kind not in ("question", "success", "hint", "fallback"):
            raise ValueError(f"unknown message kind {self.kind!r}")

    def plaintext(self) -> str:
        return json.dumps({"task": self.task_number, "kind": self.kind, "body": self.body}, ensure_ascii=False)


def seeded_bytes(seed: int, purpose: str):
    rng = random.Random(f"{seed}:{purpose}")
    return rng.randbytes


def build_message_table(conn, records: Sequence[MessageRecord], seed: int | None = None) -> int:
    """One envelope per (record, token), shuffled; returns the number of rows.

    With a seed, nonces and row order are reproducible; without one, nonces
    come from the operating system.
    """
    conn.execute("DROP TABLE IF EXISTS sqlab_msg")
    conn.execute("CREATE TABLE sqlab_msg (msg TEXT NOT NULL)")
    randbytes = os.urandom if seed is None else seeded_bytes(seed, "nonces")
    rows = []
    for record in records:
        if record.kind == "fallback":
            continue
        if not record.unlock_tokens:
            raise BuildError(f"message {record.kind} of task {record.task_number:03d} has no unlock token")
        for token in sorted(record.unlock_tokens):
            rows.append(encrypt_message(token, record.plaintext(), randbytes).to_bytes().hex())
    random.Random(f"{seed}:shuffle").shuffle(rows)
    conn.executemany("INSERT INTO sqlab_msg (msg) VALUES (?)", [(r,) for r in rows])
    return len(rows)


def _presentation(record: TaskRecord) -> str:
    parts = [f"**{record.label}. {record.title}**" if record.title else f"**{record.label}.**"]
    if record.context:
        parts.append(record.context)
    parts.append(f"*Statement.* {record.statement}")
    formula = record.formula
    if formula:
        line = f"*Formula.* `{formula}`"
        if PLACEHOLDER in formula and record.control is not None:
            line += f"\nAfter the first pass, replace `{PLACEHOLDER}` with {record.control.instruction}."
        parts.append(line)
    return "\n\n".join(parts)


def _correction(record: TaskRecord) -> str:
    parts = [f"**Correction of {record.label}.**"]
    for cell in record.solutions:
        if cell.comment:
            parts.append(cell.comment)
        parts.append(f"```sql\n{cell.shown_sql or cell.source}\n```")
    for cell in record.variants:
        parts.append(cell.comment or "*Variant.*")
        parts.append(f"```sql\n{cell.shown_sql or cell.source}\n```")
    return "\n\n".join(parts)


def message_records(adventure: Adventure, graph: TaskGraph) -> list[MessageRecord]:
    """Question, success and hint messages as described by the task graph."""
    by_node = {compiler.task_node(r.number): r for r in adventure.records}
    messages: list[MessageRecord] = []
    for record in adventure.records:
        node = compiler.task_node(record.number)
        if graph.nodes.get(node) == "entry":
            messages.append(MessageRecord(record.number, "question", _presentation(record), {record.number}))
        success: dict[str, MessageRecord] = {}
        for arc in graph.arcs:
            if arc.source != node or arc.token is None:
                continue
            if arc.kind == "hint":
                k = int(arc.target.rsplit("hint", 1)[1]) - 1
                text = record.hints[k].hint_text or "This is not the expected answer."
                body = f"**Hint for {record.label}.** {text}"
                messages.append(MessageRecord(record.number, "hint", body, {arc.token}))
                continue
            message = success.get(arc.target)
            if message is None:
                body = [f"**Well done!** Your answer to {record.label} is correct.", _correction(record)]
                nxt = by_node.get(arc.target)
                if nxt is not None:
                    body.append(_presentation(nxt))
                else:
                    body.append("*This is the end of the task.*")
                message = MessageRecord(record.number, "success", "\n\n".join(body), set())
                success[arc.target] = message
                messages.append(message)
            message.unlock_tokens.add(arc.token)
    return [m for m in messages if m.unlock_tokens]


# -- verification ------------------------------------------------------------------------------

CHECK_NAMES = {
    1: "hash uniqueness",
    2: "validity",
    3: "structural conformity",
    4: "consistency",
    5: "usefulness",
    6: "token uniqueness",
    7: "round trip",
}


@dataclass
class CheckResult:
    number: int
    name: str
    passed: bool
    diagnostics: list[str] = field(default_factory=list)
    skipped: bool = False


@dataclass
class CheckReport:
    results: dict[int, CheckResult]
    warnings: list[str] = field(default_factory=list)

    @property
    def passed(self) -> bool:
        return all(r.passed for r in self.results.values())

    def failed(self) -> list[int]:
        return [n for n, r in sorted(self.results.items()) if not r.passed]

    def lines(self) -> list[str]:
        out = []
        for n, r in sorted(self.results.items()):
            status = "skip" if r.skipped else ("pass" if r.passed else "FAIL")
            out.append(f"check {n} ({r.name}): {status}")
            out.extend(f"    {d}" for d in r.diagnostics)
        out.extend(f"warning: {w}" for w in self.warnings)
        return out


def message_digest(record: MessageRecord) -> str:
    return hashlib.sha256(record.plaintext().encode("utf-8")).hexdigest()


def verify_build(
    conn,
    manifest: Manifest,
    adventure: Adventure | None = None,
    messages: Sequence[MessageRecord] | None = None,
    extra_issues: Sequence[str] = (),
) -> CheckReport:
    """Run the seven build checks.

    Checks 2, 3 and 5 need the executed script; without ``adventure`` they are
    skipped and checks 4, 6 and 7 fall back on what the manifest recorded.
    """
    results = {n: CheckResult(n, name, True) for n, name in CHECK_NAMES.items()}
    warnings: list[str] = []

    def fail(n: int, message: str) -> None:
        results[n].passed = False
        results[n].diagnostics.append(message)

    specs = table_specs(conn)
    for spec in specs:
        if not spec.has_hash_column:
            fail(1, f"table {spec.name} has no hash column")
    for problem in hash_problems(conn, [s for s in specs if s.has_hash_column], manifest.hash_config, manifest.disambiguator):
        fail(1, problem)

    if adventure is None:
        for n in (2, 3, 5):
            results[n].skipped = True
        unlocks = [(int(m["task"]), m["kind"], t) for m in manifest.messages for t in m["tokens"]]
        for m in manifest.messages:
            for n in m.get("salts", []):
                if n != int(m["task"]):
                    fail(4, f"task {int(m['task']):03d} calls salt_{n:03d}")
        _token_uniqueness(unlocks, fail)
        expected = [(t, m["digest"]) for m in manifest.messages for t in m["tokens"]]
        _round_trip(conn, expected, fail, by_digest=True)
        return CheckReport(results, warnings)

    for issue in adventure.issues:
        fail(3, str(issue))
    for message in extra_issues:
        fail(3, message)

    unlocks: list[tuple[int, str, int]] = []
    for record in adventure.records:
        for cell in record.cells:
            where = f"{record.label} {cell.role.value} at line {cell.line}"
            if cell.error:
                fail(2, f"{where}: {cell.error}")
            for failure in cell.failed_assertions:
                fail(2, f"{where}: {failure}")
            for n in salt_numbers(cell.shown_sql or cell.source):
                if n != record.number:
                    fail(4, f"{where}: salt_{n:03d} in task {record.number:03d}")
            if cell.error:
                continue
            if cell.token is None:
                if cell.role is Role.VARIANT:
                    warnings.append(f"{where}: produces no token")
                else:
                    fail(5, f"{where}: produces no token")
        tokens_here = [(c.token, c) for c in record.solutions + record.hints if c.token is not None]
        for token, cell in tokens_here:
            unlocks.append((record.number, cell.role.value, token))
        hint_tokens = {c.token for c in record.hints}
        for cell in record.variants:
            if cell.token is not None and cell.token in hint_tokens:
                fail(6, f"{record.label}: variant at line {cell.line} yields the token of a hint")
    entry_numbers = [int(n) for n, role in manifest.graph.get("nodes", {}).items() if role == "entry"]
    unlocks.extend((n, "question", n) for n in entry_numbers)
    _token_uniqueness(unlocks, fail)

    if messages is not None:
        expected = [(t, m.plaintext()) for m in messages for t in m.unlock_tokens]
        _round_trip(conn, expected, fail, by_digest=False)
    return CheckReport(results, warnings)


def _token_uniqueness(unlocks: Iterable[tuple[int, str, int]], fail) -> None:
    owners: dict[int, list[tuple[int, str]]] = defaultdict(list)
    for task, kind, token in unlocks:
        owners[token].append((task, kind))
    for token, who in sorted(owners.items()):
        if len(who) < 2:
            continue
        # Several solutions of one task may share a token.
        if len(set(who)) == 1 and who[0][1] == "solution":
            continue
        names = ", ".join(f"{kind} of task {task:03d}" for task, kind in who)
        fail(6, f"token {token} is shared by {names}")


def _round_trip(conn, expected: Sequence[tuple[int, str]], fail, by_digest: bool) -> None:
    blobs = read_messages(conn)
    rows = conn.execute("SELECT count(*) FROM sqlab_msg").fetchone()[0] if _has_table(conn, "sqlab_msg") else 0
    if rows != len(expected):
        fail(7, f"sqlab_msg has {rows} rows, {len(expected)} expected")
    for token, plain in expected:
        found = False
        for blob in blobs:
            opened = decrypt_probe(token, blob)
            if opened is None:
                continue
            if by_digest:
                opened = hashlib.sha256(opened.encode("utf-8")).hexdigest()
            if opened == plain:
                found = True
                break
        if not found:
            fail(7, f"no envelope opens with token {token} to its message")


def _has_table(conn, name: str) -> bool:
    return conn.execute("SELECT 1 FROM sqlite_master WHERE type = 'table' AND name = ?", (name,)).fetchone() is not None


# -- dumps ---------------------------------------------------------------------------------------


def emit_dump(conn) -> str:
    # The pysqlite3 wheel lacks Connection.iterdump; the stdlib walker only
    # needs a DB-API connection.
    lines = conn.iterdump() if hasattr(conn, "iterdump") else _iterdump(conn)
    return "\n".join(lines) + "\n"


def replay_dump(dump: str, manifest: Manifest, path: str | Path = ":memory:"):
    """Fresh connection holding the dumped database, runtime functions installed."""
    conn = connect(path)
    install_runtime(conn, manifest)
    conn.executescript(dump)
    return conn


def dml_post_token(conn, dml: str, table: str, cls: FormulaClass, salt: SaltSpec) -> int | None:
    """Apply ``dml`` and fingerprint ``table`` in its new state."""
    statement = parse_select(dml)
    if not isinstance(statement, DmlStatement):
        raise ValueError("expected an INSERT, UPDATE or DELETE statement")
    if statement.table.lower() != table.lower():
        raise ValueError(f"the statement modifies {statement.table}, not {table}")
    conn.execute(dml)
    formula = render_formula(cls, salt)
    return execute_token(conn, f"SELECT {formula} FROM {_quote(table)} A")


# -- whole game -------------------------------------------------------------------------------


@dataclass
class GameConfig:
    game_dir: Path
    title: str = "SQL adventure"
    backend: str = "embedded"
    formula_defaults: dict = field(default_factory=dict)
    fallback_text: str = DEFAULT_FALLBACK
    manifest_seed: int = 0
    hash_bits: int = 40
    hash_algorithm: str = "sha256"
    slug: str = "game"

    REQUIRED = ("schema.sql", "dataset", "adventure.md", "game.json")

    @classmethod
    def load(cls, game_dir: str | Path, seed: int | None = None) -> "GameConfig":
        game_dir = Path(game_dir)
        missing = [name for name in cls.REQUIRED if not (game_dir / name).exists()]
        if missing:
            raise GameSourceError(f"{game_dir} lacks {', '.join(missing)}")
        try:
            data = json.loads((game_dir / "game.json").read_text(encoding="utf-8"))
        except ValueError as exc:
            raise GameSourceError(f"game.json: {exc}") from exc
        if data.get("backend", "embedded") != "embedded":
            raise GameSourceError(f"unsupported backend {data['backend']!r}")
        env_seed = os.environ.get("SQLAB_SEED")
        if seed is None and env_seed:
            seed = int(env_seed)
        manifest_seed = int(data.get("seed", 0)) if seed is None else seed
        if not 0 <= manifest_seed < 1 << 64:
            raise GameSourceError("the manifest seed must be an unsigned 64-bit integer")
        return cls(
            game_dir=game_dir,
            title=data.get("title", "SQL adventure"),
            backend="embedded",
            formula_defaults=dict(data.get("formula_defaults", {})),
            fallback_text=data.get("fallback", DEFAULT_FALLBACK),
            manifest_seed=manifest_seed,
            hash_bits=int(data.get("hash_bits", 40)),
            hash_algorithm=data.get("hash_algorithm", "sha256"),
            slug=data.get("slug") or game_dir.name,
        )


@dataclass
class GameBuild:
    config: GameConfig
    conn: object
    manifest: Manifest
    adventure: Adventure
    graph: TaskGraph | None
    messages: list[MessageRecord]
    report: CheckReport
    dump: str
    row_counts: dict[str, int]

    def tokens(self) -> dict[str, int | None]:
        out = {}
        for record in self.adventure.records:
            for role in ("solutions", "variants", "hints"):
                for k, cell in enumerate(getattr(record, role), start=1):
                    out[f"{record.number:03d}/{role[:-1]}{k}"] = cell.token
        return out

    def write(self, out_dir: str | Path) -> list[Path]:
        out_dir = Path(out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        paths = [out_dir / f"{self.config.slug}.dump.sql", out_dir / "manifest.json", out_dir / "activity_map.dot"]
        paths[0].write_text(self.dump, encoding="utf-8")
        paths[1].write_text(self.manifest.to_json(), encoding="utf-8")
        paths[2].write_text(compiler.export_map(self.graph) if self.graph else "digraph {}\n", encoding="utf-8")
        return paths


def build_game(
    game_dir: str | Path,
    seed: int | None = None,
    adventure_text: str | None = None,
    tamper=None,
) -> GameBuild:
    """Compile a game directory into a verified database.

    ``adventure_text`` replaces the script on disk and ``tamper(conn)`` runs
    just before verification; both exist for testing the checks.
    """
    config = GameConfig.load(game_dir, seed)
    manifest = Manifest(
        title=config.title,
        seed=config.manifest_seed,
        hash_algorithm=config.hash_algorithm,
        hash_bits=config.hash_bits,
        fallback=config.fallback_text,
        formula_defaults={"basic_fw": "sum", "agg_fw": "bit_xor", "agg_fa": "sum", **config.formula_defaults},
    )
    manifest.hash_config  # validates the hash settings
    text = adventure_text if adventure_text is not None else (config.game_dir / "adventure.md").read_text(encoding="utf-8")
    adventure = compiler.parse_adventure(text, strict=False)
    referenced = {r.number for r in adventure.records}
    for record in adventure.records:
        for cell in record.cells:
            referenced.update(salt_numbers(cell.source))
    manifest.add_salts(sorted(referenced))

    conn = connect()
    specs = load_schema(conn, (config.game_dir / "schema.sql").read_text(encoding="utf-8"))
    install_runtime(conn, manifest)
    counts = load_dataset(conn, config.game_dir / "dataset", specs)
    ensure_distinct_hashes(conn, specs, manifest)

    compiler.execute_records(conn, adventure.records, manifest)

    graph_issues: list[str] = []
    try:
        graph = compiler.build_graph(adventure.records)
    except compiler.GraphError as exc:
        graph, graph_issues = None, [str(exc)]
    manifest.graph = graph.to_dict() if graph else {}
    manifest.entries = sorted(int(n) for n in (graph.entries if graph else []))
    messages = message_records(adventure, graph) if graph else []
    build_message_table(conn, messages, manifest.seed)
    manifest.messages = [
        {
            "task": m.task_number,
            "kind": m.kind,
            "tokens": sorted(m.unlock_tokens),
            "digest": message_digest(m),
            "salts": sorted(
                {n for r in adventure.records if r.number == m.task_number for c in r.cells for n in salt_numbers(c.shown_sql or c.source)}
            ),
        }
        for m in messages
    ]
    if tamper is not None:
        tamper(conn)
    report = verify_build(conn, manifest, adventure, messages, graph_issues)
    return GameBuild(config, conn, manifest, adventure, graph, messages, report, emit_dump(conn), counts)
