"""Embedded engine access: connections, the build manifest, and runtime function registration."""

from __future__ import annotations

import json
import random
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Any

from . import aggregates
from .aggregates import to_signed, to_unsigned
from .crypto import (
    MASK64,
    HashConfig,
    SaltSpec,
    canonical_scalar,
    decrypt_probe,
    nn,
    row_hash,
    salt_apply,
    string_hash,
)
from .styling import style_markdown

try:  # a recent bundled SQLite (window functions, RIGHT JOIN) when available
    import pysqlite3.dbapi2 as sqlite
except ImportError:  # pragma: no cover - depends on the platform wheel
    import sqlite3 as sqlite

Error = sqlite.Error
MIN_SQLITE = (3, 39, 0)

DEFAULT_FALLBACK = "No message is unlocked by this token. Check your query and the formula, then try again."


def connect(path: str | Path = ":memory:"):
    if sqlite.sqlite_version_info < MIN_SQLITE:
        raise RuntimeError(
            f"SQLite {sqlite.sqlite_version} is too old; {'.'.join(map(str, MIN_SQLITE))} or later is required"
        )
    conn = sqlite.connect(str(path), isolation_level=None)
    if not hasattr(conn, "create_window_function"):
        raise RuntimeError("this sqlite3 module cannot register window functions")
    return conn


def derive_y(seed: int, task_number: int) -> int:
    # Kept below 2**63 so salted tokens stay positive in signed 64-bit columns.
    return random.Random(f"{seed}:{task_number:03d}").randrange(1 << 63)


@dataclass
class Manifest:
    title: str = "SQL adventure"
    seed: int = 0
    hash_algorithm: str = "sha256"
    hash_bits: int = 40
    coalesce_constant: int = 42
    disambiguator: str = ""
    fallback: str = DEFAULT_FALLBACK
    salts: dict[str, int] = field(default_factory=dict)
    formula_defaults: dict[str, str] = field(default_factory=dict)
    entries: list[int] = field(default_factory=list)
    graph: dict[str, Any] = field(default_factory=dict)
    messages: list[dict[str, Any]] = field(default_factory=list)

    @property
    def hash_config(self) -> HashConfig:
        return HashConfig(self.hash_algorithm, self.hash_bits, self.coalesce_constant)

    def salt(self, task_number: int) -> SaltSpec:
        return SaltSpec(task_number, self.salts[f"{task_number:03d}"])

    def salt_specs(self) -> list[SaltSpec]:
        return [SaltSpec(int(k), v) for k, v in sorted(self.salts.items())]

    def add_salts(self, task_numbers) -> None:
        for n in task_numbers:
            self.salts.setdefault(f"{n:03d}", derive_y(self.seed, n))

    def to_json(self) -> str:
        return json.dumps(asdict(self), indent=2, sort_keys=True, ensure_ascii=False) + "\n"

    @classmethod
    def from_json(cls, text: str) -> "Manifest":
        data = json.loads(text)
        known = {f for f in cls.__dataclass_fields__}
        return cls(**{k: v for k, v in data.items() if k in known})

    @classmethod
    def load(cls, path: str | Path) -> "Manifest":
        return cls.from_json(Path(path).read_text(encoding="utf-8"))


# -- runtime functions ---------------------------------------------------------------


class StarBag:
    """Order-free, null-preserving bag of canonical cell renderings, as JSON text."""

    def __init__(self) -> None:
        self.cells: list[str] = []

    def step(self, value) -> None:
        self.cells.append(json.dumps(canonical_scalar(value), ensure_ascii=False))

    def inverse(self, value) -> None:
        self.cells.remove(json.dumps(canonical_scalar(value), ensure_ascii=False))

    def value(self):
        return "[" + ",".join(sorted(self.cells)) + "]"

    def finalize(self):
        return self.value()


def _as_word(x) -> int | None:
    if x is None:
        return None
    if isinstance(x, (bytes, str)):
        text = x.decode("utf-8", "replace") if isinstance(x, bytes) else x
        try:
            return int(text)
        except ValueError:
            return None
    return int(x)


def read_messages(conn) -> list[bytes]:
    try:
        rows = conn.execute("SELECT msg FROM sqlab_msg").fetchall()
    except Error:
        return []
    blobs = []
    for (msg,) in rows:
        try:
            blobs.append(bytes.fromhex(msg) if isinstance(msg, str) else bytes(msg))
        except (TypeError, ValueError):
            continue
    return blobs


def open_message(conn, token: int) -> dict | None:
    """The decoded message record unlocked by ``token``, if any."""
    for blob in read_messages(conn):
        plain = decrypt_probe(token, blob)
        if plain is None:
            continue
        try:
            record = json.loads(plain)
        except ValueError:
            continue
        if isinstance(record, dict) and "body" in record:
            return record
    return None


def install_runtime(conn, manifest: Manifest) -> None:
    cfg = manifest.hash_config
    disambiguator = manifest.disambiguator
    fallback = style_markdown(manifest.fallback)

    def create(name, n_args, fn):
        conn.create_function(name, n_args, fn, deterministic=True)

    create("nn", 1, lambda x: nn(x, cfg))
    create("string_hash", 1, lambda s: None if s is None else string_hash(str(s), cfg))

    def sql_row_hash(table, *values):
        return row_hash(str(table), values, cfg, disambiguator)

    create("row_hash", -1, sql_row_hash)

    for spec in manifest.salt_specs():
        def salt(x, spec=spec):
            if isinstance(x, float):
                x = int(x)
            elif isinstance(x, (str, bytes)):
                x = string_hash(x if isinstance(x, str) else x.hex(), cfg)
            return to_signed(salt_apply(spec, x, cfg))

        create(spec.function_name, 1, salt)

    def decrypt(token):
        word = _as_word(token)
        if word is None:
            return fallback
        record = open_message(conn, to_unsigned(word))
        return fallback if record is None else style_markdown(str(record["body"]))

    conn.create_function("decrypt", 1, decrypt)

    for name, klass in aggregates.ENGINE_AGGREGATES.items():
        conn.create_window_function(name, 1, klass)
    conn.create_window_function("star_bag", 1, StarBag)


def token_value(x) -> int | None:
    """Unsigned image of a token cell read back from the engine."""
    if x is None:
        return None
    return int(x) & MASK64
