"""Command line entry point: ``sqlab build|play|check|map|report|simulate``."""

from __future__ import annotations

import argparse
import datetime
import json
import sys
import uuid
from pathlib import Path
from typing import Sequence, TextIO

from . import __version__, builder, compiler, lab
from .engine import Error as EngineError
from .engine import Manifest, connect, install_runtime, sqlite

EXIT_OK, EXIT_CHECK_FAILED, EXIT_USAGE = 0, 1, 2


class UsageError(Exception):
    pass


# -- helpers --------------------------------------------------------------------------------


def _manifest_for(db_path: Path, manifest_path: str | None) -> Manifest:
    path = Path(manifest_path) if manifest_path else db_path.with_name("manifest.json")
    if not path.exists():
        raise UsageError(f"no manifest at {path}; pass --manifest")
    try:
        return Manifest.load(path)
    except (ValueError, TypeError) as exc:
        raise UsageError(f"{path}: {exc}") from exc


def open_game(path: str | Path, manifest_path: str | None = None):
    """Connection to a built game (a ``.sql`` dump or a database file) and its manifest."""
    path = Path(path)
    if not path.exists():
        raise UsageError(f"{path} does not exist")
    manifest = _manifest_for(path, manifest_path)
    if path.suffix == ".sql":
        conn = builder.replay_dump(path.read_text(encoding="utf-8"), manifest)
    else:
        conn = connect(path)
        install_runtime(conn, manifest)
    return conn, manifest


def format_table(columns: Sequence[str], rows: Sequence[Sequence]) -> str:
    cells = [[("NULL" if v is None else str(v)) for v in row] for row in rows]
    widths = [max([len(c)] + [len(r[k]) for r in cells]) for k, c in enumerate(columns)]
    line = lambda values: "| " + " | ".join(v.ljust(w) for v, w in zip(values, widths)) + " |"
    out = [line(columns), "+" + "+".join("-" * (w + 2) for w in widths) + "+"]
    out.extend(line(r) for r in cells)
    return "\n".join(out)


# -- subcommands ------------------------------------------------------------------------------


def cmd_build(args) -> int:
    try:
        build = builder.build_game(args.game_dir, seed=args.seed)
    except builder.GameSourceError as exc:
        raise UsageError(str(exc)) from exc
    for line in build.report.lines():
        print(line)
    out_dir = Path(args.out) if args.out else Path(args.game_dir) / "build"
    if not build.report.passed:
        print(f"build failed: checks {', '.join(map(str, build.report.failed()))}", file=sys.stderr)
        return EXIT_CHECK_FAILED
    for path in build.write(out_dir):
        print(f"wrote {path}")
    if args.db:
        target = Path(args.db)
        target.unlink(missing_ok=True)
        dest = sqlite.connect(str(target))
        build.conn.backup(dest)
        dest.close()
        print(f"wrote {target}")
    return EXIT_OK


def cmd_play(args, stdin: TextIO | None = None, stdout: TextIO | None = None) -> int:
    stdin = stdin or sys.stdin
    stdout = stdout or sys.stdout
    conn, _ = open_game(args.database, args.manifest)
    log = open(args.log, "a", encoding="utf-8") if args.log else None
    session = uuid.uuid4().hex[:12]
    interactive = stdin.isatty()
    buffer: list[str] = []

    def run(sql: str) -> None:
        if log:
            kind = "decrypt" if compiler._DECRYPT_CALL.search(sql) else "query"
            stamp = datetime.datetime.now(datetime.timezone.utc).isoformat(timespec="seconds")
            log.write(json.dumps({"ts": stamp, "session": session, "kind": kind, "payload": sql}) + "\n")
            log.flush()
        try:
            for statement in compiler.split_statements(sql):
                cursor = conn.execute(statement)
                if cursor.description:
                    columns = [d[0] for d in cursor.description]
                    rows = cursor.fetchall()
                    if len(columns) == 1 and any("\n" in str(r[0]) for r in rows):
                        # Messages read better as plain text than as a table cell.
                        print("\n\n".join(str(r[0]) for r in rows), file=stdout)
                    else:
                        print(format_table(columns, rows), file=stdout)
        except (EngineError, ValueError) as exc:
            print(f"error: {exc}", file=stdout)

    try:
        while True:
            if interactive:
                stdout.write("sqlab> " if not buffer else "   ...> ")
                stdout.flush()
            line = stdin.readline()
            if not line:
                break
            buffer.append(line)
            text = "".join(buffer)
            if sqlite.complete_statement(text):
                buffer.clear()
                if text.strip():
                    run(text.strip())
        if "".join(buffer).strip():
            run("".join(buffer).strip())
    finally:
        if log:
            log.close()
        conn.close()
    return EXIT_OK


def cmd_check(args) -> int:
    conn, manifest = open_game(args.database, args.manifest)
    report = builder.verify_build(conn, manifest)
    for line in report.lines():
        print(line)
    return EXIT_OK if report.passed else EXIT_CHECK_FAILED


def cmd_map(args) -> int:
    source = Path(args.source)
    if source.is_dir():
        try:
            build = builder.build_game(source)
        except builder.GameSourceError as exc:
            raise UsageError(str(exc)) from exc
        if build.graph is None:
            print("the task graph could not be built", file=sys.stderr)
            return EXIT_CHECK_FAILED
        graph = build.graph
    else:
        if not source.exists():
            raise UsageError(f"{source} does not exist")
        graph = compiler.TaskGraph.from_dict(_manifest_for(source, args.manifest).graph)
    dot = compiler.export_map(graph)
    if args.dot and args.dot != "-":
        Path(args.dot).write_text(dot, encoding="utf-8")
    else:
        sys.stdout.write(dot)
    return EXIT_OK


def cmd_report(args) -> int:
    lines: list[str] = []
    for name in args.logs:
        path = Path(name)
        if not path.exists():
            raise UsageError(f"{path} does not exist")
        lines.extend(path.read_text(encoding="utf-8").splitlines())
    messages = None
    if args.manifest:
        manifest = Manifest.load(args.manifest)
        messages = {t: (m["task"], m["kind"]) for m in manifest.messages for t in m["tokens"]}
    conn = None
    if args.database:
        conn, _ = open_game(args.database, args.manifest)
    result = compiler.report(lines, conn, messages).to_dict()
    text = json.dumps(result, indent=2) + "\n"
    if args.out:
        Path(args.out).write_text(text, encoding="utf-8")
    else:
        sys.stdout.write(text)
    return EXIT_OK


def cmd_simulate(args) -> int:
    spec = lab.PopulationSpec.for_plan(args.plan, args.seed)
    result = lab.run_simulation(spec)
    for fn in result.ranking():
        print(f"{fn:<14}{result.results[fn].collisions:>6}")
    if args.out:
        Path(args.out).write_text(result.to_json(), encoding="utf-8")
    if args.svg:
        for path in lab.write_plots(result, args.svg):
            print(f"wrote {path}")
    return EXIT_OK


# -- parser ---------------------------------------------------------------------------------


def make_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="sqlab", description="Build and play fingerprinted SQL adventures.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("build", help="compile a game directory and run the build checks")
    p.add_argument("game_dir")
    p.add_argument("--out", help="output directory (default: <game_dir>/build)")
    p.add_argument("--db", help="also write the database to this file")
    p.add_argument("--seed", type=int, help="manifest seed (overrides game.json and SQLAB_SEED)")
    p.set_defaults(func=cmd_build)

    p = sub.add_parser("play", help="minimal SQL shell on a built game")
    p.add_argument("database", help="a .sql dump or a database file")
    p.add_argument("--manifest", help="manifest path (default: manifest.json next to the database)")
    p.add_argument("--log", help="append queries to this JSON-lines log")
    p.set_defaults(func=cmd_play)

    p = sub.add_parser("check", help="re-run the build checks on a built game")
    p.add_argument("database")
    p.add_argument("--manifest")
    p.set_defaults(func=cmd_check)

    p = sub.add_parser("map", help="export the activity map as DOT")
    p.add_argument("source", help="a game directory or a built game")
    p.add_argument("--dot", help="output file (default: stdout)")
    p.add_argument("--manifest")
    p.set_defaults(func=cmd_map)

    p = sub.add_parser("report", help="summarise activity logs")
    p.add_argument("logs", nargs="+")
    p.add_argument("--manifest", help="classify tokens with this manifest")
    p.add_argument("--database", help="classify tokens by probing this game")
    p.add_argument("--out")
    p.set_defaults(func=cmd_report)

    p = sub.add_parser("simulate", help="aggregation collision simulation")
    p.add_argument("--plan", choices=("full", "reduced"), default="full")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--svg", help="directory for SVG plots (needs matplotlib)")
    p.add_argument("--out", help="write the JSON report here")
    p.set_defaults(func=cmd_simulate)
    return parser


def main(argv: Sequence[str] | None = None) -> int:
    parser = make_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_USAGE if exc.code else EXIT_OK
    try:
        return args.func(args)
    except UsageError as exc:
        print(f"sqlab: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except OSError as exc:
        print(f"sqlab: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
