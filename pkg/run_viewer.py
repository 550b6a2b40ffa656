#!/usr/bin/env python3
"""
NS Lab Run Ledger Viewer
========================

Inspect the sqlite run ledger written by ns_lab.py.

Usage:
    python run_viewer.py [command] [limit]

Commands:
    status    - Ledger file info and outcome summary (default)
    runs      - Recent commands with exit codes
    checks    - Recent inequality check results
    tables    - All tables and row counts
    schema    - Table schema
"""

import os
import sqlite3
import sys
from datetime import datetime

RUN_LEDGER_FILE = os.getenv('RUN_LEDGER_FILE', "ns_lab_runs.db")
EXIT_LABELS = {0: 'ok', 1: 'usage', 2: 'blow-up', 3: 'contradiction'}


def check_database(db_file=RUN_LEDGER_FILE):
    if not os.path.exists(db_file):
        print(f"❌ Ledger file '{db_file}' not found!")
        print("   Run an ns_lab.py command first to create it.")
        return False
    return True


def get_connection(db_file=RUN_LEDGER_FILE):
    return sqlite3.connect(db_file)


def show_status(db_file=RUN_LEDGER_FILE):
    if not check_database(db_file):
        return

    conn = get_connection(db_file)
    cursor = conn.cursor()

    print("🌀 NS LAB RUN LEDGER")
    print("=" * 50)
    file_size = os.path.getsize(db_file) / 1024
    print(f"Ledger file: {db_file}")
    print(f"File size: {file_size:.1f} KB")
    print(f"Last modified: {datetime.fromtimestamp(os.path.getmtime(db_file)).strftime('%Y-%m-%d %H:%M:%S')}")
    print()

    try:
        cursor.execute("""
            SELECT command, COUNT(*), SUM(exit_code = 0), SUM(wall_seconds)
            FROM runs GROUP BY command ORDER BY command
        """)
        rows = cursor.fetchall()
        print("📊 COMMANDS:")
        if rows:
            for command, count, ok, seconds in rows:
                print(f"   {command:18} {count:6,} runs, {ok or 0:6,} ok, {seconds or 0.0:10.1f} s total")
        else:
            print("   No runs recorded yet")
    except sqlite3.OperationalError:
        print("📊 COMMANDS: N/A (runs table not found)")
    print()

    try:
        cursor.execute("""
            SELECT name, COUNT(*), SUM(passed), MIN(max_violation)
            FROM checks GROUP BY name ORDER BY name
        """)
        rows = cursor.fetchall()
        if rows:
            print("🔍 CHECKS:")
            for name, count, passed, worst in rows:
                worst_str = f"{worst:.3e}" if worst is not None else "-"
                print(f"   {name:12} {passed or 0:6,}/{count:<6,} passed, worst margin {worst_str}")
    except sqlite3.OperationalError:
        pass

    conn.close()


def show_recent_runs(limit=10, db_file=RUN_LEDGER_FILE):
    if not check_database(db_file):
        return

    conn = get_connection(db_file)
    cursor = conn.cursor()

    print(f"📋 RECENT RUNS (Last {limit})")
    print("=" * 90)
    try:
        cursor.execute("""
            SELECT id, command, scheme, resolution, datum, exit_code, wall_seconds, timestamp
            FROM runs ORDER BY id DESC LIMIT ?
        """, (limit,))
        rows = cursor.fetchall()
        if rows:
            print(f"{'#':>5} {'Timestamp':14} {'Command':18} {'Scheme':10} {'N':>4} {'Datum':18} {'Exit':13} {'Secs':>8}")
            print("-" * 90)
            for run_id, command, scheme, n, datum, code, seconds, timestamp in rows:
                timestamp = datetime.fromisoformat(timestamp).strftime('%m-%d %H:%M:%S')
                exit_str = f"{code} {EXIT_LABELS.get(code, '?')}"
                print(f"{run_id:5} {timestamp:14} {command:18} {scheme or '-':10} {n or 0:4} "
                      f"{(datum or '-')[:18]:18} {exit_str:13} {seconds or 0.0:8.2f}")
        else:
            print("No runs found")
    except sqlite3.OperationalError as e:
        print(f"Error: {e}")

    conn.close()


def show_recent_checks(limit=20, db_file=RUN_LEDGER_FILE):
    if not check_database(db_file):
        return

    conn = get_connection(db_file)
    cursor = conn.cursor()

    print(f"🔍 RECENT CHECKS (Last {limit})")
    print("=" * 80)
    try:
        cursor.execute("""
            SELECT run_id, name, status, max_violation, tolerance, timestamp
            FROM checks ORDER BY id DESC LIMIT ?
        """, (limit,))
        rows = cursor.fetchall()
        if rows:
            print(f"{'Run':>5} {'Timestamp':14} {'Check':12} {'Status':15} {'Max violation':>14} {'Tolerance':>12}")
            print("-" * 80)
            for run_id, name, status, violation, tolerance, timestamp in rows:
                timestamp = datetime.fromisoformat(timestamp).strftime('%m-%d %H:%M:%S')
                violation_str = f"{violation:.3e}" if violation is not None else "-"
                tolerance_str = f"{tolerance:.3e}" if tolerance is not None else "-"
                print(f"{run_id:5} {timestamp:14} {name:12} {status:15} {violation_str:>14} {tolerance_str:>12}")
        else:
            print("No checks found")
    except sqlite3.OperationalError as e:
        print(f"Error: {e}")

    conn.close()


def show_tables(db_file=RUN_LEDGER_FILE):
    if not check_database(db_file):
        return

    conn = get_connection(db_file)
    cursor = conn.cursor()

    print("📊 LEDGER TABLES")
    print("=" * 40)
    cursor.execute("SELECT name FROM sqlite_master WHERE type='table' AND name NOT LIKE 'sqlite_%'")
    tables = cursor.fetchall()
    if tables:
        print(f"{'Table Name':25} {'Row Count':>10}")
        print("-" * 40)
        for (table_name,) in tables:
            cursor.execute(f"SELECT COUNT(*) FROM {table_name}")
            print(f"{table_name:25} {cursor.fetchone()[0]:10,}")
    else:
        print("No tables found")

    conn.close()


def show_schema(db_file=RUN_LEDGER_FILE):
    if not check_database(db_file):
        return

    conn = get_connection(db_file)
    cursor = conn.cursor()

    print("🏗️  LEDGER SCHEMA")
    print("=" * 50)
    cursor.execute("SELECT name FROM sqlite_master WHERE type='table' AND name NOT LIKE 'sqlite_%'")
    for (table_name,) in cursor.fetchall():
        print(f"\n📋 {table_name.upper()} TABLE:")
        print("-" * 30)
        cursor.execute(f"PRAGMA table_info({table_name})")
        for cid, name, data_type, not_null, default_value, pk in cursor.fetchall():
            pk_str = " (PRIMARY KEY)" if pk else ""
            not_null_str = " NOT NULL" if not_null else ""
            default_str = f" DEFAULT {default_value}" if default_value else ""
            print(f"   {name:20} {data_type:15}{not_null_str}{default_str}{pk_str}")

    conn.close()


def main(argv=None):
    argv = sys.argv[1:] if argv is None else argv
    command = argv[0].lower() if argv else 'status'
    limit = int(argv[1]) if len(argv) > 1 else None

    if command == 'status':
        show_status()
    elif command == 'runs':
        show_recent_runs(limit or 10)
    elif command == 'checks':
        show_recent_checks(limit or 20)
    elif command == 'tables':
        show_tables()
    elif command == 'schema':
        show_schema()
    else:
        print("Unknown command. Available commands:")
        print("  status  - Ledger summary")
        print("  runs    - Recent commands")
        print("  checks  - Recent check results")
        print("  tables  - All ledger tables")
        print("  schema  - Ledger schema")


if __name__ == "__main__":
    main()
