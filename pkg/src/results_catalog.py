"""
results_catalog.py
Author: LOGS Team
Date: October 19, 2026

Purpose:
    This module manages the SQLite results catalog of an output directory.
    It handles database initialization, schema creation, and provides CRUD
    operations for run results including:
    - one row per (config hash, split) with the headline mean/std F1
    - the full JSON run record
    - suite membership (a run can belong to several suites)
    - duplicate detection by config hash, which makes suite reruns idempotent
"""

import json
import logging
import sqlite3
from pathlib import Path
from typing import Any, Dict, List, Optional

logger = logging.getLogger(__name__)


class ResultsCatalog:
    def __init__(self, db_path: str = "results/results.db"):
        self.db_path = db_path

        # Create output directory if it doesn't exist
        Path(db_path).parent.mkdir(parents=True, exist_ok=True)

        try:
            self.conn = sqlite3.connect(self.db_path)
            self.conn.row_factory = sqlite3.Row
            self._init_database()
        except sqlite3.Error as exc:
            logger.error("Cannot open results catalog %s: %s", db_path, exc)
            self.conn = None

    def _init_database(self):
        """Initialize database with embedded schema"""
        try:
            schema_sql = """
            -- Runs table - one evaluated configuration on one split
            CREATE TABLE IF NOT EXISTS runs (
                id INTEGER PRIMARY KEY AUTOINCREMENT,
                config_hash TEXT NOT NULL,
                split TEXT NOT NULL DEFAULT 'validation',
                mode TEXT NOT NULL,
                recipe TEXT NOT NULL,
                sensors TEXT NOT NULL,
                mean_f1 REAL,
                std_f1 REAL,
                n_seeds INTEGER,
                n_failed INTEGER DEFAULT 0,
                record TEXT NOT NULL,
                date_added DATETIME DEFAULT CURRENT_TIMESTAMP,
                UNIQUE (config_hash, split)
            );

            -- Suites table - named experiment suites
            CREATE TABLE IF NOT EXISTS suites (
                id INTEGER PRIMARY KEY AUTOINCREMENT,
                name TEXT UNIQUE NOT NULL
            );

            -- Many-to-many: a run can be shared by several suites
            CREATE TABLE IF NOT EXISTS suite_runs (
                suite_id INTEGER,
                run_id INTEGER,
                PRIMARY KEY (suite_id, run_id),
                FOREIGN KEY (suite_id) REFERENCES suites(id) ON DELETE CASCADE,
                FOREIGN KEY (run_id) REFERENCES runs(id) ON DELETE CASCADE
            );

            CREATE INDEX IF NOT EXISTS idx_runs_config_hash ON runs(config_hash);
            CREATE INDEX IF NOT EXISTS idx_runs_mode ON runs(mode);
            CREATE INDEX IF NOT EXISTS idx_suites_name ON suites(name);
            """

            cursor = self.conn.cursor()
            cursor.executescript(schema_sql)
            cursor.execute("PRAGMA foreign_keys = ON")
            self.conn.commit()
            return True
        except sqlite3.Error as exc:
            logger.error("Cannot create results schema: %s", exc)
            return False

    # --- Run Operations ---
    def add_run(self, record: Dict[str, Any], suite: str = None,
                replace: bool = False) -> Optional[int]:
        """
        Store a run record. Returns the row id, or None for duplicates and errors.
        With `replace`, a stored run of the same hash and split is overwritten in
        place (its id and suite memberships are kept).
        """
        config_hash = record.get("config_hash")
        split = record.get("split", "validation")
        if not config_hash or (not replace and self.run_exists(config_hash, split)):
            return None

        try:
            config = record.get("config", {})
            cursor = self.conn.cursor()
            cursor.execute("""
                INSERT INTO runs (config_hash, split, mode, recipe, sensors, mean_f1, std_f1,
                                  n_seeds, n_failed, record)
                VALUES (?, ?, ?, ?, ?, ?, ?, ?, ?, ?)
                ON CONFLICT (config_hash, split) DO UPDATE SET
                    mode = excluded.mode, recipe = excluded.recipe, sensors = excluded.sensors,
                    mean_f1 = excluded.mean_f1, std_f1 = excluded.std_f1,
                    n_seeds = excluded.n_seeds, n_failed = excluded.n_failed,
                    record = excluded.record
            """, (config_hash, split, config.get("mode", ""), config.get("recipe", ""),
                  ",".join(config.get("sensors", [])), record.get("mean"), record.get("std"),
                  len(record.get("per_seed_f1", [])), len(record.get("failed_seeds", [])),
                  json.dumps(record)))
            cursor.execute("SELECT id FROM runs WHERE config_hash = ? AND split = ?",
                           (config_hash, split))
            run_id = cursor.fetchone()["id"]

            if suite:
                self._add_run_to_suite(run_id, suite)

            self.conn.commit()
            return run_id
        except (sqlite3.Error, TypeError, ValueError) as exc:
            logger.error("Cannot store run %s: %s", config_hash, exc)
            return None

    def run_exists(self, config_hash: str, split: str = "validation") -> bool:
        """Check if a run already exists by config hash"""
        try:
            cursor = self.conn.cursor()
            cursor.execute("SELECT 1 FROM runs WHERE config_hash = ? AND split = ?",
                           (config_hash, split))
            return cursor.fetchone() is not None
        except (sqlite3.Error, AttributeError):
            return False

    def _add_run_to_suite(self, run_id: int, suite: str) -> bool:
        """Add run to suite (creates suite if needed). Returns success."""
        try:
            cursor = self.conn.cursor()
            cursor.execute("INSERT OR IGNORE INTO suites (name) VALUES (?)", (suite,))
            cursor.execute("""
                INSERT OR IGNORE INTO suite_runs (suite_id, run_id)
                SELECT id, ? FROM suites WHERE name = ?
            """, (run_id, suite))
            return True
        except sqlite3.Error:
            return False

    def add_run_to_suite(self, config_hash: str, suite: str, split: str = "validation") -> bool:
        """Attach an already stored run to a suite. Returns success."""
        try:
            cursor = self.conn.cursor()
            cursor.execute("SELECT id FROM runs WHERE config_hash = ? AND split = ?",
                           (config_hash, split))
            row = cursor.fetchone()
            if not row:
                return False
            added = self._add_run_to_suite(row["id"], suite)
            self.conn.commit()
            return added
        except sqlite3.Error:
            return False

    def get_run(self, config_hash: str, split: str = "validation") -> Optional[Dict[str, Any]]:
        """Get the stored run record. Returns None if not found."""
        try:
            cursor = self.conn.cursor()
            cursor.execute("SELECT record FROM runs WHERE config_hash = ? AND split = ?",
                           (config_hash, split))
            row = cursor.fetchone()
            return json.loads(row["record"]) if row else None
        except (sqlite3.Error, ValueError):
            return None

    def delete_run(self, config_hash: str) -> bool:
        """Delete every split of a run by config hash. Returns success."""
        try:
            cursor = self.conn.cursor()
            cursor.execute("DELETE FROM runs WHERE config_hash = ?", (config_hash,))
            deleted = cursor.rowcount > 0
            self.conn.commit()
            return deleted
        except sqlite3.Error:
            return False

    # --- Queries ---
    def get_suite_runs(self, suite: str) -> List[Dict[str, Any]]:
        """Records of a suite in insertion order. Returns empty list on error."""
        try:
            cursor = self.conn.cursor()
            cursor.execute("""
                SELECT r.record FROM runs r
                JOIN suite_runs sr ON r.id = sr.run_id
                JOIN suites s ON s.id = sr.suite_id
                WHERE s.name = ?
                ORDER BY r.id
            """, (suite,))
            return [json.loads(row["record"]) for row in cursor.fetchall()]
        except (sqlite3.Error, ValueError):
            return []

    def get_all_runs(self, split: str = None) -> List[Dict[str, Any]]:
        """All run records, optionally for one split. Returns empty list on error."""
        try:
            cursor = self.conn.cursor()
            if split:
                cursor.execute("SELECT record FROM runs WHERE split = ? ORDER BY id", (split,))
            else:
                cursor.execute("SELECT record FROM runs ORDER BY id")
            return [json.loads(row["record"]) for row in cursor.fetchall()]
        except (sqlite3.Error, ValueError):
            return []

    def search_runs(self, mode: str = None, recipe: str = None,
                    sensor: str = None) -> List[Dict[str, Any]]:
        """Summary rows filtered by mode, recipe and/or sensor. Returns empty list on error."""
        try:
            clauses, params = [], []
            if mode:
                clauses.append("mode = ?")
                params.append(mode)
            if recipe:
                clauses.append("recipe = ?")
                params.append(recipe)
            if sensor:
                clauses.append("(',' || sensors || ',') LIKE ?")
                params.append(f"%,{sensor},%")
            where = f"WHERE {' AND '.join(clauses)}" if clauses else ""
            cursor = self.conn.cursor()
            cursor.execute(f"""
                SELECT config_hash, split, mode, recipe, sensors, mean_f1, std_f1, n_seeds, n_failed
                FROM runs {where} ORDER BY id
            """, params)
            return [dict(row) for row in cursor.fetchall()]
        except sqlite3.Error:
            return []

    def get_all_suites(self) -> List[str]:
        """Suite names. Returns empty list on error."""
        try:
            cursor = self.conn.cursor()
            cursor.execute("SELECT name FROM suites ORDER BY name")
            return [row["name"] for row in cursor.fetchall()]
        except sqlite3.Error:
            return []

    def close(self):
        """Close database connection"""
        try:
            if self.conn:
                self.conn.close()
        except sqlite3.Error:
            pass

    def __enter__(self):
        return self

    def __exit__(self, exc_type, exc_val, exc_tb):
        self.close()
