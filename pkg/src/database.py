"""
Run Registry Module

SQLite-backed registry of training runs executed by ablations and preset
comparisons.

Key Features:
- Run deduplication using an MD5 hash of the serialized config
- Status tracking for queued/background runs
- Summary scalars stored per run for aggregation without re-reading CSVs
- DataFrame export and statistics for monitoring

Database Schema:
- runs table: one row per distinct config (name, hash, seed, rollout length,
  output dir, status, timestamps, error message, summary columns)
- Index on status

Typical usage:
    db = RunDatabase("runs.db")
    run_id = db.add_run("N24_seed0", config)
    db.update_run_status(run_id, "running")
    db.complete_run(run_id, summarize_run(result.metrics, threshold))
    runs_df = db.get_runs_df()
"""

import sqlite3
from typing import Dict, List, Optional

import pandas as pd

from .experiment import TrainConfig
from .run_config import config_hash, serialize_config

RUN_STATUSES = ("pending", "running", "completed", "failed")
SUMMARY_COLUMNS = ("iterations", "sim_steps", "syn_steps", "max_return", "final_return",
                   "success", "steps_to_threshold", "steps_capped")


class RunDatabase:
    """
    Manages SQLite storage of run metadata and summaries.

    Every method opens its own connection, so one instance can be shared by
    worker threads.
    """
    def __init__(self, db_path: str = "runs.db"):
        """
        Initialize the run registry.

        Args:
            db_path: Path to SQLite database file (default: "runs.db")
        """
        self.db_path = db_path
        self.init_database()

    def init_database(self):
        """Create the runs table and its status index if they don't exist."""
        with sqlite3.connect(self.db_path) as conn:
            conn.execute("""
                CREATE TABLE IF NOT EXISTS runs (
                    id INTEGER PRIMARY KEY AUTOINCREMENT,
                    name TEXT NOT NULL,
                    config_hash TEXT UNIQUE NOT NULL,
                    config_text TEXT NOT NULL,
                    seed INTEGER,
                    rollout_length INTEGER,
                    output_dir TEXT,
                    status TEXT DEFAULT 'pending',
                    created_at TIMESTAMP DEFAULT CURRENT_TIMESTAMP,
                    finished_at TIMESTAMP,
                    error_message TEXT,
                    iterations INTEGER,
                    sim_steps INTEGER,
                    syn_steps INTEGER,
                    max_return REAL,
                    final_return REAL,
                    success INTEGER,
                    steps_to_threshold INTEGER,
                    steps_capped INTEGER
                )
            """)
            conn.execute("""
                CREATE INDEX IF NOT EXISTS idx_run_status ON runs(status);
            """)

    def add_run(self, name: str, config: TrainConfig) -> int:
        """
        Register a run or return the id of an identical one.

        Args:
            name: Human-readable label (e.g. "N24_seed0")
            config: Run configuration; output_dir is ignored for deduplication

        Returns:
            int: Run ID (either new or existing)
        """
        run_hash = config_hash(config)
        with sqlite3.connect(self.db_path) as conn:
            cursor = conn.execute("""
                INSERT OR IGNORE INTO runs
                (name, config_hash, config_text, seed, rollout_length, output_dir, status)
                VALUES (?, ?, ?, ?, ?, ?, 'pending')
            """, (name, run_hash, serialize_config(config), config.seed, config.rollout_length,
                  config.output_dir))

            if cursor.rowcount == 0:
                # Identical config already registered
                result = conn.execute(
                    "SELECT id FROM runs WHERE config_hash = ?", (run_hash,)
                ).fetchone()
                return result[0]

            return cursor.lastrowid

    def update_run_status(self, run_id: int, status: str, error_message: str = None):
        """
        Update the status of a run.

        Args:
            run_id: Run ID to update
            status: New status ('pending', 'running', 'completed', 'failed')
            error_message: Optional error message if status is 'failed'
        """
        if status not in RUN_STATUSES:
            raise ValueError(f"unknown run status '{status}'")
        with sqlite3.connect(self.db_path) as conn:
            if status in ("completed", "failed"):
                conn.execute("""
                    UPDATE runs
                    SET status = ?, finished_at = CURRENT_TIMESTAMP, error_message = ?
                    WHERE id = ?
                """, (status, error_message, run_id))
            else:
                conn.execute("""
                    UPDATE runs SET status = ?, error_message = ? WHERE id = ?
                """, (status, error_message, run_id))

    def complete_run(self, run_id: int, summary: Dict):
        """
        Store a run's summary scalars and mark it completed.

        Args:
            run_id: Run ID
            summary: Dict as returned by summarize_run
        """
        values = []
        for column in SUMMARY_COLUMNS:
            value = summary.get(column)
            values.append(int(value) if isinstance(value, bool) else value)
        assignments = ", ".join(f"{c} = ?" for c in SUMMARY_COLUMNS)
        with sqlite3.connect(self.db_path) as conn:
            conn.execute(f"UPDATE runs SET {assignments} WHERE id = ?", (*values, run_id))
        self.update_run_status(run_id, "completed")

    def get_run(self, run_id: int) -> Optional[Dict]:
        """
        Retrieve one run by ID.

        Returns:
            Dict with run metadata and summary ('success' as bool) or None if not found
        """
        with sqlite3.connect(self.db_path) as conn:
            conn.row_factory = sqlite3.Row
            result = conn.execute("SELECT * FROM runs WHERE id = ?", (run_id,)).fetchone()
            if not result:
                return None
            run = dict(result)
            run["success"] = bool(run["success"])
            if run["max_return"] is None:
                run["max_return"] = float("nan")
            return run

    def get_runs(self, status: str = None) -> List[Dict]:
        """Retrieve all runs, optionally filtered by status, oldest first."""
        with sqlite3.connect(self.db_path) as conn:
            conn.row_factory = sqlite3.Row
            if status:
                results = conn.execute(
                    "SELECT * FROM runs WHERE status = ? ORDER BY id", (status,)
                ).fetchall()
            else:
                results = conn.execute("SELECT * FROM runs ORDER BY id").fetchall()
            return [dict(row) for row in results]

    def get_runs_df(self, status: str = None) -> pd.DataFrame:
        """
        All runs (without config text) as a DataFrame.

        Returns:
            pd.DataFrame, empty if no runs are registered
        """
        runs = self.get_runs(status)
        if not runs:
            return pd.DataFrame()
        return pd.DataFrame(runs).drop(columns=["config_text"])

    def delete_run(self, run_id: int):
        with sqlite3.connect(self.db_path) as conn:
            conn.execute("DELETE FROM runs WHERE id = ?", (run_id,))

    def get_stats(self) -> Dict:
        """
        Get registry statistics for monitoring.

        Returns:
            Dict containing:
                - {status}_runs: Count of runs by status
                - total_sim_steps: Simulated steps across completed runs
                - avg_run_minutes: Average wall time of completed runs
        """
        with sqlite3.connect(self.db_path) as conn:
            stats = {}

            for status, count in conn.execute("SELECT status, COUNT(*) FROM runs GROUP BY status").fetchall():
                stats[f"{status}_runs"] = count

            result = conn.execute(
                "SELECT COALESCE(SUM(sim_steps), 0) FROM runs WHERE status = 'completed'"
            ).fetchone()
            stats["total_sim_steps"] = result[0]

            result = conn.execute("""
                SELECT AVG(julianday(finished_at) - julianday(created_at)) * 24 * 60
                FROM runs
                WHERE status = 'completed' AND finished_at IS NOT NULL
            """).fetchone()
            if result[0]:
                stats["avg_run_minutes"] = round(result[0], 2)

            return stats
