"""Run ledger: one row per pipeline run with its step status, SQLite backed."""

from __future__ import annotations

import abc
import json
import sqlite3
from dataclasses import dataclass, field
from datetime import datetime, timezone
from typing import Any, Optional

from .config import Settings, settings as default_settings
from .models import RunStatus


@dataclass
class Run:
    run_id: str
    status: RunStatus
    config: dict[str, Any]
    created_at: datetime
    updated_at: datetime
    result: dict[str, Any] = field(default_factory=dict)
    error: Optional[str] = None
    progress: Optional[str] = None
    steps_completed: int = 0


class RunLedger(abc.ABC):
    @abc.abstractmethod
    def start(self, run_id: str, config: dict[str, Any]) -> Run: ...
    @abc.abstractmethod
    def get_run(self, run_id: str) -> Optional[Run]: ...
    @abc.abstractmethod
    def update_status(self, run_id: str, status: RunStatus, **kwargs) -> None: ...
    @abc.abstractmethod
    def list_runs(self, status: Optional[RunStatus] = None) -> list[Run]: ...


class SQLiteLedger(RunLedger):
    def __init__(self, db_path: str):
        self.db_path = db_path
        self._init_db()

    def _conn(self) -> sqlite3.Connection:
        conn = sqlite3.connect(self.db_path)
        conn.row_factory = sqlite3.Row
        return conn

    def _init_db(self):
        with self._conn() as conn:
            conn.execute("""
                CREATE TABLE IF NOT EXISTS runs (
                    run_id TEXT PRIMARY KEY,
                    status TEXT NOT NULL DEFAULT 'pending',
                    config TEXT NOT NULL,
                    result TEXT DEFAULT '{}',
                    error TEXT,
                    progress TEXT,
                    steps_completed INTEGER DEFAULT 0,
                    created_at TEXT NOT NULL,
                    updated_at TEXT NOT NULL
                )
            """)
            conn.execute("CREATE INDEX IF NOT EXISTS idx_runs_status ON runs(status)")

    def _row_to_run(self, row) -> Run:
        return Run(
            run_id=row["run_id"], status=RunStatus(row["status"]), config=json.loads(row["config"]),
            created_at=datetime.fromisoformat(row["created_at"]),
            updated_at=datetime.fromisoformat(row["updated_at"]),
            result=json.loads(row["result"] or "{}"), error=row["error"],
            progress=row["progress"], steps_completed=row["steps_completed"],
        )

    def start(self, run_id: str, config: dict[str, Any]) -> Run:
        """Register a run; restarting an existing run id resets it to pending."""
        now = datetime.now(timezone.utc).isoformat()
        with self._conn() as conn:
            conn.execute(
                "INSERT INTO runs (run_id, status, config, created_at, updated_at) VALUES (?,?,?,?,?) "
                "ON CONFLICT(run_id) DO UPDATE SET status = excluded.status, config = excluded.config, "
                "result = '{}', error = NULL, progress = NULL, steps_completed = 0, updated_at = excluded.updated_at",
                (run_id, RunStatus.pending.value, json.dumps(config, default=str, sort_keys=True), now, now),
            )
        return self.get_run(run_id)

    def get_run(self, run_id: str) -> Optional[Run]:
        with self._conn() as conn:
            row = conn.execute("SELECT * FROM runs WHERE run_id = ?", (run_id,)).fetchone()
        return self._row_to_run(row) if row else None

    def update_status(self, run_id: str, status: RunStatus, **kwargs) -> None:
        now = datetime.now(timezone.utc).isoformat()
        sets = ["status = ?", "updated_at = ?"]
        vals: list = [status.value, now]
        for k in ("error", "progress", "steps_completed"):
            if k in kwargs:
                sets.append(f"{k} = ?")
                vals.append(kwargs[k])
        if "result" in kwargs:
            sets.append("result = ?")
            vals.append(json.dumps(kwargs["result"], default=str, sort_keys=True))
        vals.append(run_id)
        with self._conn() as conn:
            conn.execute(f"UPDATE runs SET {', '.join(sets)} WHERE run_id = ?", vals)

    def list_runs(self, status: Optional[RunStatus] = None) -> list[Run]:
        with self._conn() as conn:
            if status is None:
                rows = conn.execute("SELECT * FROM runs ORDER BY created_at").fetchall()
            else:
                rows = conn.execute("SELECT * FROM runs WHERE status = ? ORDER BY created_at",
                                    (status.value,)).fetchall()
        return [self._row_to_run(r) for r in rows]


def create_ledger(config: Optional[Settings] = None) -> RunLedger:
    config = config or default_settings
    if config.ledger_backend == "sqlite":
        config.resolved_ledger_path.parent.mkdir(parents=True, exist_ok=True)
        return SQLiteLedger(str(config.resolved_ledger_path))
    raise ValueError(f"Unknown ledger backend: {config.ledger_backend}")
