"""Append-only JSONL rollout log."""

from __future__ import annotations

import json
import os
import threading
from dataclasses import dataclass
from datetime import datetime, timezone
from pathlib import Path

from . import __version__
from .errors import IoFailure
from .rollout import RolloutRecord

_locks: dict[str, threading.Lock] = {}
_locks_guard = threading.Lock()

META_KEYS = ("timestamp", "config_hash", "engine_version")


@dataclass(frozen=True)
class RolloutLogRecord:
    record: RolloutRecord
    timestamp: str
    config_hash: str
    engine_version: str

    def to_dict(self) -> dict:
        d = self.record.to_dict()
        d.update(timestamp=self.timestamp, config_hash=self.config_hash,
                 engine_version=self.engine_version)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> RolloutLogRecord:
        body = {k: v for k, v in d.items() if k not in META_KEYS}
        return cls(RolloutRecord.from_dict(body), d["timestamp"], d["config_hash"],
                   d["engine_version"])


def _lock_for(path: Path) -> threading.Lock:
    key = str(path.resolve())
    with _locks_guard:
        return _locks.setdefault(key, threading.Lock())


def append_rollout_log(record: RolloutRecord, path: str | Path,
                       config_hash: str = "") -> RolloutLogRecord:
    entry = RolloutLogRecord(
        record=record,
        timestamp=datetime.now(timezone.utc).isoformat(),
        config_hash=config_hash,
        engine_version=__version__,
    )
    line = (json.dumps(entry.to_dict(), ensure_ascii=False) + "\n").encode("utf-8")
    path = Path(path)
    with _lock_for(path):
        try:
            fd = os.open(path, os.O_WRONLY | os.O_APPEND | os.O_CREAT, 0o644)
            try:
                os.write(fd, line)
            finally:
                os.close(fd)
        except OSError as exc:
            raise IoFailure(f"cannot append to {path}: {exc.strerror}") from exc
    return entry


def read_rollout_log(path: str | Path) -> list[RolloutLogRecord]:
    try:
        lines = Path(path).read_text(encoding="utf-8").splitlines()
    except OSError as exc:
        raise IoFailure(f"cannot read {path}: {exc.strerror}") from exc
    return [RolloutLogRecord.from_dict(json.loads(line)) for line in lines if line.strip()]
