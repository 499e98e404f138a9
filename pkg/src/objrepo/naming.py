"""The naming service: object URN -> ordered repository locations.

Containment is defined by resolution: an object lives in a repository
exactly when its name resolves there. Records are kept in memory behind a
lock and persisted to an append-only journal of update lines, compacted in
place when the dead-record ratio grows. Replaying the journal reproduces
the exact record state, including per-record update sequence numbers.
"""

from __future__ import annotations

import json
import logging
import os
import threading
from dataclasses import dataclass, field
from pathlib import Path

from .errors import AlreadyRegistered, BadArguments, NoSuchLocation, NotRegistered
from .validate import require_endpoint, require_urn

log = logging.getLogger(__name__)

_COMPACT_MIN_RECORDS = 1024
_COMPACT_DEAD_RATIO = 4


@dataclass
class NamingConfig:
    listen_endpoint: str
    journal_path: str | None = None
    worker_limit: int = 8


def load_naming_config(path: str | Path) -> NamingConfig:
    try:
        doc = json.loads(Path(path).read_text(encoding="utf-8"))
        config = NamingConfig(
            listen_endpoint=doc["listen_endpoint"],
            journal_path=doc.get("journal_path"),
            worker_limit=int(doc.get("worker_limit", 8)),
        )
    except (OSError, json.JSONDecodeError, KeyError, TypeError, ValueError) as exc:
        raise BadArguments(f"invalid naming config {path}: {exc}") from None
    require_endpoint(config.listen_endpoint, "listen_endpoint")
    return config


@dataclass
class NameRecord:
    name: str
    locations: list[str] = field(default_factory=list)
    updated_seq: int = 0


class NamingService:
    """In-memory map with journal persistence; linearizable per name (a
    single service lock serializes all updates)."""

    def __init__(self, journal_path: str | Path | None = None):
        self._lock = threading.RLock()
        self._records: dict[str, NameRecord] = {}
        self._journal_path = Path(journal_path) if journal_path else None
        self._journal = None
        self._appended = 0
        if self._journal_path is not None:
            self._journal_path.parent.mkdir(parents=True, exist_ok=True)
            self._replay()
            self._journal = open(self._journal_path, "a", encoding="utf-8")

    # -- operations ------------------------------------------------------

    def register(self, name: str, location: str) -> None:
        require_urn(name)
        require_endpoint(location)
        with self._lock:
            if name in self._records:
                raise AlreadyRegistered(f"{name} is already registered")
            record = NameRecord(name, [location], updated_seq=1)
            self._records[name] = record
            self._append("register", name, location, record.updated_seq)

    def resolve(self, name: str) -> list[str]:
        require_urn(name)
        with self._lock:
            record = self._records.get(name)
            if record is None:
                raise NotRegistered(f"{name} is not registered")
            return list(record.locations)

    def add_location(self, name: str, location: str) -> None:
        require_urn(name)
        require_endpoint(location)
        with self._lock:
            record = self._records.get(name)
            if record is None:
                raise NotRegistered(f"{name} is not registered")
            if location in record.locations:
                return  # idempotent, not an applied update
            record.locations.append(location)
            record.updated_seq += 1
            self._append("add", name, location, record.updated_seq)

    def remove_location(self, name: str, location: str) -> None:
        require_urn(name)
        require_endpoint(location)
        with self._lock:
            record = self._records.get(name)
            if record is None:
                raise NotRegistered(f"{name} is not registered")
            if location not in record.locations:
                raise NoSuchLocation(f"{name} does not resolve to {location}")
            record.locations.remove(location)
            record.updated_seq += 1
            seq = record.updated_seq
            if not record.locations:
                del self._records[name]  # empty location set deletes the record
            self._append("remove", name, location, seq)

    def record(self, name: str) -> NameRecord:
        with self._lock:
            record = self._records.get(name)
            if record is None:
                raise NotRegistered(f"{name} is not registered")
            return NameRecord(record.name, list(record.locations), record.updated_seq)

    def names(self) -> list[str]:
        with self._lock:
            return sorted(self._records)

    # -- persistence -----------------------------------------------------

    def _apply(self, op: str, name: str, location: str, seq: int) -> None:
        record = self._records.get(name)
        if op == "register":
            self._records[name] = NameRecord(name, [location], seq)
        elif op == "add" and record is not None:
            if location not in record.locations:
                record.locations.append(location)
            record.updated_seq = seq
        elif op == "remove" and record is not None:
            if location in record.locations:
                record.locations.remove(location)
            record.updated_seq = seq
            if not record.locations:
                del self._records[name]

    def _replay(self) -> None:
        if not self._journal_path.exists():
            return
        with open(self._journal_path, encoding="utf-8") as fh:
            lines = fh.read().split("\n")
        for n, line in enumerate(lines):
            if not line:
                continue
            try:
                rec = json.loads(line)
                op, name, location, seq = rec["op"], rec["name"], rec["location"], rec["seq"]
            except (json.JSONDecodeError, KeyError, TypeError):
                if n == len(lines) - 1 or (n == len(lines) - 2 and lines[-1] == ""):
                    log.warning("naming journal: ignoring truncated final record")
                    break
                raise
            self._apply(op, name, location, seq)

    def _append(self, op: str, name: str, location: str, seq: int) -> None:
        if self._journal is None:
            return
        line = json.dumps(
            {"op": op, "name": name, "location": location, "seq": seq}, sort_keys=True
        )
        self._journal.write(line + "\n")
        self._journal.flush()
        os.fsync(self._journal.fileno())
        self._appended += 1
        live = sum(len(r.locations) for r in self._records.values())
        if self._appended >= _COMPACT_MIN_RECORDS and self._appended > _COMPACT_DEAD_RATIO * live:
            self.compact()

    def compact(self) -> None:
        """Rewrite the journal as the minimal record sequence reproducing
        the current state, sequence numbers included."""
        if self._journal_path is None:
            return
        with self._lock:
            tmp = self._journal_path.with_suffix(".compacting")
            with open(tmp, "w", encoding="utf-8") as fh:
                for record in self._records.values():
                    k = len(record.locations)
                    base = record.updated_seq - k + 1
                    for i, location in enumerate(record.locations):
                        op = "register" if i == 0 else "add"
                        fh.write(
                            json.dumps(
                                {"op": op, "name": record.name, "location": location, "seq": base + i},
                                sort_keys=True,
                            )
                            + "\n"
                        )
                fh.flush()
                os.fsync(fh.fileno())
            if self._journal is not None:
                self._journal.close()
            os.replace(tmp, self._journal_path)
            self._journal = open(self._journal_path, "a", encoding="utf-8")
            self._appended = 0

    def close(self) -> None:
        with self._lock:
            if self._journal is not None:
                self._journal.close()
                self._journal = None
