from __future__ import annotations

import json
import math
import uuid
from dataclasses import dataclass
from datetime import datetime, timezone
from pathlib import Path
from typing import Any

import numpy as np

SCHEMA_VERSION = "1.0"


def utc_now_iso() -> str:
    return datetime.now(timezone.utc).isoformat()


def new_run_id(prefix: str) -> str:
    """``<prefix>_<utc stamp>_<6 hex>``; sortable by start time."""
    stamp = datetime.now(timezone.utc).strftime("%Y%m%dT%H%M%S%fZ")
    return f"{prefix}_{stamp}_{uuid.uuid4().hex[:6]}"


def to_jsonable(value: Any) -> Any:
    """Plain JSON types for payloads holding numpy values, paths or tuples. Non-finite floats become null."""
    if isinstance(value, dict):
        return {str(k): to_jsonable(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [to_jsonable(v) for v in value]
    if isinstance(value, np.ndarray):
        return to_jsonable(value.tolist())
    if isinstance(value, np.generic):
        value = value.item()
    if isinstance(value, float) and not math.isfinite(value):
        return None
    if isinstance(value, Path):
        return str(value)
    return value


@dataclass(slots=True)
class EventLogger:
    run_id: str
    events_path: Path

    @classmethod
    def create(cls, log_dir: str | Path, run_id: str) -> "EventLogger":
        root = Path(log_dir)
        root.mkdir(parents=True, exist_ok=True)
        return cls(run_id=run_id, events_path=root / f"{run_id}.events.jsonl")

    def write(self, event_type: str, payload: dict[str, Any]) -> None:
        line = json.dumps(
            {
                "schema_version": SCHEMA_VERSION,
                "type": event_type,
                "run_id": self.run_id,
                "ts": utc_now_iso(),
                "payload": to_jsonable(payload),
            },
            ensure_ascii=True,
            allow_nan=False,
        )
        with self.events_path.open("a", encoding="utf-8") as f:
            f.write(line + "\n")
            f.flush()
