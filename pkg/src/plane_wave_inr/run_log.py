from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

from .errors import FormatError

RUN_PREFIXES = ("train_", "eval_", "sweep_")


@dataclass(slots=True)
class RunLogInfo:
    run_id: str
    path: Path
    event_count: int
    modified_ts: float


def log_path(log_dir: str | Path, run_id: str) -> Path:
    return Path(log_dir) / f"{run_id}.events.jsonl"


def list_run_logs(log_dir: str | Path, prefixes: tuple[str, ...] = RUN_PREFIXES) -> list[RunLogInfo]:
    root = Path(log_dir)
    if not root.exists():
        return []
    out: list[RunLogInfo] = []
    for path in root.glob("*.events.jsonl"):
        run_id = path.name.replace(".events.jsonl", "")
        if not run_id.startswith(prefixes):
            continue
        with path.open("r", encoding="utf-8") as f:
            event_count = sum(1 for line in f if line.strip())
        out.append(RunLogInfo(run_id=run_id, path=path, event_count=event_count, modified_ts=path.stat().st_mtime))
    out.sort(key=lambda x: (x.modified_ts, x.run_id), reverse=True)
    return out


def load_events(log_dir: str | Path, run_id: str) -> list[dict]:
    path = log_path(log_dir, run_id)
    if not path.exists():
        raise FileNotFoundError(f"log not found: {path}")
    lines = [line for line in path.read_text(encoding="utf-8").splitlines() if line.strip()]
    events: list[dict] = []
    for number, line in enumerate(lines, start=1):
        try:
            events.append(json.loads(line))
        except json.JSONDecodeError as exc:
            # a killed run can leave a torn final line
            if number == len(lines):
                break
            raise FormatError(f"{path}: line {number} is not valid JSON: {exc.msg}") from exc
    return events


def loss_curve(events: list[dict]) -> list[tuple[int, float]]:
    return [
        (int(e["payload"]["iteration"]), float(e["payload"]["loss"]))
        for e in events
        if e.get("type") == "train_progress" and e["payload"].get("loss") is not None
    ]


def _last_payload(events: list[dict], event_type: str) -> dict | None:
    return next((e["payload"] for e in reversed(events) if e.get("type") == event_type), None)


def summarize(events: list[dict]) -> dict:
    counts: dict[str, int] = {}
    for event in events:
        kind = event.get("type", "?")
        counts[kind] = counts.get(kind, 0) + 1
    curve = loss_curve(events)
    return {
        "event_counts": counts,
        "last_loss": curve[-1][1] if curve else None,
        "warnings": [e["payload"].get("message", "") for e in events if e.get("type") == "train_warning"],
        "train_ended": _last_payload(events, "train_ended"),
        "train_aborted": _last_payload(events, "train_aborted"),
        "eval_ended": _last_payload(events, "eval_ended"),
        "sweep_ended": _last_payload(events, "sweep_ended"),
    }
