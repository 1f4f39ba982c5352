from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

from . import __version__
from .errors import FormatError

MANIFEST_NAME = "manifest.json"
EVAL_MANIFEST_NAME = "eval_manifest.json"


def sha256_file(path: str | Path) -> str:
    digest = hashlib.sha256()
    with Path(path).open("rb") as f:
        for block in iter(lambda: f.read(1 << 20), b""):
            digest.update(block)
    return digest.hexdigest()


@dataclass(slots=True)
class RunManifest:
    command: str
    config: dict[str, Any]
    seed: int
    inputs: dict[str, str] = field(default_factory=dict)
    outputs: dict[str, str] = field(default_factory=dict)
    train_indices: list[int] = field(default_factory=list)
    holdout_index: int | None = None
    angle_span: tuple[float, float] | None = None
    timings: dict[str, float] = field(default_factory=dict)
    run_id: str = ""
    tool_version: str = __version__

    def add_input(self, label: str, path: str | Path) -> None:
        self.inputs[label] = sha256_file(path)

    def add_output(self, label: str, path: str | Path) -> None:
        self.outputs[label] = sha256_file(path)

    def to_dict(self) -> dict[str, Any]:
        return {
            "tool_version": self.tool_version,
            "command": self.command,
            "run_id": self.run_id,
            "seed": self.seed,
            "config": self.config,
            "inputs": self.inputs,
            "outputs": self.outputs,
            "train_indices": list(self.train_indices),
            "holdout_index": self.holdout_index,
            "angle_span": list(self.angle_span) if self.angle_span is not None else None,
            "timings": self.timings,
        }

    def write(self, out_dir: str | Path, name: str = MANIFEST_NAME) -> Path:
        target = Path(out_dir) / name
        target.parent.mkdir(parents=True, exist_ok=True)
        target.write_text(json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n", encoding="utf-8")
        return target

    @classmethod
    def read(cls, path: str | Path) -> "RunManifest":
        target = Path(path)
        if target.is_dir():
            target = target / MANIFEST_NAME
        try:
            data = json.loads(target.read_text(encoding="utf-8"))
            span = data.get("angle_span")
            return cls(
                command=str(data["command"]),
                config=dict(data.get("config", {})),
                seed=int(data.get("seed", 0)),
                inputs=dict(data.get("inputs", {})),
                outputs=dict(data.get("outputs", {})),
                train_indices=[int(i) for i in data.get("train_indices", [])],
                holdout_index=data.get("holdout_index"),
                angle_span=(float(span[0]), float(span[1])) if span else None,
                timings=dict(data.get("timings", {})),
                run_id=str(data.get("run_id", "")),
                tool_version=str(data.get("tool_version", "")),
            )
        except (json.JSONDecodeError, KeyError, TypeError, ValueError, IndexError) as exc:
            raise FormatError(f"invalid manifest {target}: {exc}") from exc

    def same_run(self, other: "RunManifest") -> bool:
        """Equal apart from timings and run id."""
        mine, theirs = self.to_dict(), other.to_dict()
        for key in ("timings", "run_id", "outputs"):
            mine.pop(key)
            theirs.pop(key)
        return mine == theirs


def manifest_beside(weights_path: str | Path) -> RunManifest | None:
    candidate = Path(weights_path).with_name(MANIFEST_NAME)
    return RunManifest.read(candidate) if candidate.exists() else None
