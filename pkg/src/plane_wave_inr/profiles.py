from __future__ import annotations

import json
from pathlib import Path
from typing import Any

from .errors import SpecParseError

BUILTIN_PROFILES: dict[str, dict[str, Any]] = {
    "reference": {
        "layers": 8,
        "width": 256,
        "skip_layer": 5,
        "embedding_size": 10,
        "iterations": 10_000,
        "stripes": 10,
        "learning_rate": 5e-4,
        "final_learning_rate": 5e-5,
        "lam": 0.75,
    },
    "reference-resolution": {
        "layers": 8,
        "width": 256,
        "skip_layer": 5,
        "embedding_size": 10,
        "iterations": 30_000,
        "stripes": 10,
        "learning_rate": 5e-4,
        "final_learning_rate": 5e-5,
        "lam": 0.75,
    },
    "desk": {
        "layers": 4,
        "width": 64,
        "skip_layer": 3,
        "embedding_size": 10,
        "iterations": 2_000,
        "stripes": 4,
        "learning_rate": 2e-3,
        "final_learning_rate": 2e-4,
        "lam": 0.75,
    },
}


def list_profiles() -> list[str]:
    return sorted(BUILTIN_PROFILES.keys())


def load_profile(profile_name: str | None, config_file: str | None) -> dict[str, Any]:
    """Preset values, extended by a JSON config file whose keys use CLI dest names."""
    merged: dict[str, Any] = {}
    if profile_name:
        merged.update(BUILTIN_PROFILES.get(profile_name.strip().lower(), {}))
    if config_file:
        path = Path(config_file)
        text = path.read_text(encoding="utf-8")
        try:
            data = json.loads(text)
        except json.JSONDecodeError as exc:
            raise SpecParseError(exc.msg, line=exc.lineno, source=str(path)) from exc
        if not isinstance(data, dict):
            raise SpecParseError("config file must hold a JSON object", source=str(path))
        merged.update(data)
    return merged


def apply_profile_overrides(args: Any, profile: dict[str, Any], arg_to_flags: dict[str, list[str]], argv: list[str]) -> None:
    for field, value in profile.items():
        if not hasattr(args, field):
            continue
        flags = arg_to_flags.get(field, [])
        if any(flag in argv or any(a.startswith(flag + "=") for a in argv) for flag in flags):
            continue
        setattr(args, field, value)
