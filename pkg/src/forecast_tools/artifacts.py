from __future__ import annotations

import json
import logging
import os
import tempfile
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Mapping, Optional

import pandas as pd

from . import __version__

logger = logging.getLogger(__name__)


def atomic_write_text(path: Path, content: str) -> Path:
    """Write through a temp file in the target directory, then rename over ``path``."""
    path = path.resolve()
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp_name = tempfile.mkstemp(prefix=f".{path.name}.", suffix=".tmp", dir=path.parent)
    tmp_path = Path(tmp_name)
    try:
        with os.fdopen(fd, "w", encoding="utf-8", newline="\n") as handle:
            handle.write(content)
        os.replace(tmp_path, path)
    except BaseException:
        if tmp_path.exists():
            tmp_path.unlink()
        raise
    logger.debug("已写入 %s", path)
    return path


def write_csv_atomic(frame: pd.DataFrame, path: Path, float_format: str = "%.6f") -> Path:
    text = frame.to_csv(index=False, float_format=float_format, lineterminator="\n")
    return atomic_write_text(path, text)


@dataclass(slots=True)
class RunManifest:
    """Replay record written next to every command's outputs."""

    command: str
    seed: Optional[int] = None
    flags: Mapping[str, Any] = field(default_factory=dict)
    version: str = __version__

    def to_json(self) -> str:
        payload = {
            "command": self.command,
            "flags": {key: _jsonable(value) for key, value in self.flags.items()},
            "seed": self.seed,
            "version": self.version,
        }
        return json.dumps(payload, indent=2, sort_keys=True, ensure_ascii=False) + "\n"

    def write(self, directory: Path) -> Path:
        return atomic_write_text(directory / f"{self.command}.json", self.to_json())


def _jsonable(value: Any) -> Any:
    if isinstance(value, Path):
        return str(value)
    if isinstance(value, (list, tuple)):
        return [_jsonable(item) for item in value]
    if isinstance(value, (str, int, float, bool)) or value is None:
        return value
    return str(value)


__all__ = ["RunManifest", "atomic_write_text", "write_csv_atomic"]
