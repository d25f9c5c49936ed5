"""
Artifact persistence: deterministic writers, file hashing and the run manifest.
"""

import hashlib
import json
import time
from pathlib import Path
from typing import Any, Dict, Iterable, List, Optional, Union

import pandas as pd

from utils.logging import get_logger

logger = get_logger(__name__)

PathLike = Union[str, Path]

FLOAT_FORMAT = "%.12g"


def sha256_file(path: PathLike) -> str:
    """Return the hex SHA-256 of a file's bytes."""
    digest = hashlib.sha256()
    with open(path, "rb") as f:
        for block in iter(lambda: f.read(1 << 16), b""):
            digest.update(block)
    return digest.hexdigest()


def write_json(path: PathLike, payload: Any) -> Path:
    """Write JSON with sorted keys and a trailing newline."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(payload, indent=2, sort_keys=True, default=_json_default) + "\n")
    return path


def read_json(path: PathLike) -> Any:
    with open(path, "r") as f:
        return json.load(f)


def write_jsonl(path: PathLike, rows: Iterable[Dict[str, Any]]) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w") as f:
        for row in rows:
            f.write(json.dumps(row, sort_keys=True, default=_json_default) + "\n")
    return path


def read_jsonl(path: PathLike) -> List[Dict[str, Any]]:
    with open(path, "r") as f:
        return [json.loads(line) for line in f if line.strip()]


def write_csv(path: PathLike, frame: pd.DataFrame) -> Path:
    """Write a DataFrame with fixed float formatting and unix line endings."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    frame.to_csv(path, index=False, float_format=FLOAT_FORMAT, lineterminator="\n")
    return path


def _json_default(value: Any) -> Any:
    # numpy scalars and arrays
    if hasattr(value, "tolist"):
        return value.tolist()
    if isinstance(value, Path):
        return str(value)
    if isinstance(value, set):
        return sorted(value)
    raise TypeError(f"Object of type {type(value).__name__} is not JSON serializable")


class RunManifest:
    """
    Append-only record of stage executions.

    Each entry holds input hashes, output hashes, a config snapshot and the
    stage duration. A stage is current when its last entry has the same
    inputs and config and every listed output still hashes the same.
    """

    def __init__(self, path: PathLike):
        self.path = Path(path)
        self.entries: List[Dict[str, Any]] = []
        if self.path.exists():
            self.entries = read_json(self.path).get("entries", [])

    def last(self, stage: str) -> Optional[Dict[str, Any]]:
        for entry in reversed(self.entries):
            if entry["stage"] == stage:
                return entry
        return None

    def is_current(self, stage: str, inputs: Dict[str, str], config: Dict[str, Any]) -> bool:
        entry = self.last(stage)
        if entry is None:
            return False
        if entry["inputs"] != inputs or entry["config"] != config:
            return False
        base = self.path.parent
        for rel, digest in entry["outputs"].items():
            target = base / rel
            if not target.exists() or sha256_file(target) != digest:
                return False
        return True

    def record_stage(self, stage: str, inputs: Dict[str, str], outputs: List[Path],
                     config: Dict[str, Any], started: float) -> Dict[str, Any]:
        entry = {
            "stage": stage,
            "inputs": inputs,
            "outputs": {self._key(p): sha256_file(p) for p in sorted(map(Path, outputs))},
            "config": config,
            "duration_s": round(time.time() - started, 3),
        }
        self.entries.append(entry)
        write_json(self.path, {"entries": self.entries})
        logger.info(f"Manifest: {stage} recorded with {len(entry['outputs'])} outputs")
        return entry

    def _key(self, path: Path) -> str:
        # paths under the work dir are stored relative to it
        base = self.path.parent.resolve()
        path = Path(path).resolve()
        return str(path.relative_to(base)) if base in path.parents else str(path)

    def hash_inputs(self, paths: Iterable[Path]) -> Dict[str, str]:
        return {self._key(p): sha256_file(p) for p in sorted(map(Path, paths))}

    def outputs(self, stage: str) -> List[Path]:
        entry = self.last(stage)
        if entry is None:
            return []
        return [self.path.parent / rel for rel in entry["outputs"]]
