"""Persistence: JSON-lines result records, binary field snapshots and two-column data files."""

from __future__ import annotations

import hashlib
import json
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Any, Iterable

import numpy as np

SNAPSHOT_MAGIC = "SHELAB-SNAPSHOT 1"


def _jsonable(obj: Any) -> Any:
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _jsonable(obj.tolist())
    if isinstance(obj, (np.bool_, bool)):
        return bool(obj)
    if isinstance(obj, np.integer):
        return int(obj)
    if isinstance(obj, (np.floating, float)):
        x = float(obj)
        return x if math.isfinite(x) else repr(x)
    if hasattr(obj, "to_dict"):
        return _jsonable(obj.to_dict())
    return obj


def canonical_json(obj: Any) -> str:
    """Compact JSON with sorted keys; equal objects give equal strings."""
    return json.dumps(_jsonable(obj), sort_keys=True, separators=(",", ":"))


def config_hash(config: dict) -> str:
    """First 16 hex digits of the SHA-256 of the canonical JSON of ``config``."""
    return hashlib.sha256(canonical_json(config).encode()).hexdigest()[:16]


@dataclass
class ResultRecord:
    """One emitted number or verdict together with everything needed to reproduce it."""

    config_hash: str
    operation: str
    parameters: dict
    payload: dict
    stderr: float | None = None
    replicas: int | None = None
    seed: int | None = None
    wall_time: float = 0.0
    extra: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return _jsonable(asdict(self))

    def to_json(self) -> str:
        return canonical_json(self.to_dict())

    def payload_json(self) -> str:
        """Canonical JSON without the wall-time field, for reproducibility checks."""
        d = self.to_dict()
        d.pop("wall_time")
        return canonical_json(d)

    @classmethod
    def from_dict(cls, d: dict) -> "ResultRecord":
        return cls(**d)


def append_records(path: str | Path, records: Iterable[ResultRecord]) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("a") as fh:
        for rec in records:
            fh.write(rec.to_json() + "\n")


def read_records(path: str | Path) -> list[ResultRecord]:
    with Path(path).open() as fh:
        return [ResultRecord.from_dict(json.loads(line)) for line in fh if line.strip()]


def write_snapshot(path: str | Path, array: np.ndarray, header: dict) -> None:
    """Write ``array`` as little-endian float64 after a two-line text header.

    The first line is a magic string, the second a JSON object holding
    ``header`` plus the array shape.
    """
    arr = np.ascontiguousarray(array, dtype="<f8")
    meta = dict(_jsonable(header))
    meta["shape"] = list(arr.shape)
    meta["dtype"] = "<f8"
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("wb") as fh:
        fh.write((SNAPSHOT_MAGIC + "\n").encode())
        fh.write((canonical_json(meta) + "\n").encode())
        fh.write(arr.tobytes())


def read_snapshot(path: str | Path) -> tuple[np.ndarray, dict]:
    with Path(path).open("rb") as fh:
        magic = fh.readline().decode().strip()
        if magic != SNAPSHOT_MAGIC:
            raise ValueError(f"{path} is not a field snapshot")
        meta = json.loads(fh.readline().decode())
        data = np.frombuffer(fh.read(), dtype=meta["dtype"]).reshape(meta["shape"])
    return data.copy(), meta


def write_columns(path: str | Path, x, y, names: tuple[str, str] = ("x", "y")) -> None:
    """Two whitespace-separated columns with a commented header line."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    data = np.column_stack([np.asarray(x, float), np.asarray(y, float)])
    np.savetxt(path, data, header=f"{names[0]} {names[1]}", fmt="%.17g")


def write_manifest(directory: str | Path, files: dict[str, str]) -> Path:
    """Record the data files of a run and what each contains."""
    path = Path(directory) / "manifest.json"
    path.write_text(json.dumps(files, indent=2, sort_keys=True) + "\n")
    return path
