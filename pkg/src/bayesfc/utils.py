"""Seed fan-out and deterministic JSON output."""

from __future__ import annotations

import hashlib
import json
from pathlib import Path

import numpy as np

SCHEMA_VERSION = 1


def derive_seed(master: int, stage: str, index: int = 0) -> int:
    """Stage seed from a master seed by hashing ``(master, stage, index)``."""
    digest = hashlib.sha256(f"{int(master)}:{stage}:{int(index)}".encode()).digest()
    return int.from_bytes(digest[:8], "little") & 0x7FFF_FFFF_FFFF_FFFF


def _plain(obj):
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if isinstance(obj, (np.floating,)):
        return float(obj)
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (np.bool_,)):
        return bool(obj)
    raise TypeError(f"not JSON serializable: {type(obj).__name__}")


def dumps(obj) -> str:
    # float repr is the shortest round-trip form, so values survive a reload bit-exactly
    return json.dumps(obj, default=_plain, sort_keys=True, indent=1, allow_nan=False) + "\n"


def write_json(path: str | Path, obj) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(dumps(obj))
    return path


def read_json(path: str | Path):
    with open(path) as fh:
        return json.load(fh)
