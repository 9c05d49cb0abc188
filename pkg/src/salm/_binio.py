"""Small helpers for deterministic file output."""

from __future__ import annotations

import json
import os
from pathlib import Path


def atomic_write_bytes(path, blob: bytes) -> None:
    """Write to a temp file in the target directory, then rename over the target."""
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    with open(tmp, "wb") as fh:
        fh.write(blob)
    os.replace(tmp, path)


def atomic_write_text(path, text: str) -> None:
    atomic_write_bytes(path, text.encode("utf-8"))


def canonical_json(obj) -> str:
    """Sorted keys, no whitespace: parse -> serialize is a fixed point."""
    return json.dumps(obj, sort_keys=True, separators=(",", ":"))
