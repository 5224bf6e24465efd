"""Small file helpers shared by the writers in this package."""

from __future__ import annotations

import os
from pathlib import Path


def f17(x: float) -> str:
    """Shortest decimal form that round-trips a float64 exactly."""
    return format(float(x), ".17g")


def atomic_write_text(path, text: str) -> None:
    """Write text to a temp file and rename it into place.

    Readers never observe a partially written file, and a crash leaves the
    previous version (or nothing) behind.
    """
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_text(text, encoding="utf-8")
    os.replace(tmp, path)
