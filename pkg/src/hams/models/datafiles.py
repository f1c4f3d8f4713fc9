"""Replayable data files: a two-line header (dimension, seed) then one value per line."""

from __future__ import annotations

from pathlib import Path
from typing import Tuple

import numpy as np

__all__ = ["write_series", "read_series"]


def write_series(path, values, seed: int) -> Path:
    v = np.asarray(values, dtype=np.float64).ravel()
    path = Path(path)
    lines = [str(v.size), str(int(seed))] + [repr(float(t)) for t in v]
    path.write_text("\n".join(lines) + "\n")
    return path


def read_series(path) -> Tuple[np.ndarray, int]:
    """Return ``(values, seed)``; raises ``ValueError`` on a length mismatch."""
    lines = Path(path).read_text().split()
    if len(lines) < 2:
        raise ValueError(f"{path}: missing header")
    dim, seed = int(lines[0]), int(lines[1])
    values = np.array([float(t) for t in lines[2:]])
    if values.size != dim:
        raise ValueError(f"{path}: header says {dim} values, found {values.size}")
    return values, seed
