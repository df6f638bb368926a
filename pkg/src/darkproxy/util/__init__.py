import json
import json.decoder
import os
from typing import Any
from typing import Mapping

import numpy as np
import psutil

__all__ = [
    "cpu_count",
    "worker_count",
    "safe_loads",
    "ensure_dir",
    "loglog_interp",
    "table_interp",
]


def cpu_count() -> int:
    return psutil.cpu_count() or 1


def worker_count(threads: int | None) -> int:
    """Clamp a requested thread count to ``[1, cpu_count()]``"""
    if not threads or threads < 1:
        return 1
    return min(int(threads), cpu_count())


def safe_loads(arg):
    try:
        return json.loads(arg)
    except json.decoder.JSONDecodeError:
        return arg


def ensure_dir(path: str) -> str:
    os.makedirs(path, exist_ok=True)
    return path


def table_interp(table: Mapping[int, float], iso: float) -> float:
    """Piecewise-linear interpolation over an ISO-indexed table, clamped at the ends"""
    if not table:
        raise ValueError("cannot interpolate an empty ISO table")
    keys = sorted(table)
    if iso in table:
        return float(table[iso])  # type: ignore[index]
    xs = np.asarray(keys, dtype=float)
    ys = np.asarray([table[k] for k in keys], dtype=float)
    return float(np.interp(float(iso), xs, ys))


def loglog_interp(table: Mapping[int, float], iso: float) -> float:
    """Interpolate a positive ISO-indexed table linearly in log(iso)-log(value).

    Outside the tabulated range the end segment is extended; a single entry scales
    proportionally with ISO.

    """
    if not table:
        raise ValueError("cannot interpolate an empty ISO table")
    if iso in table:
        return float(table[iso])  # type: ignore[index]
    if iso <= 0:
        raise ValueError(f"ISO must be positive, got {iso}")
    keys = sorted(table)
    if len(keys) == 1:
        return float(table[keys[0]]) * float(iso) / float(keys[0])
    lx = np.log(np.asarray(keys, dtype=float))
    ly = np.log(np.asarray([table[k] for k in keys], dtype=float))
    x = np.log(float(iso))
    i = int(np.clip(np.searchsorted(lx, x) - 1, 0, len(keys) - 2))
    slope = (ly[i + 1] - ly[i]) / (lx[i + 1] - lx[i])
    return float(np.exp(ly[i] + slope * (x - lx[i])))
