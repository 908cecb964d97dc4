"""Small shared helpers: canonical JSON, atomic writes, thread limiting."""

from __future__ import annotations

import json
import os
import tempfile
from pathlib import Path
from typing import Union


def canonical_json(obj) -> str:
    """Deterministic JSON: sorted keys, no whitespace, no NaN/Infinity."""
    return json.dumps(obj, sort_keys=True, separators=(",", ":"), allow_nan=False)


def atomic_write_bytes(path: Union[str, Path], data: bytes) -> None:
    """Write via a temp file in the same directory, then rename into place."""
    path = Path(path)
    fd, tmp = tempfile.mkstemp(dir=path.parent or Path("."), prefix=path.name + ".", suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def atomic_write_text(path: Union[str, Path], text: str) -> None:
    atomic_write_bytes(path, text.encode("utf-8"))


def limit_threads(n_threads: int):
    """Cap the BLAS/FFT thread pools; returns the controller keeping the cap alive."""
    from threadpoolctl import threadpool_limits

    if n_threads < 1:
        raise ValueError(f"thread count must be >= 1, got {n_threads}")
    return threadpool_limits(limits=n_threads)
