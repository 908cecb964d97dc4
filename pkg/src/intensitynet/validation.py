"""Input validation helpers shared by the estimators."""

from __future__ import annotations

import numpy as np

HYPOCENTER_COLUMNS = ("lat_deg", "lon_deg", "depth_km", "magnitude")


def as_hypocenter_array(X) -> np.ndarray:
    """Coerce X to a (n_events, 4) float array.

    Accepts an array-like of ``lat_deg, lon_deg, depth_km, magnitude`` rows
    or any sequence of objects exposing those attributes (catalog events).
    """
    if hasattr(X, "__len__") and len(X) > 0 and hasattr(X[0], "lat_deg"):
        X = [[ev.lat_deg, ev.lon_deg, ev.depth_km, ev.magnitude] for ev in X]
    arr = np.asarray(X, dtype=np.float64)
    if arr.ndim != 2 or arr.shape[1] != len(HYPOCENTER_COLUMNS):
        raise ValueError(
            f"X must be (n_events, {len(HYPOCENTER_COLUMNS)}) with columns "
            f"{HYPOCENTER_COLUMNS}, got shape {arr.shape}"
        )
    if not np.isfinite(arr).all():
        raise ValueError("X contains non-finite values")
    if (arr[:, 2] < 0).any():
        raise ValueError("depth_km column contains negative values")
    return arr


def as_grid_stack(y, n_cells: int, name: str = "y") -> np.ndarray:
    """Coerce y to a finite (n_events, n_cells, n_cells) float array."""
    arr = np.asarray(y, dtype=np.float64)
    if arr.ndim != 3 or arr.shape[1] != n_cells or arr.shape[2] != n_cells:
        raise ValueError(
            f"{name} must be (n_events, {n_cells}, {n_cells}), got shape {arr.shape}"
        )
    if not np.isfinite(arr).all():
        raise ValueError(f"{name} contains non-finite values")
    return arr


def as_mask_stack(mask, n_cells: int, name: str = "observed_mask") -> np.ndarray:
    """Coerce a mask to boolean (n_events, n_cells, n_cells)."""
    arr = np.asarray(mask)
    if arr.dtype != bool:
        arr = arr.astype(bool)
    if arr.ndim != 3 or arr.shape[1] != n_cells or arr.shape[2] != n_cells:
        raise ValueError(
            f"{name} must be (n_events, {n_cells}, {n_cells}), got shape {arr.shape}"
        )
    return arr
