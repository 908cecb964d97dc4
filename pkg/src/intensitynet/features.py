"""Input feature tensors for the two predictors.

Hypocenter scalars become powered, normalized terms painted onto the map
grid: the classifier sees each term replicated over a k x k block centred
on the epicenter cell, while the regressor gets the terms in the epicenter
cell alone (its wide first conv layer supplies the spatial spread).
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .grid import CellIndex, GridSpec, cell_of

DEFAULT_MAGNITUDE_SCALE = 8.0
DEFAULT_DEPTH_SCALE = 700.0

DEFAULT_CLASSIFIER_ORDERS: tuple[tuple[str, int], ...] = (("magnitude", 9), ("depth", 1))
DEFAULT_REGRESSOR_ORDERS: tuple[tuple[str, int], ...] = tuple(
    ("magnitude", p) for p in range(1, 15)
) + tuple(("depth", p) for p in range(1, 15))

_SOURCES = ("magnitude", "depth")


def _normalized_orders(orders) -> tuple[tuple[str, int], ...]:
    out = []
    for item in orders:
        source, power = item
        if source not in _SOURCES:
            raise ValueError(f"unknown feature source {source!r} (expected one of {_SOURCES})")
        power = int(power)
        if power < 1:
            raise ValueError(f"feature power must be >= 1, got {power}")
        out.append((source, power))
    if not out:
        raise ValueError("orders must not be empty")
    return tuple(out)


@dataclass(frozen=True)
class FeatureConfig:
    """Channel layout and normalization of the input encodings."""

    k: int = 15
    classifier_orders: tuple[tuple[str, int], ...] = DEFAULT_CLASSIFIER_ORDERS
    regressor_orders: tuple[tuple[str, int], ...] = DEFAULT_REGRESSOR_ORDERS
    magnitude_scale: float = DEFAULT_MAGNITUDE_SCALE
    depth_scale: float = DEFAULT_DEPTH_SCALE

    def __post_init__(self) -> None:
        if self.k < 1 or self.k % 2 == 0:
            raise ValueError(f"k must be odd and >= 1, got {self.k}")
        object.__setattr__(self, "classifier_orders", _normalized_orders(self.classifier_orders))
        object.__setattr__(self, "regressor_orders", _normalized_orders(self.regressor_orders))
        if self.magnitude_scale <= 0 or self.depth_scale <= 0:
            raise ValueError("magnitude_scale and depth_scale must be positive")


def powered_term(value: float, power: int, scale: float) -> float:
    """(value/scale) ** power; the normalization keeps high orders O(1)."""
    if scale <= 0:
        raise ValueError(f"scale must be positive, got {scale}")
    if power < 1:
        raise ValueError(f"power must be >= 1, got {power}")
    return (value / scale) ** power


def term_vector(event, orders: Sequence[tuple[str, int]], cfg: FeatureConfig) -> np.ndarray:
    """Channel values for one event, in ``orders`` order."""
    scales = {"magnitude": cfg.magnitude_scale, "depth": cfg.depth_scale}
    values = {"magnitude": event.magnitude, "depth": event.depth_km}
    return np.array(
        [powered_term(values[src], power, scales[src]) for src, power in orders],
        dtype=np.float64,
    )


def epicenter_cell(event, spec: GridSpec) -> CellIndex:
    idx = cell_of(event.lat_deg, event.lon_deg, spec)
    if idx is None:
        raise ValueError(
            f"epicenter ({event.lat_deg}, {event.lon_deg}) outside the grid window"
        )
    return idx


def encode_classifier_input(event, cfg: FeatureConfig, spec: GridSpec) -> np.ndarray:
    """(C, n, n) tensor with each term constant over the k x k epicenter block.

    The block is clipped at the grid edges; all other cells are zero.
    """
    idx = epicenter_cell(event, spec)
    n = spec.n_cells
    terms = term_vector(event, cfg.classifier_orders, cfg)
    out = np.zeros((len(terms), n, n), dtype=np.float64)
    half = (cfg.k - 1) // 2
    r0, r1 = max(0, idx.row - half), min(n - 1, idx.row + half)
    c0, c1 = max(0, idx.col - half), min(n - 1, idx.col + half)
    out[:, r0 : r1 + 1, c0 : c1 + 1] = terms[:, None, None]
    return out


def encode_regressor_input(event, cfg: FeatureConfig, spec: GridSpec) -> np.ndarray:
    """(C, n, n) tensor holding each term in the epicenter cell only."""
    idx = epicenter_cell(event, spec)
    n = spec.n_cells
    terms = term_vector(event, cfg.regressor_orders, cfg)
    out = np.zeros((len(terms), n, n), dtype=np.float64)
    out[:, idx.row, idx.col] = terms
    return out
