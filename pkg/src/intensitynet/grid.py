"""Mercator cell grid over the forecast region.

The rectangular window is carved into ``n_cells x n_cells`` map cells,
uniform in longitude and in Mercator ordinate, so the cells are square on
the map rather than in latitude degrees. Row 0 is the northernmost band and
column 0 the westernmost, which keeps rasters oriented like a printed map.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import NamedTuple, Optional


class CellIndex(NamedTuple):
    row: int
    col: int


def mercator_y(lat_deg: float) -> float:
    """Unitless Mercator ordinate ln(tan(pi/4 + lat/2)), increasing in latitude.

    Evaluated as asinh(tan(lat)), the algebraically identical form that is
    exactly zero at the equator and exactly odd.
    """
    if math.isnan(lat_deg) or not -90.0 < lat_deg < 90.0:
        raise ValueError(f"latitude must lie strictly between -90 and 90, got {lat_deg}")
    return math.asinh(math.tan(math.radians(lat_deg)))


def inverse_mercator_y(y: float) -> float:
    """Latitude in degrees whose Mercator ordinate is ``y``."""
    return math.degrees(2.0 * math.atan(math.exp(y)) - math.pi / 2.0)


@dataclass(frozen=True)
class GridSpec:
    """Geographic window and per-axis cell count of the square forecast grid."""

    lat_min_deg: float = 30.0
    lat_max_deg: float = 46.0
    lon_min_deg: float = 128.0
    lon_max_deg: float = 146.0
    n_cells: int = 64

    def __post_init__(self) -> None:
        if not -90.0 < self.lat_min_deg < self.lat_max_deg < 90.0:
            raise ValueError("need -90 < lat_min_deg < lat_max_deg < 90")
        if not self.lon_min_deg < self.lon_max_deg:
            raise ValueError("need lon_min_deg < lon_max_deg")
        if self.n_cells < 1:
            raise ValueError("n_cells must be >= 1")

    @property
    def y_north(self) -> float:
        return mercator_y(self.lat_max_deg)

    @property
    def y_south(self) -> float:
        return mercator_y(self.lat_min_deg)

    def contains(self, lat_deg: float, lon_deg: float) -> bool:
        return (
            self.lat_min_deg <= lat_deg <= self.lat_max_deg
            and self.lon_min_deg <= lon_deg <= self.lon_max_deg
        )


def cell_of(lat_deg: float, lon_deg: float, spec: GridSpec) -> Optional[CellIndex]:
    """Cell containing a point, or None when the point is outside the window.

    Points exactly on the northern/eastern (max) edges clamp into the last
    valid band, so the window is closed on all four sides.
    """
    if not spec.contains(lat_deg, lon_deg):
        return None
    n = spec.n_cells
    col = math.floor(n * (lon_deg - spec.lon_min_deg) / (spec.lon_max_deg - spec.lon_min_deg))
    y_n, y_s = spec.y_north, spec.y_south
    row = math.floor(n * (y_n - mercator_y(lat_deg)) / (y_n - y_s))
    # floor can land on n for points on the max edge (and on -1 from rounding
    # fuzz right at the opposite edge); clamp back into range.
    return CellIndex(row=min(max(row, 0), n - 1), col=min(max(col, 0), n - 1))


def cell_center(idx: CellIndex, spec: GridSpec) -> tuple[float, float]:
    """(lat, lon) of the cell midpoint; the latitude midpoint is taken in Mercator y."""
    n = spec.n_cells
    if not (0 <= idx[0] < n and 0 <= idx[1] < n):
        raise ValueError(f"cell index {tuple(idx)} outside a {n}x{n} grid")
    lon = spec.lon_min_deg + (idx[1] + 0.5) * (spec.lon_max_deg - spec.lon_min_deg) / n
    y = spec.y_north - (idx[0] + 0.5) * (spec.y_north - spec.y_south) / n
    return inverse_mercator_y(y), lon
