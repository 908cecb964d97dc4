"""Evaluation metrics over the intensity-cell and station-cell populations.

MSE and Pearson r pool prediction/observation pairs across all events from
cells whose observed intensity is at least 0.5 (and which were actually
observed); the F-score is computed over cells where an observation station
exists, comparing predicted-felt (prediction >= threshold) against
observed-felt (observation >= 0.5).
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .catalog import INTENSITY_FLOOR, IntensityGrid
from .util import canonical_json


class MetricsError(ValueError):
    """Metric undefined for the supplied populations."""


class UndefinedCorrelationError(MetricsError):
    """Pearson r undefined: fewer than two pairs or zero variance."""


def _stacked(preds, obs_values, masks) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    p = np.asarray(preds, dtype=np.float64)
    o = np.asarray(obs_values, dtype=np.float64)
    m = np.asarray(masks)
    if p.shape != o.shape or p.shape != m.shape:
        raise ValueError(
            f"shape mismatch: preds {p.shape}, observations {o.shape}, masks {m.shape}"
        )
    return p, o, m.astype(bool)


def mse_and_r(preds, obs_values, observed_masks) -> tuple[float, float, int]:
    """Pooled MSE and Pearson r over observed cells with intensity >= 0.5.

    All arguments are stacks of aligned grids (lists of 2-D arrays or 3-D
    arrays). Raises :class:`UndefinedCorrelationError` when fewer than two
    pairs survive the mask or either pooled side has zero variance.
    """
    p, o, m = _stacked(preds, obs_values, observed_masks)
    select = m & (o >= INTENSITY_FLOOR)
    ps, os_ = p[select], o[select]
    n = ps.size
    if n < 2:
        raise UndefinedCorrelationError(f"need at least 2 pooled cells, got {n}")
    mse = float(np.mean((ps - os_) ** 2))
    dp = ps - ps.mean()
    do = os_ - os_.mean()
    sp = float(np.sum(dp * dp))
    so = float(np.sum(do * do))
    if sp == 0.0 or so == 0.0:
        raise UndefinedCorrelationError("zero variance in pooled predictions or observations")
    r = float(np.sum(dp * do) / np.sqrt(sp * so))
    return mse, r, int(n)


def f_score_felt(
    preds, obs_values, station_masks, felt_threshold: float = 0.5
) -> tuple[float, float, float, int]:
    """F-score of the felt class over station cells.

    Returns ``(f_score, precision, recall, n_station_cells)``; F is 0 when
    precision + recall is 0. Raises :class:`MetricsError` when no station
    cells exist at all.
    """
    p, o, m = _stacked(preds, obs_values, station_masks)
    n = int(np.count_nonzero(m))
    if n == 0:
        raise MetricsError("no station cells to score")
    predicted_felt = p[m] >= felt_threshold
    observed_felt = o[m] >= INTENSITY_FLOOR
    tp = int(np.count_nonzero(predicted_felt & observed_felt))
    fp = int(np.count_nonzero(predicted_felt & ~observed_felt))
    fn = int(np.count_nonzero(~predicted_felt & observed_felt))
    precision = tp / (tp + fp) if tp + fp > 0 else 0.0
    recall = tp / (tp + fn) if tp + fn > 0 else 0.0
    f = 2 * precision * recall / (precision + recall) if precision + recall > 0 else 0.0
    return float(f), float(precision), float(recall), n


@dataclass
class EvalReport:
    """The three headline metrics plus the sizes of their cell populations."""

    mse: float
    pearson_r: float
    f_score: float
    n_intensity_cells: int
    n_station_cells: int

    def to_dict(self) -> dict:
        return {
            "mse": self.mse,
            "pearson_r": self.pearson_r,
            "f_score": self.f_score,
            "n_intensity_cells": self.n_intensity_cells,
            "n_station_cells": self.n_station_cells,
        }

    def to_json(self) -> str:
        return canonical_json(self.to_dict())

    def summary(self) -> str:
        return (
            f"mse={self.mse:.4f} r={self.pearson_r:.4f} f={self.f_score:.4f} "
            f"(intensity_cells={self.n_intensity_cells}, station_cells={self.n_station_cells})"
        )


def evaluate(
    preds, grids: Sequence[IntensityGrid], felt_threshold: float = 0.5
) -> EvalReport:
    """Bundle :func:`mse_and_r` and :func:`f_score_felt` over a test set.

    ``preds`` are predicted grids aligned with ``grids``; the station mask of
    each event is its rasterized observation mask.
    """
    if len(grids) == 0:
        raise ValueError("test set is empty")
    obs = np.stack([g.values for g in grids])
    masks = np.stack([g.observed_mask for g in grids])
    mse, r, n_int = mse_and_r(preds, obs, masks)
    f, _, _, n_sta = f_score_felt(preds, obs, masks, felt_threshold=felt_threshold)
    return EvalReport(
        mse=mse, pearson_r=r, f_score=f, n_intensity_cells=n_int, n_station_cells=n_sta
    )
