"""Earthquake catalog I/O, rasterization, and train/test splitting.

A catalog lives in two CSV files:

``events.csv``
    header ``event_id,origin_time,lat,lon,depth_km,magnitude``; one row per
    earthquake, ``origin_time`` ISO-8601, coordinates in decimal degrees.

``observations.csv``
    header ``event_id,station_lat,station_lon,instrumental_intensity,jma_class``;
    one row per station report, joined to events by ``event_id``. The class
    column spells the ten JMA classes ``0,1,2,3,4,5L,5U,6L,6U,7``.

Both files are UTF-8 with LF or CRLF line endings; lines whose first
character is ``#`` are skipped. Source catalogs never record instrumental
intensity below 0.5, and parsing rejects rows that violate that floor.
"""

from __future__ import annotations

import bisect
import csv
import enum
import io
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Iterator, Optional, Sequence

import numpy as np

from .grid import GridSpec, cell_of

#: Smallest instrumental intensity a catalog ever records.
INTENSITY_FLOOR = 0.5

EVENTS_HEADER = ("event_id", "origin_time", "lat", "lon", "depth_km", "magnitude")
OBSERVATIONS_HEADER = (
    "event_id",
    "station_lat",
    "station_lon",
    "instrumental_intensity",
    "jma_class",
)


class CatalogError(ValueError):
    """Malformed or inconsistent catalog data."""


_JMA_LABELS = ("0", "1", "2", "3", "4", "5L", "5U", "6L", "6U", "7")
# Upper bin edges of classes 0 .. 6U; every bin is half-open on the right.
_JMA_UPPER_BOUNDS = (0.5, 1.5, 2.5, 3.5, 4.5, 5.0, 5.5, 6.0, 6.5)


class JmaClass(enum.IntEnum):
    """Ten-step JMA seismic intensity class, ordered weakest to strongest."""

    ZERO = 0
    ONE = 1
    TWO = 2
    THREE = 3
    FOUR = 4
    FIVE_LOWER = 5
    FIVE_UPPER = 6
    SIX_LOWER = 7
    SIX_UPPER = 8
    SEVEN = 9

    @property
    def label(self) -> str:
        return _JMA_LABELS[self]

    @classmethod
    def from_label(cls, label: str) -> "JmaClass":
        try:
            return cls(_JMA_LABELS.index(label))
        except ValueError:
            raise ValueError(f"unknown JMA class label {label!r}") from None


def intensity_to_jma_class(instrumental_intensity: float) -> JmaClass:
    """Map instrumental intensity to its JMA class via half-open bins."""
    if not math.isfinite(instrumental_intensity):
        raise ValueError(f"intensity must be finite, got {instrumental_intensity}")
    return JmaClass(bisect.bisect_right(_JMA_UPPER_BOUNDS, instrumental_intensity))


def jma_class_indices(values: np.ndarray) -> np.ndarray:
    """Vectorized :func:`intensity_to_jma_class`, returning ordinal indices 0..9."""
    values = np.asarray(values)
    if not np.isfinite(values).all():
        raise ValueError("intensities must be finite")
    return np.searchsorted(_JMA_UPPER_BOUNDS, values, side="right")


@dataclass(frozen=True)
class StationObservation:
    lat_deg: float
    lon_deg: float
    instrumental_intensity: float
    jma_class: JmaClass


@dataclass(frozen=True)
class HypocenterEvent:
    event_id: str
    origin_time: str
    lat_deg: float
    lon_deg: float
    depth_km: float
    magnitude: float
    observations: tuple[StationObservation, ...] = ()


@dataclass
class IntensityGrid:
    """Per-cell instrumental intensity with its observation mask.

    ``values`` is 0 wherever ``observed_mask`` is False and holds the maximum
    intensity reported in the cell elsewhere.
    """

    values: np.ndarray
    observed_mask: np.ndarray


@dataclass
class DatasetSplit:
    train: list[HypocenterEvent]
    test: list[HypocenterEvent]


def _text_lines(source, fallback_name: str) -> tuple[str, list[str]]:
    """Read a path or (byte/text) stream into lines, returning a display name."""
    if isinstance(source, (str, Path)):
        data = Path(source).read_bytes()
        name = str(source)
    else:
        data = source.read()
        name = getattr(source, "name", fallback_name)
    if isinstance(data, bytes):
        try:
            data = data.decode("utf-8")
        except UnicodeDecodeError as exc:
            raise CatalogError(f"{name}: not valid UTF-8 ({exc})") from None
    return name, data.splitlines()


def _data_rows(name: str, lines: list[str], header: Sequence[str]) -> Iterator[tuple[int, list[str]]]:
    """Yield (1-based line number, fields) for data rows, checking the header."""
    header_seen = False
    for lineno, raw in enumerate(lines, start=1):
        if not raw.strip() or raw.lstrip().startswith("#"):
            continue
        fields = next(csv.reader([raw]))
        if not header_seen:
            got = [f.strip() for f in fields]
            if got != list(header):
                raise CatalogError(
                    f"{name}:{lineno}: expected header {','.join(header)!r}, got {raw.strip()!r}"
                )
            header_seen = True
            continue
        if len(fields) != len(header):
            raise CatalogError(
                f"{name}:{lineno}: expected {len(header)} fields, got {len(fields)}"
            )
        yield lineno, fields
    if not header_seen:
        raise CatalogError(f"{name}: missing header row")


def _parse_float(name: str, lineno: int, column: str, text: str) -> float:
    try:
        value = float(text)
    except ValueError:
        raise CatalogError(f"{name}:{lineno}: bad {column} value {text!r}") from None
    if not math.isfinite(value):
        raise CatalogError(f"{name}:{lineno}: non-finite {column} value {text!r}")
    return value


def _check_latitude(name: str, lineno: int, column: str, value: float) -> float:
    if not -90.0 <= value <= 90.0:
        raise CatalogError(f"{name}:{lineno}: {column} {value} outside [-90, 90]")
    return value


def parse_catalog(
    events_file,
    observations_file,
    magnitude_floor: Optional[float] = 5.0,
) -> list[HypocenterEvent]:
    """Parse ``events.csv`` + ``observations.csv`` into joined events.

    Parameters
    ----------
    events_file, observations_file : path or readable (byte or text) stream
        Sources in the module's CSV formats.
    magnitude_floor : float or None
        Events weaker than this are dropped after the join (the source
        bulletin collects magnitude 5.0 and stronger). None keeps everything.

    Returns
    -------
    list of HypocenterEvent in file order, each with its observations in
    file order. Observations outside any particular grid are kept here;
    :func:`rasterize` is where they get skipped.

    Raises
    ------
    CatalogError
        On malformed rows (with file and line number), duplicate event ids,
        observations referencing unknown events, intensities below the 0.5
        floor, or a JMA class label inconsistent with the intensity.
    """
    ev_name, ev_lines = _text_lines(events_file, "events.csv")
    events: dict[str, HypocenterEvent] = {}
    observations: dict[str, list[StationObservation]] = {}
    for lineno, fields in _data_rows(ev_name, ev_lines, EVENTS_HEADER):
        event_id = fields[0].strip()
        if not event_id:
            raise CatalogError(f"{ev_name}:{lineno}: empty event_id")
        if event_id in events:
            raise CatalogError(f"{ev_name}:{lineno}: duplicate event_id {event_id!r}")
        lat = _check_latitude(ev_name, lineno, "lat", _parse_float(ev_name, lineno, "lat", fields[2]))
        lon = _parse_float(ev_name, lineno, "lon", fields[3])
        depth = _parse_float(ev_name, lineno, "depth_km", fields[4])
        if depth < 0:
            raise CatalogError(f"{ev_name}:{lineno}: negative depth_km {depth}")
        magnitude = _parse_float(ev_name, lineno, "magnitude", fields[5])
        events[event_id] = HypocenterEvent(
            event_id=event_id,
            origin_time=fields[1].strip(),
            lat_deg=lat,
            lon_deg=lon,
            depth_km=depth,
            magnitude=magnitude,
        )
        observations[event_id] = []

    ob_name, ob_lines = _text_lines(observations_file, "observations.csv")
    for lineno, fields in _data_rows(ob_name, ob_lines, OBSERVATIONS_HEADER):
        event_id = fields[0].strip()
        if event_id not in events:
            raise CatalogError(f"{ob_name}:{lineno}: unknown event_id {event_id!r}")
        lat = _check_latitude(
            ob_name, lineno, "station_lat", _parse_float(ob_name, lineno, "station_lat", fields[1])
        )
        lon = _parse_float(ob_name, lineno, "station_lon", fields[2])
        intensity = _parse_float(ob_name, lineno, "instrumental_intensity", fields[3])
        if intensity < INTENSITY_FLOOR:
            raise CatalogError(
                f"{ob_name}:{lineno}: intensity {intensity} below the catalog floor {INTENSITY_FLOOR}"
            )
        label = fields[4].strip()
        try:
            jma = JmaClass.from_label(label)
        except ValueError as exc:
            raise CatalogError(f"{ob_name}:{lineno}: {exc}") from None
        expected = intensity_to_jma_class(intensity)
        if jma is not expected:
            raise CatalogError(
                f"{ob_name}:{lineno}: jma_class {label!r} inconsistent with intensity "
                f"{intensity} (expected {expected.label!r})"
            )
        observations[event_id].append(
            StationObservation(lat_deg=lat, lon_deg=lon, instrumental_intensity=intensity, jma_class=jma)
        )

    joined = [
        HypocenterEvent(
            event_id=ev.event_id,
            origin_time=ev.origin_time,
            lat_deg=ev.lat_deg,
            lon_deg=ev.lon_deg,
            depth_km=ev.depth_km,
            magnitude=ev.magnitude,
            observations=tuple(observations[ev.event_id]),
        )
        for ev in events.values()
    ]
    if magnitude_floor is not None:
        joined = [ev for ev in joined if ev.magnitude >= magnitude_floor]
    return joined


def _fmt(value: float) -> str:
    return f"{value:.9g}"


def write_catalog(events: Iterable[HypocenterEvent], events_file, observations_file) -> None:
    """Write events + observations in the module's CSV formats (9 significant digits)."""
    ev_rows = [",".join(EVENTS_HEADER)]
    ob_rows = [",".join(OBSERVATIONS_HEADER)]
    for ev in events:
        ev_rows.append(
            f"{ev.event_id},{ev.origin_time},{_fmt(ev.lat_deg)},{_fmt(ev.lon_deg)},"
            f"{_fmt(ev.depth_km)},{_fmt(ev.magnitude)}"
        )
        for obs in ev.observations:
            ob_rows.append(
                f"{ev.event_id},{_fmt(obs.lat_deg)},{_fmt(obs.lon_deg)},"
                f"{_fmt(obs.instrumental_intensity)},{obs.jma_class.label}"
            )
    for target, rows in ((events_file, ev_rows), (observations_file, ob_rows)):
        text = "\n".join(rows) + "\n"
        if isinstance(target, (str, Path)):
            Path(target).write_text(text, encoding="utf-8")
        elif isinstance(target, io.TextIOBase):
            target.write(text)
        else:
            target.write(text.encode("utf-8"))


def rasterize(event: HypocenterEvent, spec: GridSpec) -> IntensityGrid:
    """Paint an event's station reports onto the grid.

    Cells holding several stations keep the maximum intensity; stations
    outside the grid window are skipped silently.
    """
    n = spec.n_cells
    values = np.zeros((n, n), dtype=np.float64)
    mask = np.zeros((n, n), dtype=bool)
    for obs in event.observations:
        idx = cell_of(obs.lat_deg, obs.lon_deg, spec)
        if idx is None:
            continue
        if not mask[idx] or obs.instrumental_intensity > values[idx]:
            values[idx] = obs.instrumental_intensity
        mask[idx] = True
    return IntensityGrid(values=values, observed_mask=mask)


def rasterize_events(
    events: Sequence[HypocenterEvent], spec: GridSpec
) -> tuple[np.ndarray, np.ndarray]:
    """Stacked ``(values, masks)`` arrays of shape (n_events, n, n)."""
    n = spec.n_cells
    values = np.zeros((len(events), n, n), dtype=np.float64)
    masks = np.zeros((len(events), n, n), dtype=bool)
    for i, ev in enumerate(events):
        grid = rasterize(ev, spec)
        values[i] = grid.values
        masks[i] = grid.observed_mask
    return values, masks


def hypocenter_array(events: Sequence[HypocenterEvent]) -> np.ndarray:
    """(n_events, 4) array of ``lat_deg, lon_deg, depth_km, magnitude`` rows."""
    return np.array(
        [[ev.lat_deg, ev.lon_deg, ev.depth_km, ev.magnitude] for ev in events],
        dtype=np.float64,
    ).reshape(len(events), 4)


def split_dataset(
    events: Sequence[HypocenterEvent], train_fraction: float, seed: int
) -> DatasetSplit:
    """Deterministic random train/test split.

    Event indices are permuted by ``numpy.random.default_rng(seed).permutation``
    and the first ``round(train_fraction * n)`` permuted events become the
    training set; the rest are the test set.
    """
    if not 0.0 < train_fraction < 1.0:
        raise ValueError(f"train_fraction must be in (0, 1), got {train_fraction}")
    n = len(events)
    n_train = math.floor(train_fraction * n + 0.5)
    if n_train == 0 or n_train == n:
        raise ValueError(
            f"split of {n} events at fraction {train_fraction} leaves one side empty"
        )
    perm = np.random.default_rng(seed).permutation(n)
    return DatasetSplit(
        train=[events[i] for i in perm[:n_train]],
        test=[events[i] for i in perm[n_train:]],
    )
