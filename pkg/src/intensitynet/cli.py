"""Command-line interface: synth, train, eval, predict, render.

Exit codes: 0 success, 1 usage error, 2 data/validation error, 3 internal
error. All outputs are written via a temp file and an atomic rename, so a
crash never leaves a partial artifact behind.

The run config is a canonical-JSON document with four sections (all keys
optional, defaults apply):

    {"grid": {...}, "features": {...}, "hybrid": {...}, "training": {...}}

Derived seeds: the training seed drives the train/test shuffle, seed + 1
initializes the classifier, seed + 2 the regressor.
"""

from __future__ import annotations

import argparse
import io
import json
import sys
from dataclasses import dataclass
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .catalog import (
    CatalogError,
    hypocenter_array,
    jma_class_indices,
    parse_catalog,
    rasterize_events,
    split_dataset,
    write_catalog,
)
from .checkpoint import CheckpointError, load_checkpoint, save_checkpoint
from .estimators import (
    FeltClassifier,
    HybridIntensityPredictor,
    IntensityRegressor,
    binarize_felt,
    hybrid_combine,
)
from .features import FeatureConfig
from .grid import GridSpec, cell_of
from .metrics import MetricsError, UndefinedCorrelationError, f_score_felt, mse_and_r
from .synth import AttenuationParams, generate_catalog
from .util import atomic_write_bytes, atomic_write_text, canonical_json, limit_threads

DEFAULT_TRAIN_FRACTION = 1461 / 1819


class UsageError(Exception):
    """Bad flag values or malformed invocation (exit code 1)."""


class ConfigError(ValueError):
    """Malformed run-config document (exit code 2)."""


@dataclass(frozen=True)
class RunConfig:
    grid: GridSpec
    features: FeatureConfig
    alpha: float
    felt_threshold: float
    epochs: int
    batch_size: int
    learning_rate: float
    seed: int
    train_fraction: float
    conv_filters: int
    conv_kernel: int
    magnitude_floor: float

    @classmethod
    def defaults(cls) -> "RunConfig":
        return cls(
            grid=GridSpec(),
            features=FeatureConfig(),
            alpha=0.30,
            felt_threshold=0.5,
            epochs=50,
            batch_size=8,
            learning_rate=1e-3,
            seed=0,
            train_fraction=DEFAULT_TRAIN_FRACTION,
            conv_filters=4,
            conv_kernel=125,
            magnitude_floor=5.0,
        )

    def to_dict(self) -> dict:
        f = self.features
        return {
            "grid": {
                "lat_min_deg": self.grid.lat_min_deg,
                "lat_max_deg": self.grid.lat_max_deg,
                "lon_min_deg": self.grid.lon_min_deg,
                "lon_max_deg": self.grid.lon_max_deg,
                "n_cells": self.grid.n_cells,
            },
            "features": {
                "k": f.k,
                "classifier_orders": [list(o) for o in f.classifier_orders],
                "regressor_orders": [list(o) for o in f.regressor_orders],
                "magnitude_scale": f.magnitude_scale,
                "depth_scale": f.depth_scale,
            },
            "hybrid": {"alpha": self.alpha, "felt_threshold": self.felt_threshold},
            "training": {
                "epochs": self.epochs,
                "batch_size": self.batch_size,
                "learning_rate": self.learning_rate,
                "seed": self.seed,
                "train_fraction": self.train_fraction,
                "conv_filters": self.conv_filters,
                "conv_kernel": self.conv_kernel,
                "magnitude_floor": self.magnitude_floor,
            },
        }

    @classmethod
    def from_dict(cls, data: dict) -> "RunConfig":
        base = cls.defaults().to_dict()
        if not isinstance(data, dict):
            raise ConfigError("config document must be a JSON object")
        unknown = set(data) - set(base)
        if unknown:
            raise ConfigError(f"unknown config sections: {sorted(unknown)}")
        merged = {}
        for section, defaults in base.items():
            supplied = data.get(section, {})
            if not isinstance(supplied, dict):
                raise ConfigError(f"config section {section!r} must be an object")
            bad = set(supplied) - set(defaults)
            if bad:
                raise ConfigError(f"unknown keys in config section {section!r}: {sorted(bad)}")
            merged[section] = {**defaults, **supplied}
        try:
            grid = GridSpec(**merged["grid"])
            feat = merged["features"]
            features = FeatureConfig(
                k=feat["k"],
                classifier_orders=tuple(tuple(o) for o in feat["classifier_orders"]),
                regressor_orders=tuple(tuple(o) for o in feat["regressor_orders"]),
                magnitude_scale=feat["magnitude_scale"],
                depth_scale=feat["depth_scale"],
            )
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"invalid config: {exc}") from None
        t, h = merged["training"], merged["hybrid"]
        return cls(
            grid=grid,
            features=features,
            alpha=float(h["alpha"]),
            felt_threshold=float(h["felt_threshold"]),
            epochs=int(t["epochs"]),
            batch_size=int(t["batch_size"]),
            learning_rate=float(t["learning_rate"]),
            seed=int(t["seed"]),
            train_fraction=float(t["train_fraction"]),
            conv_filters=int(t["conv_filters"]),
            conv_kernel=int(t["conv_kernel"]),
            magnitude_floor=float(t["magnitude_floor"]),
        )


def load_config(path: Optional[str]) -> RunConfig:
    if path is None:
        return RunConfig.defaults()
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from None
    try:
        data = json.loads(text)
    except ValueError as exc:
        raise ConfigError(f"config {path} is not valid JSON: {exc}") from None
    return RunConfig.from_dict(data)


def build_predictor(cfg: RunConfig, verbose: int = 0) -> HybridIntensityPredictor:
    """Estimator stack wired from a run config (seeds derived from training seed)."""
    classifier = FeltClassifier(
        k=cfg.features.k,
        orders=cfg.features.classifier_orders,
        magnitude_scale=cfg.features.magnitude_scale,
        depth_scale=cfg.features.depth_scale,
        epochs=cfg.epochs,
        batch_size=cfg.batch_size,
        learning_rate=cfg.learning_rate,
        seed=cfg.seed + 1,
        felt_threshold=cfg.felt_threshold,
        grid=cfg.grid,
        verbose=verbose,
    )
    regressor = IntensityRegressor(
        orders=cfg.features.regressor_orders,
        magnitude_scale=cfg.features.magnitude_scale,
        depth_scale=cfg.features.depth_scale,
        conv_filters=cfg.conv_filters,
        conv_kernel=cfg.conv_kernel,
        epochs=cfg.epochs,
        batch_size=cfg.batch_size,
        learning_rate=cfg.learning_rate,
        seed=cfg.seed + 2,
        grid=cfg.grid,
        verbose=verbose,
    )
    return HybridIntensityPredictor(regressor=regressor, classifier=classifier, alpha=cfg.alpha)


def _catalog_paths(data_dir: str) -> tuple[Path, Path]:
    events = Path(data_dir) / "events.csv"
    observations = Path(data_dir) / "observations.csv"
    for p in (events, observations):
        if not p.is_file():
            raise FileNotFoundError(f"missing catalog file: {p}")
    return events, observations


def _load_events(data_dir: str, magnitude_floor: float, grid: GridSpec):
    """Parse the catalog and drop events whose epicenter is outside the grid."""
    events_path, obs_path = _catalog_paths(data_dir)
    events = parse_catalog(events_path, obs_path, magnitude_floor=magnitude_floor)
    kept = [ev for ev in events if cell_of(ev.lat_deg, ev.lon_deg, grid) is not None]
    return kept, len(events) - len(kept)


# ---------------------------------------------------------------------------
# subcommand handlers


def _cmd_synth(args) -> int:
    if args.events < 1:
        raise UsageError(f"--events must be >= 1, got {args.events}")
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    events = generate_catalog(args.events, AttenuationParams(), seed=args.seed)
    ev_buf, ob_buf = io.StringIO(), io.StringIO()
    write_catalog(events, ev_buf, ob_buf)
    atomic_write_text(out / "events.csv", ev_buf.getvalue())
    atomic_write_text(out / "observations.csv", ob_buf.getvalue())
    n_obs = sum(len(ev.observations) for ev in events)
    print(f"wrote {len(events)} events / {n_obs} observations to {out}")
    return 0


def _cmd_train(args) -> int:
    cfg = load_config(args.config)
    if args.print_config:
        print(canonical_json(cfg.to_dict()))
        return 0
    if args.data is None or args.out is None:
        raise UsageError("train requires --data and --out")
    limiter = limit_threads(args.threads) if args.threads else None  # noqa: F841

    events, n_outside = _load_events(args.data, cfg.magnitude_floor, cfg.grid)
    if len(events) < 2:
        raise CatalogError(f"need at least 2 usable events, got {len(events)}")
    split = split_dataset(events, cfg.train_fraction, cfg.seed)
    n_obs = sum(len(ev.observations) for ev in events)
    print(
        f"catalog: {len(events)} events ({n_outside} outside grid dropped), "
        f"{n_obs} observations, split {len(split.train)}/{len(split.test)}"
    )
    if args.dry_run:
        print("dry run: config and data validated")
        return 0

    X = hypocenter_array(split.train)
    y, masks = rasterize_events(split.train, cfg.grid)
    predictor = build_predictor(cfg, verbose=1)
    predictor.fit(X, y, observed_mask=masks)

    metadata = {
        "seed": cfg.seed,
        "split_seed": cfg.seed,
        "train_fraction": cfg.train_fraction,
        "magnitude_floor": cfg.magnitude_floor,
        "epochs": cfg.epochs,
        "batch_size": cfg.batch_size,
        "learning_rate": cfg.learning_rate,
        "n_events": len(events),
        "n_train": len(split.train),
        "n_test": len(split.test),
        "classifier_final_loss": predictor.classifier_.loss_history_[-1],
        "regressor_final_loss": predictor.regressor_.loss_history_[-1],
    }
    save_checkpoint(args.out, predictor, metadata=metadata)
    print(f"wrote checkpoint {args.out}")
    return 0


def _row_metrics(preds, obs, masks, felt_threshold: float, caveat: Optional[str] = None) -> dict:
    row: dict = {}
    try:
        mse, r, n_int = mse_and_r(preds, obs, masks)
        row.update({"mse": mse, "pearson_r": r, "n_intensity_cells": n_int})
    except UndefinedCorrelationError as exc:
        row.update({"mse": None, "pearson_r": None, "n_intensity_cells": 0})
        caveat = f"{caveat + '; ' if caveat else ''}correlation undefined: {exc}"
    f, precision, recall, n_sta = f_score_felt(preds, obs, masks, felt_threshold=felt_threshold)
    row.update(
        {"f_score": f, "precision": precision, "recall": recall, "n_station_cells": n_sta}
    )
    if caveat:
        row["caveat"] = caveat
    return row


def _fmt_row(name: str, row: dict) -> str:
    def fmt(key):
        value = row.get(key)
        return "n/a" if value is None else f"{value:.4f}"

    line = f"{name:<14} mse={fmt('mse')} r={fmt('pearson_r')} f={fmt('f_score')}"
    if "caveat" in row:
        line += f"  [{row['caveat']}]"
    return line


def _cmd_eval(args) -> int:
    limiter = limit_threads(args.threads) if args.threads else None  # noqa: F841
    predictor = load_checkpoint(args.ckpt)
    md = getattr(predictor, "metadata_", {})
    grid = predictor.classifier_.grid_
    events, _ = _load_events(args.data, md.get("magnitude_floor", 5.0), grid)
    split = split_dataset(
        events, md.get("train_fraction", DEFAULT_TRAIN_FRACTION), md.get("split_seed", 0)
    )
    subset = {"train": split.train, "test": split.test, "all": list(events)}[args.split]
    if not subset:
        raise CatalogError(f"split {args.split!r} is empty")

    X = hypocenter_array(subset)
    obs, masks = rasterize_events(subset, grid)
    y_reg = predictor.regressor_.predict(X)
    probs = predictor.classifier_.predict_proba(X)
    y_cls = binarize_felt(probs, predictor.classifier_.felt_threshold)
    y_hyb = hybrid_combine(y_reg, y_cls, predictor.alpha)
    cls_intensity = predictor.classifier_.felt_threshold * y_cls

    rows = {
        "regression": _row_metrics(y_reg, obs, masks, 0.5),
        "classification": _row_metrics(
            cls_intensity, obs, masks, 0.5,
            caveat="intensity proxied by felt_threshold * binary felt decision",
        ),
        "hybrid": _row_metrics(y_hyb, obs, masks, 0.5),
    }
    for name in ("regression", "classification", "hybrid"):
        print(_fmt_row(name, rows[name]))
    document = {"split": args.split, "n_events": len(subset), "rows": rows}
    print(canonical_json(document))
    return 0


def _cmd_predict(args) -> int:
    limiter = limit_threads(args.threads) if args.threads else None  # noqa: F841
    predictor = load_checkpoint(args.ckpt)
    X = np.array([[args.lat, args.lon, args.depth, args.mag]], dtype=np.float64)
    grid_values = predictor.predict(X)[0]
    lines = [",".join(f"{v:.9g}" for v in row) for row in grid_values]
    atomic_write_text(args.out, "\n".join(lines) + "\n")
    print(f"wrote grid {args.out}")
    return 0


def _read_grid_csv(path: str) -> np.ndarray:
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise ValueError(f"cannot read grid {path}: {exc}") from None
    rows = []
    for lineno, line in enumerate(text.splitlines(), start=1):
        if not line.strip():
            continue
        try:
            rows.append([float(tok) for tok in line.split(",")])
        except ValueError:
            raise ValueError(f"{path}:{lineno}: malformed grid row") from None
    if not rows:
        raise ValueError(f"{path}: empty grid file")
    arr = np.asarray(rows, dtype=np.float64)
    if arr.ndim != 2 or arr.shape[0] != arr.shape[1]:
        raise ValueError(f"{path}: grid must be square, got {arr.shape}")
    if not np.isfinite(arr).all():
        raise ValueError(f"{path}: grid contains non-finite values")
    return arr


def render_pgm(values: np.ndarray, classes: bool = False) -> bytes:
    """Binary 8-bit PGM; intensity 0..7 maps to black..white.

    With ``classes`` each cell shows its JMA class as one of ten gray steps.
    """
    if classes:
        idx = jma_class_indices(values)
        pixels = np.rint(idx * (255.0 / 9.0)).astype(np.uint8)
    else:
        pixels = np.rint(np.clip(values, 0.0, 7.0) * (255.0 / 7.0)).astype(np.uint8)
    h, w = pixels.shape
    return f"P5\n{w} {h}\n255\n".encode("ascii") + pixels.tobytes()


def _cmd_render(args) -> int:
    values = _read_grid_csv(args.grid)
    atomic_write_bytes(args.out, render_pgm(values, classes=args.classes))
    print(f"wrote image {args.out}")
    return 0


# ---------------------------------------------------------------------------
# parser


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="intensitynet", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command")

    p = sub.add_parser("synth", parents=[], help="generate a synthetic catalog")
    p.add_argument("--events", type=int, required=True, help="number of events")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True, help="output directory")
    p.set_defaults(handler=_cmd_synth)

    p = sub.add_parser("train", help="train the hybrid predictor")
    p.add_argument("--config", help="run-config JSON (defaults apply when omitted)")
    p.add_argument("--data", help="directory holding events.csv + observations.csv")
    p.add_argument("--out", help="checkpoint output path")
    p.add_argument("--dry-run", action="store_true", help="validate config and data only")
    p.add_argument("--print-config", action="store_true", help="print the effective config")
    p.add_argument("--threads", type=int, help="cap math thread pools")
    p.set_defaults(handler=_cmd_train)

    p = sub.add_parser("eval", help="evaluate a checkpoint on a catalog split")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--split", choices=("test", "train", "all"), default="test")
    p.add_argument("--threads", type=int)
    p.set_defaults(handler=_cmd_eval)

    p = sub.add_parser("predict", help="predict one event's intensity grid")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--lat", type=float, required=True)
    p.add_argument("--lon", type=float, required=True)
    p.add_argument("--depth", type=float, required=True)
    p.add_argument("--mag", type=float, required=True)
    p.add_argument("--out", required=True, help="grid CSV output path")
    p.add_argument("--threads", type=int)
    p.set_defaults(handler=_cmd_predict)

    p = sub.add_parser("render", help="render a grid CSV as a PGM image")
    p.add_argument("--grid", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--classes", action="store_true", help="show JMA classes instead of intensity")
    p.set_defaults(handler=_cmd_render)
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return 1
    except SystemExit as exc:  # argparse --help
        return int(exc.code or 0)
    if getattr(args, "handler", None) is None:
        parser.print_usage(sys.stderr)
        return 1
    try:
        return args.handler(args)
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return 1
    except (CatalogError, CheckpointError, MetricsError, ConfigError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except (ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except Exception as exc:  # pragma: no cover - defensive
        print(f"internal error: {exc!r}", file=sys.stderr)
        return 3


def entrypoint() -> None:
    sys.exit(main())


if __name__ == "__main__":
    entrypoint()
