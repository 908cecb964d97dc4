"""Hybrid regression/classification neural prediction of seismic intensity maps.

The package ingests earthquake catalogs, encodes hypocenters onto a fixed
Mercator cell grid, trains a felt/not-felt classifier and an intensity
regressor, and combines them as ``y = y_reg - alpha * (1 - y_cls)``.
"""

from .catalog import (
    INTENSITY_FLOOR,
    CatalogError,
    DatasetSplit,
    HypocenterEvent,
    IntensityGrid,
    JmaClass,
    StationObservation,
    hypocenter_array,
    intensity_to_jma_class,
    parse_catalog,
    rasterize,
    rasterize_events,
    split_dataset,
    write_catalog,
)
from .checkpoint import (
    CheckpointError,
    CheckpointVersionError,
    load_checkpoint,
    save_checkpoint,
)
from .estimators import (
    FeltClassifier,
    HybridIntensityPredictor,
    IntensityRegressor,
    binarize_felt,
    hybrid_combine,
)
from .features import (
    FeatureConfig,
    encode_classifier_input,
    encode_regressor_input,
    powered_term,
)
from .grid import CellIndex, GridSpec, cell_center, cell_of, inverse_mercator_y, mercator_y
from .metrics import (
    EvalReport,
    MetricsError,
    UndefinedCorrelationError,
    evaluate,
    f_score_felt,
    mse_and_r,
)
from .synth import (
    AttenuationParams,
    generate_catalog,
    haversine_km,
    hypocentral_distance_km,
    synth_intensity,
)

__version__ = "0.1.0"

__all__ = [
    "AttenuationParams",
    "CatalogError",
    "CellIndex",
    "CheckpointError",
    "CheckpointVersionError",
    "DatasetSplit",
    "EvalReport",
    "FeatureConfig",
    "FeltClassifier",
    "GridSpec",
    "HybridIntensityPredictor",
    "HypocenterEvent",
    "INTENSITY_FLOOR",
    "IntensityGrid",
    "IntensityRegressor",
    "JmaClass",
    "MetricsError",
    "StationObservation",
    "UndefinedCorrelationError",
    "binarize_felt",
    "cell_center",
    "cell_of",
    "encode_classifier_input",
    "encode_regressor_input",
    "evaluate",
    "f_score_felt",
    "generate_catalog",
    "haversine_km",
    "hybrid_combine",
    "hypocenter_array",
    "hypocentral_distance_km",
    "intensity_to_jma_class",
    "inverse_mercator_y",
    "load_checkpoint",
    "mercator_y",
    "mse_and_r",
    "parse_catalog",
    "powered_term",
    "rasterize",
    "rasterize_events",
    "save_checkpoint",
    "split_dataset",
    "synth_intensity",
    "write_catalog",
    "__version__",
]
