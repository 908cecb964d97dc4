"""Scikit-learn style estimators for gridded seismic intensity prediction.

``FeltClassifier`` predicts the per-cell probability that shaking is felt,
``IntensityRegressor`` predicts the per-cell instrumental intensity, and
``HybridIntensityPredictor`` combines them as

    y = y_reg - alpha * (1 - y_cls)

with y_cls the binarized classifier output, which pulls not-felt regions
below the felt threshold while leaving felt cells exactly at the regression
value.

Everywhere below, X is ``(n_events, 4)`` with columns ``lat_deg, lon_deg,
depth_km, magnitude`` (or a sequence of objects exposing those attributes,
e.g. catalog events) and y is the stack of observed intensity grids
``(n_events, n, n)`` holding zeros at unobserved cells.
"""

from __future__ import annotations

from typing import NamedTuple, Optional, Sequence

import numpy as np
from sklearn.base import BaseEstimator, clone
from sklearn.utils.validation import check_is_fitted

from . import nn
from .catalog import INTENSITY_FLOOR
from .features import (
    DEFAULT_CLASSIFIER_ORDERS,
    DEFAULT_DEPTH_SCALE,
    DEFAULT_MAGNITUDE_SCALE,
    DEFAULT_REGRESSOR_ORDERS,
    FeatureConfig,
    encode_classifier_input,
    epicenter_cell,
    term_vector,
)
from .grid import GridSpec
from .validation import as_grid_stack, as_hypocenter_array, as_mask_stack

_PREDICT_CHUNK = 256


class _Hypocenter(NamedTuple):
    lat_deg: float
    lon_deg: float
    depth_km: float
    magnitude: float


def binarize_felt(prob_grid: np.ndarray, threshold: float) -> np.ndarray:
    """Binary felt grid: 1.0 where probability >= threshold, else 0.0."""
    if not 0.0 < threshold < 1.0:
        raise ValueError(f"threshold must be in (0, 1), got {threshold}")
    return (np.asarray(prob_grid) >= threshold).astype(np.float64)


def hybrid_combine(y_reg: np.ndarray, y_cls: np.ndarray, alpha: float) -> np.ndarray:
    """Hybrid intensity ``y_reg - alpha * (1 - y_cls)`` for binary ``y_cls``.

    Where the classifier says felt (y_cls == 1) the result equals the
    regression value exactly; elsewhere it is shifted down by alpha.
    """
    if alpha < 0:
        raise ValueError(f"alpha must be >= 0, got {alpha}")
    y_cls = np.asarray(y_cls, dtype=np.float64)
    if not np.isin(y_cls, (0.0, 1.0)).all():
        raise ValueError("y_cls must be binary (0/1)")
    return np.asarray(y_reg, dtype=np.float64) - alpha * (1.0 - y_cls)


def _classifier_features(X: np.ndarray, cfg: FeatureConfig, spec: GridSpec) -> np.ndarray:
    """(n_events, C * n * n) float32 stack of flattened classifier inputs."""
    n = spec.n_cells
    c = len(cfg.classifier_orders)
    out = np.empty((len(X), c * n * n), dtype=np.float32)
    for i, row in enumerate(X):
        tensor = encode_classifier_input(_Hypocenter(*row), cfg, spec)
        out[i] = tensor.reshape(-1)
    return out


def _epicenter_terms(
    X: np.ndarray, cfg: FeatureConfig, spec: GridSpec
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Sparse regressor encoding: per event the channel values and epicenter cell."""
    amps = np.empty((len(X), len(cfg.regressor_orders)), dtype=np.float32)
    rows = np.empty(len(X), dtype=np.intp)
    cols = np.empty(len(X), dtype=np.intp)
    for i, row in enumerate(X):
        ev = _Hypocenter(*row)
        idx = epicenter_cell(ev, spec)
        amps[i] = term_vector(ev, cfg.regressor_orders, cfg)
        rows[i], cols[i] = idx.row, idx.col
    return amps, rows, cols


def _spike_conv_forward(
    amp: np.ndarray, row: int, col: int, weights: np.ndarray, bias: np.ndarray, n: int, padding: int
) -> np.ndarray:
    """Conv output for an input that is nonzero only at one cell.

    Equivalent to ``conv2d_forward`` on the dense encoding: the output is a
    spatially flipped kernel window scaled by the channel amplitudes, placed
    around the spike, plus the bias everywhere.
    """
    filters, _, k, _ = weights.shape
    out = np.empty((filters, n, n), dtype=weights.dtype)
    out[:] = bias[:, None, None]
    i0, i1 = max(0, row - padding), min(n - 1, row + padding)
    j0, j1 = max(0, col - padding), min(n - 1, col + padding)
    if i0 > i1 or j0 > j1:
        return out
    # kernel index u = row + padding - i runs opposite to the output row i
    u0, u1 = row + padding - i1, row + padding - i0
    v0, v1 = col + padding - j1, col + padding - j0
    window = weights[:, :, u0 : u1 + 1, v0 : v1 + 1][:, :, ::-1, ::-1]
    out[:, i0 : i1 + 1, j0 : j1 + 1] += np.tensordot(amp, window, axes=(0, 1))
    return out


def _spike_conv_add_grads(
    d_out: np.ndarray,
    amp: np.ndarray,
    row: int,
    col: int,
    grad_weights: np.ndarray,
    grad_bias: np.ndarray,
    padding: int,
) -> None:
    """Accumulate conv parameter gradients for a single-spike input."""
    n = d_out.shape[-1]
    grad_bias += d_out.sum(axis=(1, 2))
    i0, i1 = max(0, row - padding), min(n - 1, row + padding)
    j0, j1 = max(0, col - padding), min(n - 1, col + padding)
    if i0 > i1 or j0 > j1:
        return
    u0, u1 = row + padding - i1, row + padding - i0
    v0, v1 = col + padding - j1, col + padding - j0
    contrib = np.einsum("c,fij->fcij", amp, d_out[:, i0 : i1 + 1, j0 : j1 + 1])
    grad_weights[:, :, u0 : u1 + 1, v0 : v1 + 1] += contrib[:, :, ::-1, ::-1]


def _classifier_loss_and_grads(
    feats: np.ndarray, targets: np.ndarray, weights: np.ndarray, bias: np.ndarray
) -> tuple[float, np.ndarray, np.ndarray]:
    """Mean BCE over a batch and its parameter gradients."""
    logits = nn.dense_forward(feats, weights, bias)
    probs = nn.sigmoid(logits.astype(np.float64))
    loss, d_prob = nn.bce_loss(probs, targets)
    d_logit = nn.sigmoid_backward(d_prob, probs).astype(weights.dtype)
    _, d_w, d_b = nn.dense_backward(d_logit, feats, weights, need_input_grad=False)
    return loss, d_w, d_b


def _regressor_loss_and_grads(
    amps: np.ndarray,
    rows: np.ndarray,
    cols: np.ndarray,
    values: np.ndarray,
    masks: np.ndarray,
    conv: nn.LayerParams,
    dense: nn.LayerParams,
    padding: int,
) -> tuple[float, np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
    """Mean masked MSE over a batch and all four parameter gradients."""
    batch = len(amps)
    filters = conv.weights.shape[0]
    n = values.shape[-1]
    pre = np.empty((batch, filters, n, n), dtype=conv.weights.dtype)
    for e in range(batch):
        pre[e] = _spike_conv_forward(
            amps[e], int(rows[e]), int(cols[e]), conv.weights, conv.bias, n, padding
        )
    hidden = nn.relu(pre)
    hidden_flat = hidden.reshape(batch, -1)
    pred = nn.dense_forward(hidden_flat, dense.weights, dense.bias)
    pred64 = pred.astype(np.float64).reshape(batch, n, n)

    loss = 0.0
    d_pred = np.empty((batch, n, n))
    for e in range(batch):
        loss_e, grad_e = nn.masked_mse_loss(pred64[e], values[e], masks[e])
        loss += loss_e
        d_pred[e] = grad_e
    loss /= batch
    d_pred /= batch

    d_flat = d_pred.reshape(batch, -1).astype(dense.weights.dtype)
    d_hidden, d_dw, d_db = nn.dense_backward(d_flat, hidden_flat, dense.weights)
    d_pre = nn.relu_backward(d_hidden.reshape(batch, filters, n, n), pre)
    d_cw = np.zeros_like(conv.weights)
    d_cb = np.zeros_like(conv.bias)
    for e in range(batch):
        _spike_conv_add_grads(d_pre[e], amps[e], int(rows[e]), int(cols[e]), d_cw, d_cb, padding)
    return loss, d_cw, d_cb, d_dw, d_db


class FeltClassifier(BaseEstimator):
    """Single dense layer predicting per-cell felt probabilities.

    Trains with binary cross entropy against targets that are 1 at cells
    observed at intensity >= 0.5 and 0 everywhere else, unobserved cells
    included.

    Parameters
    ----------
    k : odd int
        Width of the epicenter block over which input terms are replicated.
    orders : sequence of (source, power) pairs, or None for the defaults
        ``(("magnitude", 9), ("depth", 1))``; source is "magnitude" or "depth".
    magnitude_scale, depth_scale : float
        Normalizers applied before raising to the powers.
    epochs, batch_size, learning_rate, seed : training schedule (Adam).
    felt_threshold : float
        Probability cutoff used by :meth:`predict`.
    grid : GridSpec or None
        Forecast grid; None means the default 64x64 window.
    verbose : int
        1 prints one loss line per epoch.

    Attributes
    ----------
    dense_ : nn.LayerParams
        Fitted weights mapping the flattened input to one logit per cell.
    loss_history_ : list of float
        Mean training BCE per epoch.
    grid_ : GridSpec
    feature_config_ : FeatureConfig
    """

    def __init__(
        self,
        k: int = 15,
        orders=None,
        magnitude_scale: float = DEFAULT_MAGNITUDE_SCALE,
        depth_scale: float = DEFAULT_DEPTH_SCALE,
        epochs: int = 50,
        batch_size: int = 8,
        learning_rate: float = 1e-3,
        seed: int = 0,
        felt_threshold: float = 0.5,
        grid: Optional[GridSpec] = None,
        verbose: int = 0,
    ) -> None:
        self.k = k
        self.orders = orders
        self.magnitude_scale = magnitude_scale
        self.depth_scale = depth_scale
        self.epochs = epochs
        self.batch_size = batch_size
        self.learning_rate = learning_rate
        self.seed = seed
        self.felt_threshold = felt_threshold
        self.grid = grid
        self.verbose = verbose

    def _resolve(self) -> tuple[GridSpec, FeatureConfig]:
        grid = self.grid if self.grid is not None else GridSpec()
        orders = self.orders if self.orders is not None else DEFAULT_CLASSIFIER_ORDERS
        cfg = FeatureConfig(
            k=self.k,
            classifier_orders=tuple(tuple(o) for o in orders),
            magnitude_scale=self.magnitude_scale,
            depth_scale=self.depth_scale,
        )
        return grid, cfg

    def fit(self, X, y) -> "FeltClassifier":
        if self.epochs < 1 or self.batch_size < 1:
            raise ValueError("epochs and batch_size must both be >= 1")
        grid, cfg = self._resolve()
        X = as_hypocenter_array(X)
        if len(X) == 0:
            raise ValueError("training set is empty")
        n = grid.n_cells
        y = as_grid_stack(y, n)
        if len(y) != len(X):
            raise ValueError(f"X has {len(X)} events but y has {len(y)}")

        feats = _classifier_features(X, cfg, grid)
        targets = (y >= INTENSITY_FLOOR).astype(np.float64).reshape(len(X), n * n)

        rng = np.random.default_rng(self.seed)
        n_in = feats.shape[1]
        dense = nn.LayerParams(
            "classifier/dense",
            nn.glorot_uniform(rng, (n * n, n_in), fan_in=n_in, fan_out=n * n),
            np.zeros(n * n, dtype=np.float32),
        )
        optimizer = nn.Adam([dense], learning_rate=self.learning_rate)

        history = []
        for epoch in range(self.epochs):
            order = rng.permutation(len(X))
            total = 0.0
            for start in range(0, len(X), self.batch_size):
                idx = order[start : start + self.batch_size]
                loss, d_w, d_b = _classifier_loss_and_grads(
                    feats[idx], targets[idx], dense.weights, dense.bias
                )
                dense.grad_weights = d_w
                dense.grad_bias = d_b
                optimizer.step()
                total += loss * len(idx)
            history.append(total / len(X))
            if self.verbose:
                print(f"classifier epoch {epoch + 1}/{self.epochs} bce={history[-1]:.6f}")

        self.grid_ = grid
        self.feature_config_ = cfg
        self.dense_ = dense
        self.loss_history_ = history
        self.n_features_in_ = X.shape[1]
        return self

    def predict_proba(self, X) -> np.ndarray:
        """(n_events, n, n) felt probability grids."""
        check_is_fitted(self, "dense_")
        X = as_hypocenter_array(X)
        n = self.grid_.n_cells
        out = np.empty((len(X), n, n), dtype=np.float64)
        for start in range(0, len(X), _PREDICT_CHUNK):
            chunk = X[start : start + _PREDICT_CHUNK]
            feats = _classifier_features(chunk, self.feature_config_, self.grid_)
            logits = nn.dense_forward(feats, self.dense_.weights, self.dense_.bias)
            out[start : start + len(chunk)] = nn.sigmoid(logits.astype(np.float64)).reshape(
                len(chunk), n, n
            )
        return out

    def predict(self, X) -> np.ndarray:
        """Binary felt grids thresholded at ``felt_threshold``."""
        return binarize_felt(self.predict_proba(X), self.felt_threshold)


class IntensityRegressor(BaseEstimator):
    """One wide conv layer plus one dense layer predicting intensity grids.

    The conv kernel is deliberately large (default 125 on a 64-cell grid) so
    a single layer can spread the epicenter-cell features over the whole map;
    zero padding of (kernel - 1) / 2 keeps the output the size of the grid.
    Training minimizes MSE over observed cells only; unobserved cells carry
    no loss and no gradient.

    Parameters mirror :class:`FeltClassifier` where shared. ``orders``
    defaults to magnitude and depth powers 1..14 (28 channels).

    Attributes
    ----------
    conv_, dense_ : nn.LayerParams
    loss_history_ : list of float
    grid_ : GridSpec
    feature_config_ : FeatureConfig
    padding_ : int
    """

    def __init__(
        self,
        orders=None,
        magnitude_scale: float = DEFAULT_MAGNITUDE_SCALE,
        depth_scale: float = DEFAULT_DEPTH_SCALE,
        conv_filters: int = 4,
        conv_kernel: int = 125,
        epochs: int = 50,
        batch_size: int = 8,
        learning_rate: float = 1e-3,
        seed: int = 0,
        grid: Optional[GridSpec] = None,
        verbose: int = 0,
    ) -> None:
        self.orders = orders
        self.magnitude_scale = magnitude_scale
        self.depth_scale = depth_scale
        self.conv_filters = conv_filters
        self.conv_kernel = conv_kernel
        self.epochs = epochs
        self.batch_size = batch_size
        self.learning_rate = learning_rate
        self.seed = seed
        self.grid = grid
        self.verbose = verbose

    def _resolve(self) -> tuple[GridSpec, FeatureConfig]:
        grid = self.grid if self.grid is not None else GridSpec()
        orders = self.orders if self.orders is not None else DEFAULT_REGRESSOR_ORDERS
        cfg = FeatureConfig(
            regressor_orders=tuple(tuple(o) for o in orders),
            magnitude_scale=self.magnitude_scale,
            depth_scale=self.depth_scale,
        )
        if self.conv_kernel < 1 or self.conv_kernel % 2 == 0:
            raise ValueError(f"conv_kernel must be odd and >= 1, got {self.conv_kernel}")
        if self.conv_filters < 1:
            raise ValueError(f"conv_filters must be >= 1, got {self.conv_filters}")
        return grid, cfg

    def fit(self, X, y, observed_mask=None) -> "IntensityRegressor":
        if self.epochs < 1 or self.batch_size < 1:
            raise ValueError("epochs and batch_size must both be >= 1")
        grid, cfg = self._resolve()
        X = as_hypocenter_array(X)
        if len(X) == 0:
            raise ValueError("training set is empty")
        n = grid.n_cells
        y = as_grid_stack(y, n)
        if len(y) != len(X):
            raise ValueError(f"X has {len(X)} events but y has {len(y)}")
        if observed_mask is None:
            # catalog grids are 0 at unobserved cells and >= 0.5 elsewhere
            observed_mask = y >= INTENSITY_FLOOR
        masks = as_mask_stack(observed_mask, n)
        if len(masks) != len(X):
            raise ValueError(f"X has {len(X)} events but observed_mask has {len(masks)}")
        if not masks.any():
            raise ValueError("no event has any observed cell; nothing to regress on")

        amps, rows, cols = _epicenter_terms(X, cfg, grid)
        channels = amps.shape[1]
        k = self.conv_kernel
        filters = self.conv_filters
        padding = (k - 1) // 2

        rng = np.random.default_rng(self.seed)
        conv = nn.LayerParams(
            "regressor/conv",
            nn.glorot_uniform(rng, (filters, channels, k, k), fan_in=channels * k * k, fan_out=filters * k * k),
            np.zeros(filters, dtype=np.float32),
        )
        dense = nn.LayerParams(
            "regressor/dense",
            nn.glorot_uniform(rng, (n * n, filters * n * n), fan_in=filters * n * n, fan_out=n * n),
            np.zeros(n * n, dtype=np.float32),
        )
        optimizer = nn.Adam([conv, dense], learning_rate=self.learning_rate)

        history = []
        for epoch in range(self.epochs):
            order = rng.permutation(len(X))
            total = 0.0
            for start in range(0, len(X), self.batch_size):
                idx = order[start : start + self.batch_size]
                loss, d_cw, d_cb, d_dw, d_db = _regressor_loss_and_grads(
                    amps[idx], rows[idx], cols[idx], y[idx], masks[idx], conv, dense, padding
                )
                conv.grad_weights = d_cw
                conv.grad_bias = d_cb
                dense.grad_weights = d_dw
                dense.grad_bias = d_db
                optimizer.step()
                total += loss * len(idx)
            history.append(total / len(X))
            if self.verbose:
                print(f"regressor epoch {epoch + 1}/{self.epochs} masked_mse={history[-1]:.6f}")

        self.grid_ = grid
        self.feature_config_ = cfg
        self.padding_ = padding
        self.conv_ = conv
        self.dense_ = dense
        self.loss_history_ = history
        self.n_features_in_ = X.shape[1]
        return self

    def predict(self, X) -> np.ndarray:
        """(n_events, n, n) predicted intensity grids (unclamped)."""
        check_is_fitted(self, "conv_")
        X = as_hypocenter_array(X)
        n = self.grid_.n_cells
        filters = self.conv_.weights.shape[0]
        out = np.empty((len(X), n, n), dtype=np.float64)
        for start in range(0, len(X), _PREDICT_CHUNK):
            chunk = X[start : start + _PREDICT_CHUNK]
            amps, rows, cols = _epicenter_terms(chunk, self.feature_config_, self.grid_)
            pre = np.empty((len(chunk), filters, n, n), dtype=np.float32)
            for e in range(len(chunk)):
                pre[e] = _spike_conv_forward(
                    amps[e], int(rows[e]), int(cols[e]), self.conv_.weights, self.conv_.bias, n, self.padding_
                )
            hidden = nn.relu(pre).reshape(len(chunk), -1)
            pred = nn.dense_forward(hidden, self.dense_.weights, self.dense_.bias)
            out[start : start + len(chunk)] = pred.astype(np.float64).reshape(len(chunk), n, n)
        return out


class HybridIntensityPredictor(BaseEstimator):
    """Regression prediction with a classification penalty on not-felt cells.

    Fits the two sub-estimators on the same data and combines their
    predictions as ``y_reg - alpha * (1 - y_cls)``.

    Parameters
    ----------
    regressor : IntensityRegressor or None for a default instance.
    classifier : FeltClassifier or None for a default instance.
    alpha : float >= 0
        Intensity subtracted wherever the classifier predicts not-felt.

    Attributes
    ----------
    regressor_, classifier_ : fitted clones of the sub-estimators.
    """

    def __init__(self, regressor=None, classifier=None, alpha: float = 0.30) -> None:
        self.regressor = regressor
        self.classifier = classifier
        self.alpha = alpha

    def fit(self, X, y, observed_mask=None) -> "HybridIntensityPredictor":
        if self.alpha < 0:
            raise ValueError(f"alpha must be >= 0, got {self.alpha}")
        regressor = clone(self.regressor) if self.regressor is not None else IntensityRegressor()
        classifier = clone(self.classifier) if self.classifier is not None else FeltClassifier()
        reg_grid = regressor.grid if regressor.grid is not None else GridSpec()
        cls_grid = classifier.grid if classifier.grid is not None else GridSpec()
        if reg_grid != cls_grid:
            raise ValueError("regressor and classifier must share the same grid")
        self.classifier_ = classifier.fit(X, y)
        self.regressor_ = regressor.fit(X, y, observed_mask=observed_mask)
        return self

    def predict(self, X) -> np.ndarray:
        """(n_events, n, n) hybrid intensity grids."""
        check_is_fitted(self, "regressor_")
        y_reg = self.regressor_.predict(X)
        y_cls = self.classifier_.predict(X)
        return hybrid_combine(y_reg, y_cls, self.alpha)
