import numpy as np
import pytest
from sklearn.base import clone

from intensitynet import (
    FeltClassifier,
    GridSpec,
    HybridIntensityPredictor,
    IntensityRegressor,
    binarize_felt,
    generate_catalog,
    hybrid_combine,
    hypocenter_array,
    nn,
    rasterize_events,
)
from intensitynet.estimators import (
    _classifier_loss_and_grads,
    _epicenter_terms,
    _regressor_loss_and_grads,
    _spike_conv_add_grads,
    _spike_conv_forward,
)
from intensitynet.features import FeatureConfig


def _training_data(n_events, grid, seed=3):
    events = generate_catalog(n_events, seed=seed)
    X = hypocenter_array(events)
    y, masks = rasterize_events(events, grid)
    return X, y, masks


class TestSpikeConv:
    @pytest.mark.parametrize("seed", range(10))
    def test_matches_generic_conv(self, seed):
        rng = np.random.default_rng(seed)
        n = int(rng.integers(4, 12))
        k = int(rng.choice([1, 3, 5, 2 * n - 1]))
        pad = (k - 1) // 2
        channels, filters = int(rng.integers(1, 5)), int(rng.integers(1, 4))
        amp = rng.normal(size=channels)
        r, c = int(rng.integers(0, n)), int(rng.integers(0, n))
        w = rng.normal(size=(filters, channels, k, k))
        b = rng.normal(size=filters)
        dense_input = np.zeros((channels, n, n))
        dense_input[:, r, c] = amp
        ref = nn.conv2d_forward(dense_input, w, b, pad)
        got = _spike_conv_forward(amp, r, c, w, b, n, pad)
        assert np.allclose(ref, got, atol=1e-10)

        upstream = rng.normal(size=(filters, n, n))
        _, dw_ref, db_ref = nn.conv2d_backward(upstream, dense_input, w, pad)
        dw = np.zeros_like(w)
        db = np.zeros_like(b)
        _spike_conv_add_grads(upstream, amp, r, c, dw, db, pad)
        assert np.allclose(dw_ref, dw, atol=1e-9)
        assert np.allclose(db_ref, db, atol=1e-9)

    def test_full_size_grid_kernel(self):
        # the production geometry: 64-cell grid, kernel 125, padding 62
        rng = np.random.default_rng(99)
        amp = rng.normal(size=3)
        w = rng.normal(size=(2, 3, 125, 125))
        b = rng.normal(size=2)
        for r, c in [(0, 0), (63, 63), (31, 40), (63, 0)]:
            dense_input = np.zeros((3, 64, 64))
            dense_input[:, r, c] = amp
            ref = nn.conv2d_forward(dense_input, w, b, 62)
            got = _spike_conv_forward(amp, r, c, w, b, 64, 62)
            assert ref.shape == got.shape == (2, 64, 64)
            assert np.allclose(ref, got, atol=1e-8)


class TestBinarizeAndCombine:
    def test_threshold_boundary_inclusive(self):
        grid = np.full((4, 4), 0.5)
        assert binarize_felt(grid, 0.5).all()
        assert not binarize_felt(np.full((4, 4), 0.49), 0.5).any()

    def test_matches_elementwise_scan(self):
        rng = np.random.default_rng(0)
        probs = rng.random((6, 6))
        out = binarize_felt(probs, 0.5)
        for i in range(6):
            for j in range(6):
                assert out[i, j] == (1.0 if probs[i, j] >= 0.5 else 0.0)

    def test_bad_threshold(self):
        with pytest.raises(ValueError):
            binarize_felt(np.zeros((2, 2)), 0.0)

    def test_identity_branch_bitwise(self):
        rng = np.random.default_rng(1)
        y_reg = rng.normal(size=(5, 5))
        y_cls = np.ones((5, 5))
        assert np.array_equal(hybrid_combine(y_reg, y_cls, 0.3), y_reg)

    def test_offset_branch_exact(self):
        rng = np.random.default_rng(2)
        y_reg = rng.normal(size=(5, 5))
        out = hybrid_combine(y_reg, np.zeros((5, 5)), 0.3)
        assert np.array_equal(out, y_reg - 0.3)

    def test_alpha_zero_degenerate(self):
        rng = np.random.default_rng(3)
        y_reg = rng.normal(size=(5, 5))
        y_cls = (rng.random((5, 5)) < 0.5).astype(float)
        assert np.array_equal(hybrid_combine(y_reg, y_cls, 0.0), y_reg)

    def test_monotone_in_alpha(self):
        rng = np.random.default_rng(4)
        y_reg = rng.normal(size=(8, 8))
        y_cls = (rng.random((8, 8)) < 0.5).astype(float)
        lo = hybrid_combine(y_reg, y_cls, 0.1)
        hi = hybrid_combine(y_reg, y_cls, 0.7)
        assert (hi <= lo).all()

    def test_rejects_non_binary(self):
        with pytest.raises(ValueError):
            hybrid_combine(np.zeros((2, 2)), np.full((2, 2), 0.5), 0.3)
        with pytest.raises(ValueError):
            hybrid_combine(np.zeros((2, 2)), np.zeros((2, 2)), -0.1)


def _zeroed_classifier(grid):
    cls = FeltClassifier(grid=grid)
    cls.grid_, cls.feature_config_ = cls._resolve()
    n = grid.n_cells
    n_in = len(cls.feature_config_.classifier_orders) * n * n
    cls.dense_ = nn.LayerParams(
        "classifier/dense", np.zeros((n * n, n_in), np.float32), np.zeros(n * n, np.float32)
    )
    cls.n_features_in_ = 4
    return cls


def _zeroed_regressor(grid, conv_kernel=5, conv_filters=2):
    reg = IntensityRegressor(grid=grid, conv_kernel=conv_kernel, conv_filters=conv_filters)
    reg.grid_, reg.feature_config_ = reg._resolve()
    reg.padding_ = (conv_kernel - 1) // 2
    n = grid.n_cells
    channels = len(reg.feature_config_.regressor_orders)
    reg.conv_ = nn.LayerParams(
        "regressor/conv",
        np.zeros((conv_filters, channels, conv_kernel, conv_kernel), np.float32),
        np.zeros(conv_filters, np.float32),
    )
    reg.dense_ = nn.LayerParams(
        "regressor/dense",
        np.zeros((n * n, conv_filters * n * n), np.float32),
        np.zeros(n * n, np.float32),
    )
    reg.n_features_in_ = 4
    return reg


class TestFeltClassifier:
    def test_zero_weights_give_half_probability(self, small_grid):
        cls = _zeroed_classifier(small_grid)
        probs = cls.predict_proba([[38.0, 137.0, 30.0, 6.0]])
        assert probs.shape == (1, 16, 16)
        assert (probs == 0.5).all()
        assert cls.predict([[38.0, 137.0, 30.0, 6.0]]).all()  # 0.5 >= threshold

    def test_probabilities_in_open_interval(self, small_grid):
        X, y, _ = _training_data(10, small_grid)
        cls = FeltClassifier(grid=small_grid, epochs=3, learning_rate=1e-2, seed=0).fit(X, y)
        probs = cls.predict_proba(X)
        assert ((probs > 0) & (probs < 1)).all()

    def test_deterministic_fit(self, small_grid):
        X, y, _ = _training_data(12, small_grid)
        a = FeltClassifier(grid=small_grid, epochs=4, seed=5).fit(X, y)
        b = FeltClassifier(grid=small_grid, epochs=4, seed=5).fit(X, y)
        assert a.loss_history_ == b.loss_history_
        assert np.array_equal(a.dense_.weights, b.dense_.weights)
        assert np.array_equal(a.predict_proba(X), b.predict_proba(X))

    def test_single_event_overfit(self, small_grid):
        X, y, _ = _training_data(1, small_grid, seed=21)
        cls = FeltClassifier(
            grid=small_grid, epochs=150, batch_size=1, learning_rate=1e-2, seed=0
        ).fit(X, y)
        assert cls.loss_history_[-1] < 0.1

    def test_target_rule_learned(self, small_grid):
        # one observed cell at 0.7 -> probability pulled up there, down elsewhere
        X = np.array([[38.0, 137.0, 30.0, 6.0]])
        y = np.zeros((1, 16, 16))
        y[0, 5, 7] = 0.7
        cls = FeltClassifier(
            grid=small_grid, epochs=200, batch_size=1, learning_rate=5e-2, seed=0
        ).fit(X, y)
        probs = cls.predict_proba(X)[0]
        assert probs[5, 7] > 0.9
        unobserved = probs[np.ones((16, 16), bool) & (np.arange(16)[:, None] != 5)]
        assert unobserved.max() < 0.5

    def test_rejects_empty_and_mismatched(self, small_grid):
        with pytest.raises(ValueError):
            FeltClassifier(grid=small_grid).fit(np.zeros((0, 4)), np.zeros((0, 16, 16)))
        with pytest.raises(ValueError):
            FeltClassifier(grid=small_grid).fit(
                np.array([[38.0, 137.0, 30.0, 6.0]]), np.zeros((2, 16, 16))
            )


class TestIntensityRegressor:
    def test_zero_params_zero_output(self, small_grid):
        reg = _zeroed_regressor(small_grid)
        out = reg.predict([[38.0, 137.0, 30.0, 6.0]])
        assert out.shape == (1, 16, 16)
        assert not out.any()

    def test_deterministic_fit_and_predict(self, small_grid):
        X, y, masks = _training_data(12, small_grid)
        a = IntensityRegressor(grid=small_grid, conv_kernel=9, epochs=4, seed=5)
        b = IntensityRegressor(grid=small_grid, conv_kernel=9, epochs=4, seed=5)
        a.fit(X, y, observed_mask=masks)
        b.fit(X, y, observed_mask=masks)
        assert a.loss_history_ == b.loss_history_
        assert np.array_equal(a.conv_.weights, b.conv_.weights)
        assert np.array_equal(a.predict(X), b.predict(X))

    def test_predictions_finite_for_catalog(self, small_grid):
        X, y, masks = _training_data(20, small_grid)
        reg = IntensityRegressor(grid=small_grid, conv_kernel=9, epochs=3, seed=1)
        reg.fit(X, y, observed_mask=masks)
        out = reg.predict(X)
        assert np.isfinite(out).all()
        assert out.dtype == np.float64

    def test_single_event_overfit(self, small_grid):
        X, y, masks = _training_data(1, small_grid, seed=21)
        reg = IntensityRegressor(
            grid=small_grid, conv_kernel=9, epochs=250, batch_size=1, learning_rate=1e-2, seed=0
        )
        reg.fit(X, y, observed_mask=masks)
        assert reg.loss_history_[-1] < 0.05

    def test_unobserved_cells_bitwise_inert(self, small_grid):
        X, y, masks = _training_data(8, small_grid)
        perturbed = y.copy()
        perturbed[~masks] = 123.456
        a = IntensityRegressor(grid=small_grid, conv_kernel=7, epochs=3, seed=2)
        b = IntensityRegressor(grid=small_grid, conv_kernel=7, epochs=3, seed=2)
        a.fit(X, y, observed_mask=masks)
        b.fit(X, perturbed, observed_mask=masks)
        assert a.loss_history_ == b.loss_history_
        assert np.array_equal(a.conv_.weights, b.conv_.weights)
        assert np.array_equal(a.dense_.weights, b.dense_.weights)

    def test_mask_default_follows_catalog_floor(self, small_grid):
        X, y, masks = _training_data(6, small_grid)
        a = IntensityRegressor(grid=small_grid, conv_kernel=7, epochs=2, seed=0)
        b = IntensityRegressor(grid=small_grid, conv_kernel=7, epochs=2, seed=0)
        a.fit(X, y, observed_mask=masks)
        b.fit(X, y)  # inferred mask: y >= 0.5
        assert a.loss_history_ == b.loss_history_

    def test_requires_observed_cells(self, small_grid):
        X = np.array([[38.0, 137.0, 30.0, 6.0]])
        with pytest.raises(ValueError, match="observed"):
            IntensityRegressor(grid=small_grid, conv_kernel=7).fit(X, np.zeros((1, 16, 16)))

    def test_rejects_even_kernel(self, small_grid):
        X, y, masks = _training_data(2, small_grid)
        with pytest.raises(ValueError, match="odd"):
            IntensityRegressor(grid=small_grid, conv_kernel=4).fit(X, y, observed_mask=masks)

    def test_out_of_grid_epicenter_rejected(self, small_grid):
        with pytest.raises(ValueError, match="outside"):
            IntensityRegressor(grid=small_grid, conv_kernel=7).fit(
                np.array([[50.0, 137.0, 30.0, 6.0]]), np.ones((1, 16, 16))
            )


class TestHybrid:
    def test_fit_predict_and_identity(self, small_grid):
        X, y, masks = _training_data(16, small_grid)
        hyb = HybridIntensityPredictor(
            regressor=IntensityRegressor(grid=small_grid, conv_kernel=9, epochs=4, seed=2),
            classifier=FeltClassifier(grid=small_grid, epochs=4, seed=1),
            alpha=0.3,
        )
        hyb.fit(X, y, observed_mask=masks)
        y_reg = hyb.regressor_.predict(X)
        y_cls = hyb.classifier_.predict(X)
        y_hyb = hyb.predict(X)
        felt = y_cls == 1.0
        assert np.array_equal(y_hyb[felt], y_reg[felt])
        assert np.array_equal(y_hyb[~felt], y_reg[~felt] - 0.3)

    def test_grid_mismatch_rejected(self, small_grid):
        X, y, masks = _training_data(4, small_grid)
        hyb = HybridIntensityPredictor(
            regressor=IntensityRegressor(grid=small_grid, conv_kernel=7),
            classifier=FeltClassifier(grid=GridSpec(n_cells=8)),
        )
        with pytest.raises(ValueError, match="grid"):
            hyb.fit(X, y, observed_mask=masks)

    def test_sub_estimators_not_mutated(self, small_grid):
        X, y, masks = _training_data(6, small_grid)
        reg = IntensityRegressor(grid=small_grid, conv_kernel=7, epochs=2)
        hyb = HybridIntensityPredictor(regressor=reg, classifier=FeltClassifier(grid=small_grid, epochs=2))
        hyb.fit(X, y, observed_mask=masks)
        assert not hasattr(reg, "conv_")  # fit clones, per sklearn convention

    def test_clone_round_trip(self, small_grid):
        hyb = HybridIntensityPredictor(
            regressor=IntensityRegressor(grid=small_grid, conv_kernel=9, epochs=4, seed=2),
            classifier=FeltClassifier(grid=small_grid, epochs=4, seed=1),
            alpha=0.42,
        )
        cloned = clone(hyb)
        assert cloned.alpha == 0.42
        assert cloned.regressor.conv_kernel == 9
        assert cloned.classifier.epochs == 4


class TestTrainingObjectiveGradients:
    def test_classifier_objective_fd(self):
        grid = GridSpec(n_cells=8)
        rng = np.random.default_rng(17)
        X, y, _ = _training_data(3, grid, seed=8)
        cfg = FeatureConfig(k=3)
        from intensitynet.estimators import _classifier_features

        feats = _classifier_features(X, cfg, grid)
        targets = (y >= 0.5).astype(np.float64).reshape(len(X), -1)
        w = rng.normal(size=(64, feats.shape[1])) * 0.3
        b = rng.normal(size=64) * 0.1

        def f(params):
            w, b = params
            loss, d_w, d_b = _classifier_loss_and_grads(feats, targets, w, b)
            return loss, [d_w, d_b]

        assert nn.gradient_check(f, [w, b], step=1e-3, rng=rng) < 1e-4

    def test_regressor_objective_fd(self):
        grid = GridSpec(n_cells=8)
        rng = np.random.default_rng(18)
        X, y, masks = _training_data(3, grid, seed=8)
        cfg = FeatureConfig()
        amps, rows, cols = _epicenter_terms(X, cfg, grid)
        k, pad, filters = 5, 2, 2
        channels = amps.shape[1]
        cw = rng.normal(size=(filters, channels, k, k)) * 0.3
        cb = rng.normal(size=filters) * 0.1
        dw = rng.normal(size=(64, filters * 64)) * 0.1
        db = rng.normal(size=64) * 0.1

        def f(params):
            cw, cb, dw, db = params
            conv = nn.LayerParams("c", cw, cb)
            dense = nn.LayerParams("d", dw, db)
            loss, d_cw, d_cb, d_dw, d_db = _regressor_loss_and_grads(
                amps, rows, cols, y, masks, conv, dense, pad
            )
            return loss, [d_cw, d_cb, d_dw, d_db]

        assert nn.gradient_check(f, [cw, cb, dw, db], step=1e-3, rng=rng) < 1e-4
