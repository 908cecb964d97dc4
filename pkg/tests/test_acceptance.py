"""Acceptance suite: one test per release criterion, at its stated tolerance.

Each test prints a PASS line (visible with ``pytest -s``); the criterion
number in the test name matches the order below:

1  gradient correctness of every operation vs central finite differences
2  conv forward equivalence with the naive nested-loop oracle
3  bitwise exactness of the hybrid combination equation
4  grid round-trip and Mercator oddness
5  metric equivalence with independent naive implementations
6  masking rules (regression ignores, classification zero-fills)
7  synthetic end-to-end training quality within a wall-time budget
8  reproduction of the published numbers on the real catalog (waived
   when the catalog is not supplied; see README)
9  bit-identical determinism of training and evaluation
10 checkpoint round-trip integrity and corruption detection
"""

import json
import os
import time
from pathlib import Path

import numpy as np
import pytest

from intensitynet import (
    CheckpointError,
    FeltClassifier,
    GridSpec,
    HybridIntensityPredictor,
    IntensityRegressor,
    cell_center,
    cell_of,
    evaluate,
    f_score_felt,
    generate_catalog,
    hybrid_combine,
    hypocenter_array,
    load_checkpoint,
    mercator_y,
    mse_and_r,
    nn,
    parse_catalog,
    rasterize,
    rasterize_events,
    save_checkpoint,
    split_dataset,
)
from intensitynet.cli import main
from intensitynet.estimators import _regressor_loss_and_grads, _epicenter_terms
from intensitynet.features import FeatureConfig

from _naive import naive_conv2d, naive_f_score, naive_mse, naive_pearson, pooled_pairs

TOL_GRAD = 1e-4
TOL_CONV = 1e-6
TOL_METRIC = 1e-12


def _fd_dense(rng):
    x = rng.normal(size=6)
    w = rng.normal(size=(4, 6))
    b = rng.normal(size=4)
    probe = rng.normal(size=4)

    def f(params):
        x, w, b = params
        y = nn.dense_forward(x, w, b)
        dx, dw, db = nn.dense_backward(probe, x, w)
        return float((y * probe).sum()), [dx, dw, db]

    return nn.gradient_check(f, [x, w, b], step=1e-3, rng=rng)


def _fd_conv(rng, k):
    h = max(4, k + 1)
    x = rng.normal(size=(2, h, h))
    w = rng.normal(size=(2, 2, k, k))
    b = rng.normal(size=2)
    pad = (k - 1) // 2
    out_h = h + 2 * pad - k + 1
    probe = rng.normal(size=(2, out_h, out_h))

    def f(params):
        x, w, b = params
        y = nn.conv2d_forward(x, w, b, pad)
        dx, dw, db = nn.conv2d_backward(probe, x, w, pad)
        return float((y * probe).sum()), [dx, dw, db]

    return nn.gradient_check(f, [x, w, b], step=1e-3, rng=rng)


def _fd_sigmoid(rng):
    x = rng.normal(size=(5, 5))
    probe = rng.normal(size=(5, 5))

    def f(params):
        (x,) = params
        out = nn.sigmoid(x)
        return float((out * probe).sum()), [nn.sigmoid_backward(probe, out)]

    return nn.gradient_check(f, [x], step=1e-3, rng=rng)


def _fd_relu(rng):
    x = rng.normal(size=(5, 5))
    x += np.sign(x) * 0.05  # keep coordinates away from the kink
    probe = rng.normal(size=(5, 5))

    def f(params):
        (x,) = params
        return float((nn.relu(x) * probe).sum()), [nn.relu_backward(probe, x)]

    return nn.gradient_check(f, [x], step=1e-3, rng=rng)


def _fd_masked_mse(rng):
    pred = rng.normal(size=(6, 6))
    target = rng.normal(size=(6, 6))
    mask = rng.random((6, 6)) < 0.5

    def f(params):
        (pred,) = params
        loss, grad = nn.masked_mse_loss(pred, target, mask)
        return loss, [grad]

    return nn.gradient_check(f, [pred], step=1e-3, rng=rng)


def _fd_bce(rng):
    pred = rng.uniform(0.05, 0.95, size=(6, 6))
    target = (rng.random((6, 6)) < 0.5).astype(float)

    def f(params):
        (pred,) = params
        loss, grad = nn.bce_loss(pred, target)
        return loss, [grad]

    # smaller step: the log curvature near p = 0.05 makes 1e-3 truncation-limited
    return nn.gradient_check(f, [pred], step=2e-4, rng=rng)


def test_criterion_1_gradient_correctness():
    start = time.monotonic()
    worst = 0.0
    for seed in range(20):
        rng = np.random.default_rng(seed)
        worst = max(worst, _fd_dense(rng))
        for k in (1, 3, 7):
            worst = max(worst, _fd_conv(rng, k))
        worst = max(worst, _fd_sigmoid(rng))
        worst = max(worst, _fd_relu(rng))
        worst = max(worst, _fd_masked_mse(rng))
        worst = max(worst, _fd_bce(rng))
    elapsed = time.monotonic() - start
    assert worst < TOL_GRAD, f"max relative error {worst}"
    assert elapsed < 60.0, f"gradient checks took {elapsed:.1f}s"
    print(f"ACCEPTANCE 1 PASS gradient correctness: max rel err {worst:.2e} in {elapsed:.1f}s")


def test_criterion_2_conv_oracle_equivalence():
    start = time.monotonic()
    worst = 0.0
    rng = np.random.default_rng(0)
    cases = [(1, 1, 1, 5, 0), (2, 3, 3, 6, 1), (3, 2, 3, 5, 2), (1, 2, 7, 8, 3)]
    for channels, filters, k, h, pad in cases:
        x = rng.normal(size=(channels, h, h))
        w = rng.normal(size=(filters, channels, k, k))
        b = rng.normal(size=filters)
        got = nn.conv2d_forward(x, w, b, pad)
        ref = np.array(naive_conv2d(x, w, b, pad))
        worst = max(worst, float(np.abs(got - ref).max()))
    # the production kernel size at reduced spatial extent
    x = rng.normal(size=(2, 4, 4))
    w = rng.normal(size=(2, 2, 125, 125))
    b = rng.normal(size=2)
    got = nn.conv2d_forward(x, w, b, 62)
    ref = np.array(naive_conv2d(x, w, b, 62))
    assert got.shape == (2, 4, 4)
    worst = max(worst, float(np.abs(got - ref).max()))
    elapsed = time.monotonic() - start
    assert worst < TOL_CONV, f"max abs deviation {worst}"
    assert elapsed < 60.0, f"conv oracle checks took {elapsed:.1f}s"
    print(f"ACCEPTANCE 2 PASS conv oracle: max abs err {worst:.2e} in {elapsed:.1f}s")


def test_criterion_3_hybrid_equation_bitwise():
    rng = np.random.default_rng(3)
    y_reg = rng.normal(scale=3.0, size=1000)
    y_cls = (rng.random(1000) < 0.5).astype(np.float64)
    alphas = rng.uniform(0.0, 1.0, size=1000)
    alphas[:50] = 0.0  # force the degenerate branch
    y_cls[:25] = 1.0  # and some guaranteed identity cells
    for i in range(1000):
        got = hybrid_combine(np.array([y_reg[i]]), np.array([y_cls[i]]), float(alphas[i]))[0]
        expected = float(y_reg[i]) - float(alphas[i]) * (1.0 - float(y_cls[i]))
        assert got == expected, f"triple {i}: {got!r} != {expected!r}"
        if y_cls[i] == 1.0:
            assert got == y_reg[i]
        if alphas[i] == 0.0:
            assert got == y_reg[i]
    print("ACCEPTANCE 3 PASS hybrid equation bitwise on 1000 triples")


def test_criterion_4_grid_round_trip_and_oddness():
    grid = GridSpec()
    for row in range(64):
        for col in range(64):
            lat, lon = cell_center((row, col), grid)
            assert cell_of(lat, lon, grid) == (row, col)
    for lat in np.linspace(0.1, 89.5, 200):
        assert abs(mercator_y(-float(lat)) + mercator_y(float(lat))) < 1e-12
    print("ACCEPTANCE 4 PASS grid round-trip over 4096 cells, Mercator odd to 1e-12")


def test_criterion_5_metric_oracle_equivalence():
    worst = 0.0
    for seed in range(50):
        rng = np.random.default_rng(seed)
        n_events = int(rng.integers(1, 5))
        n = int(rng.integers(3, 8))
        preds = rng.normal(loc=1.0, scale=1.5, size=(n_events, n, n))
        obs = np.where(
            rng.random((n_events, n, n)) < 0.7,
            rng.uniform(0.5, 7.0, (n_events, n, n)),
            rng.uniform(0.0, 0.49, (n_events, n, n)),
        )
        masks = rng.random((n_events, n, n)) < 0.7
        pairs = pooled_pairs(preds, obs, masks)
        if len(pairs) >= 2 and len({o for _, o in pairs}) > 1:
            mse, r, n_pool = mse_and_r(preds, obs, masks)
            assert n_pool == len(pairs)
            worst = max(worst, abs(mse - naive_mse(pairs)), abs(r - naive_pearson(pairs)))
        if masks.any():
            f, precision, recall, _ = f_score_felt(preds, obs, masks)
            f_ref, p_ref, r_ref = naive_f_score(preds, obs, masks)
            worst = max(
                worst, abs(f - f_ref), abs(precision - p_ref), abs(recall - r_ref)
            )
    assert worst < TOL_METRIC, f"max metric deviation {worst}"
    print(f"ACCEPTANCE 5 PASS metric oracles: max deviation {worst:.2e}")


def test_criterion_6_masking_rules():
    grid = GridSpec(n_cells=12)
    events = generate_catalog(6, seed=20)
    X = hypocenter_array(events)
    y, masks = rasterize_events(events, grid)

    # regression: unobserved target cells are bitwise inert in loss and grads
    cfg = FeatureConfig()
    amps, rows, cols = _epicenter_terms(X, cfg, grid)
    rng = np.random.default_rng(0)
    conv = nn.LayerParams("c", rng.normal(size=(2, 28, 5, 5)), rng.normal(size=2))
    dense = nn.LayerParams("d", rng.normal(size=(144, 2 * 144)) * 0.1, rng.normal(size=144))
    perturbed = y.copy()
    perturbed[~masks] = 777.0
    out_a = _regressor_loss_and_grads(amps, rows, cols, y, masks, conv, dense, 2)
    out_b = _regressor_loss_and_grads(amps, rows, cols, perturbed, masks, conv, dense, 2)
    assert out_a[0] == out_b[0]
    for ga, gb in zip(out_a[1:], out_b[1:]):
        assert np.array_equal(ga, gb)

    # classification: any sub-floor value (unobserved cells are 0) maps to target 0,
    # so zero-filled and junk-filled unobserved cells train identically
    junk = y.copy()
    junk[~masks] = 0.49
    a = FeltClassifier(grid=grid, epochs=3, seed=4).fit(X, y)
    b = FeltClassifier(grid=grid, epochs=3, seed=4).fit(X, junk)
    assert a.loss_history_ == b.loss_history_
    assert np.array_equal(a.dense_.weights, b.dense_.weights)
    assert np.array_equal((y >= 0.5), masks)  # catalog grids: observed iff >= floor
    print("ACCEPTANCE 6 PASS masking rules: regression bitwise inert, classification zero-fill")


def test_criterion_7_synthetic_end_to_end():
    start = time.monotonic()
    grid = GridSpec()
    events = generate_catalog(500, seed=11)  # noise_sd 0.2 default
    split = split_dataset(events, 0.8, seed=7)
    assert (len(split.train), len(split.test)) == (400, 100)

    X = hypocenter_array(split.train)
    y, masks = rasterize_events(split.train, grid)
    predictor = HybridIntensityPredictor(
        regressor=IntensityRegressor(
            grid=grid, epochs=10, batch_size=32, learning_rate=1e-2, seed=2
        ),
        classifier=FeltClassifier(
            grid=grid, epochs=10, batch_size=32, learning_rate=1e-2, seed=1
        ),
        alpha=0.30,
    )
    predictor.fit(X, y, observed_mask=masks)

    X_test = hypocenter_array(split.test)
    grids = [rasterize(ev, grid) for ev in split.test]
    report = evaluate(predictor.predict(X_test), grids)
    elapsed = time.monotonic() - start
    assert report.pearson_r >= 0.70, report.summary()
    assert report.f_score >= 0.60, report.summary()
    assert elapsed < 900.0, f"end-to-end took {elapsed:.0f}s"
    print(
        f"ACCEPTANCE 7 PASS synthetic end-to-end: {report.summary()} in {elapsed:.0f}s"
    )


def test_criterion_8_paper_numbers_on_real_catalog():
    data_dir = os.environ.get("INTENSITYNET_JMA_DATA")
    if not data_dir or not (Path(data_dir) / "events.csv").is_file():
        print("ACCEPTANCE 8 WAIVED: real JMA-derived catalog not supplied")
        pytest.skip(
            "waived: set INTENSITYNET_JMA_DATA to a directory holding the real "
            "events.csv/observations.csv to enable this criterion"
        )
    events = parse_catalog(
        Path(data_dir) / "events.csv", Path(data_dir) / "observations.csv"
    )
    grid = GridSpec()
    events = [ev for ev in events if cell_of(ev.lat_deg, ev.lon_deg, grid) is not None]
    split = split_dataset(events, 1461 / 1819, seed=0)
    X = hypocenter_array(split.train)
    y, masks = rasterize_events(split.train, grid)
    predictor = HybridIntensityPredictor(
        regressor=IntensityRegressor(grid=grid, epochs=50, batch_size=8, seed=2),
        classifier=FeltClassifier(grid=grid, epochs=50, batch_size=8, seed=1),
        alpha=0.30,
    )
    predictor.fit(X, y, observed_mask=masks)
    grids = [rasterize(ev, grid) for ev in split.test]
    report = evaluate(predictor.predict(hypocenter_array(split.test)), grids)
    assert abs(report.mse - 0.39) <= 0.15, report.summary()
    assert abs(report.pearson_r - 0.78) <= 0.15, report.summary()
    assert abs(report.f_score - 0.61) <= 0.15, report.summary()
    print(f"ACCEPTANCE 8 PASS paper numbers: {report.summary()}")


_SMALL_CONFIG = {
    "grid": {"n_cells": 16},
    "features": {"k": 7},
    "training": {
        "epochs": 3,
        "batch_size": 16,
        "learning_rate": 0.01,
        "seed": 0,
        "conv_kernel": 9,
        "conv_filters": 2,
        "train_fraction": 0.8,
    },
}


def test_criterion_9_determinism(tmp_path):
    data = tmp_path / "data"
    config = tmp_path / "config.json"
    config.write_text(json.dumps(_SMALL_CONFIG))
    assert main(["synth", "--events", "80", "--seed", "9", "--out", str(data)]) == 0

    checkpoints = []
    for name in ("a.ckpt", "b.ckpt"):
        ckpt = tmp_path / name
        assert main(
            ["train", "--config", str(config), "--data", str(data), "--out", str(ckpt)]
        ) == 0
        checkpoints.append(ckpt.read_bytes())
    assert checkpoints[0] == checkpoints[1], "checkpoints differ between identical runs"

    import io
    from contextlib import redirect_stdout

    outputs = []
    for _ in range(2):
        buf = io.StringIO()
        with redirect_stdout(buf):
            assert main(["eval", "--ckpt", str(tmp_path / "a.ckpt"), "--data", str(data)]) == 0
        outputs.append(buf.getvalue().splitlines()[-1])
    assert outputs[0] == outputs[1], "evaluation JSON differs between identical runs"
    json.loads(outputs[0])
    print("ACCEPTANCE 9 PASS determinism: bit-identical checkpoints and eval JSON")


def test_criterion_10_checkpoint_integrity(tmp_path):
    grid = GridSpec(n_cells=12)
    events = generate_catalog(12, seed=14)
    X = hypocenter_array(events)
    y, masks = rasterize_events(events, grid)
    predictor = HybridIntensityPredictor(
        regressor=IntensityRegressor(grid=grid, conv_kernel=9, epochs=2, seed=2),
        classifier=FeltClassifier(grid=grid, epochs=2, seed=1),
    )
    predictor.fit(X, y, observed_mask=masks)
    path = tmp_path / "model.ckpt"
    save_checkpoint(path, predictor, metadata={"seed": 0})

    loaded = load_checkpoint(path)
    probe = hypocenter_array(generate_catalog(10, seed=15))
    assert np.array_equal(predictor.predict(probe), loaded.predict(probe))

    data = bytearray(path.read_bytes())
    rng = np.random.default_rng(16)
    for _ in range(5):
        pos = int(rng.integers(0, len(data)))
        corrupted = bytearray(data)
        corrupted[pos] ^= 0x40
        bad = tmp_path / "bad.ckpt"
        bad.write_bytes(bytes(corrupted))
        with pytest.raises(CheckpointError):
            load_checkpoint(bad)
    print("ACCEPTANCE 10 PASS checkpoint integrity: bitwise round-trip, corruption detected")
