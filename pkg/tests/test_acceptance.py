"""Acceptance checks, one test per criterion; each prints a PASS/FAIL line.

Criteria 4-6 share one desk-scale sweep (configs/acceptance.ini: N = 1000,
five seeds, both modes); it dominates the runtime of the whole suite.
"""

import math
import time
from pathlib import Path

import numpy as np
import pytest
from scipy.spatial.distance import pdist, squareform

from chartlab import pipeline
from chartlab.baselines import FingerprintDb, MusicConfig, fingerprint_locate, music_spectrum, music_spectrum_2d
from chartlab.channel import (
    ArrayConfig, ChannelConfig, ChannelTaps, NoiseModel, PilotConfig, estimate_channel, steering_vector,
)
from chartlab.charting import (
    ChartingConfig, LabeledSplit, calibrate_conditionals, fit, kl_divergence, kl_gradient, q_matrix,
    symmetrize,
)
from chartlab.config import load_config
from chartlab.evaluate import chart_report, continuity, kruskal_stress, trustworthiness
from chartlab.features import log_euclidean_distance
from chartlab.raytrace import TraceConfig, trace_paths
from chartlab.scene import generate_city

import oracles
from conftest import record_criterion, rng_points_in_streets

CONFIGS = Path(__file__).resolve().parents[1] / "configs"


def check(n, ok, detail):
    record_criterion(n, bool(ok), detail)
    assert ok, detail


def test_c01_metric_oracles():
    t0 = time.perf_counter()
    rng = np.random.default_rng(101)
    worst = dict.fromkeys(["CT", "TW", "KS", "KL", "LE"], 0.0)
    for _ in range(100):
        n = int(rng.integers(10, 201))
        X = rng.uniform(0, 100, (n, 2))
        Y = X @ rng.standard_normal((2, 2)) + rng.normal(0, rng.uniform(1, 30), (n, 2))
        K = int(rng.integers(1, max(2, n // 10)))
        worst["CT"] = max(worst["CT"], abs(continuity(X, Y, K) - oracles.continuity(X, Y, K)))
        worst["TW"] = max(worst["TW"], abs(trustworthiness(X, Y, K) - oracles.trustworthiness(X, Y, K)))
        worst["KS"] = max(worst["KS"], abs(kruskal_stress(X, Y) - oracles.kruskal_stress(X, Y)))
        m = min(n, 60)
        P = symmetrize(calibrate_conditionals(squareform(pdist(X[:m])), min(10.0, m / 3))[0])
        Q = q_matrix(Y[:m] / 10)
        worst["KL"] = max(worst["KL"], abs(kl_divergence(P, Q) - oracles.kl_loop(P, Q)))
        r = int(rng.integers(1, 9))
        A, B = oracles.random_spd(rng, 8, r), oracles.random_spd(rng, 8, 8)
        worst["LE"] = max(worst["LE"], abs(log_euclidean_distance(A, B) - oracles.le_distance(A, B)))
    dt = time.perf_counter() - t0
    detail = ", ".join(f"{k} {v:.1e}" for k, v in worst.items()) + f"; {dt:.1f} s"
    check(1, max(worst.values()) <= 1e-12 and dt < 60, detail)


def test_c02_perfect_chart_fixed_point():
    X = np.random.default_rng(2).uniform(0, 500, (1000, 2))
    rep = chart_report(X, X, X)
    ok = abs(rep.ct - 1) <= 1e-9 and abs(rep.tw - 1) <= 1e-9 and abs(rep.ks) <= 1e-9 and rep.stats.mean == 0
    check(2, ok, f"CT {rep.ct:.12f}, TW {rep.tw:.12f}, KS {rep.ks:.1e}")


def test_c03_gradient_finite_differences():
    t0 = time.perf_counter()
    worst = 0.0
    rng = np.random.default_rng(3)
    for n in (16, 24, 32):
        D = squareform(pdist(rng.standard_normal((n, 5))))
        P = symmetrize(calibrate_conditionals(D, 6.0)[0])
        z = rng.standard_normal((n, 2))
        g = kl_gradient(P, q_matrix(z), z)
        h = 1e-5
        for i in range(n):
            for k in range(2):
                zp, zm = z.copy(), z.copy()
                zp[i, k] += h
                zm[i, k] -= h
                fd = (kl_divergence(P, q_matrix(zp)) - kl_divergence(P, q_matrix(zm))) / (2 * h)
                worst = max(worst, abs(g[i, k] - fd) / max(abs(fd), 1e-6))
    dt = time.perf_counter() - t0
    check(3, worst <= 1e-5 and dt < 10, f"max relative error {worst:.1e}; {dt:.1f} s")


@pytest.fixture(scope="module")
def sweep(tmp_path_factory):
    cfg = load_config(CONFIGS / "acceptance.ini")
    t0 = time.perf_counter()
    res = pipeline.cmd_sweep(cfg, tmp_path_factory.mktemp("acceptance"))
    return cfg, res, time.perf_counter() - t0


def _mean(res, cfg, mode, sup, cond=None):
    vals = []
    for seed in cfg.experiment.seeds:
        rep = res.reports[(mode, seed, sup)]
        vals.append(rep.stats.mean if cond is None else rep.by_condition[cond].mean)
    return float(np.mean(vals))


def test_c04_supervision_trend(sweep):
    cfg, res, dt = sweep
    ex = cfg.experiment
    lo, hi = min(ex.supervision), max(ex.supervision)
    parts, ok = [], len(ex.seeds) >= 5 and dt <= 30 * 60 and cfg.experiment.n_samples == 1000
    for mode in ex.modes:
        a, b = _mean(res, cfg, mode, lo), _mean(res, cfg, mode, hi)
        ok &= a >= 3 * b
        parts.append(f"{mode} {a:.1f} m -> {b:.1f} m ({a / b:.2f}x)")
    check(4, ok, "; ".join(parts) + f"; sweep {dt / 60:.1f} min")


def test_c05_dynamic_not_better(sweep):
    cfg, res, _ = sweep
    rows, ok = [], True
    for sup in cfg.experiment.supervision:
        s, d = _mean(res, cfg, "static", sup), _mean(res, cfg, "dynamic", sup)
        ok &= d >= s
        rows.append(f"{sup:g}%: {s:.1f}/{d:.1f}")
    check(5, ok, "static/dynamic mean error " + ", ".join(rows))


def test_c06_nlos_worse_than_los(sweep):
    cfg, res, _ = sweep
    rows, ok = [], True
    for mode in cfg.experiment.modes:
        for seed in cfg.experiment.seeds:
            bc = res.reports[(mode, seed, 25.0)].by_condition
            ok &= bc["nlos"].mean > bc["los"].mean
            rows.append(f"{mode}/{seed} {bc['los'].mean:.0f}<{bc['nlos'].mean:.0f}")
    check(6, ok, "LoS<NLoS at 25%: " + ", ".join(rows))


def test_c07_anchoring():
    rng = np.random.default_rng(7)
    pos = rng.uniform(0, 300, (200, 2))
    D = squareform(pdist(pos))
    full, _ = fit(D, LabeledSplit(200, np.arange(200), pos), ChartingConfig(perplexity=20), 0)
    err_full = np.hypot(*(full.positions() - pos).T).max()
    lab = rng.permutation(200)[:50]
    split = LabeledSplit(200, lab, pos[lab])
    z0 = None
    constant = True
    for n_iter in (1, 10, 100, 400):
        chart, _ = fit(D, split, ChartingConfig(perplexity=20, scale=10.0, n_iter=n_iter), 0)
        za = chart.z[lab].copy()
        z0 = za if z0 is None else z0
        constant &= np.array_equal(za, z0) and np.array_equal(chart.positions()[lab], pos[lab])
    check(7, err_full == 0 and constant, f"max error at 100% {err_full}; anchors bitwise constant: {constant}")


def test_c08_raytracer_geometry():
    t0 = time.perf_counter()
    scene = generate_city(0)
    walls = oracles.building_walls(scene)
    rng = np.random.default_rng(8)
    tx = rng_points_in_streets(scene, rng, 1000)
    rx = rng_points_in_streets(scene, rng, 1000, z=(1.5, 30.0))
    cfg = TraceConfig()
    n_paths, worst = 0, [0.0, 0.0, 0.0]
    for a, b in zip(tx, rx):
        for p in trace_paths(scene, a, [5.0, 0.0, 0.0], b, cfg=cfg):
            worst = [max(w, e) for w, e in zip(worst, oracles.reconstruction_errors(p, walls))]
            n_paths += 1
    dt = time.perf_counter() - t0
    ok = worst[0] < 1e-9 and worst[1] <= 1e-9 and worst[2] <= 1e-12 and dt < 60 and n_paths > 200
    check(8, ok, f"{n_paths} paths on 1000 pairs; off-surface {worst[0]:.1e} m, angle {worst[1]:.1e} rad, "
                 f"delay {worst[2]:.1e}; {dt:.1f} s")


def test_c09_channel_estimation():
    cfg = ChannelConfig(tau_max=0.2e-6, n_subcarriers=64)
    rng = np.random.default_rng(9)
    shape = (cfg.n_taps, 32, 8)
    taps = ChannelTaps(rng.standard_normal(shape) + 1j * rng.standard_normal(shape))
    est = estimate_channel(taps, PilotConfig(), NoiseModel.white(32), 0, cfg)
    rel = np.linalg.norm(est.h - taps.h) / np.linalg.norm(taps.h)
    mse = []
    for snr in (0, 10, 20, 30):
        acc = 0.0
        for s in range(100):
            t = ChannelTaps(np.random.default_rng(s).standard_normal((cfg.n_taps, 4, 2)) + 0j)
            e = estimate_channel(t, PilotConfig(), NoiseModel.white(4, snr), s, cfg)
            acc += np.mean(np.abs(e.h - t.h) ** 2)
        mse.append(acc / 100)
    ok = rel <= 1e-8 and all(a > b for a, b in zip(mse, mse[1:]))
    check(9, ok, f"noiseless relative error {rel:.1e}; MSE " + ", ".join(f"{m:.2e}" for m in mse))


def test_c10_baselines():
    arr = ArrayConfig(4, 8, boresight=math.pi / 2)
    cfg = MusicConfig()
    az_grid, el_grid = cfg.az_grid(arr), cfg.el_grid()
    exact = True
    for k, j in [(10, 170), (180, 100), (300, 160)]:
        a = steering_vector(arr, (az_grid[k], el_grid[j]))
        _, _, spec = music_spectrum_2d(np.outer(a, a.conj()), cfg, arr)
        exact &= np.unravel_index(np.argmax(spec), spec.shape) == (k, j)
        a = steering_vector(arr, (az_grid[k], 0.0))
        _, spec1 = music_spectrum(np.outer(a, a.conj()), cfg, arr)
        exact &= int(np.argmax(spec1)) == k
    rng = np.random.default_rng(10)
    field = lambda p: -90.0 + 0.5 * (np.floor(p[:, 0] / 4) + 10 * np.floor(p[:, 1] / 4))  # noqa: E731
    train = rng.uniform(0, 40, (2000, 2))
    db = FingerprintDb.from_measurements(train, field(train), 4.0)
    q = rng.uniform(0, 40, (1000, 2))
    est = np.array([fingerprint_locate(db, f) for f in field(q)])
    fp_err = float(np.hypot(*(est - q).T).mean())
    check(10, exact and fp_err <= 4 * math.sqrt(2),
          f"MUSIC grid-aligned recovery exact: {exact}; fingerprint mean error {fp_err:.2f} m <= 5.66 m")


def _csvs(root):
    return {p.relative_to(root): p.read_bytes() for p in sorted(Path(root).rglob("*.csv"))}


def test_c11_determinism(tmp_path):
    cfg = load_config(CONFIGS / "smoke.ini")
    pipeline.cmd_sweep(cfg, tmp_path / "a")
    pipeline.cmd_sweep(cfg, tmp_path / "b")
    a, b = _csvs(tmp_path / "a"), _csvs(tmp_path / "b")
    same = a.keys() == b.keys() and all(a[k] == b[k] for k in a)
    check(11, same and len(a) > 10, f"{len(a)} CSV files, byte-identical: {same}")
