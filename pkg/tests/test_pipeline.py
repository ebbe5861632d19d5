import json
import math
from pathlib import Path

import numpy as np
import pytest

from chartlab import pipeline
from chartlab.config import ExperimentConfig, from_ini_text, load_config, to_ini
from chartlab.errors import ConfigError, DataError

SMOKE = Path(__file__).resolve().parents[1] / "configs" / "smoke.ini"


@pytest.fixture(scope="module")
def smoke_cfg():
    return load_config(SMOKE)


@pytest.fixture(scope="module")
def generated(smoke_cfg, tmp_path_factory):
    out = tmp_path_factory.mktemp("gen")
    pipeline.cmd_generate(smoke_cfg, out)
    return out


# -- config --------------------------------------------------------------------

def test_ini_roundtrip_and_hash():
    cfg = ExperimentConfig()
    back = from_ini_text(to_ini(cfg))
    assert to_ini(back) == to_ini(cfg) and back.hash() == cfg.hash()
    other = cfg.replace("charting", perplexity=41.0)
    assert other.hash() != cfg.hash()
    # charting settings do not touch the dataset identity
    assert other.dataset_hash(0, "static") == cfg.dataset_hash(0, "static")
    assert cfg.dataset_hash(0, "static") != cfg.dataset_hash(0, "dynamic")


@pytest.mark.parametrize("text", [
    "[nope]\nx = 1\n",
    "[charting]\nperplexit = 3\n",
    "[charting]\nn_iter = many\n",
    "[experiment]\nsupervision = 5, 150\n",
    "[experiment]\nsupervision = 60\n",
    "[experiment]\nmodes = static, rainy\n",
    "[channel]\nn_subcarriers = 16\n",
    "[raytrace]\nmax_order = 5\n",
])
def test_bad_configs(text):
    with pytest.raises(ConfigError):
        from_ini_text(text)


def test_missing_config_file(tmp_path):
    with pytest.raises(ConfigError):
        load_config(tmp_path / "absent.ini")


def test_module_configs():
    cfg = ExperimentConfig()
    assert cfg.channel_config().n_taps == 400 and cfg.bs_array().size == 32 and cfg.ve_array().size == 8
    assert cfg.charting_config().perplexity == cfg.charting.perplexity
    assert cfg.noise_model().q[0, 0].real == pytest.approx(cfg.reference_power() * 1e-3)
    assert cfg.music_config().delay_step == pytest.approx(5e-9)
    inter = cfg.replace("channel", interferer_inr_db=10.0).noise_model()
    lam = np.linalg.eigvalsh(inter.q)
    sigma2 = cfg.reference_power() * 1e-3
    assert lam[0] == pytest.approx(sigma2) and lam[-1] == pytest.approx(sigma2 * (1 + 10 * 32))


# -- splits --------------------------------------------------------------------

def test_trajectory_split_disjoint():
    rng = np.random.default_rng(0)
    vid = rng.integers(0, 40, 500)
    val = pipeline.assign_validation(vid, 0.5, 3)
    assert val.sum() <= 250 and val.sum() >= 200
    assert not set(vid[val]) & set(vid[~val])
    pt = pipeline.assign_validation(vid, 0.5, 3, split="point")
    assert pt.sum() == 250


def test_labels_nested_and_sized():
    val = np.zeros(1000, bool)
    val[::2] = True
    prev = set()
    for sup in (5, 10, 25, 35, 50):
        lab = pipeline.labeled_indices(val, sup, 1)
        assert len(lab) == round(sup * 10) and not np.any(val[lab])
        assert prev <= set(lab.tolist())
        prev = set(lab.tolist())
    with pytest.raises(DataError):
        pipeline.labeled_indices(val, 60, 1)


# -- generation ------------------------------------------------------------------

def test_generate_bookkeeping(generated, smoke_cfg):
    for mode in ("static", "dynamic"):
        run = generated / pipeline.run_name(mode, 0)
        m = json.loads((run / "manifest.json").read_text())
        ds = pipeline.open_dataset(smoke_cfg, run)
        assert m["n_records"] == len(ds) == 100
        assert m["n_validation"] == int(ds.validation.sum())
        assert m["los_fraction"] == pytest.approx(ds.los_fraction)
        assert not set(m["validation_vehicles"]) & set(m["training_vehicles"])
        rows = (run / "dataset.csv").read_text().splitlines()
        assert len(rows) == 101
        for s in ds.samples:
            C = s.covariance
            assert np.abs(C - C.conj().T).max() <= 1e-12 * np.abs(C).max()
            assert np.linalg.eigvalsh(C).min() >= -1e-10 * np.trace(C).real
            assert math.isfinite(s.toa) and s.toa > 0


def test_modes_share_positions(generated, smoke_cfg):
    s = pipeline.open_dataset(smoke_cfg, generated / "static_seed0")
    d = pipeline.open_dataset(smoke_cfg, generated / "dynamic_seed0")
    assert np.array_equal(s.positions, d.positions) and np.array_equal(s.validation, d.validation)
    assert d.los_fraction <= s.los_fraction
    assert np.all(d.los <= s.los)


def test_dataset_roundtrip(generated, smoke_cfg, tmp_path):
    ds = pipeline.open_dataset(smoke_cfg, generated / "static_seed0")
    pipeline.save_dataset(ds, tmp_path / "d.bin")
    back = pipeline.load_dataset(tmp_path / "d.bin")
    assert (tmp_path / "d.bin").read_bytes() == (generated / "static_seed0" / "dataset.bin").read_bytes()
    assert all(np.array_equal(a.covariance, b.covariance) for a, b in zip(ds.samples, back.samples))
    (tmp_path / "bad.bin").write_bytes(b"CLDSET01" + (tmp_path / "d.bin").read_bytes()[8:-5])
    with pytest.raises(DataError):
        pipeline.load_dataset(tmp_path / "bad.bin")


def test_config_mismatch_detected(generated, smoke_cfg):
    other = smoke_cfg.replace("channel", snr_db=10.0)
    with pytest.raises(DataError):
        pipeline.open_dataset(other, generated / "static_seed0")


def test_chart_and_evaluate(generated, smoke_cfg):
    run = generated / "static_seed0"
    chart, trace, split = pipeline.cmd_chart(smoke_cfg, run, 25.0)
    assert trace[-1] < trace[0]
    reps = pipeline.cmd_evaluate(smoke_cfg, run, (25.0,))
    rep = reps[25.0]
    assert rep.stats.n == int(pipeline.open_dataset(smoke_cfg, run).validation.sum())
    assert 0 <= rep.tw <= 1 and 0 <= rep.ct <= 1
    assert (run / "table.csv").read_text().startswith("scenario,supervision,CT,KS,TW")
    # a chart from another charting config is refused
    with pytest.raises(DataError):
        pipeline.load_chart_positions(smoke_cfg.replace("charting", n_iter=10), run, 25.0,
                                      pipeline.open_dataset(smoke_cfg, run))


def test_dissimilarity_cache(generated, smoke_cfg):
    run = generated / "dynamic_seed0"
    D1 = pipeline.dissimilarities(smoke_cfg, run)
    cached = list(run.glob("dissimilarity_*.bin"))
    assert len(cached) == 1
    D2 = pipeline.dissimilarities(smoke_cfg, run)
    assert np.array_equal(D1, D2)


def test_baselines_run(generated, smoke_cfg):
    reports, counts = pipeline.cmd_baseline(smoke_cfg, generated / "static_seed0")
    assert set(reports) == {"fingerprint", "music"}
    n_val = reports["fingerprint"].stats.n
    assert reports["music"].stats.n + counts["music"] == n_val


def test_output_lock(tmp_path):
    with pipeline.OutputLock(tmp_path):
        with pytest.raises(DataError):
            with pipeline.OutputLock(tmp_path):
                pass
    with pipeline.OutputLock(tmp_path):
        pass
