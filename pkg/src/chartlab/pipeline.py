"""End-to-end stages: dataset generation, charting, evaluation, baselines, sweeps.

Each stage writes into an output directory guarded by a lock file and
stamps its files with the hash of the config that produced them; later
stages refuse inputs whose hash does not match.
"""

from __future__ import annotations

import dataclasses
import hashlib
import json
import logging
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from filelock import FileLock, Timeout

from . import baselines, charting, evaluate, features
from .channel import CsiSample, csi_covariance, estimate_channel, synthesize_taps, taps_to_frequency
from .config import ExperimentConfig, to_ini
from .errors import DataError, DomainError
from .raytrace import Blocker, trace_paths
from .scene import Scene, generate_city, simulate_traffic, ve_antenna_position

log = logging.getLogger(__name__)


# -- dataset -------------------------------------------------------------------


@dataclass
class Dataset:
    samples: list[CsiSample]
    config_hash: str
    seed: int
    mode: str
    scene: Scene | None = None

    def __len__(self) -> int:
        return len(self.samples)

    @property
    def positions(self) -> np.ndarray:
        return np.array([s.position for s in self.samples], dtype=float)

    @property
    def los(self) -> np.ndarray:
        return np.array([s.los for s in self.samples], dtype=bool)

    @property
    def validation(self) -> np.ndarray:
        return np.array([s.validation for s in self.samples], dtype=bool)

    @property
    def vehicle_ids(self) -> np.ndarray:
        return np.array([s.vehicle_id for s in self.samples], dtype=np.int64)

    @property
    def los_fraction(self) -> float:
        return float(self.los.mean()) if self.samples else math.nan


def _select_candidates(scene, snaps, cfg: ExperimentConfig, seed: int):
    """Uniformly draw ``n_samples`` (snapshot, vehicle) pairs that the BS can hear.

    Reachability is judged in static mode (at least one traced path) so that
    static and dynamic datasets share the same positions. Returns
    ``(t, k, static_paths)`` triples.
    """
    n = cfg.experiment.n_samples
    tcfg = cfg.trace_config("static")
    rx = scene.bs.position
    pool = [(t, k) for t in range(len(snaps)) for k in range(len(snaps[t].vehicles))]
    order = np.random.default_rng([seed, 1]).permutation(len(pool))
    chosen = []
    for idx in order:
        t, k = pool[idx]
        v = snaps[t].vehicles[k]
        paths = trace_paths(scene, ve_antenna_position(v), _velocity(v), rx, None, tcfg)
        if paths:
            chosen.append((t, k, paths))
            if len(chosen) == n:
                return chosen
    raise DataError(
        f"only {len(chosen)} of {len(pool)} vehicle positions reach the BS; "
        f"need {n} (raise traffic.n_vehicles or traffic.n_steps)"
    )


def _velocity(v) -> tuple[float, float, float]:
    return (v.speed * math.cos(v.heading), v.speed * math.sin(v.heading), 0.0)


def assign_validation(vehicle_ids, fraction: float, seed: int, split: str = "trajectory") -> np.ndarray:
    """Validation mask holding ``round(fraction * N)`` points at most.

    With ``split='trajectory'`` whole vehicles are assigned, visited in
    random order and skipped when they would overshoot the target, so no
    trajectory is shared between training and validation.
    """
    vid = np.asarray(vehicle_ids)
    n = len(vid)
    target = int(round(fraction * n))
    rng = np.random.default_rng([seed, 2])
    mask = np.zeros(n, dtype=bool)
    if split == "point":
        mask[rng.permutation(n)[:target]] = True
        return mask
    uniq, counts = np.unique(vid, return_counts=True)
    total = 0
    for j in rng.permutation(len(uniq)):
        if total + counts[j] <= target:
            mask[vid == uniq[j]] = True
            total += counts[j]
        if total == target:
            break
    return mask


def labeled_indices(validation_mask, supervision: float, seed: int) -> np.ndarray:
    """Training points with known positions, ``round(supervision% * N)`` of them.

    Labels are a prefix of one seeded permutation of the training points, so
    the labeled sets are nested across supervision levels.
    """
    val = np.asarray(validation_mask, dtype=bool)
    n = len(val)
    train = np.flatnonzero(~val)
    L = int(round(supervision / 100.0 * n))
    if L > len(train):
        raise DataError(f"supervision {supervision}% needs {L} labels, only {len(train)} training points")
    perm = np.random.default_rng([seed, 3]).permutation(len(train))
    return np.sort(train[perm[:L]])


def generate_datasets(cfg: ExperimentConfig, seed: int, modes=("static", "dynamic")) -> dict[str, Dataset]:
    """Scene, traffic, ray tracing and channel estimation for one seed.

    All modes share the scene, the traffic and the sampled (snapshot,
    vehicle) pairs; dynamic mode retraces them with every vehicle of the
    snapshot as a blocker.
    """
    scene = generate_city(seed, cfg.scenario_params())
    tr = cfg.traffic
    snaps = simulate_traffic(scene, seed, tr.n_steps, tr.dt, tr.n_vehicles)
    chosen = _select_candidates(scene, snaps, cfg, seed)
    val = assign_validation([snaps[t].vehicles[k].vehicle_id for t, k, _ in chosen],
                            cfg.experiment.validation_fraction, seed, cfg.experiment.split)
    return {m: _channels(cfg, seed, m, scene, snaps, chosen, val) for m in modes}


def generate_dataset(cfg: ExperimentConfig, seed: int, mode: str) -> Dataset:
    return generate_datasets(cfg, seed, (mode,))[mode]


def _channels(cfg, seed, mode, scene, snaps, chosen, val) -> Dataset:
    ccfg = cfg.channel_config()
    pilot = cfg.pilot_config()
    noise = cfg.noise_model()
    tcfg = cfg.trace_config(mode)
    bs_arr = cfg.bs_array()
    rx = scene.bs.position
    guard = ccfg.pulse_support * ccfg.T
    blockers = {}

    samples = []
    for i, (t, k, static_paths) in enumerate(chosen):
        snap = snaps[t]
        v = snap.vehicles[k]
        tx = ve_antenna_position(v)
        if mode == "dynamic":
            if t not in blockers:
                blockers[t] = [Blocker.from_vehicle(u) for u in snap.vehicles]
            paths = trace_paths(scene, tx, _velocity(v), rx, blockers[t], tcfg)
        else:
            paths = static_paths
        # the receiver locks onto the first arrival; shift delays so it sits
        # ``guard`` into the tap window
        shift = paths[0].delay - guard if paths else 0.0
        shifted = [dataclasses.replace(p, delay=p.delay - shift) for p in paths]
        sub_seed = seed * 1_000_003 + i
        taps = synthesize_taps(shifted, cfg.ve_array(v.heading), bs_arr, t * cfg.traffic.dt, ccfg,
                               wssus_seed=sub_seed if cfg.channel.wssus else None)
        est = estimate_channel(taps, pilot, noise, sub_seed, ccfg)
        C = csi_covariance(taps_to_frequency(est, ccfg))
        # coarse time of arrival from the strongest estimated tap
        w = int(np.argmax(np.sum(np.abs(est.h) ** 2, axis=(1, 2))))
        samples.append(CsiSample(
            covariance=C, position=(float(tx[0]), float(tx[1])), height=float(tx[2]),
            vehicle_id=v.vehicle_id, t=t, los=any(p.is_los for p in paths), toa=shift + w * ccfg.T,
            validation=bool(val[i]), extra={"n_paths": len(paths)},
        ))
    return Dataset(samples, cfg.dataset_hash(seed, mode), seed, mode, scene)


# -- dataset files ---------------------------------------------------------------
# Binary layout (little endian):
#   magic b"CLDSET01", uint64 N, uint32 N_R, uint32 L (labeled count),
#   64 bytes ASCII config hash, then N records of RECORD_DTYPE.

_DSET_MAGIC = b"CLDSET01"


def _record_dtype(n_rx: int) -> np.dtype:
    return np.dtype([
        ("covariance", "<c16", (n_rx, n_rx)),
        ("position", "<f8", (2,)),
        ("height", "<f8"),
        ("toa", "<f8"),
        ("vehicle_id", "<i8"),
        ("t", "<i8"),
        ("los", "u1"),
        ("labeled", "u1"),
        ("validation", "u1"),
    ])


def save_dataset(ds: Dataset, path) -> None:
    n = len(ds)
    n_rx = ds.samples[0].covariance.shape[0] if n else 0
    rec = np.zeros(n, dtype=_record_dtype(n_rx))
    for i, s in enumerate(ds.samples):
        rec[i] = (s.covariance, s.position, s.height, s.toa, s.vehicle_id, s.t, s.los, s.labeled, s.validation)
    labeled = sum(s.labeled for s in ds.samples)
    with open(path, "wb") as fh:
        fh.write(_DSET_MAGIC)
        fh.write(np.array([n], "<u8").tobytes() + np.array([n_rx, labeled], "<u4").tobytes())
        fh.write(ds.config_hash.encode().ljust(64, b"\0")[:64])
        fh.write(rec.tobytes())


def load_dataset(path, seed: int = -1, mode: str = "") -> Dataset:
    raw = Path(path).read_bytes()
    if raw[:8] != _DSET_MAGIC:
        raise DataError(f"{path}: not a dataset file")
    n = int(np.frombuffer(raw, "<u8", 1, 8)[0])
    n_rx, _ = (int(x) for x in np.frombuffer(raw, "<u4", 2, 16))
    chash = raw[24:88].rstrip(b"\0").decode()
    dt = _record_dtype(n_rx)
    if len(raw) - 88 != n * dt.itemsize:
        raise DataError(f"{path}: expected {n} records")
    rec = np.frombuffer(raw, dt, n, 88)
    samples = [
        CsiSample(r["covariance"].copy(), (float(r["position"][0]), float(r["position"][1])),
                  float(r["height"]), int(r["vehicle_id"]), int(r["t"]), bool(r["los"]),
                  bool(r["labeled"]), bool(r["validation"]), float(r["toa"]))
        for r in rec
    ]
    return Dataset(samples, chash, seed, mode)


def export_dataset_csv(ds: Dataset, path) -> None:
    lines = ["index,vehicle_id,t,x,y,height,los,validation,toa_ns,rssi_db"]
    for i, s in enumerate(ds.samples):
        lines.append(
            f"{i},{s.vehicle_id},{s.t},{s.position[0]:.6f},{s.position[1]:.6f},{s.height:.3f},"
            f"{int(s.los)},{int(s.validation)},{s.toa * 1e9:.3f},{baselines.rssi_of(s):.6f}"
        )
    Path(path).write_text("\n".join(lines) + "\n")


def file_sha256(path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


# -- run directories -------------------------------------------------------------

MANIFEST = "manifest.json"


def run_name(mode: str, seed: int) -> str:
    return f"{mode}_seed{seed}"


def _write_json(path, obj) -> None:
    Path(path).write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n")


def read_manifest(run_dir) -> dict:
    p = Path(run_dir) / MANIFEST
    try:
        return json.loads(p.read_text())
    except FileNotFoundError:
        raise DataError(f"{run_dir}: no {MANIFEST}; run 'generate' first") from None
    except json.JSONDecodeError as exc:
        raise DataError(f"{p}: corrupt manifest ({exc})") from None


def _update_manifest(run_dir, key: str, entry: dict) -> None:
    m = read_manifest(run_dir)
    m.setdefault(key, {}).update(entry)
    _write_json(Path(run_dir) / MANIFEST, m)


class OutputLock:
    """Exclusive writer lock on an output directory."""

    def __init__(self, out_dir):
        self.out = Path(out_dir)
        try:
            self.out.mkdir(parents=True, exist_ok=True)
        except OSError as exc:
            raise DataError(f"cannot create output directory {self.out}: {exc}") from None
        self._lock = FileLock(str(self.out / ".lock"))

    def __enter__(self):
        try:
            self._lock.acquire(timeout=0)
        except Timeout:
            raise DataError(f"{self.out} is locked by another writer") from None
        return self

    def __exit__(self, *exc):
        self._lock.release()


def write_dataset(ds: Dataset, run_dir) -> dict:
    run_dir = Path(run_dir)
    run_dir.mkdir(parents=True, exist_ok=True)
    save_dataset(ds, run_dir / "dataset.bin")
    export_dataset_csv(ds, run_dir / "dataset.csv")
    val = ds.validation
    vid = ds.vehicle_ids
    manifest = {
        "kind": "dataset",
        "config_hash": ds.config_hash,
        "seed": ds.seed,
        "mode": ds.mode,
        "n_records": len(ds),
        "n_validation": int(val.sum()),
        "los_fraction": round(ds.los_fraction, 12),
        "validation_vehicles": sorted(int(v) for v in set(vid[val])),
        "training_vehicles": sorted(int(v) for v in set(vid[~val])),
        "files": {
            "dataset.bin": file_sha256(run_dir / "dataset.bin"),
            "dataset.csv": file_sha256(run_dir / "dataset.csv"),
        },
    }
    _write_json(run_dir / MANIFEST, manifest)
    return manifest


def open_dataset(cfg: ExperimentConfig, run_dir) -> Dataset:
    """Load a run's dataset after checking it was produced by ``cfg``."""
    m = read_manifest(run_dir)
    expected = cfg.dataset_hash(m["seed"], m["mode"])
    if m.get("config_hash") != expected:
        raise DataError(
            f"{run_dir}: dataset was generated with config hash {m.get('config_hash', '?')[:12]}, "
            f"the current config gives {expected[:12]}; regenerate it"
        )
    path = Path(run_dir) / "dataset.bin"
    if not path.exists() or file_sha256(path) != m["files"]["dataset.bin"]:
        raise DataError(f"{path}: missing or modified since generation")
    ds = load_dataset(path, m["seed"], m["mode"])
    if ds.config_hash != expected or len(ds) != m["n_records"]:
        raise DataError(f"{path}: header does not match the manifest")
    return ds


# -- stages ------------------------------------------------------------------------


def cmd_generate(cfg: ExperimentConfig, out_dir, seeds=None, modes=None) -> list[dict]:
    """Generate and persist the datasets of every (seed, mode) pair."""
    seeds = cfg.experiment.seeds if seeds is None else seeds
    modes = cfg.experiment.modes if modes is None else modes
    manifests = []
    with OutputLock(out_dir):
        Path(out_dir, "config.ini").write_text(to_ini(cfg))
        for seed in seeds:
            for mode, ds in generate_datasets(cfg, seed, modes).items():
                m = write_dataset(ds, Path(out_dir) / run_name(mode, seed))
                log.info("%s: %d records, LoS fraction %.3f", run_name(mode, seed), len(ds), ds.los_fraction)
                manifests.append(m)
    return manifests


def dissimilarities(cfg: ExperimentConfig, run_dir, ds: Dataset | None = None) -> np.ndarray:
    """Log-Euclidean dissimilarity matrix, cached on disk per (dataset, eig floor)."""
    run_dir = Path(run_dir)
    m = read_manifest(run_dir)
    key = f"{m['files']['dataset.bin']}:{cfg.features.eig_floor!r}"
    path = run_dir / f"dissimilarity_{hashlib.sha256(key.encode()).hexdigest()[:16]}.bin"
    if path.exists():
        D, tag = features.load_dissimilarity(path)
        if tag.decode() != key:
            raise DataError(f"{path}: cache was built for {tag.decode()!r}, expected {key!r}; delete it")
        log.info("dissimilarity cache hit: %s", path.name)
        return D
    ds = ds if ds is not None else open_dataset(cfg, run_dir)
    D = features.dissimilarity_matrix(ds.samples, cfg.features.eig_floor)
    features.save_dissimilarity(D, path, key.encode())
    return D


def _chart_hash(cfg: ExperimentConfig, dataset_hash: str, supervision: float) -> str:
    key = dataset_hash + to_ini(cfg, ("features", "charting")) + f"supervision={supervision!r}\n"
    return hashlib.sha256(key.encode()).hexdigest()


def _sup_tag(supervision: float) -> str:
    return f"sup{supervision:g}"


def cmd_chart(cfg: ExperimentConfig, run_dir, supervision: float, P=None, ds: Dataset | None = None):
    """Fit and persist the chart of one run at one supervision level.

    Returns ``(chart, trace, split)``. ``P`` may carry the joint
    similarities from an earlier call on the same dataset.
    """
    run_dir = Path(run_dir)
    ds = ds if ds is not None else open_dataset(cfg, run_dir)
    D = dissimilarities(cfg, run_dir, ds)
    lab = labeled_indices(ds.validation, supervision, ds.seed)
    pos = ds.positions
    split = charting.LabeledSplit(len(ds), lab, pos[lab])
    ccfg = cfg.charting_config()
    if ccfg.anchor_mode == "none":
        split = charting.LabeledSplit(len(ds), lab[:0], pos[:0])
    chart, trace = charting.fit(D, split, ccfg, ds.seed, P=P)
    tag = _sup_tag(supervision)
    charting.save_chart(chart, run_dir / f"chart_{tag}.csv")
    charting.save_trace(trace, run_dir / f"trace_{tag}.csv")
    _update_manifest(run_dir, "charts", {tag: {
        "config_hash": _chart_hash(cfg, ds.config_hash, supervision),
        "dataset_hash": ds.config_hash,
        "supervision": supervision,
        "n_labeled": int(len(lab)),
        "files": {f"chart_{tag}.csv": file_sha256(run_dir / f"chart_{tag}.csv"),
                  f"trace_{tag}.csv": file_sha256(run_dir / f"trace_{tag}.csv")},
    }})
    return chart, trace, split


def joint_similarities(cfg: ExperimentConfig, D: np.ndarray) -> np.ndarray:
    cc = cfg.charting_config()
    cond, _ = charting.calibrate_conditionals(D, cc.perplexity, cc.perplexity_tol)
    return charting.symmetrize(cond)


def load_chart_positions(cfg: ExperimentConfig, run_dir, supervision: float, ds: Dataset):
    """Chart coordinates and meter estimates from a persisted chart, hash-checked."""
    tag = _sup_tag(supervision)
    entry = read_manifest(run_dir).get("charts", {}).get(tag)
    if entry is None:
        raise DataError(f"{run_dir}: no chart at {supervision:g}% supervision; run 'chart' first")
    if entry["config_hash"] != _chart_hash(cfg, ds.config_hash, supervision):
        raise DataError(f"{run_dir}: chart {tag} was produced by a different config or dataset")
    path = Path(run_dir) / f"chart_{tag}.csv"
    if file_sha256(path) != entry["files"][path.name]:
        raise DataError(f"{path}: modified since it was written")
    arr = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
    if len(arr) != len(ds):
        raise DataError(f"{path}: {len(arr)} rows for {len(ds)} samples")
    return arr[:, 2:4], arr[:, 4:6]


def evaluate_chart(cfg: ExperimentConfig, ds: Dataset, z, estimates) -> evaluate.MetricsReport:
    """Chart quality and localization error on the validation points."""
    val = ds.validation
    truth = ds.positions[val]
    k = cfg.evaluate.k or None
    return evaluate.chart_report(truth, np.asarray(z)[val], np.asarray(estimates)[val], ds.los[val], k)


def cmd_evaluate(cfg: ExperimentConfig, run_dir, supervisions=None) -> dict[float, evaluate.MetricsReport]:
    """Reports for the persisted charts of one run; writes its result CSVs."""
    run_dir = Path(run_dir)
    ds = open_dataset(cfg, run_dir)
    sups = cfg.experiment.supervision if supervisions is None else supervisions
    reports = {}
    for sup in sups:
        z, est = load_chart_positions(cfg, run_dir, sup, ds)
        reports[sup] = evaluate_chart(cfg, ds, z, est)
    write_reports(run_dir, run_name(ds.mode, ds.seed), reports, cfg.hash())
    return reports


def _write_csv(path, header: str, rows) -> None:
    Path(path).write_text("\n".join([header, *rows]) + "\n")


def write_reports(out_dir, scenario: str, reports: dict, config_hash: str, baseline_reports=None) -> None:
    out_dir = Path(out_dir)
    table, ecdf, quart = [], [], []
    for sup, rep in reports.items():
        table.append(evaluate.table_row(scenario, sup, rep) + f",{config_hash}")
        ecdf += evaluate.ecdf_rows(scenario, sup, "chart", rep)
        quart += evaluate.quartile_rows(scenario, sup, "chart", rep)
    for method, rep in (baseline_reports or {}).items():
        ecdf += evaluate.ecdf_rows(scenario, None, method, rep)
        quart += evaluate.quartile_rows(scenario, None, method, rep)
    _write_csv(out_dir / "table.csv", evaluate.TABLE_HEADER + ",config_hash", table)
    _write_csv(out_dir / "ecdf.csv", evaluate.ECDF_HEADER, ecdf)
    _write_csv(out_dir / "quartiles.csv", evaluate.QUARTILE_HEADER, quart)


def run_baselines(cfg: ExperimentConfig, ds: Dataset, bs_position) -> tuple[dict, dict]:
    """Fingerprinting and MUSIC on the validation points.

    The fingerprint database is built from the training points. Returns
    ``(reports, unlocalizable counts)``; MUSIC errors cover localizable
    samples only.
    """
    val = ds.validation
    samples = ds.samples
    bcfg = cfg.baselines
    train = [s for s, v in zip(samples, val) if not v]
    test = [s for s, v in zip(samples, val) if v]
    truth = np.array([s.position for s in test])
    los = np.array([s.los for s in test])

    db = baselines.fingerprint_train(train, bcfg.cell_size)
    fp = np.array([baselines.fingerprint_locate(db, s, bcfg.k_f) for s in test])
    reports = {"fingerprint": evaluate.localization_report(truth, fp, los)}

    mcfg = cfg.music_config()
    arr = cfg.bs_array()
    est, keep = [], []
    for i, s in enumerate(test):
        try:
            p = baselines.music_locate(s, mcfg, arr, bs_position, s.toa)
        except DomainError:  # no received power at all
            p = None
        if p is not None:
            est.append(p)
            keep.append(i)
    keep = np.array(keep, dtype=int)
    counts = {"fingerprint": 0, "music": len(test) - len(keep)}
    if len(keep):
        reports["music"] = evaluate.localization_report(truth[keep], np.array(est), los[keep])
    return reports, counts


def cmd_baseline(cfg: ExperimentConfig, run_dir) -> tuple[dict, dict]:
    """Baseline reports for one run, written next to its chart results."""
    run_dir = Path(run_dir)
    ds = open_dataset(cfg, run_dir)
    bs = _bs_position(cfg, ds.seed)
    reports, counts = run_baselines(cfg, ds, bs)
    _write_baseline_csvs(run_dir, run_name(ds.mode, ds.seed), reports, counts)
    return reports, counts


def _bs_position(cfg: ExperimentConfig, seed: int) -> np.ndarray:
    return np.asarray(generate_city(seed, cfg.scenario_params()).bs.position, dtype=float)


BASELINE_HEADER = "scenario,method,n_eval,n_unlocalizable,loc_error_mean,loc_error_median,loc_error_p90,los_mean,nlos_mean"


def _baseline_rows(scenario: str, reports: dict, counts: dict) -> list[str]:
    rows = []
    for method in ("fingerprint", "music"):
        rep = reports.get(method)
        if rep is None:
            rows.append(f"{scenario},{method},0,{counts.get(method, 0)},nan,nan,nan,nan,nan")
            continue
        s = rep.stats
        bc = rep.by_condition
        rows.append(
            f"{scenario},{method},{s.n},{counts.get(method, 0)},{s.mean:.6f},{s.median:.6f},{s.p90:.6f},"
            f"{bc['los'].mean:.6f},{bc['nlos'].mean:.6f}"
        )
    return rows


def _write_baseline_csvs(out_dir, scenario, reports, counts) -> None:
    out_dir = Path(out_dir)
    _write_csv(out_dir / "baselines.csv", BASELINE_HEADER, _baseline_rows(scenario, reports, counts))
    ecdf, quart = [], []
    for method, rep in reports.items():
        ecdf += evaluate.ecdf_rows(scenario, None, method, rep)
        quart += evaluate.quartile_rows(scenario, None, method, rep)
    _write_csv(out_dir / "baselines_ecdf.csv", evaluate.ECDF_HEADER, ecdf)
    _write_csv(out_dir / "baselines_quartiles.csv", evaluate.QUARTILE_HEADER, quart)


SUMMARY_HEADER = "mode,supervision,n_seeds,loc_error_mean,los_error_mean,nlos_error_mean,CT,KS,TW"


@dataclass
class SweepResult:
    reports: dict  # (mode, seed, supervision) -> MetricsReport
    baselines: dict  # (mode, seed) -> (reports, counts)
    los_fraction: dict  # (mode, seed) -> float

    def mean_error(self, mode: str, supervision: float) -> float:
        vals = [r.stats.mean for (m, _, s), r in self.reports.items() if m == mode and s == supervision]
        return float(np.mean(vals))


def cmd_sweep(cfg: ExperimentConfig, out_dir) -> SweepResult:
    """generate -> chart -> evaluate (+ baselines) for every seed, mode and supervision level."""
    out = Path(out_dir)
    ex = cfg.experiment
    res = SweepResult({}, {}, {})
    table, ecdf, quart, base_rows = [], [], [], []
    chash = cfg.hash()
    with OutputLock(out):
        (out / "config.ini").write_text(to_ini(cfg))
        for seed in ex.seeds:
            datasets = generate_datasets(cfg, seed, ex.modes)
            for mode, ds in datasets.items():
                name = run_name(mode, seed)
                run_dir = out / name
                write_dataset(ds, run_dir)
                res.los_fraction[(mode, seed)] = ds.los_fraction
                P = joint_similarities(cfg, dissimilarities(cfg, run_dir, ds))
                reports = {}
                for sup in ex.supervision:
                    chart, _, _ = cmd_chart(cfg, run_dir, sup, P=P, ds=ds)
                    reports[sup] = rep = evaluate_chart(cfg, ds, chart.z, chart.positions())
                    res.reports[(mode, seed, sup)] = rep
                    log.info("%s %g%%: mean error %.2f m, CT %.3f TW %.3f KS %.3f",
                             name, sup, rep.stats.mean, rep.ct, rep.tw, rep.ks)
                base = None
                if ex.run_baselines:
                    base, counts = run_baselines(cfg, ds, ds.scene.bs.position)
                    res.baselines[(mode, seed)] = (base, counts)
                    _write_baseline_csvs(run_dir, name, base, counts)
                    base_rows += _baseline_rows(name, base, counts)
                write_reports(run_dir, name, reports, chash, base)
                for sup, rep in reports.items():
                    table.append(evaluate.table_row(name, sup, rep) + f",{chash}")
                    ecdf += evaluate.ecdf_rows(name, sup, "chart", rep)
                    quart += evaluate.quartile_rows(name, sup, "chart", rep)
                for method, rep in (base or {}).items():
                    ecdf += evaluate.ecdf_rows(name, None, method, rep)
                    quart += evaluate.quartile_rows(name, None, method, rep)

        _write_csv(out / "table.csv", evaluate.TABLE_HEADER + ",config_hash", table)
        _write_csv(out / "ecdf.csv", evaluate.ECDF_HEADER, ecdf)
        _write_csv(out / "quartiles.csv", evaluate.QUARTILE_HEADER, quart)
        if ex.run_baselines:
            _write_csv(out / "baselines.csv", BASELINE_HEADER, base_rows)
        _write_csv(out / "summary.csv", SUMMARY_HEADER, _summary_rows(res, ex))
    return res


def _summary_rows(res: SweepResult, ex) -> list[str]:
    rows = []
    for mode in ex.modes:
        for sup in ex.supervision:
            reps = [res.reports[(mode, s, sup)] for s in ex.seeds]

            def avg(f):
                return float(np.mean([f(r) for r in reps]))

            rows.append(
                f"{mode},{sup:g},{len(reps)},{avg(lambda r: r.stats.mean):.6f},"
                f"{avg(lambda r: r.by_condition['los'].mean):.6f},{avg(lambda r: r.by_condition['nlos'].mean):.6f},"
                f"{avg(lambda r: r.ct):.6f},{avg(lambda r: r.ks):.6f},{avg(lambda r: r.tw):.6f}"
            )
    return rows
