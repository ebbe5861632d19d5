"""Comparison localizers: RSSI grid fingerprinting and single-BS MUSIC ranging."""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from .channel import C_LIGHT, ArrayConfig, steering_vector
from .errors import ConfigError, DomainError


def rssi_of(sample) -> float:
    """Received power proxy in dB: mean diagonal of the covariance."""
    C = np.asarray(getattr(sample, "covariance", sample))
    return 10.0 * math.log10(np.trace(C).real / C.shape[0])


@dataclass(frozen=True)
class FingerprintDb:
    origin: np.ndarray  # (2,)
    cell_size: float
    cells: np.ndarray  # (M, 2) integer cell coordinates, sorted by (row, column)
    mean_rssi: np.ndarray  # (M,)
    counts: np.ndarray  # (M,)

    def centers(self) -> np.ndarray:
        return self.origin + (self.cells + 0.5) * self.cell_size

    @classmethod
    def from_measurements(cls, positions, rssi, cell_size: float = 4.0, origin=(0.0, 0.0)) -> FingerprintDb:
        if cell_size <= 0:
            raise ConfigError("cell size must be positive")
        positions = np.asarray(positions, dtype=float)[:, :2]
        rssi = np.asarray(rssi, dtype=float)
        if len(positions) == 0:
            raise DomainError("empty training set")
        origin = np.asarray(origin, dtype=float)
        cells = np.floor((positions - origin) / cell_size).astype(np.int64)
        # sort key: row (y) first, then column (x)
        uniq, inv = np.unique(cells[:, ::-1], axis=0, return_inverse=True)
        inv = inv.ravel()
        counts = np.bincount(inv)
        sums = np.bincount(inv, weights=rssi)
        return cls(origin, float(cell_size), uniq[:, ::-1].copy(), sums / counts, counts)


def fingerprint_train(samples, cell_size: float = 4.0, origin=(0.0, 0.0)) -> FingerprintDb:
    samples = list(samples)
    if not samples:
        raise DomainError("empty training set")
    pos = [s.position for s in samples]
    return FingerprintDb.from_measurements(pos, [rssi_of(s) for s in samples], cell_size, origin)


def fingerprint_locate(db: FingerprintDb, sample, k_f: int = 3) -> np.ndarray:
    """Weighted center of the ``k_f`` cells whose mean RSSI is closest.

    Weights are inverse RSSI gaps; an exact match returns its own cell
    center. Ties go to the lowest cell index.
    """
    if len(db.mean_rssi) == 0:
        raise DomainError("empty fingerprint database")
    q = sample if np.isscalar(sample) else rssi_of(sample)
    gap = np.abs(db.mean_rssi - q)
    order = np.lexsort((np.arange(len(gap)), gap))[:max(1, k_f)]
    centers = db.centers()
    if gap[order[0]] == 0 or len(order) == 1:
        return centers[order[0]].copy()
    w = 1.0 / gap[order]
    return (w[:, None] * centers[order]).sum(axis=0) / w.sum()


@dataclass(frozen=True)
class MusicConfig:
    n_sources: int = 1
    az_step: float = math.radians(0.5)
    el_step: float = math.radians(0.5)
    delay_step: float = 5e-9
    az_span: tuple[float, float] = (-math.pi / 2, math.pi / 2)  # relative to boresight
    el_span: tuple[float, float] = (-math.pi / 2, math.pi / 6)
    peak_margin_db: float = 3.0

    def __post_init__(self):
        if self.n_sources < 1:
            raise ConfigError("need at least one source")
        if min(self.az_step, self.el_step, self.delay_step) <= 0:
            raise ConfigError("grid steps must be positive")

    def az_grid(self, array: ArrayConfig) -> np.ndarray:
        lo, hi = self.az_span
        k = np.arange(math.ceil(lo / self.az_step - 1e-9), math.floor(hi / self.az_step + 1e-9) + 1)
        return array.boresight + k * self.az_step

    def el_grid(self) -> np.ndarray:
        lo, hi = self.el_span
        k = np.arange(math.ceil(lo / self.el_step - 1e-9), math.floor(hi / self.el_step + 1e-9) + 1)
        return k * self.el_step


def _signal_subspace(C: np.ndarray, n_sources: int) -> np.ndarray:
    """The ``n_sources`` strongest eigenvectors of the trace-normalized ``C``."""
    C = np.asarray(C)
    if not n_sources < C.shape[0]:
        raise ConfigError(f"n_sources={n_sources} must be below array size {C.shape[0]}")
    tr = np.trace(C).real
    if tr <= 0:
        raise DomainError("covariance has no power")
    _, u = np.linalg.eigh(0.5 * (C + C.conj().T) / tr)
    return u[:, C.shape[0] - n_sources:]


def _pseudo_spectrum(Es: np.ndarray, a_conj: np.ndarray) -> np.ndarray:
    # the eigenvectors form a unitary basis, so the noise-subspace projection
    # is ||a||^2 minus the (much smaller) signal-subspace one
    n = a_conj.shape[-1]
    den = n - np.sum(np.abs(a_conj @ Es) ** 2, axis=-1)
    return 1.0 / np.maximum(den, 1e-12 * n)


def music_spectrum(C, cfg: MusicConfig, array: ArrayConfig, elevation: float = 0.0):
    """Azimuth pseudo-spectrum at a fixed elevation; returns ``(grid, spectrum)``.

    ``1 / ||E_n^H a(az)||^2`` with ``E_n`` the weakest ``N - n_sources``
    eigenvectors of ``C``.
    """
    Es = _signal_subspace(C, cfg.n_sources)
    az = cfg.az_grid(array)
    a = steering_vector(array, np.column_stack([az, np.full_like(az, elevation)]))
    return az, _pseudo_spectrum(Es, a.conj())


@lru_cache(maxsize=8)
def _steering_grid(cfg: MusicConfig, array: ArrayConfig):
    az, el = cfg.az_grid(array), cfg.el_grid()
    grid = np.stack(np.meshgrid(az, el, indexing="ij"), axis=-1)
    a_conj = steering_vector(array, grid).conj()
    a_conj.setflags(write=False)
    return az, el, a_conj


def music_spectrum_2d(C, cfg: MusicConfig, array: ArrayConfig):
    """Pseudo-spectrum on the azimuth x elevation grid, shape ``(n_az, n_el)``."""
    az, el, a_conj = _steering_grid(cfg, array)
    return az, el, _pseudo_spectrum(_signal_subspace(C, cfg.n_sources), a_conj)


def music_locate(sample, cfg: MusicConfig, array: ArrayConfig, bs_position, delay_estimate: float):
    """Project the strongest MUSIC direction out to range ``c * delay``.

    Returns ``None`` when the spectrum has no peak ``peak_margin_db`` above
    its median (the sample is reported as unlocalizable).
    """
    C = np.asarray(getattr(sample, "covariance", sample))
    az, el, spec = music_spectrum_2d(C, cfg, array)
    db = 10 * np.log10(spec)
    i, j = np.unravel_index(np.argmax(db), db.shape)
    if db[i, j] < np.median(db) + cfg.peak_margin_db:
        return None
    horizontal = C_LIGHT * delay_estimate * math.cos(el[j])
    bs = np.asarray(bs_position, dtype=float)
    return bs[:2] + horizontal * np.array([math.cos(az[i]), math.sin(az[i])])
