"""MIMO tap synthesis, pilot-based LS estimation and covariance CSI.

Tap tensors are stored as ``(W, N_R, N_T)`` complex arrays; frequency
responses as ``(N_c, N_R, N_T)``. Array elements are indexed row-major,
``index = m * cols + n`` with ``m`` the vertical (row) index.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, DomainError

C_LIGHT = 299_792_458.0


@dataclass(frozen=True)
class ArrayConfig:
    """Uniform planar array, vertical rows by horizontal columns.

    ``boresight`` is the azimuth (global frame) the array faces.
    """

    rows: int
    cols: int
    spacing: float = 0.5
    boresight: float = 0.0

    def __post_init__(self):
        if self.rows < 1 or self.cols < 1 or self.spacing <= 0:
            raise ConfigError(f"invalid array {self.rows}x{self.cols}, spacing {self.spacing}")

    @property
    def size(self) -> int:
        return self.rows * self.cols

    def rotated(self, boresight: float) -> ArrayConfig:
        return ArrayConfig(self.rows, self.cols, self.spacing, boresight)


@dataclass(frozen=True)
class ChannelConfig:
    bandwidth: float = 200e6
    f0: float = 28e9
    tau_max: float = 2e-6
    n_subcarriers: int = 512
    rolloff: float = 0.25
    pulse_support: int = 8

    def __post_init__(self):
        if self.bandwidth <= 0 or self.f0 <= 0 or self.tau_max <= 0:
            raise ConfigError("bandwidth, f0 and tau_max must be positive")
        if not 0 <= self.rolloff <= 1:
            raise ConfigError("rolloff must lie in [0, 1]")
        if self.n_subcarriers < self.n_taps:
            raise ConfigError(
                f"n_subcarriers={self.n_subcarriers} cannot resolve W={self.n_taps} taps"
            )

    @property
    def T(self) -> float:
        return 1.0 / self.bandwidth

    @property
    def n_taps(self) -> int:
        # round before ceil so that e.g. 2e-6 * 200e6 gives 400, not 401
        return max(1, math.ceil(round(self.tau_max / self.T, 9)))


@dataclass(frozen=True)
class PilotConfig:
    """OFDM pilot block: ``n_symbols`` i.i.d. symbols on every subcarrier."""

    power: float = 1.0
    n_symbols: int = 16
    seed: int = 0

    def length(self, n_subcarriers: int) -> int:
        return self.n_symbols * n_subcarriers


@dataclass(frozen=True)
class NoiseModel:
    """Spatially correlated Gaussian noise with covariance ``q``.

    ``snr_db`` is relative to ``reference_power``: ``sigma^2 =
    reference_power / 10^(snr_db / 10)``; ``inf`` means noiseless.
    """

    q: np.ndarray
    snr_db: float = math.inf

    def __post_init__(self):
        q = np.asarray(self.q, dtype=complex)
        if q.ndim != 2 or q.shape[0] != q.shape[1]:
            raise ConfigError("noise covariance must be square")
        if np.max(np.abs(q - q.conj().T), initial=0.0) > 1e-12 * max(1.0, np.abs(q).max(initial=0)):
            raise ConfigError("noise covariance is not Hermitian")
        q = 0.5 * (q + q.conj().T)
        if q.size and np.linalg.eigvalsh(q).min() < -1e-12 * max(1.0, np.trace(q).real):
            raise ConfigError("noise covariance is not positive semidefinite")
        object.__setattr__(self, "q", q)

    @classmethod
    def white(cls, n_rx: int, snr_db: float = math.inf, reference_power: float = 1.0) -> NoiseModel:
        sigma2 = 0.0 if math.isinf(snr_db) else reference_power / 10 ** (snr_db / 10)
        return cls(sigma2 * np.eye(n_rx), snr_db)

    @classmethod
    def with_interferer(
        cls,
        array: ArrayConfig,
        snr_db: float,
        reference_power: float,
        direction: tuple[float, float],
        inr_db: float,
    ) -> NoiseModel:
        """White noise plus one directional interferer ``inr_db`` above it."""
        base = cls.white(array.size, snr_db, reference_power)
        sigma2 = base.q[0, 0].real
        a = steering_vector(array, direction)
        return cls(base.q + sigma2 * 10 ** (inr_db / 10) * np.outer(a, a.conj()), snr_db)

    @property
    def is_noiseless(self) -> bool:
        return not np.any(self.q)


@dataclass
class ChannelTaps:
    h: np.ndarray  # (W, N_R, N_T)
    t: float = 0.0

    def __add__(self, other: ChannelTaps) -> ChannelTaps:
        if self.h.shape != other.h.shape:
            raise ConfigError(f"tap shapes differ: {self.h.shape} vs {other.h.shape}")
        return ChannelTaps(self.h + other.h, self.t)

    @property
    def energy(self) -> float:
        return float(np.sum(np.abs(self.h) ** 2))


@dataclass
class CsiSample:
    covariance: np.ndarray
    position: tuple[float, float]
    height: float = 0.0
    vehicle_id: int = -1
    t: int = 0
    los: bool = False
    labeled: bool = False
    validation: bool = False
    toa: float = math.nan
    extra: dict = field(default_factory=dict)


def steering_vector(array: ArrayConfig, direction) -> np.ndarray:
    """Planar-array response for ``direction = (azimuth, elevation)``.

    Broadcasts: ``direction`` of shape ``(..., 2)`` returns ``(..., N)``.
    """
    d = np.asarray(direction, dtype=float)
    az = d[..., 0] - array.boresight
    el = d[..., 1]
    m = np.repeat(np.arange(array.rows), array.cols)
    n = np.tile(np.arange(array.cols), array.rows)
    u = np.sin(el)[..., None]
    v = (np.sin(az) * np.cos(el))[..., None]
    return np.exp(2j * np.pi * array.spacing * (m * u + n * v))


def pulse(t_arg, cfg: ChannelConfig):
    """Root-raised-cosine pulse truncated to ``+-pulse_support`` samples.

    Scaled so that the roll-off 0 limit is ``sinc(t / T)``.
    """
    x = np.asarray(t_arg, dtype=float) / cfg.T
    b = cfg.rolloff
    out = np.empty_like(x)
    if b == 0:
        out[...] = np.sinc(x)
    else:
        center = np.isclose(x, 0.0, atol=1e-12)
        edge = np.isclose(np.abs(x), 1 / (4 * b), atol=1e-9)
        reg = ~(center | edge)
        xr = x[reg]
        num = np.sin(np.pi * xr * (1 - b)) + 4 * b * xr * np.cos(np.pi * xr * (1 + b))
        out[reg] = num / (np.pi * xr * (1 - (4 * b * xr) ** 2))
        out[center] = 1 + b * (4 / np.pi - 1)
        out[edge] = (b / np.sqrt(2)) * (
            (1 + 2 / np.pi) * np.sin(np.pi / (4 * b)) + (1 - 2 / np.pi) * np.cos(np.pi / (4 * b))
        )
    out[np.abs(x) > cfg.pulse_support] = 0.0
    return out if out.ndim else float(out)


def path_amplitudes(paths, t: float, f0: float, wssus_seed: int | None = None) -> np.ndarray:
    power = np.array([p.power for p in paths], dtype=float)
    if wssus_seed is not None:
        rng = np.random.default_rng(wssus_seed)
        g = rng.standard_normal((len(paths), 2))
        return np.sqrt(power / 2) * (g[:, 0] + 1j * g[:, 1])
    delay = np.array([p.delay for p in paths], dtype=float)
    doppler = np.array([p.doppler for p in paths], dtype=float)
    return np.sqrt(power) * np.exp(1j * (2 * np.pi * doppler * t - 2 * np.pi * f0 * delay))


def synthesize_taps(
    paths,
    tx_array: ArrayConfig,
    rx_array: ArrayConfig,
    t: float,
    cfg: ChannelConfig,
    wssus_seed: int | None = None,
) -> ChannelTaps:
    """Sum of per-path rank-one contributions shaped by the sampled pulse.

    In deterministic mode the complex gain of path p is
    ``sqrt(power) * exp(j(2 pi doppler t - 2 pi f0 delay))``; with
    ``wssus_seed`` it is redrawn as CN(0, power).
    """
    W = cfg.n_taps
    h = np.zeros((W, rx_array.size, tx_array.size), dtype=complex)
    if not paths:
        return ChannelTaps(h, t)
    alpha = path_amplitudes(paths, t, cfg.f0, wssus_seed)
    a_r = steering_vector(rx_array, np.array([p.doa for p in paths]))
    a_t = steering_vector(tx_array, np.array([p.dod for p in paths]))
    delay = np.array([p.delay for p in paths])
    g = pulse(np.arange(W)[None, :] * cfg.T - delay[:, None], cfg)  # (P, W)
    outer = (alpha[:, None, None] * a_r[:, :, None] * a_t[:, None, :]).reshape(len(paths), -1)
    h[:] = (g.T @ outer).reshape(W, rx_array.size, tx_array.size)
    return ChannelTaps(h, t)


def taps_to_frequency(taps: ChannelTaps | np.ndarray, cfg: ChannelConfig) -> np.ndarray:
    h = taps.h if isinstance(taps, ChannelTaps) else np.asarray(taps)
    if cfg.n_subcarriers < h.shape[0]:
        raise ConfigError("fewer subcarriers than taps")
    return np.fft.fft(h, n=cfg.n_subcarriers, axis=0)


def _noise_factor(q: np.ndarray) -> np.ndarray:
    lam, u = np.linalg.eigh(q)
    return u * np.sqrt(np.clip(lam, 0.0, None))


def estimate_channel(
    taps: ChannelTaps,
    pilot: PilotConfig,
    noise: NoiseModel,
    seed: int,
    cfg: ChannelConfig,
) -> ChannelTaps:
    """Least-squares channel estimate from one OFDM pilot block.

    With the cyclic prefix removed the tap convolution is circular, so the
    received block decouples per subcarrier into ``Y_f = H_f X_f + N_f``;
    LS is solved on every subcarrier and brought back to the first ``W``
    taps. Pilot and noise symbols are drawn directly in the frequency
    domain, which has the same statistics as white time-domain draws.
    """
    h = taps.h
    W, n_rx, n_tx = h.shape
    n_c = cfg.n_subcarriers
    if pilot.length(n_c) < W * n_tx or pilot.n_symbols < n_tx:
        raise ConfigError(
            f"pilot block of {pilot.n_symbols} symbols x {n_c} subcarriers cannot identify "
            f"{W} taps x {n_tx} Tx antennas"
        )
    if noise.q.shape != (n_rx, n_rx):
        raise ConfigError("noise covariance does not match receive array size")

    rng = np.random.default_rng([pilot.seed, seed])
    s = pilot.n_symbols
    x = pilot_symbols(pilot, n_tx, n_c, rng)
    H = taps_to_frequency(h, cfg)
    Y = H @ x
    if not noise.is_noiseless:
        w = (rng.standard_normal((n_c, n_rx, s)) + 1j * rng.standard_normal((n_c, n_rx, s))) / np.sqrt(2)
        Y = Y + _noise_factor(noise.q) @ w
    xh = np.conj(np.swapaxes(x, 1, 2))
    # H_hat = Y X^H (X X^H)^-1, solved as (X X^H) H_hat^H = X Y^H
    gram = x @ xh
    rhs = x @ np.conj(np.swapaxes(Y, 1, 2))
    H_hat = np.conj(np.swapaxes(np.linalg.solve(gram, rhs), 1, 2))
    h_hat = np.fft.ifft(H_hat, axis=0)[:W]
    return ChannelTaps(h_hat, taps.t)


def pilot_symbols(pilot: PilotConfig, n_tx: int, n_subcarriers: int, rng=None) -> np.ndarray:
    """Circular Gaussian pilots of power ``pilot.power``, shape ``(N_c, N_T, S)``."""
    rng = np.random.default_rng(pilot.seed) if rng is None else rng
    shape = (n_subcarriers, n_tx, pilot.n_symbols)
    return np.sqrt(pilot.power / 2) * (rng.standard_normal(shape) + 1j * rng.standard_normal(shape))


def csi_covariance(H: np.ndarray) -> np.ndarray:
    """Receive-side spatial covariance averaged over subcarriers and Tx columns."""
    H = np.asarray(H)
    if H.ndim == 2:
        H = H[:, :, None]
    if H.shape[0] < 1:
        raise DomainError("need at least one subcarrier")
    n_c, n_rx, n_tx = H.shape
    m = np.transpose(H, (1, 0, 2)).reshape(n_rx, n_c * n_tx)
    c = (m @ m.conj().T) / (n_c * n_tx)
    return 0.5 * (c + c.conj().T)
