"""Semi-supervised t-SNE charting with position anchors.

Conventions: ``cond[i, j]`` is the probability that ``j`` is a neighbor of
``i`` (rows sum to one); ``P`` and ``Q`` are joint distributions over
ordered pairs with zero diagonal.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import ConfigError, DomainError, NumericalError

log = logging.getLogger(__name__)

P_FLOOR = 1e-12
ANCHOR_MODES = ("hard", "penalty", "none")


@dataclass(frozen=True)
class ChartingConfig:
    perplexity: float = 400.0
    momentum: float = 0.6
    learning_rate: float = 100.0
    n_iter: int = 1500
    anchor_mode: str = "hard"
    penalty_weight: float = 1e-3
    # chart units per meter is 1/scale; None maps the anchors' bounding box
    # to unit diagonal
    scale: float | None = None
    init_std: float = 1e-2
    exaggeration: float = 1.0
    exaggeration_iters: int = 0
    perplexity_tol: float = 1e-4
    dtype: str = "float64"

    def __post_init__(self):
        if self.n_iter < 1:
            raise ConfigError("n_iter must be >= 1")
        if not 0 <= self.momentum < 1:
            raise ConfigError("momentum must lie in [0, 1)")
        if self.learning_rate <= 0:
            raise ConfigError("learning_rate must be positive")
        if self.perplexity <= 1:
            raise ConfigError("perplexity must exceed 1")
        if self.anchor_mode not in ANCHOR_MODES:
            raise ConfigError(f"anchor_mode must be one of {ANCHOR_MODES}")
        if self.penalty_weight < 0:
            raise ConfigError("penalty_weight must be nonnegative")
        # heavy-ball iteration on the quadratic anchor term is stable only below this
        if self.anchor_mode == "penalty" and 2 * self.penalty_weight * self.learning_rate >= 2 * (1 + self.momentum):
            raise ConfigError(
                f"penalty_weight {self.penalty_weight} unstable with learning_rate {self.learning_rate}; "
                f"need penalty_weight < (1 + momentum) / learning_rate"
            )
        if self.scale is not None and self.scale <= 0:
            raise ConfigError("scale must be positive")
        if self.dtype not in ("float64", "float32"):
            raise ConfigError("dtype must be float64 or float32")


@dataclass(frozen=True)
class LabeledSplit:
    n: int
    labeled: np.ndarray  # indices
    positions: np.ndarray  # (L, 2) meters, aligned with ``labeled``

    def __post_init__(self):
        lab = np.asarray(self.labeled, dtype=int)
        pos = np.asarray(self.positions, dtype=float).reshape(-1, 2)
        if len(lab) != len(pos):
            raise ConfigError("one position per labeled index required")
        if len(np.unique(lab)) != len(lab) or (len(lab) and (lab.min() < 0 or lab.max() >= self.n)):
            raise ConfigError("labeled indices must be unique and within 0..n-1")
        object.__setattr__(self, "labeled", lab)
        object.__setattr__(self, "positions", pos)

    @property
    def unlabeled(self) -> np.ndarray:
        mask = np.ones(self.n, dtype=bool)
        mask[self.labeled] = False
        return np.flatnonzero(mask)


@dataclass
class Chart:
    z: np.ndarray  # (N, 2) chart units
    anchored: np.ndarray  # (N,) bool
    center: np.ndarray  # (2,) meters
    scale: float  # meters per chart unit
    anchors: dict = field(default_factory=dict, repr=False)  # index -> position (m)

    def to_meters(self, z) -> np.ndarray:
        return np.asarray(z, dtype=float) * self.scale + self.center

    def to_chart(self, p) -> np.ndarray:
        return (np.asarray(p, dtype=float) - self.center) / self.scale

    def positions(self) -> np.ndarray:
        out = self.to_meters(self.z)
        for i, p in self.anchors.items():
            out[i] = p
        return out


def _row_stats(d2: np.ndarray, beta: np.ndarray):
    """Conditional rows and their entropies (nats) for precisions ``beta``.

    ``d2`` holds squared distances with +inf on excluded entries.
    """
    shifted = d2 - d2.min(axis=1, keepdims=True)
    p = np.exp(-shifted * beta[:, None])
    s = p.sum(axis=1, keepdims=True)
    p /= s
    with np.errstate(invalid="ignore"):
        h = beta * np.sum(np.where(p > 0, shifted * p, 0.0), axis=1) + np.log(s[:, 0])
    return p, h


def calibrate_conditionals(
    D: np.ndarray,
    perplexity: float,
    tol: float = 1e-4,
    max_steps: int = 200,
) -> tuple[np.ndarray, np.ndarray]:
    """Gaussian-kernel neighbor probabilities with per-row bandwidth search.

    Bisects the log-precision of every row until ``exp(H)`` (the perplexity,
    equal to ``2**H`` with H in bits) is within ``tol`` relative of the
    target. Rows whose distances are all equal carry no scale and come
    back uniform with a warning. Returns ``(cond, sigma)``.
    """
    D = np.asarray(D, dtype=float)
    n = D.shape[0]
    if D.shape != (n, n):
        raise DomainError("dissimilarity matrix must be square")
    if not 1 < perplexity < n:
        raise DomainError(f"perplexity {perplexity} must lie in (1, {n})")

    d2 = D**2
    np.fill_diagonal(d2, np.inf)
    off = ~np.eye(n, dtype=bool)
    row_min = np.where(off, d2, np.inf).min(axis=1)
    row_max = np.where(off, d2, -np.inf).max(axis=1)
    degenerate = row_max - row_min <= 1e-12 * np.maximum(row_max, 1e-300)

    cond = np.zeros((n, n))
    sigma = np.full(n, np.inf)
    if degenerate.any():
        rows = np.flatnonzero(degenerate)
        log.warning(
            "%d rows have all-equal distances; using uniform conditionals "
            "(perplexity %d instead of %g)", len(rows), n - 1, perplexity,
        )
        cond[rows] = 1.0 / (n - 1)
        cond[rows, rows] = 0.0

    rows = np.flatnonzero(~degenerate)
    if len(rows):
        sub = d2[rows]
        spread = (row_max - row_min)[rows]
        # log-precision bracket relative to each row's distance spread
        lo = np.log(1e-12 / spread)
        hi = np.log(1e8 / spread) + np.log(max(1.0, np.log(n)))
        target = np.log(perplexity)
        done = np.zeros(len(rows), dtype=bool)
        beta = np.exp(0.5 * (lo + hi))
        for _ in range(max_steps):
            p, h = _row_stats(sub, beta)
            err = np.abs(np.exp(h - target) - 1.0)
            done = err <= tol
            if done.all():
                break
            too_flat = h > target  # entropy too high, sharpen
            lo = np.where(~done & too_flat, np.log(beta), lo)
            hi = np.where(~done & ~too_flat, np.log(beta), hi)
            beta = np.where(done, beta, np.exp(0.5 * (lo + hi)))
        else:
            bad = rows[~done]
            raise NumericalError(
                f"perplexity search did not converge for row {int(bad[0])} "
                f"({len(bad)} rows in total)"
            )
        p[:, :] = np.where(np.isfinite(sub), p, 0.0)
        cond[rows] = p
        sigma[rows] = np.sqrt(1.0 / (2.0 * beta))
    np.fill_diagonal(cond, 0.0)
    return cond, sigma


def symmetrize(cond: np.ndarray, floor: float = P_FLOOR) -> np.ndarray:
    """Joint ``P = (cond + cond^T) / 2``, floored and renormalized to sum 1."""
    cond = np.asarray(cond, dtype=float)
    n = cond.shape[0]
    P = 0.5 * (cond + cond.T)
    P = np.maximum(P, floor)
    np.fill_diagonal(P, 0.0)
    if n == 1:
        return P
    return P / P.sum()


def _kernel(z: np.ndarray) -> np.ndarray:
    sq = np.einsum("ij,ij->i", z, z)
    d2 = sq[:, None] + sq[None, :] - 2.0 * (z @ z.T)
    np.maximum(d2, 0.0, out=d2)
    num = 1.0 / (1.0 + d2)
    np.fill_diagonal(num, 0.0)
    return num


def q_matrix(z) -> np.ndarray:
    """Student-t (one degree of freedom) similarities of chart points."""
    z = getattr(z, "z", z)
    z = np.asarray(z, dtype=float)
    if len(z) < 2:
        raise DomainError("need at least two chart points")
    diff = z[:, None, :] - z[None, :, :]
    num = 1.0 / (1.0 + np.einsum("ijk,ijk->ij", diff, diff))
    np.fill_diagonal(num, 0.0)
    return num / num.sum()


def kl_divergence(P, Q) -> float:
    P = np.asarray(P, dtype=float)
    Q = np.asarray(Q, dtype=float)
    if P.shape != Q.shape:
        raise DomainError("P and Q shapes differ")
    mask = P > 0
    return float(np.sum(P[mask] * np.log(P[mask] / np.maximum(Q[mask], np.finfo(float).tiny))))


def kl_gradient(P, Q, z) -> np.ndarray:
    """Gradient of KL(P||Q(z)) with respect to every chart point."""
    z = getattr(z, "z", z)
    z = np.asarray(z, dtype=float)
    diff = z[:, None, :] - z[None, :, :]
    num = 1.0 / (1.0 + np.einsum("ijk,ijk->ij", diff, diff))
    np.fill_diagonal(num, 0.0)
    W = (np.asarray(P) - np.asarray(Q)) * num
    return 4.0 * np.einsum("ij,ijk->ik", W, diff)


class _Objective:
    """KL value and gradient with reusable N x N buffers."""

    def __init__(self, P: np.ndarray, dtype):
        self.P = np.ascontiguousarray(P, dtype=dtype)
        n = len(P)
        self.num = np.empty((n, n), dtype=dtype)
        self.work = np.empty((n, n), dtype=dtype)
        mask = P > 0
        self.p_log_p = float(np.sum(P[mask] * np.log(P[mask])))
        self.p_sum = float(P.sum())

    def __call__(self, z: np.ndarray, exaggeration: float = 1.0):
        num, work, P = self.num, self.work, self.P
        sq = np.einsum("ij,ij->i", z, z)
        np.matmul(z, z.T, out=num)
        num *= -2.0
        num += sq[:, None]
        num += sq[None, :]
        np.maximum(num, 0.0, out=num)
        # KL = sum P log P - sum P log num + log Z  (for sum P = 1)
        np.log1p(num, out=work)
        np.fill_diagonal(work, 0.0)
        p_log_num = -float(np.vdot(P, work))
        num += 1.0
        np.reciprocal(num, out=num)
        np.fill_diagonal(num, 0.0)
        zsum = float(num.sum())
        kl = self.p_log_p - p_log_num + self.p_sum * math.log(zsum)
        # W = (e P - num / Z) * num
        np.multiply(num, num, out=work)
        work *= -1.0 / zsum
        if exaggeration == 1.0:
            work += P * num
        else:
            work += (exaggeration * P) * num
        grad = 4.0 * (work.sum(axis=1)[:, None] * z - work @ z)
        return kl, grad


def _normalization(split: LabeledSplit, cfg: ChartingConfig):
    """Offset and meters-per-unit scale mapping positions into chart units.

    The offset is the anchors' centroid, where the unlabeled points start;
    a bounding-box center can sit far from where the samples actually are.
    """
    if len(split.labeled) == 0:
        return np.zeros(2), cfg.scale or 1.0
    center = split.positions.mean(axis=0)
    diag = float(np.hypot(*np.ptp(split.positions, axis=0)))
    scale = cfg.scale if cfg.scale is not None else (diag if diag > 0 else 1.0)
    return center, scale


def fit(
    D: np.ndarray,
    split: LabeledSplit,
    cfg: ChartingConfig | None = None,
    seed: int = 0,
    P: np.ndarray | None = None,
) -> tuple[Chart, np.ndarray]:
    """Fit a chart; returns it with the KL trace (entry k after k updates).

    ``P`` may be passed to reuse a joint distribution computed from ``D``
    with the same perplexity.
    """
    cfg = cfg or ChartingConfig()
    D = np.asarray(D)
    n = D.shape[0]
    if split.n != n:
        raise ConfigError(f"split covers {split.n} samples, dissimilarities {n}")
    if cfg.anchor_mode != "none" and len(split.labeled) == 0:
        raise ConfigError(
            f"anchor_mode={cfg.anchor_mode!r} needs labeled samples; use anchor_mode='none'"
        )
    dtype = np.dtype(cfg.dtype)
    center, scale = _normalization(split, cfg)
    anchors_z = (split.positions - center) / scale

    rng = np.random.default_rng(seed)
    z = rng.normal(0.0, cfg.init_std, size=(n, 2))
    anchored = np.zeros(n, dtype=bool)
    if cfg.anchor_mode != "none":
        z[split.labeled] = anchors_z
        anchored[split.labeled] = True
    chart = Chart(z, anchored, center, scale,
                  {int(i): split.positions[k].copy() for k, i in enumerate(split.labeled)}
                  if cfg.anchor_mode == "hard" else {})

    free = ~anchored if cfg.anchor_mode == "hard" else np.ones(n, dtype=bool)
    if not free.any():
        return chart, np.zeros(1)

    if P is None:
        cond, _ = calibrate_conditionals(D, cfg.perplexity, cfg.perplexity_tol)
        P = symmetrize(cond)
    obj = _Objective(P, dtype)
    zc = z.astype(dtype)
    prev = zc.copy()
    free_idx = np.flatnonzero(free)
    lab = split.labeled
    mu = cfg.penalty_weight

    def evaluate(zz, exaggeration=1.0):
        kl, g = obj(zz, exaggeration)
        if cfg.anchor_mode == "penalty":
            r = zz[lab] - anchors_z
            kl += mu * float(np.sum(r * r))
            g[lab] += 2.0 * mu * r
        return kl, g

    trace = np.empty(cfg.n_iter + 1)
    for it in range(cfg.n_iter):
        ex = cfg.exaggeration if it < cfg.exaggeration_iters else 1.0
        kl, g = evaluate(zc, ex)
        trace[it] = kl
        step = cfg.momentum * (zc[free_idx] - prev[free_idx]) - cfg.learning_rate * g[free_idx]
        prev[free_idx] = zc[free_idx]
        zc[free_idx] += step
        if not np.all(np.isfinite(zc[free_idx])):
            raise NumericalError(f"chart diverged at iteration {it}")
    trace[-1] = evaluate(zc)[0]

    chart.z[free_idx] = zc[free_idx]
    return chart, trace


def localize(chart: Chart, index: int) -> np.ndarray:
    """Position estimate in meters for sample ``index``."""
    if index in chart.anchors:
        return chart.anchors[index].copy()
    return chart.to_meters(chart.z[index])


def save_chart(chart: Chart, path) -> None:
    pos = chart.positions()
    lines = ["index,anchored,z_x,z_y,x_m,y_m"]
    for i, (zz, p) in enumerate(zip(chart.z, pos)):
        lines.append(f"{i},{int(chart.anchored[i])},{zz[0]:.12g},{zz[1]:.12g},{p[0]:.6f},{p[1]:.6f}")
    Path(path).write_text("\n".join(lines) + "\n")


def save_trace(trace, path) -> None:
    lines = ["iteration,kl"] + [f"{k},{v:.12g}" for k, v in enumerate(trace)]
    Path(path).write_text("\n".join(lines) + "\n")
