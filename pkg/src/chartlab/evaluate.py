"""Chart quality (continuity, trustworthiness, Kruskal stress) and localization error."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.spatial.distance import pdist, squareform

from .errors import DomainError

KS_VARIANT = "ks-optimal-scale-v1"


def default_k(n: int) -> int:
    return max(1, math.ceil(0.01 * n))


def _ranks(X: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Neighbor order and rank matrix; rank 1 is the nearest other point.

    Ties are broken by index so results are reproducible.
    """
    D = squareform(pdist(X))
    np.fill_diagonal(D, -np.inf)
    order = np.argsort(D, axis=1, kind="stable")
    ranks = np.empty_like(order)
    rows = np.arange(len(X))[:, None]
    ranks[rows, order] = np.arange(len(X))[None, :]
    return order, ranks


def _neighborhood_error(space_a, space_b, K: int) -> float:
    """Penalty for K-neighbors in ``space_b`` missing from ``space_a``'s, ranked in ``space_a``."""
    a = np.asarray(space_a, dtype=float)
    b = np.asarray(space_b, dtype=float)
    n = len(a)
    if len(b) != n:
        raise DomainError("point sets differ in size")
    if not 1 <= K < n:
        raise DomainError(f"K={K} must satisfy 1 <= K < N={n}")
    denom = n * K * (2 * n - 3 * K - 1)
    if denom <= 0:
        raise DomainError(f"K={K} too large for N={n}")
    _, rank_a = _ranks(a)
    order_b, _ = _ranks(b)
    nb_b = order_b[:, 1:K + 1]
    r = np.take_along_axis(rank_a, nb_b, axis=1)
    penalty = np.where(r > K, r - K, 0).sum()
    return 1.0 - 2.0 / denom * float(penalty)


def trustworthiness(truth, chart, K: int) -> float:
    """Penalizes chart neighbors that are not neighbors in the true geometry."""
    return _neighborhood_error(truth, chart, K)


def continuity(truth, chart, K: int) -> float:
    """Penalizes true neighbors that the chart pulls apart."""
    return _neighborhood_error(chart, truth, K)


def kruskal_stress(truth, chart) -> float:
    """Stress after the least-squares optimal uniform scaling of the chart."""
    dt = pdist(np.asarray(truth, dtype=float))
    dc = pdist(np.asarray(chart, dtype=float))
    if len(dt) == 0:
        raise DomainError("need at least two points")
    den = float(dt @ dt)
    if den == 0:
        raise DomainError("all true positions coincide")
    cc = float(dc @ dc)
    beta = float(dt @ dc) / cc if cc > 0 else 0.0
    r = dt - beta * dc
    return math.sqrt(max(0.0, float(r @ r)) / den)


@dataclass
class ErrorStats:
    n: int
    mean: float
    median: float
    p90: float
    minimum: float
    q1: float
    q3: float
    maximum: float

    @classmethod
    def from_errors(cls, err: np.ndarray) -> ErrorStats:
        if len(err) == 0:
            nan = math.nan
            return cls(0, nan, nan, nan, nan, nan, nan, nan)
        q = np.percentile(err, [0, 25, 50, 75, 90, 100])
        return cls(len(err), float(np.mean(err)), float(q[2]), float(q[4]),
                   float(q[0]), float(q[1]), float(q[3]), float(q[5]))


@dataclass
class MetricsReport:
    errors: np.ndarray
    stats: ErrorStats
    ecdf: np.ndarray  # (N, 2): error, cumulative fraction
    by_condition: dict = field(default_factory=dict)  # "los"/"nlos" -> ErrorStats
    ct: float = math.nan
    tw: float = math.nan
    ks: float = math.nan
    k: int = 0
    ks_variant: str = KS_VARIANT

    @property
    def mean_error(self) -> float:
        return self.stats.mean


def ecdf(errors) -> np.ndarray:
    e = np.sort(np.asarray(errors, dtype=float))
    return np.column_stack([e, np.arange(1, len(e) + 1) / len(e)])


def localization_report(truth, estimates, los=None) -> MetricsReport:
    """2D Euclidean errors with summary statistics, ECDF and LoS/NLoS split."""
    truth = np.asarray(truth, dtype=float)[:, :2]
    est = np.asarray(estimates, dtype=float)[:, :2]
    if len(truth) == 0:
        raise DomainError("no points to evaluate")
    if truth.shape != est.shape:
        raise DomainError("truth and estimates differ in length")
    err = np.hypot(*(est - truth).T)
    rep = MetricsReport(err, ErrorStats.from_errors(err), ecdf(err))
    if los is not None:
        los = np.asarray(los, dtype=bool)
        if len(los) != len(err):
            raise DomainError("LoS flags differ in length")
        rep.by_condition = {
            "los": ErrorStats.from_errors(err[los]),
            "nlos": ErrorStats.from_errors(err[~los]),
        }
    return rep


def chart_report(truth, chart_points, estimates, los=None, K: int | None = None) -> MetricsReport:
    """Localization report plus CT/TW/KS of ``chart_points`` against ``truth``."""
    truth = np.asarray(truth, dtype=float)[:, :2]
    rep = localization_report(truth, estimates, los)
    K = default_k(len(truth)) if K is None else K
    rep.k = K
    rep.ct = continuity(truth, chart_points, K)
    rep.tw = trustworthiness(truth, chart_points, K)
    rep.ks = kruskal_stress(truth, chart_points)
    return rep


# -- CSV emission ------------------------------------------------------------

TABLE_HEADER = "scenario,supervision,CT,KS,TW,loc_error_mean,loc_error_median,loc_error_p90,K,ks_variant,n_eval"


def table_row(scenario: str, supervision: float, rep: MetricsReport) -> str:
    s = rep.stats
    return (f"{scenario},{supervision:g},{rep.ct:.6f},{rep.ks:.6f},{rep.tw:.6f},"
            f"{s.mean:.6f},{s.median:.6f},{s.p90:.6f},{rep.k},{rep.ks_variant},{s.n}")


ECDF_HEADER = "scenario,supervision,method,error_m,cdf"


def ecdf_rows(scenario: str, supervision, method: str, rep: MetricsReport) -> list[str]:
    sup = "" if supervision is None else f"{supervision:g}"
    return [f"{scenario},{sup},{method},{e:.6f},{c:.6f}" for e, c in rep.ecdf]


QUARTILE_HEADER = "scenario,supervision,method,condition,n,min,q1,median,q3,max,mean"


def quartile_rows(scenario: str, supervision, method: str, rep: MetricsReport) -> list[str]:
    sup = "" if supervision is None else f"{supervision:g}"
    rows = []
    for cond, st in [("all", rep.stats)] + sorted(rep.by_condition.items()):
        rows.append(
            f"{scenario},{sup},{method},{cond},{st.n},{st.minimum:.6f},{st.q1:.6f},"
            f"{st.median:.6f},{st.q3:.6f},{st.maximum:.6f},{st.mean:.6f}"
        )
    return rows
