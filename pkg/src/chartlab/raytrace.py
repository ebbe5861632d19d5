"""Image-method ray tracer for vertical building walls, ground and vehicles.

Only specular reflections are modeled. Every path carries its interaction
points so it can be re-validated geometrically after the fact.
"""

from __future__ import annotations

import math
import weakref
from dataclasses import dataclass, field

import numpy as np

from .channel import C_LIGHT
from .errors import ConfigError, DomainError, GeometryError
from .scene import CONCRETE, Scene, VehicleState

GROUND = -1
VEHICLE = "vehicle"

_FRONT_EPS = 1e-9
_PARAM_EPS = 1e-12
_OVERLAP_TOL = 1e-6  # meters of segment inside a solid before it counts as blocked


@dataclass(frozen=True)
class Wall:
    """Vertical planar face between ``p0`` and ``p1`` from z=0 up to ``height``.

    The outward normal points to the right of ``p0 -> p1``, which is the
    exterior side for counterclockwise footprints.
    """

    p0: tuple[float, float]
    p1: tuple[float, float]
    height: float
    material: str = CONCRETE

    @property
    def normal(self) -> np.ndarray:
        d = np.subtract(self.p1, self.p0, dtype=float)
        length = math.hypot(*d)
        if length == 0 or self.height <= 0:
            raise GeometryError(f"degenerate wall {self.p0}->{self.p1}, height {self.height}")
        return np.array([d[1], -d[0]]) / length


@dataclass(frozen=True)
class Blocker:
    """Vehicle body as an upright box standing on the ground."""

    center: tuple[float, float]
    heading: float
    extents: tuple[float, float, float]  # length, width, height

    def __post_init__(self):
        if min(self.extents) <= 0:
            raise ConfigError(f"blocker extents must be positive: {self.extents}")

    @classmethod
    def from_vehicle(cls, v: VehicleState) -> Blocker:
        return cls(v.position, v.heading, v.vclass.body_extent)

    def faces(self) -> list[Wall]:
        length, width, height = self.extents
        c, s = math.cos(self.heading), math.sin(self.heading)
        local = [(length / 2, -width / 2), (length / 2, width / 2),
                 (-length / 2, width / 2), (-length / 2, -width / 2)]
        pts = [(self.center[0] + c * x - s * y, self.center[1] + s * x + c * y) for x, y in local]
        return [Wall(pts[i], pts[(i + 1) % 4], height, VEHICLE) for i in range(4)]


@dataclass(frozen=True)
class TraceConfig:
    max_order: int = 2
    f0: float = 28e9
    losses_db: dict = field(
        default_factory=lambda: {"concrete": 6.0, "glass": 2.0, VEHICLE: 3.0}
    )
    mode: str = "static"
    ground: bool = True
    vehicle_reflections: bool = False

    def __post_init__(self):
        if not 0 <= self.max_order <= 3:
            raise ConfigError(f"max_order {self.max_order} outside [0, 3]")
        if self.mode not in ("static", "dynamic"):
            raise ConfigError(f"unknown trace mode {self.mode!r}")
        if self.f0 <= 0:
            raise ConfigError("f0 must be positive")


@dataclass(frozen=True)
class PathTuple:
    dod: tuple[float, float]
    doa: tuple[float, float]
    delay: float
    doppler: float
    power: float
    bounce_count: int
    path_length: float
    points: np.ndarray = field(repr=False)  # (bounces + 2, 3): tx, interactions, rx
    surfaces: tuple[int, ...] = ()
    materials: tuple[str, ...] = ()

    @property
    def is_los(self) -> bool:
        return self.bounce_count == 0


class _Geometry:
    """Flattened wall and solid arrays for vectorized tests."""

    def __init__(self, scene: Scene):
        walls = []
        for b in scene.buildings:
            fp = b.footprint
            for i in range(len(fp)):
                walls.append(Wall(tuple(fp[i]), tuple(fp[(i + 1) % len(fp)]), b.height, b.material))
        self.walls = walls
        self.arrays = _wall_arrays(walls)
        self.materials = [w.material for w in walls]
        self.bounds = scene.bounds
        nb = len(scene.buildings)
        m = max((len(b.footprint) for b in scene.buildings), default=3)
        self.solid_n = np.zeros((nb, m, 2))
        self.solid_d = np.full((nb, m), np.inf)
        self.solid_h = np.zeros(nb)
        for k, b in enumerate(scene.buildings):
            fp = b.footprint
            e = np.roll(fp, -1, axis=0) - fp
            n = np.stack([e[:, 1], -e[:, 0]], axis=1) / np.hypot(e[:, 0], e[:, 1])[:, None]
            self.solid_n[k, : len(fp)] = n
            self.solid_d[k, : len(fp)] = np.einsum("ij,ij->i", n, fp)
            self.solid_h[k] = b.height


_GEOMETRY_CACHE: weakref.WeakKeyDictionary = weakref.WeakKeyDictionary()


def _geometry(scene: Scene) -> _Geometry:
    geo = _GEOMETRY_CACHE.get(scene)
    if geo is None:
        geo = _GEOMETRY_CACHE[scene] = _Geometry(scene)
    return geo


def scene_walls(scene: Scene) -> list[Wall]:
    return _geometry(scene).walls


def _wall_arrays(walls: list[Wall]):
    p0 = np.array([w.p0 for w in walls], dtype=float).reshape(-1, 2)
    p1 = np.array([w.p1 for w in walls], dtype=float).reshape(-1, 2)
    n = np.array([w.normal for w in walls]).reshape(-1, 2)
    d = np.einsum("ij,ij->i", n, p0)
    h = np.array([w.height for w in walls], dtype=float)
    return p0, p1, n, d, h


def mirror_image(p, wall: Wall) -> np.ndarray:
    """Reflect ``p`` across the infinite vertical plane containing ``wall``."""
    p = np.asarray(p, dtype=float)
    n = wall.normal
    dist = n @ p[:2] - n @ np.asarray(wall.p0, dtype=float)
    out = p.copy()
    out[:2] = p[:2] - 2 * dist * n
    return out


def _mirror_many(p: np.ndarray, n: np.ndarray, d: np.ndarray) -> np.ndarray:
    """Images of points ``p`` (..., 3) across planes broadcast against them."""
    dist = np.einsum("...i,...i->...", p[..., :2], n) - d
    out = p.copy() if p.shape[:-1] == dist.shape else np.broadcast_to(p, dist.shape + (3,)).copy()
    out[..., :2] -= 2 * dist[..., None] * n
    return out


def _solids_blocked(geo: _Geometry, a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Vectorized segment-vs-building-prism test; ``a``, ``b`` are (S, 3)."""
    if geo.solid_h.size == 0:
        return np.zeros(len(a), dtype=bool)
    d = b - a
    seg_len = np.linalg.norm(d, axis=1)
    # lateral constraints n.x <= c for every building edge: (S, B, M)
    num = geo.solid_d[None] - np.einsum("sj,bmj->sbm", a[:, :2], geo.solid_n)
    den = np.einsum("sj,bmj->sbm", d[:, :2], geo.solid_n)
    # roof constraint z <= h: (S, B)
    num_z = geo.solid_h[None] - a[:, 2:3]
    den_z = np.broadcast_to(d[:, 2:3], num_z.shape)
    num = np.concatenate([num, num_z[..., None]], axis=2)
    den = np.concatenate([den, den_z[..., None]], axis=2)
    with np.errstate(divide="ignore", invalid="ignore"):
        ratio = num / den
    enter = np.where(den < 0, ratio, -np.inf).max(axis=2)
    exit_ = np.where(den > 0, ratio, np.inf).min(axis=2)
    parallel_out = np.any((den == 0) & (num < 0), axis=2)
    t0 = np.maximum(enter, 0.0)
    t1 = np.minimum(exit_, 1.0)
    overlap = (t1 - t0) * seg_len[:, None]
    return np.any((overlap > _OVERLAP_TOL) & ~parallel_out, axis=1)


def _blockers_blocked(blockers: list[Blocker], a: np.ndarray, b: np.ndarray) -> np.ndarray:
    out = np.zeros(len(a), dtype=bool)
    if not blockers:
        return out
    cx = np.array([bl.center for bl in blockers], dtype=float)
    hd = np.array([bl.heading for bl in blockers], dtype=float)
    ext = np.array([bl.extents for bl in blockers], dtype=float)
    c, s = np.cos(hd), np.sin(hd)

    def local(p):  # (S, 3) -> (S, K, 3)
        r = p[:, None, :2] - cx[None]
        x = c * r[..., 0] + s * r[..., 1]
        y = -s * r[..., 0] + c * r[..., 1]
        return np.stack([x, y, np.broadcast_to(p[:, None, 2], x.shape)], axis=-1)

    la, lb = local(a), local(b)
    # endpoints mounted on a vehicle ignore that vehicle's own body
    own = np.zeros(la.shape[:2], dtype=bool)
    for pt in (la, lb):
        own |= (np.abs(pt[..., 0]) <= ext[:, 0] / 2) & (np.abs(pt[..., 1]) <= ext[:, 1] / 2)
    lo = np.stack([-ext[:, 0] / 2, -ext[:, 1] / 2, np.zeros(len(ext))], axis=1)[None]
    hi = np.stack([ext[:, 0] / 2, ext[:, 1] / 2, ext[:, 2]], axis=1)[None]
    d = lb - la
    with np.errstate(divide="ignore", invalid="ignore"):
        t_lo = (lo - la) / d
        t_hi = (hi - la) / d
    t_near = np.where(d == 0, np.where((la >= lo) & (la <= hi), -np.inf, np.inf), np.minimum(t_lo, t_hi))
    t_far = np.where(d == 0, np.where((la >= lo) & (la <= hi), np.inf, -np.inf), np.maximum(t_lo, t_hi))
    t0 = np.maximum(t_near.max(axis=2), 0.0)
    t1 = np.minimum(t_far.min(axis=2), 1.0)
    seg_len = np.linalg.norm(b - a, axis=1)[:, None]
    hit = ((t1 - t0) * seg_len > _OVERLAP_TOL) & ~own
    return hit.any(axis=1)


def _segments_blocked(geo, a, b, blockers) -> np.ndarray:
    a = np.atleast_2d(np.asarray(a, dtype=float))
    b = np.atleast_2d(np.asarray(b, dtype=float))
    return _solids_blocked(geo, a, b) | _blockers_blocked(blockers, a, b)


def los_blocked(scene: Scene, a, b, blockers: list[Blocker] | None = None) -> bool:
    """Does the straight segment ``a``-``b`` cross a building or vehicle body?"""
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    if np.array_equal(a, b):
        raise DomainError("segment endpoints coincide")
    return bool(_segments_blocked(_geometry(scene), a, b, list(blockers or []))[0])


def path_gain(path_length: float, bounce_count: int, materials, cfg: TraceConfig) -> float:
    """Free-space loss times a fixed per-bounce material loss."""
    if path_length <= 0:
        raise DomainError(f"path length must be positive, got {path_length}")
    materials = list(materials)
    if len(materials) != bounce_count:
        raise DomainError("need one material per bounce")
    fspl = (C_LIGHT / (4 * math.pi * path_length * cfg.f0)) ** 2
    loss_db = sum(cfg.losses_db[m] for m in materials)
    return fspl * 10 ** (-loss_db / 10)


def doppler_shift(departure, tx_velocity, f0: float) -> float:
    """Geometric Doppler of a path leaving the Tx along ``departure``."""
    u = np.asarray(departure, dtype=float)
    u = u / np.linalg.norm(u)
    return float(f0 / C_LIGHT * np.dot(np.asarray(tx_velocity, dtype=float), u))


def _direction(v) -> tuple[float, float]:
    az = math.atan2(v[1], v[0])
    if az == -math.pi:
        az = math.pi
    return az, math.atan2(v[2], math.hypot(v[0], v[1]))


def _make_path(points, surfaces, materials, tx_velocity, cfg) -> PathTuple:
    points = np.asarray(points, dtype=float)
    seg = np.diff(points, axis=0)
    length = float(np.sum(np.linalg.norm(seg, axis=1)))
    return PathTuple(
        dod=_direction(seg[0]),
        doa=_direction(-seg[-1]),
        delay=length / C_LIGHT,
        doppler=doppler_shift(seg[0], tx_velocity, cfg.f0),
        power=path_gain(length, len(surfaces), materials, cfg),
        bounce_count=len(surfaces),
        path_length=length,
        points=points,
        surfaces=tuple(surfaces),
        materials=tuple(materials),
    )


def _on_wall(q, p0, p1, h):
    e = p1 - p0
    u = np.einsum("...i,...i->...", q[..., :2] - p0, e) / np.einsum("...i,...i->...", e, e)
    return (u >= -_PARAM_EPS) & (u <= 1 + _PARAM_EPS) & (q[..., 2] >= 0) & (q[..., 2] <= h)


def _hit_plane(src, img, n, d):
    """Intersection of segment src->img with a vertical plane; returns (s, point)."""
    fs = np.einsum("...i,...i->...", src[..., :2], n) - d
    fi = np.einsum("...i,...i->...", img[..., :2], n) - d
    with np.errstate(divide="ignore", invalid="ignore"):
        s = fs / (fs - fi)
    return s, src + s[..., None] * (img - src)


def trace_paths(
    scene: Scene,
    tx,
    tx_velocity,
    rx,
    blockers: list[Blocker] | None = None,
    cfg: TraceConfig | None = None,
) -> list[PathTuple]:
    """All specular paths from ``tx`` to ``rx`` up to ``cfg.max_order`` bounces.

    Blockers are only honored in dynamic mode. Returns paths sorted by delay.
    """
    cfg = cfg or TraceConfig()
    tx = np.asarray(tx, dtype=float)
    rx = np.asarray(rx, dtype=float)
    vel = np.asarray(tx_velocity, dtype=float)
    for p in (tx, rx):
        if not scene.contains(p, tol=1e-9):
            raise GeometryError(f"point {p} outside scene bounds")
    geo = _geometry(scene)
    blk = list(blockers or []) if cfg.mode == "dynamic" else []

    n_static = len(geo.walls)
    p0, p1, n, d, h = geo.arrays
    mats = list(geo.materials)
    if cfg.vehicle_reflections and blk:
        faces = [f for bl in blk for f in bl.faces()]
        extra = _wall_arrays(faces)
        p0, p1, n, d, h = (np.concatenate([u, v]) for u, v in zip(geo.arrays, extra))
        mats += [f.material for f in faces]

    # candidate chains as (points, surfaces); geometry checked, occlusion pending
    cands: list[tuple[np.ndarray, tuple[int, ...]]] = [(np.stack([tx, rx]), ())]

    if cfg.ground and cfg.max_order >= 1 and tx[2] > 0 and rx[2] > 0:
        s = rx[2] / (rx[2] + tx[2])
        g = rx + s * (tx * [1, 1, -1] - rx)
        g[2] = 0.0
        under = (
            np.all(np.einsum("bmj,j->bm", geo.solid_n, g[:2]) <= geo.solid_d, axis=1).any()
            if geo.solid_h.size else False
        )
        if scene.contains(g) and not under:
            cands.append((np.stack([tx, g, rx]), (GROUND,)))

    if cfg.max_order >= 1 and len(n):
        tx_front = (n @ tx[:2] - d) > _FRONT_EPS
        rx_front = (n @ rx[:2] - d) > _FRONT_EPS
        img1 = _mirror_many(tx, n, d)  # (K, 3)
        s, q = _hit_plane(np.broadcast_to(rx, img1.shape), img1, n, d)
        ok = tx_front & rx_front & (s > 0) & (s < 1) & _on_wall(q, p0, p1, h)
        for k in np.flatnonzero(ok):
            cands.append((np.stack([tx, q[k], rx]), (int(k),)))

        if cfg.max_order >= 2:
            # vehicle faces only take part in single bounces
            ia_all = np.flatnonzero(tx_front[:n_static])
            ib_all = np.flatnonzero(rx_front[:n_static])
            img2 = _mirror_many(img1[ia_all, None, :], n[None, ib_all], d[None, ib_all])
            s2, q2 = _hit_plane(np.broadcast_to(rx, img2.shape), img2, n[None, ib_all], d[None, ib_all])
            ok2 = (
                (s2 > 0) & (s2 < 1)
                & _on_wall(q2, p0[None, ib_all], p1[None, ib_all], h[None, ib_all])
                & (ia_all[:, None] != ib_all[None, :])
            )
            ja, jb = np.nonzero(ok2)
            if len(ja):
                ia, ib = ia_all[ja], ib_all[jb]
                q2v = q2[ja, jb]
                s1, q1 = _hit_plane(q2v, img1[ia], n[ia], d[ia])
                front_q2 = np.einsum("ij,ij->i", q2v[:, :2], n[ia]) - d[ia] > _FRONT_EPS
                front_q1 = np.einsum("ij,ij->i", q1[:, :2], n[ib]) - d[ib] > _FRONT_EPS
                ok1 = (s1 > 0) & (s1 < 1) & _on_wall(q1, p0[ia], p1[ia], h[ia]) & front_q2 & front_q1
                for j in np.flatnonzero(ok1):
                    cands.append((np.stack([tx, q1[j], q2v[j], rx]), (int(ia[j]), int(ib[j]))))

        if cfg.max_order >= 3:
            cands.extend(_third_order(tx, rx, img1[:n_static], n[:n_static], d[:n_static],
                                      p0[:n_static], p1[:n_static], h[:n_static], tx_front[:n_static],
                                      rx_front[:n_static]))

    if not cands:
        return []
    seg_a, seg_b, owner = [], [], []
    for ci, (pts, _) in enumerate(cands):
        seg_a.append(pts[:-1])
        seg_b.append(pts[1:])
        owner.extend([ci] * (len(pts) - 1))
    blocked = _segments_blocked(geo, np.concatenate(seg_a), np.concatenate(seg_b), blk)
    bad = np.zeros(len(cands), dtype=bool)
    np.logical_or.at(bad, np.array(owner), blocked)

    paths = []
    for ci, (pts, surf) in enumerate(cands):
        if bad[ci]:
            continue
        materials = [CONCRETE if k == GROUND else mats[k] for k in surf]
        paths.append(_make_path(pts, surf, materials, vel, cfg))
    paths.sort(key=lambda p: (p.delay, p.surfaces))
    return paths


def _third_order(tx, rx, img1, n, d, p0, p1, h, tx_front, rx_front):
    """Three-bounce chains; plain loops over the pruned two-bounce images."""
    out = []
    K = len(n)
    for a in np.flatnonzero(tx_front):
        img2 = _mirror_many(img1[a][None].repeat(K, 0), n, d)
        for b in range(K):
            if b == a:
                continue
            img3 = _mirror_many(img2[b][None].repeat(K, 0), n, d)
            s3, q3 = _hit_plane(np.broadcast_to(rx, img3.shape), img3, n, d)
            ok3 = rx_front & (s3 > 0) & (s3 < 1) & _on_wall(q3, p0, p1, h)
            ok3[b] = False
            for c in np.flatnonzero(ok3):
                s2, q2 = _hit_plane(q3[c], img2[b], n[b], d[b])
                if not (0 < s2 < 1 and _on_wall(q2, p0[b], p1[b], h[b])):
                    continue
                if n[c] @ q2[:2] - d[c] <= _FRONT_EPS or n[b] @ q3[c][:2] - d[b] <= _FRONT_EPS:
                    continue
                s1, q1 = _hit_plane(q2, img1[a], n[a], d[a])
                if not (0 < s1 < 1 and _on_wall(q1, p0[a], p1[a], h[a])):
                    continue
                if n[b] @ q1[:2] - d[b] <= _FRONT_EPS or n[a] @ q2[:2] - d[a] <= _FRONT_EPS:
                    continue
                out.append((np.stack([tx, q1, q2, q3[c], rx]), (int(a), int(b), int(c))))
    return out


def save_paths(rows, path) -> None:
    """Path dump CSV. ``rows`` yields ``(t, vehicle_id, PathTuple)``."""
    lines = ["t,vehicle_id,dod_az,dod_el,doa_az,doa_el,delay,doppler,power,bounces"]
    for t, vid, p in rows:
        lines.append(
            f"{t},{vid},{p.dod[0]:.12g},{p.dod[1]:.12g},{p.doa[0]:.12g},{p.doa[1]:.12g},"
            f"{p.delay:.12g},{p.doppler:.12g},{p.power:.12g},{p.bounce_count}"
        )
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")
