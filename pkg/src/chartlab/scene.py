"""Procedural Manhattan-grid city, road graph and vehicle traffic.

Everything here is a pure function of ``(seed, params)``. Geometry is in
meters, angles in radians, the city lies in the z >= 0 half-space.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .channel import ArrayConfig
from .errors import ConfigError, DataError

CONCRETE = "concrete"
GLASS = "glass"
MATERIALS = (CONCRETE, GLASS)

ANTENNA_ABOVE_ROOF = 0.2


@dataclass(frozen=True)
class VehicleClass:
    name: str
    rooftop_height: float
    length: float
    width: float
    max_speed: float

    @property
    def body_extent(self) -> tuple[float, float, float]:
        return (self.length, self.width, self.rooftop_height)


VEHICLE_CLASSES = {
    "sedan": VehicleClass("sedan", 1.67, 4.7, 1.85, 14.0),
    "hatchback": VehicleClass("hatchback", 1.80, 4.1, 1.80, 14.0),
    "truck": VehicleClass("truck", 2.76, 7.5, 2.40, 11.0),
    "bus": VehicleClass("bus", 4.41, 12.0, 2.55, 10.0),
}
# sampling mix used by simulate_traffic, same order as VEHICLE_CLASSES
CLASS_MIX = (0.45, 0.25, 0.15, 0.15)


@dataclass(frozen=True)
class Building:
    footprint: np.ndarray  # (n, 2), counterclockwise
    height: float
    material: str

    def __post_init__(self):
        fp = np.asarray(self.footprint, dtype=float)
        if fp.ndim != 2 or fp.shape[1] != 2 or len(fp) < 3:
            raise ConfigError("building footprint needs >= 3 vertices")
        if polygon_area(fp) <= 0:
            raise ConfigError("building footprint must be counterclockwise")
        if not (0 < self.height <= 200):
            raise ConfigError(f"building height {self.height} outside (0, 200]")
        if self.material not in MATERIALS:
            raise ConfigError(f"unknown material {self.material!r}")
        object.__setattr__(self, "footprint", fp)


@dataclass(frozen=True)
class BaseStation:
    position: np.ndarray  # (3,)
    array: ArrayConfig


@dataclass(frozen=True)
class RoadGraph:
    nodes: np.ndarray  # (n, 2)
    edges: tuple[tuple[int, int], ...]
    widths: tuple[float, ...]

    def neighbors(self, node: int) -> list[int]:
        out = []
        for a, b in self.edges:
            if a == node:
                out.append(b)
            elif b == node:
                out.append(a)
        return sorted(out)

    def edge_width(self, a: int, b: int) -> float:
        key = (min(a, b), max(a, b))
        for (u, v), w in zip(self.edges, self.widths):
            if (min(u, v), max(u, v)) == key:
                return w
        raise KeyError(key)

    def is_connected(self) -> bool:
        n = len(self.nodes)
        if n == 0:
            return False
        seen = {0}
        stack = [0]
        while stack:
            u = stack.pop()
            for v in self.neighbors(u):
                if v not in seen:
                    seen.add(v)
                    stack.append(v)
        return len(seen) == n

    def on_corridor(self, p, tol: float = 1e-9) -> bool:
        """True if ``p`` lies within half a lane width of some edge centerline."""
        p = np.asarray(p, dtype=float)[:2]
        for (a, b), w in zip(self.edges, self.widths):
            if _point_segment_distance(p, self.nodes[a], self.nodes[b]) <= w / 2 + tol:
                return True
        return False


@dataclass(frozen=True, eq=False)
class Scene:
    bounds: tuple[float, float, float, float]  # xmin, ymin, xmax, ymax
    buildings: tuple[Building, ...]
    roads: RoadGraph
    bs: BaseStation

    @property
    def diagonal(self) -> float:
        xmin, ymin, xmax, ymax = self.bounds
        return math.hypot(xmax - xmin, ymax - ymin)

    def contains(self, p, tol: float = 0.0) -> bool:
        xmin, ymin, xmax, ymax = self.bounds
        return xmin - tol <= p[0] <= xmax + tol and ymin - tol <= p[1] <= ymax + tol


@dataclass(frozen=True)
class VehicleState:
    vehicle_id: int
    vclass: VehicleClass
    position: tuple[float, float]
    heading: float
    speed: float
    t: int


@dataclass(frozen=True)
class Snapshot:
    t: int
    vehicles: tuple[VehicleState, ...]


@dataclass(frozen=True)
class ScenarioParams:
    """Knobs of the procedural city.

    ``bs_column`` picks the BS intersection along the southern boundary
    street, ``None`` meaning the middle one.
    """

    width: float = 550.0
    depth: float = 670.0
    block_size: float = 60.0
    street_width: float = 15.0
    height_range: tuple[float, float] = (12.0, 45.0)
    glass_fraction: float = 0.3
    max_setback: float = 3.0
    chamfer_range: tuple[float, float] = (4.0, 12.0)
    bs_height: float = 21.7
    bs_column: int | None = None
    bs_array: ArrayConfig = field(
        default_factory=lambda: ArrayConfig(rows=4, cols=8, spacing=0.5, boresight=math.pi / 2)
    )

    def validate(self) -> None:
        if min(self.width, self.depth, self.block_size, self.street_width) <= 0:
            raise ConfigError("scene dimensions must be positive")
        if self.street_width >= self.block_size:
            raise ConfigError("street wider than block")
        lo, hi = self.height_range
        if not (0 < lo <= hi <= 200):
            raise ConfigError(f"invalid building height range {self.height_range}")
        if not (0 <= self.glass_fraction <= 1):
            raise ConfigError("glass_fraction must lie in [0, 1]")
        if not (0 <= self.max_setback < (self.block_size - 1.0) / 2):
            raise ConfigError("max_setback too large for block size")
        c_lo, c_hi = self.chamfer_range
        if not (0 <= c_lo <= c_hi < (self.block_size - 2 * self.max_setback) / 2):
            raise ConfigError(f"invalid chamfer range {self.chamfer_range}")
        if self.bs_height <= 0:
            raise ConfigError("bs_height must be positive")
        pitch = self.block_size + self.street_width
        if (self.width - self.street_width) // pitch < 1 or (self.depth - self.street_width) // pitch < 1:
            raise ConfigError("bounds too small for a single block")


def polygon_area(poly) -> float:
    """Signed shoelace area, positive for counterclockwise vertex order."""
    poly = np.asarray(poly, dtype=float)
    x, y = poly[:, 0], poly[:, 1]
    return 0.5 * float(np.dot(x, np.roll(y, -1)) - np.dot(np.roll(x, -1), y))


def point_in_polygon(p, poly, tol: float = 0.0) -> bool:
    """Convex, counterclockwise polygons only."""
    poly = np.asarray(poly, dtype=float)
    e = np.roll(poly, -1, axis=0) - poly
    r = np.asarray(p, dtype=float)[:2] - poly
    cross = e[:, 0] * r[:, 1] - e[:, 1] * r[:, 0]
    return bool(np.all(cross >= -tol))


def _point_segment_distance(p, a, b) -> float:
    ab = b - a
    denom = float(ab @ ab)
    s = 0.0 if denom == 0 else min(1.0, max(0.0, float((p - a) @ ab) / denom))
    return float(np.linalg.norm(p - (a + s * ab)))


def generate_city(seed: int, params: ScenarioParams | None = None) -> Scene:
    """Build a Manhattan grid of blocks with one building each.

    Footprints are rectangles with their four corners cut at 45 degrees
    (chamfer lengths drawn from ``chamfer_range``), which gives the
    specular tracer diagonal facades to turn around street corners.

    Streets run around every block, so the outermost ring of the grid is a
    road too. The grid is centered inside ``(0, 0)-(width, depth)``.
    """
    params = params or ScenarioParams()
    params.validate()
    rng = np.random.default_rng(seed)

    pitch = params.block_size + params.street_width
    nx = int((params.width - params.street_width) // pitch)
    ny = int((params.depth - params.street_width) // pitch)
    x0 = (params.width - (nx * pitch + params.street_width)) / 2
    y0 = (params.depth - (ny * pitch + params.street_width)) / 2
    hw = params.street_width / 2

    buildings = []
    lo, hi = params.height_range
    for j in range(ny):
        for i in range(nx):
            bx = x0 + params.street_width + i * pitch
            by = y0 + params.street_width + j * pitch
            sb = rng.uniform(0.0, params.max_setback, size=4)  # west, south, east, north
            xa, xb = bx + sb[0], bx + params.block_size - sb[2]
            ya, yb = by + sb[1], by + params.block_size - sb[3]
            height = float(rng.uniform(lo, hi))
            material = GLASS if rng.random() < params.glass_fraction else CONCRETE
            fp = _chamfered_rect(xa, ya, xb, yb, rng.uniform(*params.chamfer_range, size=4))
            buildings.append(Building(fp, height, material))

    # intersections on street centerlines
    xs = x0 + hw + pitch * np.arange(nx + 1)
    ys = y0 + hw + pitch * np.arange(ny + 1)
    nodes = np.array([[x, y] for y in ys for x in xs])
    idx = lambda i, j: j * (nx + 1) + i  # noqa: E731
    edges, widths = [], []
    for j in range(ny + 1):
        for i in range(nx + 1):
            if i < nx:
                edges.append((idx(i, j), idx(i + 1, j)))
                widths.append(params.street_width)
            if j < ny:
                edges.append((idx(i, j), idx(i, j + 1)))
                widths.append(params.street_width)
    roads = RoadGraph(nodes, tuple(edges), tuple(widths))

    col = nx // 2 if params.bs_column is None else params.bs_column
    if not 0 <= col <= nx:
        raise ConfigError(f"bs_column {col} outside 0..{nx}")
    bx, by = nodes[idx(col, 0)]
    bs = BaseStation(np.array([bx, by, params.bs_height]), params.bs_array)
    return Scene((0.0, 0.0, float(params.width), float(params.depth)), tuple(buildings), roads, bs)


def _chamfered_rect(xa, ya, xb, yb, cut) -> np.ndarray:
    """Counterclockwise octagon; a zero cut keeps the square corner."""
    c_sw, c_se, c_ne, c_nw = cut
    pts = [
        (xa + c_sw, ya), (xb - c_se, ya), (xb, ya + c_se), (xb, yb - c_ne),
        (xb - c_ne, yb), (xa + c_nw, yb), (xa, yb - c_nw), (xa, ya + c_sw),
    ]
    out = [pts[0]]
    for p in pts[1:]:
        if np.hypot(p[0] - out[-1][0], p[1] - out[-1][1]) > 1e-9:
            out.append(p)
    if np.hypot(out[0][0] - out[-1][0], out[0][1] - out[-1][1]) <= 1e-9:
        out.pop()
    return np.array(out, dtype=float)


def ve_antenna_position(v: VehicleState) -> np.ndarray:
    x, y = v.position
    return np.array([x, y, v.vclass.rooftop_height + ANTENNA_ABOVE_ROOF])


def _lane_point(nodes, a, b, s, offset):
    pa, pb = nodes[a], nodes[b]
    d = pb - pa
    length = float(np.hypot(*d))
    u = d / length
    right = np.array([u[1], -u[0]])
    p = pa + s * u + offset * right
    return (float(p[0]), float(p[1])), math.atan2(u[1], u[0])


def simulate_traffic(
    scene: Scene,
    seed: int,
    n_steps: int,
    dt: float,
    n_vehicles: int,
    speed: float | None = None,
) -> list[Snapshot]:
    """Random walks on the road graph, one lane per direction.

    Each vehicle keeps a constant speed drawn in ``[0.5, 1] * max_speed`` of
    its class (or ``speed`` for all vehicles when given) and picks its next
    edge at random at every node, avoiding U-turns unless at a dead end.
    Snapshot ``t`` is the state after ``t`` steps.
    """
    roads = scene.roads
    if len(roads.nodes) == 0 or len(roads.edges) == 0:
        raise ConfigError("empty road graph")
    if n_steps < 1 or dt <= 0 or n_vehicles < 0:
        raise ConfigError("need n_steps >= 1, dt > 0, n_vehicles >= 0")
    if not roads.is_connected():
        raise ConfigError("road graph is not connected")

    rng = np.random.default_rng(seed)
    names = list(VEHICLE_CLASSES)
    nodes = roads.nodes
    lengths = {}
    for a, b in roads.edges:
        lengths[(a, b)] = lengths[(b, a)] = float(np.hypot(*(nodes[b] - nodes[a])))

    fleet = []
    for vid in range(n_vehicles):
        vc = VEHICLE_CLASSES[names[rng.choice(len(names), p=CLASS_MIX)]]
        e = roads.edges[rng.integers(len(roads.edges))]
        a, b = (e if rng.random() < 0.5 else (e[1], e[0]))
        s = float(rng.uniform(0, lengths[(a, b)]))
        v = float(rng.uniform(0.5, 1.0) * vc.max_speed) if speed is None else float(speed)
        if not 0 <= v <= vc.max_speed:
            raise ConfigError(f"speed {v} outside [0, {vc.max_speed}] for {vc.name}")
        fleet.append([vid, vc, a, b, s, v])

    snaps = []
    for t in range(n_steps):
        states = []
        for vid, vc, a, b, s, v in fleet:
            offset = roads.edge_width(a, b) / 4
            pos, heading = _lane_point(nodes, a, b, s, offset)
            states.append(VehicleState(vid, vc, pos, heading, v, t))
        snaps.append(Snapshot(t, tuple(states)))
        for veh in fleet:
            _, _, a, b, s, v = veh
            s += v * dt
            while s >= lengths[(a, b)] and v > 0:
                s -= lengths[(a, b)]
                options = [n for n in roads.neighbors(b) if n != a] or [a]
                a, b = b, options[rng.integers(len(options))]
            veh[2:5] = [a, b, s]
    return snaps


# -- persistence ---------------------------------------------------------------
# Scene text format, one record per line, whitespace separated:
#   bounds <xmin> <ymin> <xmax> <ymax>
#   bs <x> <y> <z> <rows> <cols> <spacing> <boresight>
#   building <id> <material> <height> <n> <x1> <y1> ... <xn> <yn>
#   node <id> <x> <y>
#   edge <a> <b> <width>

_F = "{:.9f}"


def save_scene(scene: Scene, path) -> None:
    f = _F.format
    lines = ["# chartlab scene v1"]
    lines.append("bounds " + " ".join(f(v) for v in scene.bounds))
    arr = scene.bs.array
    lines.append(
        "bs " + " ".join(f(v) for v in scene.bs.position)
        + f" {arr.rows} {arr.cols} {f(arr.spacing)} {f(arr.boresight)}"
    )
    for k, b in enumerate(scene.buildings):
        pts = " ".join(f(v) for v in b.footprint.ravel())
        lines.append(f"building {k} {b.material} {f(b.height)} {len(b.footprint)} {pts}")
    for k, (x, y) in enumerate(scene.roads.nodes):
        lines.append(f"node {k} {f(x)} {f(y)}")
    for (a, b), w in zip(scene.roads.edges, scene.roads.widths):
        lines.append(f"edge {a} {b} {f(w)}")
    Path(path).write_text("\n".join(lines) + "\n")


def load_scene(path) -> Scene:
    bounds = bs = None
    buildings, nodes, edges, widths = [], [], [], []
    for lineno, line in enumerate(Path(path).read_text().splitlines(), 1):
        if not line.strip() or line.startswith("#"):
            continue
        tok = line.split()
        try:
            kind = tok[0]
            if kind == "bounds":
                bounds = tuple(float(v) for v in tok[1:5])
            elif kind == "bs":
                arr = ArrayConfig(int(tok[4]), int(tok[5]), float(tok[6]), float(tok[7]))
                bs = BaseStation(np.array([float(v) for v in tok[1:4]]), arr)
            elif kind == "building":
                n = int(tok[4])
                fp = np.array([float(v) for v in tok[5:5 + 2 * n]]).reshape(n, 2)
                buildings.append(Building(fp, float(tok[3]), tok[2]))
            elif kind == "node":
                nodes.append((float(tok[2]), float(tok[3])))
            elif kind == "edge":
                edges.append((int(tok[1]), int(tok[2])))
                widths.append(float(tok[3]))
            else:
                raise ValueError(f"unknown record {kind!r}")
        except (ValueError, IndexError) as exc:
            raise DataError(f"{path}:{lineno}: {exc}") from exc
    if bounds is None or bs is None:
        raise DataError(f"{path}: missing bounds or bs record")
    roads = RoadGraph(np.array(nodes, dtype=float).reshape(-1, 2), tuple(edges), tuple(widths))
    return Scene(bounds, tuple(buildings), roads, bs)


def save_snapshots(snaps: list[Snapshot], path) -> None:
    """CSV with columns t, vehicle_id, class, x, y, heading, speed."""
    f = _F.format
    rows = ["t,vehicle_id,class,x,y,heading,speed"]
    for snap in snaps:
        for v in snap.vehicles:
            rows.append(
                f"{v.t},{v.vehicle_id},{v.vclass.name},{f(v.position[0])},{f(v.position[1])},"
                f"{f(v.heading)},{f(v.speed)}"
            )
    Path(path).write_text("\n".join(rows) + "\n")


def load_snapshots(path) -> list[Snapshot]:
    by_t: dict[int, list[VehicleState]] = {}
    lines = Path(path).read_text().splitlines()
    for line in lines[1:]:
        t, vid, name, x, y, heading, speed = line.split(",")
        v = VehicleState(int(vid), VEHICLE_CLASSES[name], (float(x), float(y)),
                         float(heading), float(speed), int(t))
        by_t.setdefault(v.t, []).append(v)
    return [Snapshot(t, tuple(vs)) for t, vs in sorted(by_t.items())]
