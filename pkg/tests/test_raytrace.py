import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from chartlab.errors import ConfigError, DomainError, GeometryError
from chartlab.raytrace import (
    GROUND, Blocker, TraceConfig, Wall, doppler_shift, los_blocked, mirror_image, path_gain,
    trace_paths,
)
from chartlab.scene import VEHICLE_CLASSES, VehicleState, simulate_traffic

import oracles
from conftest import box, open_scene, rng_points_in_streets

C = oracles.C
finite = st.floats(-100, 100, allow_nan=False)


def test_mirror_axis_plane():
    wall = Wall((0.0, -5.0), (0.0, 5.0), 10.0)
    assert mirror_image([1.0, 1.0, 2.0], wall).tolist() == pytest.approx([-1.0, 1.0, 2.0], abs=1e-15)


@given(st.tuples(finite, finite, finite), st.tuples(finite, finite), st.tuples(finite, finite))
def test_mirror_matches_plane_formula(p, q0, q1):
    if math.dist(q0, q1) < 1e-3:
        return
    wall = Wall(q0, q1, 5.0)
    got = mirror_image(p, wall)
    want = oracles.reflect_point(p, q0, q1)
    assert np.allclose(got, want, atol=1e-9)
    assert np.allclose(mirror_image(got, wall), p, atol=1e-9)
    # equidistant from the plane, on opposite sides
    n = wall.normal
    assert (n @ (np.array(p[:2]) - q0)) == pytest.approx(-(n @ (got[:2] - q0)), abs=1e-9)


def test_degenerate_wall():
    with pytest.raises(GeometryError):
        mirror_image([0, 0, 0], Wall((1.0, 1.0), (1.0, 1.0), 5.0))


def test_los_blocked_basic():
    empty = open_scene()
    assert not los_blocked(empty, [100, 100, 2], [300, 100, 2])
    scene = open_scene([box(190, 90, 210, 110, height=30)])
    assert los_blocked(scene, [100, 100, 2], [300, 100, 2])
    assert not los_blocked(scene, [100, 100, 40], [300, 100, 40])  # over the roof
    with pytest.raises(DomainError):
        los_blocked(scene, [1, 1, 1], [1, 1, 1])


def test_los_blocked_by_vehicle():
    scene = open_scene()
    bus = VehicleState(0, VEHICLE_CLASSES["bus"], (200.0, 100.0), 0.0, 0.0, 0)
    blk = [Blocker.from_vehicle(bus)]
    assert los_blocked(scene, [100, 100, 1.87], [300, 100, 1.87], blk)
    assert not los_blocked(scene, [100, 100, 10], [300, 100, 10], blk)


def test_los_blocked_dense_sampling(small_city):
    rng = np.random.default_rng(11)
    snaps = simulate_traffic(small_city, 1, 1, 1.0, 30)
    blk = [Blocker.from_vehicle(v) for v in snaps[0].vehicles]
    x0, y0, x1, y1 = small_city.bounds
    disagreements = 0
    for i in range(100):
        a = [rng.uniform(x0, x1), rng.uniform(y0, y1), rng.uniform(0.5, 40)]
        b = [rng.uniform(x0, x1), rng.uniform(y0, y1), rng.uniform(0.5, 40)]
        use = blk if i % 2 else []
        disagreements += los_blocked(small_city, a, b, use) != oracles.sampled_blocked(small_city, a, b, use)
    assert disagreements == 0


def test_free_space_single_path():
    scene = open_scene()
    paths = trace_paths(scene, [350, 500, 2], [0, 0, 0], [650, 500, 2], cfg=TraceConfig(ground=False))
    assert len(paths) == 1
    p = paths[0]
    assert p.bounce_count == 0 and p.is_los
    assert p.delay == pytest.approx(300 / C, rel=1e-12)
    assert p.delay == pytest.approx(1.0007e-6, abs=1e-10)


def test_single_wall_image_identity():
    # a long wall along y = 0 with both ends at 10 m from it
    scene = open_scene([box(0, 480, 1000, 490, height=100)])
    tx, rx = [480.0, 500.0, 1.5], [520.0, 500.0, 1.5]
    paths = trace_paths(scene, tx, [0, 0, 0], rx, cfg=TraceConfig(max_order=1, ground=False))
    assert [p.bounce_count for p in paths] == [0, 1]
    assert paths[1].path_length == pytest.approx(math.hypot(40, 20), rel=1e-12)


def test_ground_bounce():
    scene = open_scene()
    tx, rx = [400.0, 500.0, 3.0], [500.0, 500.0, 20.0]
    paths = trace_paths(scene, tx, [0, 0, 0], rx, cfg=TraceConfig(max_order=1))
    assert [p.surfaces for p in paths] == [(), (GROUND,)]
    assert paths[1].path_length == pytest.approx(math.hypot(100, 23), rel=1e-12)


def test_doppler():
    f0 = 28e9
    assert doppler_shift([1, 0, 0], [0, 0, 0], f0) == 0
    assert doppler_shift([1, 0, 0], [30, 0, 0], f0) == pytest.approx(2802, abs=1)
    assert doppler_shift([1, 0, 0], [30, 0, 0], f0) == pytest.approx(f0 * 30 / C, rel=1e-12)
    assert abs(doppler_shift([1, 1, 0], [5, -5, 0], f0)) < 1e-9


def test_path_gain():
    cfg = TraceConfig()
    g1 = path_gain(1.0, 0, [], cfg)
    assert g1 == pytest.approx((C / (4 * math.pi * 28e9)) ** 2, rel=1e-14)
    assert g1 == pytest.approx(7.26e-7, rel=1e-3)
    assert 10 * math.log10(g1) == pytest.approx(-61.4, abs=0.05)
    assert path_gain(2.0, 0, [], cfg) == pytest.approx(g1 / 4, rel=1e-15)
    assert path_gain(7.0, 1, ["concrete"], cfg) == pytest.approx(path_gain(7.0, 0, [], cfg) * 10 ** -0.6, rel=1e-14)
    with pytest.raises(DomainError):
        path_gain(0.0, 0, [], cfg)


def test_trace_config_errors(small_city):
    with pytest.raises(ConfigError):
        TraceConfig(max_order=4)
    with pytest.raises(GeometryError):
        trace_paths(small_city, [-10, 0, 1], [0, 0, 0], small_city.bs.position)


@pytest.mark.parametrize("order", [2, 3])
def test_forward_reconstruction_grid_city(small_city, order):
    rng = np.random.default_rng(order)
    walls = oracles.building_walls(small_city)
    cfg = TraceConfig(max_order=order)
    bs = small_city.bs.position
    n_checked = 0
    for tx in rng_points_in_streets(small_city, rng, 50):
        paths = trace_paths(small_city, tx, [10, 0, 0], bs, cfg=cfg)
        delays = [p.delay for p in paths]
        assert delays == sorted(delays)
        los = [p for p in paths if p.is_los]
        assert bool(los) == (not los_blocked(small_city, tx, bs))
        for p in paths:
            off, ang, rel = oracles.reconstruction_errors(p, walls)
            assert off < 1e-9 and ang < 1e-9 and rel < 1e-12
            assert p.power > 0 and p.bounce_count == len(p.surfaces) <= order
            assert -math.pi < p.dod[0] <= math.pi and -math.pi / 2 <= p.doa[1] <= math.pi / 2
            for a, b in zip(p.points[:-1], p.points[1:]):
                assert not oracles.sampled_blocked(small_city, a, b, n=2000)
            n_checked += 1
    assert n_checked > 50


def test_reciprocity(small_city):
    rng = np.random.default_rng(5)
    pts = rng_points_in_streets(small_city, rng, 10)
    for a, b in zip(pts[:5], pts[5:]):
        fwd = trace_paths(small_city, a, [0, 0, 0], b)
        rev = trace_paths(small_city, b, [0, 0, 0], a)
        assert len(fwd) == len(rev)
        fl = sorted(p.path_length for p in fwd)
        rl = sorted(p.path_length for p in rev)
        assert np.allclose(fl, rl, rtol=1e-12)
        fwd_dirs = sorted((round(p.path_length, 6), p.dod, p.doa) for p in fwd)
        rev_dirs = sorted((round(p.path_length, 6), p.doa, p.dod) for p in rev)
        for (_, d1, a1), (_, d2, a2) in zip(fwd_dirs, rev_dirs):
            assert np.allclose(d1, d2, atol=1e-9) and np.allclose(a1, a2, atol=1e-9)


def test_dynamic_paths_subset_of_static(small_city):
    rng = np.random.default_rng(8)
    snap = simulate_traffic(small_city, 8, 1, 1.0, 40)[0]
    blk = [Blocker.from_vehicle(v) for v in snap.vehicles]
    bs = small_city.bs.position
    removed = 0
    for tx in rng_points_in_streets(small_city, rng, 30, z=(1.87, 1.87)):
        static = trace_paths(small_city, tx, [0, 0, 0], bs, blk, TraceConfig(mode="static"))
        dynamic = trace_paths(small_city, tx, [0, 0, 0], bs, blk, TraceConfig(mode="dynamic"))
        s_keys = {p.surfaces for p in static}
        assert {p.surfaces for p in dynamic} <= s_keys
        removed += len(static) - len(dynamic)
    assert removed > 0
