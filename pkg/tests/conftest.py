import math

import numpy as np
import pytest
from hypothesis import settings

from chartlab.channel import ArrayConfig
from chartlab.scene import BaseStation, Building, RoadGraph, ScenarioParams, Scene, generate_city

settings.register_profile("chartlab", max_examples=25, deadline=None)
settings.load_profile("chartlab")


def open_scene(buildings=(), size=1000.0):
    """Square scene with an arbitrary building set and a single road."""
    roads = RoadGraph(np.array([[0.0, size / 2], [size, size / 2]]), ((0, 1),), (10.0,))
    bs = BaseStation(np.array([size / 2, size / 2, 10.0]), ArrayConfig(1, 1))
    return Scene((0.0, 0.0, size, size), tuple(buildings), roads, bs)


def box(x0, y0, x1, y1, height=20.0, material="concrete"):
    fp = np.array([[x0, y0], [x1, y0], [x1, y1], [x0, y1]], dtype=float)
    return Building(fp, height, material)


SMALL = ScenarioParams(width=250.0, depth=250.0)


@pytest.fixture(scope="session")
def small_city():
    return generate_city(3, SMALL)


@pytest.fixture(scope="session")
def city():
    return generate_city(0)


def rng_points_in_streets(scene, rng, n, z=(1.5, 5.0)):
    """Random points within the street corridors of a generated city."""
    roads = scene.roads
    out = []
    while len(out) < n:
        k = rng.integers(len(roads.edges))
        a, b = roads.edges[k]
        w = roads.widths[k]
        pa, pb = roads.nodes[a], roads.nodes[b]
        u = (pb - pa) / np.linalg.norm(pb - pa)
        p = pa + rng.uniform(0, 1) * (pb - pa) + rng.uniform(-0.4, 0.4) * w * np.array([u[1], -u[0]])
        out.append([p[0], p[1], rng.uniform(*z)])
    return np.array(out)


def wrap_angle(a):
    return math.remainder(a, 2 * math.pi)


_CRITERIA = {}


def record_criterion(n, ok, detail):
    """Store one acceptance verdict; printed in the terminal summary."""
    _CRITERIA[n] = (ok, detail)


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(_CRITERIA):
        ok, detail = _CRITERIA[n]
        terminalreporter.write_line(f"criterion {n:2d}: {'PASS' if ok else 'FAIL'}  {detail}")
