import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from hamcohom.field import Disk, Rect, ScalarField, Torus
from hamcohom.morse import NotMorseError, build_reeb_graph, check_genericity, find_critical_points

from oracles import level_components


def test_benchmark_critical_points(bench):
    f, crit, reeb = bench
    got = sorted((round(c.location[0], 12) % 1, round(c.location[1], 12) % 1, c.morse_index, c.value)
                 for c in crit)
    # grad f = 0 at sin(2 pi x) = sin(2 pi y) = 0; Hessian is diagonal there
    want = sorted([(0.0, 0.0, 2, 1.5), (0.0, 0.5, 1, 0.5), (0.5, 0.0, 1, -0.5), (0.5, 0.5, 0, -1.5)])
    assert len(got) == 4
    for g, w in zip(got, want):
        assert g[:2] == pytest.approx(w[:2], abs=1e-10)
        assert g[2] == w[2] and g[3] == pytest.approx(w[3], abs=1e-12)
    for c in crit:
        gx, gy = f.gradient(*c.location)
        assert np.hypot(gx, gy) <= 1e-10
        assert abs(np.linalg.det(c.hessian)) > 1e-8


def test_rotation_and_saddle_models():
    D = Disk()
    (c,) = find_critical_points(ScalarField("(x^2 + y^2)/2", D), D)
    assert c.morse_index == 0 and c.value == 0 and np.allclose(c.location, 0)
    (c,) = find_critical_points(ScalarField("x*y", Rect()), Rect())
    assert c.kind == "saddle"


def test_degenerate_is_fatal():
    with pytest.raises(NotMorseError, match="degenerate Hessian"):
        find_critical_points(ScalarField("sin(2*pi*x)^3 + cos(2*pi*y)"), Torus())


def test_benchmark_reeb_graph(bench):
    f, crit, reeb = bench
    assert (len(reeb.nodes), len(reeb.edges), reeb.betti_number) == (4, 4, 1)
    spans = sorted(tuple(np.round(e.value_interval, 9)) for e in reeb.edges)
    assert spans == [(-1.5, -0.5), (-0.5, 0.5), (-0.5, 0.5), (0.5, 1.5)]
    ranks = sorted(n.h1_rank for n in reeb.nodes)
    assert ranks == [0, 0, 2, 2]
    assert check_genericity(f, crit, reeb).passed


def test_reeb_json_shape(bench):
    doc = json.loads(json.dumps(bench[2].to_json()))
    assert set(doc) == {"nodes", "edges"}
    assert set(doc["nodes"][0]) == {"id", "value", "critical_points", "h1_rank"}
    assert set(doc["edges"][0]) == {"id", "node_lo", "node_hi", "value_interval", "seed_path"}


def test_edges_bounded_by_their_nodes(bench):
    _, _, reeb = bench
    for e in reeb.edges:
        lo, hi = e.value_interval
        assert reeb.node(e.node_lo).value == pytest.approx(lo)
        assert reeb.node(e.node_hi).value == pytest.approx(hi)


def test_counts_locally_constant_along_edges(bench):
    f, _, reeb = bench
    xs = np.arange(1024) / 1024
    X, Y = np.meshgrid(xs, xs)
    F = f(X, Y)
    for e in reeb.edges:
        lo, hi = e.value_interval
        counts = {level_components(F, lo + (hi - lo) * s) for s in (0.25, 0.5, 0.75)}
        assert counts == {len(reeb.edges_at_level(lo + (hi - lo) * 0.5))}


def test_shared_saddle_level_fails_genericity():
    T = Torus()
    f = ScalarField("cos(2*pi*x) + cos(2*pi*y)", T)
    crit = find_critical_points(f, T)
    rep = check_genericity(f, crit, build_reeb_graph(f, T, crit))
    # oracle: both saddles lie on one connected 0-level network
    xs = np.arange(1024) / 1024
    X, Y = np.meshgrid(xs, xs)
    assert level_components(np.cos(2 * np.pi * X) + np.cos(2 * np.pi * Y), 1e-9) == 1
    assert not rep.passed and len(rep.violators[0]["saddles"]) == 2


def test_single_saddle_passes():
    R = Rect()
    f = ScalarField("x*y", R)
    crit = find_critical_points(f, R)
    assert check_genericity(f, crit, build_reeb_graph(f, R, crit)).passed


def test_disk_bowl_graph():
    D = Disk()
    f = ScalarField("(x^2 + y^2)/2", D)
    reeb = build_reeb_graph(f, D, find_critical_points(f, D))
    assert len(reeb.nodes) == 1 and len(reeb.edges) == 1
    assert reeb.edges[0].node_hi is None


def test_double_well_is_y_shaped():
    R = Rect(-1.2, 1.2, -1, 1)
    f = ScalarField("(x^2 - 0.5)^2 + y^2 + 0.2*x", R)
    crit = find_critical_points(f, R)
    reeb = build_reeb_graph(f, R, crit)
    kinds = sorted(c.kind for c in crit)
    assert kinds == ["minimum", "minimum", "saddle"]
    assert len(reeb.nodes) == 3 and len(reeb.edges) == 3
    saddle = next(n.id for n in reeb.nodes if n.h1_rank == 2)
    below, above = reeb.edges_at(saddle)
    assert len(below) == 2 and len(above) == 1


@settings(max_examples=8, deadline=None)
@given(st.floats(0.2, 0.8), st.floats(-0.1, 0.1))
def test_euler_characteristic_on_torus(b, c):
    T = Torus()
    f = ScalarField(f"cos(2*pi*x) + {b!r}*cos(2*pi*y) + {c!r}*sin(2*pi*(x + y))", T)
    crit = find_critical_points(f, T)
    idx = [cp.morse_index for cp in crit]
    assert idx.count(0) - idx.count(1) + idx.count(2) == 0
