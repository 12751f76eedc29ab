import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from hamcohom.field import Disk, Rect, ScalarField, SymplecticDensity, Torus, poisson_bracket
from hamcohom.flow import (TracingError, integrate_orbit, line_integral, line_integrals,
                           trace_orbits, trace_transversal, write_orbit_csv)

BOWL = "(x^2 + y^2)/2"


@pytest.mark.parametrize("rho", [0.1, 0.5, 0.9])
def test_rotation_orbit_is_the_circle(rho):
    s = integrate_orbit(ScalarField(BOWL, Disk()), (rho, 0.0))
    assert s.period == pytest.approx(2 * math.pi, abs=1e-7)
    t, p = s.uniform(256)
    # analytic orbit of X = (y, -x) from (rho, 0)
    assert np.max(np.abs(p - rho * np.stack([np.cos(t), -np.sin(t)], 1))) < 1e-8


def test_density_rescales_period():
    D = Disk()
    s = integrate_orbit(ScalarField(BOWL, D), (0.4, 0.0), SymplecticDensity(2.0, D))
    assert s.period == pytest.approx(4 * math.pi, abs=1e-7)


def test_separatrix_seed_fails():
    with pytest.raises(TracingError):
        integrate_orbit(ScalarField("x*y", Rect()), (0.5, 0.0))


def test_seed_at_critical_point_fails(bench):
    f, _, _ = bench
    with pytest.raises(TracingError):
        integrate_orbit(f, (0.5, 0.5))


def test_line_integral_examples():
    D = Disk()
    s = integrate_orbit(ScalarField(BOWL, D), (1.0, 0.0))
    assert line_integral(s, "1") == pytest.approx(s.period, rel=1e-12)
    assert abs(line_integral(s, "y")) <= 1e-10
    f = ScalarField(BOWL, D)
    u = poisson_bracket(f, ScalarField("exp(x)*sin(y)", D))
    assert abs(line_integral(s, u)) <= 1e-8 * s.period


def test_orbit_invariants_on_random_seeds(bench):
    f, _, _ = bench
    seeds = np.random.default_rng(3).random((100, 2))
    out = trace_orbits(f, seeds, raise_on_error=False)
    good = [o for o in out if not isinstance(o, TracingError)]
    assert len(good) >= 90
    for o in good:
        assert o.period > 0 and o.closure() <= 1e-8 and o.level_drift() <= 1e-8


def test_tolerance_halving_is_harmless(bench):
    f, _, _ = bench
    u = "sin(2*pi*x)^2 + y"
    for seed in [(0.1, 0.3), (0.3, 0.9), (0.05, 0.05)]:
        a = line_integral(integrate_orbit(f, seed, tol=1e-10), u)
        b = line_integral(integrate_orbit(f, seed, tol=5e-11), u)
        assert abs(a - b) <= 1e-8 * abs(a)


@pytest.mark.parametrize("c", [2.0, 10.0])
def test_period_scales_with_density(bench, c):
    f, _, _ = bench
    seeds = [(0.1, 0.3), (0.3, 0.9), (0.7, 0.2)]
    t1 = [o.period for o in trace_orbits(f, seeds)]
    tc = [o.period for o in trace_orbits(f, seeds, SymplecticDensity(c))]
    assert np.allclose(tc, c * np.array(t1), rtol=1e-7, atol=0)


_G0 = st.sampled_from(["sin(2*pi*x)", "cos(2*pi*(x - 2*y))", "exp(0.4*cos(2*pi*x))*sin(2*pi*y)",
                       "sin(2*pi*x)^2*cos(4*pi*y)", "cos(2*pi*x)*sin(2*pi*(x + y))"])


@settings(max_examples=20, deadline=None)
@given(st.floats(0.2, 0.8), st.floats(-0.15, 0.15), _G0)
def test_bracket_integrates_to_zero(b, c, g0):
    T = Torus()
    f = ScalarField(f"cos(2*pi*x) + {b!r}*cos(2*pi*y) + {c!r}*sin(2*pi*(x + y))", T)
    seeds = np.random.default_rng(11).random((5, 2))
    orbits = [o for o in trace_orbits(f, seeds, raise_on_error=False)
              if not isinstance(o, TracingError)]
    u = poisson_bracket(f, ScalarField(g0, T))
    I = line_integrals(orbits, [u])[:, 0]
    tau = np.array([o.period for o in orbits])
    assert np.all(np.abs(I) <= 1e-7 * tau)


def test_transversal_is_affine_in_level():
    f = ScalarField(BOWL, Disk(0, 0, 3))
    path = trace_transversal(f, 1.0, (1.0, 0.0), 2.0)
    vals = f(path.points[:, 0], path.points[:, 1])
    assert np.max(np.abs(vals - (0.5 + path.offsets))) <= 1e-9
    assert path.end == pytest.approx([2.0, 0.0], abs=1e-8)
    assert not path.truncated


def test_transversal_reaches_target(bench):
    f, crit, _ = bench
    path = trace_transversal(f, 1.0, (0.2, 0.3), 0.9, critical_points=crit)
    assert f.value(path.end) == pytest.approx(0.9, abs=1e-8)


def test_transversal_stops_short_of_saddle(bench):
    f, crit, _ = bench
    # straight up the x-axis towards the saddle value 0.5 at (0, 0.5)
    path = trace_transversal(f, 1.0, (0.0, 0.35), 0.5, critical_points=crit)
    assert path.truncated
    assert np.hypot(*(path.end - np.array([0.0, 0.5]))) >= 0.05 - 1e-9


def test_orbit_csv(tmp_path):
    s = integrate_orbit(ScalarField(BOWL, Disk()), (0.5, 0.0))
    p = tmp_path / "o.csv"
    write_orbit_csv(p, s)
    lines = p.read_text().splitlines()
    assert lines[0].startswith("# period=") and lines[1] == "t,x,y"
    assert len(lines) == len(s.times) + 2
