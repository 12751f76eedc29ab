import json
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from hamcohom.expr import differentiate, evaluate, parse, to_string
from hamcohom.field import ScalarField, Torus, poisson_bracket
from hamcohom.solvability import (check_critical_vanishing, check_cycle_integrals,
                                  check_solvability, elliptic_test, hyperbolic_q_test,
                                  phi_extension_test, phi_functions)

from conftest import BENCH_G0, GRAD_SQ

RHOS = (0.5, 0.25, 0.125)


def saddle_derivative(g: str) -> str:
    """P_X g for the saddle field X = x d/dx - y d/dy."""
    e = parse(g)
    return to_string(parse(f"x*({to_string(differentiate(e, 'x'))}) - y*({to_string(differentiate(e, 'y'))})"))


@pytest.fixture(scope="module")
def bracket(bench):
    f = bench[0]
    return poisson_bracket(f, ScalarField(BENCH_G0, f.domain))


def test_critical_vanishing(bench, bracket):
    f, crit, _ = bench
    rep = check_critical_vanishing(bracket, crit)
    assert rep.passed and max(r["abs_u"] for r in rep.details) <= 1e-12
    rep = check_critical_vanishing(ScalarField("1"), crit)
    assert not rep.passed and not any(r["pass"] for r in rep.details)
    assert check_critical_vanishing(ScalarField(GRAD_SQ), crit).passed


def test_cycle_integrals(bench, bracket):
    f, _, reeb = bench
    assert check_cycle_integrals(f, 1.0, bracket, reeb, 8).passed
    assert check_cycle_integrals(f, 1.0, "0", reeb, 8).passed
    rep = check_cycle_integrals(f, 1.0, GRAD_SQ, reeb, 8)
    assert not any(r["pass"] for r in rep.details)
    assert all(s[2] > 0 for r in rep.details for s in r["samples"])


def test_cycle_integrals_needs_samples(bench):
    f, _, reeb = bench
    with pytest.raises(ValueError):
        check_cycle_integrals(f, 1.0, "0", reeb, 4)


def test_elliptic_examples():
    r = elliptic_test("x")
    assert r.passed and r.max_abs_mean <= 1e-15
    r = elliptic_test("x^2")
    assert not r.passed
    assert np.allclose(r.integrals, np.pi * r.rho ** 2, rtol=1e-13)
    assert elliptic_test("0").passed
    assert len(elliptic_test("x", n_rho=5).rho) == 5


def test_q_examples():
    assert hyperbolic_q_test("x", N=8).passed
    r = hyperbolic_q_test("1", N=8)
    assert not r.passed and r.first_failure == 0
    r = hyperbolic_q_test("x*y", N=8)
    assert not r.passed and r.first_failure == 1 and r.values[1] == pytest.approx(1)


@pytest.mark.parametrize("u", ["x*y*exp(x + y)", "sin(x)*cos(y) + x^2*y^2", "exp(x*y)"])
def test_q_methods_agree(u):
    a = hyperbolic_q_test(u, N=6, method="taylor").values
    b = hyperbolic_q_test(u, N=6, method="symbolic").values
    assert np.allclose(a, b, rtol=1e-10, atol=1e-12)


def test_q_needs_order():
    with pytest.raises(ValueError):
        hyperbolic_q_test("x", N=0)


def test_phi_examples():
    for r in RHOS:
        assert phi_functions("x", r)[0] == pytest.approx(1 - r, abs=1e-12)
        assert phi_functions("1", r)[0] == pytest.approx(-math.log(r), abs=1e-10)
        assert phi_functions("0", r) == (0.0, 0.0)
        assert phi_functions("0", -r) == (0.0, 0.0)
    with pytest.raises(ValueError):
        phi_functions("x", 0.0)


def test_extension_examples():
    r = phi_extension_test("x")
    assert r.passed and r.value == pytest.approx(1, abs=1e-8) and r.slope == pytest.approx(-1, abs=1e-6)
    r = phi_extension_test("1")
    assert not r.passed and r.divergent
    assert np.allclose(np.diff(r.samples), math.log(2), rtol=1e-8)
    r = phi_extension_test("0")
    assert r.passed and r.value == 0


# random polynomial-trig g; u = P_X g is solvable at the saddle by construction
_G = st.builds(lambda a, b, c, k: f"{a:.3f}*x^{k} + {b:.3f}*sin(y + x^2) + {c:.3f}*x*exp(y)",
               st.floats(-2, 2), st.floats(-2, 2), st.floats(-2, 2), st.integers(1, 3))


@settings(max_examples=15, deadline=None)
@given(_G)
def test_phi_matches_boundary_difference(g):
    u = saddle_derivative(g)
    ge = parse(g)
    for r in RHOS:
        want = evaluate(ge, (1.0, r)) - evaluate(ge, (r, 1.0))
        assert phi_functions(u, r)[0] == pytest.approx(want, abs=1e-8)


@settings(max_examples=15, deadline=None)
@given(_G, st.sampled_from(["", "1", "x*y", "0.5 + x", "x^2*y^2*3"]))
def test_q_and_extension_agree(g, bad):
    u = saddle_derivative(g) + (f" + {bad}" if bad else "")
    q = hyperbolic_q_test(u, N=8).passed
    e = phi_extension_test(u).passed
    assert q == e == (bad == "")


@settings(max_examples=20, deadline=None)
@given(st.sampled_from(["x", "x^2", "0", "x*y", "sin(x)*y^2", "1e-10*x^2"]),
       st.floats(1e-10, 1e-3))
def test_tolerance_is_monotone(u, tol):
    if elliptic_test(u, tol=tol).passed:
        assert elliptic_test(u, tol=10 * tol).passed
    if hyperbolic_q_test(u, N=4, tol=tol).passed:
        assert hyperbolic_q_test(u, N=4, tol=10 * tol).passed


def test_full_report(bench, bracket):
    f, crit, reeb = bench
    rep = check_solvability(f, bracket, critical_points=crit, reeb=reeb)
    assert rep.verdict == "solvable" and rep.exit_code == 0
    doc = json.loads(json.dumps(rep.to_json()))
    assert set(doc) >= {"verdict", "reasons", "critical_vanishing", "cycle_integrals",
                        "elliptic_tests", "hyperbolic_tests"}
    assert len(doc["elliptic_tests"]) == 2 and len(doc["hyperbolic_tests"]) == 2
    assert all(t["phi_extension"]["pass"] for t in doc["hyperbolic_tests"])


def test_obstructed_report(bench):
    f, crit, reeb = bench
    rep = check_solvability(f, "1", critical_points=crit, reeb=reeb)
    assert rep.verdict == "obstructed" and rep.exit_code == 3
    assert rep.reasons[0] == "critical vanishing"


def test_orbit_tests_beat_the_quadratic_chart():
    # a bracket on an asymmetric torus function; the quadratic chart alone would reject it
    T = Torus()
    f = ScalarField("cos(2*pi*x) + 0.5*cos(2*pi*y) + 0.2*sin(2*pi*(x + y))", T)
    u = poisson_bracket(f, ScalarField("sin(2*pi*(x + 2*y)) + cos(2*pi*x)^2", T))
    rep = check_solvability(f, u, samples_per_edge=8)
    assert rep.verdict == "solvable"
    assert all(t["approximate_chart"]["max_abs_mean"] > 1e-3 for t in rep.elliptic_tests)
    assert not any(t["approximate_chart"]["pass"] for t in rep.hyperbolic_tests)
