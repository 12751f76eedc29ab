"""End-to-end acceptance criteria, one test each.

Every test prints a single ``[PASS]``/``[FAIL]`` line with its measured
figure and wall time.  Run alone with ``pytest tests/test_acceptance.py -s``
or as a script.
"""
import math
import time

import numpy as np
import pytest

from hamcohom.field import Disk, Grid, ScalarField, SymplecticDensity, poisson_bracket
from hamcohom.flow import integrate_orbit, line_integrals, trace_orbits
from hamcohom.solvability import (check_solvability, edge_seeds, hyperbolic_q_test,
                                  phi_extension_test, phi_functions)
from hamcohom.solver import (ObstructedError, kernel_check, solve_elliptic_local, solve_global,
                             verify)

from conftest import BENCH_F, BENCH_G0, GRAD_SQ
from oracles import cstep, grid_critical_values, level_components, random_pair_member


def report(capsys, name, ok, detail, t0, budget):
    dt = time.perf_counter() - t0
    ok = ok and dt < budget
    line = f"[{'PASS' if ok else 'FAIL'}] {name}: {detail} ({dt:.1f} s, budget {budget:g} s)"
    if capsys is None:
        print(line)
    else:
        with capsys.disabled():
            print("\n" + line)
    return ok


# ---------------------------------------------------------------------------
# 1. bracket against complex-step derivatives


def c1_bracket(capsys=None):
    t0 = time.perf_counter()
    rng = np.random.default_rng(20240611)
    worst = 0.0
    cases = 0
    for a_src, a_np in (("1", lambda x, y: 1.0 + 0 * x),
                        ("1 + 0.5*sin(2*pi*x)", lambda x, y: 1 + 0.5 * np.sin(2 * np.pi * x))):
        for _ in range(20):
            (fs, fn), (gs, gn) = random_pair_member(rng), random_pair_member(rng)
            x, y = rng.random(1000), rng.random(1000)
            ref = (cstep(fn, x, y, "y") * cstep(gn, x, y, "x")
                   - cstep(fn, x, y, "x") * cstep(gn, x, y, "y")) / a_np(x, y)
            got = poisson_bracket(ScalarField(fs), ScalarField(gs), SymplecticDensity(a_src))(x, y)
            scale = max(1.0, float(np.max(np.abs(ref))))
            worst = max(worst, float(np.max(np.abs(got - ref))) / scale)
            cases += 1
    return report(capsys, "C1 bracket oracle", worst <= 1e-12,
                  f"{cases} pairs x 1000 points, max rel err {worst:.2e}", t0, 5)


# ---------------------------------------------------------------------------
# 2. integrals of brackets over closed orbits

G0S = ["sin(2*pi*y)", "cos(2*pi*x)", "sin(2*pi*(x+y))", "cos(2*pi*x)*sin(4*pi*y)",
       "exp(0.5*sin(2*pi*x))", "sin(2*pi*x)^2*cos(2*pi*y)"]


def c2_orbit_integrals(bench, capsys=None):
    t0 = time.perf_counter()
    f, crit, reeb = bench
    seeds = []
    for e in reeb.edges:
        lo, hi = e.value_interval
        levels = lo + (hi - lo) * np.array([0.05, 0.25, 0.5, 0.75, 0.95])
        seeds.extend(edge_seeds(f, e, levels))
    orbits = trace_orbits(f, np.array(seeds))
    us = [poisson_bracket(f, ScalarField(g, f.domain)) for g in G0S]
    I = line_integrals(orbits, us)
    tau = np.array([o.period for o in orbits])
    worst = float(np.max(np.abs(I) / tau[:, None]))
    n = I.size
    return report(capsys, "C2 orbit integrals of brackets", worst <= 1e-7 and n >= 100,
                  f"{n} combinations, max |int|/tau {worst:.2e}", t0, 60)


# ---------------------------------------------------------------------------
# 3. periods of the rotation model


def c3_periods(capsys=None):
    t0 = time.perf_counter()
    disk = Disk()
    f = ScalarField("(x^2 + y^2)/2", disk)
    err1 = max(abs(integrate_orbit(f, (r, 0.0)).period - 2 * math.pi)
               for r in np.arange(1, 10) / 10)
    a2 = SymplecticDensity(2.0, disk)
    err2 = max(abs(integrate_orbit(f, (r, 0.0), a2).period - 4 * math.pi)
               for r in np.arange(1, 10) / 10)
    return report(capsys, "C3 rotation periods", max(err1, err2) <= 1e-7,
                  f"|tau-2pi| {err1:.1e}, |tau-4pi| (a=2) {err2:.1e}", t0, 5)


# ---------------------------------------------------------------------------
# 4. Reeb graph against a brute-force component count


def c4_reeb(bench, capsys=None):
    t0 = time.perf_counter()
    f, crit, reeb = bench
    xs = np.arange(1024) / 1024
    X, Y = np.meshgrid(xs, xs)
    F = np.cos(2 * np.pi * X) + 0.5 * np.cos(2 * np.pi * Y)
    cvals = grid_critical_values(F)
    levels = np.linspace(F.min(), F.max(), 66)[1:-1]
    levels = levels[np.min(np.abs(levels[:, None] - cvals[None, :]), axis=1) > 0.01]
    counts = {}
    for c in levels:
        band = int(np.searchsorted(cvals, c))
        counts.setdefault(band, set()).add(level_components(F, c))
    consistent = all(len(v) == 1 for v in counts.values())
    oracle_edges = sum(next(iter(v)) for v in counts.values())
    oracle_nodes = len(cvals)
    oracle_b1 = oracle_edges - oracle_nodes + 1
    agree = all(len(reeb.edges_at_level(c)) == level_components(F, c) for c in levels[::8])
    ok = (consistent and agree and len(reeb.nodes) == oracle_nodes == 4
          and len(reeb.edges) == oracle_edges == 4 and reeb.betti_number == oracle_b1 == 1)
    return report(capsys, "C4 Reeb benchmark",
                  ok, f"graph {len(reeb.nodes)}/{len(reeb.edges)}/b1={reeb.betti_number}, "
                  f"oracle {oracle_nodes}/{oracle_edges}/b1={oracle_b1} over {len(levels)} levels",
                  t0, 30)


# ---------------------------------------------------------------------------
# 5. saddle model: Q-test against the phi extension test

# u = x g_x - y g_y is the derivative of g along the saddle flow of f = xy
SOLVABLE = ["x", "-y", "2*x^2", "-2*y^2", "x^2*y", "x*cos(x)", "-y*exp(y)", "x*cos(x) - y",
            "3*x^3 - 3*y^3"]
OBSTRUCTED = ["1", "x*y", "x + 0.3", "2 - y", "x*y*cos(x)", "x*y + x", "exp(x*y)"]


def c5_saddle(capsys=None):
    t0 = time.perf_counter()
    bad = []
    for u, expect in [(s, True) for s in SOLVABLE] + [(s, False) for s in OBSTRUCTED]:
        q = hyperbolic_q_test(u, N=8).passed
        e = phi_extension_test(u).passed
        if not (q == e == expect):
            bad.append(f"{u}: q={q} ext={e}")
    phi_err = max(abs(phi_functions("x", r)[0] - (1 - r)) for r in (0.5, 0.25, 0.125))
    n = len(SOLVABLE) + len(OBSTRUCTED)
    return report(capsys, "C5 saddle catalog", not bad and phi_err <= 1e-8,
                  f"{n - len(bad)}/{n} verdicts agree{' ' + str(bad) if bad else ''}, "
                  f"phi++(x) err {phi_err:.1e}", t0, 20)


# ---------------------------------------------------------------------------
# 6. elliptic round trip


def c6_elliptic(capsys=None):
    t0 = time.perf_counter()
    res = []
    for u, exact in (("x", lambda X, Y: Y), ("y/(x^2 + y^2)^0.5", lambda X, Y: -X / np.hypot(X, Y))):
        s = solve_elliptic_local(u, grid_n=65)
        X, Y = s.grid.mesh()
        m = s.grid.mask & (np.hypot(X, Y) >= 0.05)
        res.append(s.diagnostics["residual_max"])
        with np.errstate(invalid="ignore", divide="ignore"):
            res.append(float(np.max(np.abs(s.grid.values - exact(X, Y))[m])))
    try:
        solve_elliptic_local("x^2")
        refused = False
        cert_err = math.inf
    except ObstructedError as exc:
        refused = exc.reason == "elliptic"
        cert = np.array(exc.certificate)
        cert_err = float(np.max(np.abs(cert[:, 1] - np.pi * cert[:, 0] ** 2)))
    worst = max(res)
    return report(capsys, "C6 elliptic round trip", worst <= 1e-6 and refused and cert_err <= 1e-9,
                  f"max residual {worst:.1e}, x^2 refused={refused} (pi rho^2 err {cert_err:.1e})",
                  t0, 10)


# ---------------------------------------------------------------------------
# 7. global round trip on the benchmark


def c7_global(bench, capsys=None):
    t0 = time.perf_counter()
    f, crit, reeb = bench
    u = poisson_bracket(f, ScalarField(BENCH_G0, f.domain))
    rep = check_solvability(f, u, critical_points=crit, reeb=reeb)
    sol = solve_global(f, 1.0, u, reeb, 256, critical_points=crit, report=rep)
    st = verify(f, 1.0, sol, u, critical_points=crit, width=0.05)
    off, tube = st["residual_off_tube_max"], st["residual_tube_max"]
    r1 = check_solvability(f, "1", critical_points=crit, reeb=reeb)
    r2 = check_solvability(f, GRAD_SQ, critical_points=crit, reeb=reeb)
    ok = (rep.verdict == "solvable" and off <= 1e-4 and tube <= 1e-2
          and not r1.solvable and "critical vanishing" in r1.reasons
          and not r2.solvable and "cycle integrals" in r2.reasons)
    return report(capsys, "C7 global round trip", ok,
                  f"{rep.verdict}, off-tube {off:.1e}, tube {tube:.1e}; u=1 -> {r1.reasons}; "
                  f"|grad f|^2 -> {r2.reasons}", t0, 120)


# ---------------------------------------------------------------------------
# 8. gauge invariance and linearity modulo the kernel

U2_G0 = "cos(2*pi*x)*sin(2*pi*y) + 0.3*sin(2*pi*(x + y))"


def c8_gauge_linearity(bench, capsys=None):
    t0 = time.perf_counter()
    f, crit, reeb = bench
    T = f.domain
    u1 = poisson_bracket(f, ScalarField(BENCH_G0, T))
    u2 = poisson_bracket(f, ScalarField(U2_G0, T))
    u12 = ScalarField(u1.expr + u2.expr, T)
    s1, s2, s12 = (solve_global(f, 1.0, u, reeb, 128, critical_points=crit, check=False)
                   for u in (u1, u2, u12))
    r0 = verify(f, 1.0, s1, u1, critical_points=crit)["residual"]
    rk = verify(f, 1.0, s1.add_kernel(f"sin(3*({BENCH_F}))"), u1, critical_points=crit)["residual"]
    gauge = float(np.nanmax(np.abs(r0 - rk)))
    D = s12.grid.values - s1.grid.values - s2.grid.values
    lin = kernel_check(f, 1.0, ScalarField(grid=Grid(T, D), domain=T), tol=1e-5, reeb=reeb)
    return report(capsys, "C8 gauge and linearity", gauge <= 1e-12 and lin,
                  f"gauge residual change {gauge:.1e}, g(u1+u2)-g(u1)-g(u2) in kernel={lin}",
                  t0, 60)


# ---------------------------------------------------------------------------


def test_c1_bracket_oracle(capsys):
    assert c1_bracket(capsys)


def test_c2_orbit_integrals(bench, capsys):
    assert c2_orbit_integrals(bench, capsys)


def test_c3_periods(capsys):
    assert c3_periods(capsys)


def test_c4_reeb_benchmark(bench, capsys):
    assert c4_reeb(bench, capsys)


def test_c5_saddle_catalog(capsys):
    assert c5_saddle(capsys)


def test_c6_elliptic_round_trip(capsys):
    assert c6_elliptic(capsys)


@pytest.mark.slow
def test_c7_global_round_trip(bench, capsys):
    assert c7_global(bench, capsys)


@pytest.mark.slow
def test_c8_gauge_and_linearity(bench, capsys):
    assert c8_gauge_linearity(bench, capsys)


if __name__ == "__main__":
    from hamcohom.field import Torus
    from hamcohom.morse import build_reeb_graph, find_critical_points

    T = Torus()
    f = ScalarField(BENCH_F, T)
    crit = find_critical_points(f, T)
    b = (f, crit, build_reeb_graph(f, T, crit))
    results = [c1_bracket(), c2_orbit_integrals(b), c3_periods(), c4_reeb(b), c5_saddle(),
               c6_elliptic(), c7_global(b), c8_gauge_linearity(b)]
    print(f"{sum(results)}/{len(results)} criteria pass")
