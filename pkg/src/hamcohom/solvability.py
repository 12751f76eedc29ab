"""Necessary and sufficient conditions for ``{f, g} = u`` to have a solution.

Local tests work in normal-form coordinates around a critical point: an
extremum looks like ``f = c +- (x^2 + y^2)/2`` and a saddle like ``f = c + xy``
after a linear change of variables built from the Hessian.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.integrate import quad

from .expr import Expr, X, Y, as_expr, differentiate, evaluate, taylor_coefficients
from .field import Disk, Domain, ScalarField, SymplecticDensity, as_field
from .flow import Flow, TracingError, arc_integrals, line_integrals, trace_orbits
from .morse import CriticalPoint, ReebEdge, ReebGraph, build_reeb_graph, find_critical_points

__all__ = [
    "TOL_VANISH", "TOL_CYCLE", "TOL_ELLIPTIC", "TOL_Q", "TOL_EXTENSION",
    "quadratic_chart", "check_critical_vanishing", "check_cycle_integrals", "elliptic_test",
    "hyperbolic_q_test", "phi_functions", "phi_extension_test", "extension_surrogate",
    "SolvabilityReport", "check_solvability", "edge_seeds",
]

TOL_VANISH = 1e-8
TOL_CYCLE = 1e-6
TOL_ELLIPTIC = 1e-9
TOL_Q = 1e-8
TOL_EXTENSION = 1e-5


def quadratic_chart(cp: CriticalPoint) -> np.ndarray:
    """Matrix ``M`` with ``f(p + M z) = c + q(z) + O(|z|^3)`` and ``det M > 0``.

    ``q(z) = +-(z1^2 + z2^2)/2`` at extrema and ``q(z) = z1 z2`` at saddles.
    """
    lam, R = np.linalg.eigh(cp.hessian)
    if cp.morse_index == 1:
        # eigh sorts ascending: lam[0] < 0 < lam[1]
        e_pos, e_neg = R[:, 1] / math.sqrt(lam[1]), R[:, 0] / math.sqrt(-lam[0])
        B = np.column_stack([e_pos, e_neg])
        if np.linalg.det(B) > 0:
            B[:, 1] *= -1
        M = B @ (np.array([[1.0, 1.0], [1.0, -1.0]]) / math.sqrt(2.0))
    else:
        M = R / np.sqrt(np.abs(lam))
        if np.linalg.det(M) < 0:
            M[:, 1] *= -1
    return M


# ---------------------------------------------------------------------------
# critical vanishing


@dataclass
class PartReport:
    passed: bool
    tol: float
    details: list = field(default_factory=list)
    failures: list = field(default_factory=list)

    def to_json(self) -> dict:
        return {"pass": self.passed, "tol": self.tol, "details": self.details,
                "failures": self.failures}


def check_critical_vanishing(u, crit: list[CriticalPoint], tol: float = TOL_VANISH) -> PartReport:
    val = _scalar(u)
    rows = []
    for i, cp in enumerate(crit):
        v = abs(float(val(cp.location)))
        rows.append({"critical_point": i, "location": list(cp.location), "abs_u": v,
                     "pass": v <= tol})
    return PartReport(all(r["pass"] for r in rows), tol, rows)


# ---------------------------------------------------------------------------
# cycle integrals


def edge_seeds(f: ScalarField, edge: ReebEdge, levels, iters: int = 40) -> np.ndarray:
    """Points on ``edge`` at the given levels, moved from the nearest seed along grad f."""
    pts = []
    fx, fy = f.dx(), f.dy()
    for c in levels:
        p = np.array(edge.seed_near(c), dtype=float)
        for _ in range(iters):
            gx, gy = fx.value(p), fy.value(p)
            r = f.value(p) - c
            p = p - r / (gx * gx + gy * gy) * np.array([gx, gy])
            if abs(r) <= 1e-14 * max(1.0, abs(c)):
                break
        pts.append(p)
    return np.array(pts).reshape(-1, 2)


def _edge_levels(edge: ReebEdge, n: int) -> np.ndarray:
    lo, hi = edge.value_interval
    return lo + (hi - lo) * np.arange(1, n + 1) / (n + 1)


def check_cycle_integrals(f, a, u, reeb: ReebGraph, samples_per_edge: int = 16,
                          tol: float = TOL_CYCLE, nodes: int = 2048) -> PartReport:
    """``|int_s u| <= tol * tau(s)`` on sampled orbits of every Reeb edge.

    Each edge row carries ``samples = [[level, int_s u / tau, int_s u, tau], ...]``.
    Tracing failures go to ``failures`` and leave the report inconclusive.
    """
    if samples_per_edge < 8:
        raise ValueError("samples_per_edge must be at least 8")
    f = as_field(f, reeb.domain)
    u = as_field(u, reeb.domain)
    flow = Flow(f, a)
    seeds, levels, owners = [], [], []
    for e in reeb.edges:
        lv = _edge_levels(e, samples_per_edge)
        seeds.append(edge_seeds(f, e, lv))
        levels.extend(lv)
        owners.extend([e.id] * len(lv))
    seeds = np.concatenate(seeds) if seeds else np.zeros((0, 2))
    traced = trace_orbits(f, seeds, flow=flow, raise_on_error=False, record=False)
    good = [k for k, o in enumerate(traced) if not isinstance(o, TracingError)]
    vals = line_integrals([traced[k] for k in good], [u], nodes)[:, 0] if good else []
    by_edge: dict[int, list] = {e.id: [] for e in reeb.edges}
    failures = []
    for k, o in enumerate(traced):
        if isinstance(o, TracingError):
            failures.append({"edge": owners[k], "level": levels[k], "reason": o.reason})
    for k, v in zip(good, vals):
        tau = traced[k].period
        by_edge[owners[k]].append([levels[k], v / tau, float(v), tau])
    rows = []
    for e in reeb.edges:
        samp = by_edge[e.id]
        worst = max((abs(s[1]) for s in samp), default=0.0)
        rows.append({"edge": e.id, "samples": samp, "max_abs_mean": worst,
                     "pass": all(abs(s[2]) <= tol * s[3] for s in samp)})
    passed = all(r["pass"] for r in rows) and not failures
    return PartReport(passed, tol, rows, failures)


# ---------------------------------------------------------------------------
# elliptic model


@dataclass
class EllipticResult:
    passed: bool
    rho: np.ndarray
    means: np.ndarray
    tol: float = TOL_ELLIPTIC

    @property
    def max_abs_mean(self) -> float:
        return float(np.max(np.abs(self.means))) if len(self.means) else 0.0

    @property
    def integrals(self) -> np.ndarray:
        """``int_0^{2 pi} u(rho cos t, rho sin t) dt`` at each radius."""
        return 2 * math.pi * self.means

    def to_json(self) -> dict:
        return {"pass": self.passed, "tol": self.tol, "max_abs_mean": self.max_abs_mean,
                "rho": self.rho.tolist(), "means": self.means.tolist()}


def elliptic_test(u, center=(0.0, 0.0), r: float = 1.0, n_rho: int = 16,
                  nodes: int = 1024, tol: float = TOL_ELLIPTIC) -> EllipticResult:
    """Circle means of ``u`` around ``center`` at radii ``r i/(n_rho+1)``."""
    u = as_field(u, Disk(center[0], center[1], r))
    rho = r * np.arange(1, n_rho + 1) / (n_rho + 1)
    t = 2 * math.pi * np.arange(nodes) / nodes
    R, T = np.meshgrid(rho, t, indexing="ij")
    vals = u(center[0] + R * np.cos(T), center[1] + R * np.sin(T))
    means = vals.mean(axis=1)
    return EllipticResult(bool(np.all(np.abs(means) <= tol)), rho, means, tol)


# ---------------------------------------------------------------------------
# hyperbolic model


@dataclass
class QTestResult:
    passed: bool
    values: list[float]
    first_failure: int | None
    tol: float = TOL_Q

    def to_json(self) -> dict:
        return {"pass": self.passed, "q_values": self.values, "first_failure": self.first_failure,
                "tol": self.tol}


def _q_expr(u: Expr) -> Expr:
    return differentiate(differentiate(u, "x"), "y")


def hyperbolic_q_test(u, p0=(0.0, 0.0), N: int = 8, tol: float = TOL_Q,
                      method: str = "taylor") -> QTestResult:
    """``(Q^n u)(p0)`` for ``n = 0..N`` with ``Q = d^2/dx dy``.

    ``method="symbolic"`` differentiates the expression tree; ``"taylor"``
    reads the values off truncated power series, ``(Q^n u)(p0) = (n!)^2 c[n, n]``,
    which stays cheap for large composed expressions.
    """
    if N < 1:
        raise ValueError("N must be at least 1")
    expr = u.expr if isinstance(u, ScalarField) else as_expr(u)
    if expr is None:
        raise TypeError("the Q-test needs an expression; use phi_extension_test for grid data")
    if method == "taylor":
        c = taylor_coefficients(expr, p0, N)
        vals = [float(c[n, n] * math.factorial(n) ** 2) for n in range(N + 1)]
    elif method == "symbolic":
        vals = []
        e = expr
        for n in range(N + 1):
            vals.append(float(evaluate(e, p0)))
            if n < N:
                e = _q_expr(e)
    else:
        raise ValueError(f"unknown method {method!r}")
    bad = [n for n, v in enumerate(vals) if abs(v) > tol]
    return QTestResult(not bad, vals, bad[0] if bad else None, tol)


def _scalar(u):
    if isinstance(u, ScalarField):
        return u.value
    e = as_expr(u)
    return lambda p: evaluate(e, p)


def phi_functions(u, rho: float, epsabs: float = 1e-12) -> tuple[float, float]:
    """``(phi++, phi--)`` for ``rho > 0`` and ``(phi+-, phi-+)`` for ``rho < 0``."""
    if rho == 0 or not -1 < rho < 1:
        raise ValueError("rho must lie in (-1, 0) or (0, 1)")
    val = _scalar(u)
    lo = math.log(abs(rho))

    def plus(t):
        return val((math.exp(t), rho * math.exp(-t)))

    def minus(t):
        return val((-math.exp(t), -rho * math.exp(-t)))

    opts = dict(epsabs=epsabs, epsrel=1e-13, limit=200)
    return quad(plus, lo, 0.0, **opts)[0], quad(minus, lo, 0.0, **opts)[0]


@dataclass
class ExtensionResult:
    passed: bool
    divergent: bool
    mismatch: float
    value: float
    slope: float
    rho: np.ndarray
    samples: np.ndarray
    tol: float = TOL_EXTENSION

    def to_json(self) -> dict:
        return {"pass": self.passed, "divergent": self.divergent, "mismatch": self.mismatch,
                "value": self.value, "slope": self.slope, "tol": self.tol,
                "rho": self.rho.tolist(), "samples": self.samples.tolist()}


DYADIC = np.arange(4, 15)


def extension_surrogate(rho: np.ndarray, phi: np.ndarray, k: int = 4,
                        tol: float = TOL_EXTENSION) -> ExtensionResult:
    """Decide from samples at ``rho = s * 2^-j`` (``j = 4..14``) whether ``phi`` extends smoothly to 0.

    Two degree-``k`` fits, on ``j = 4..9`` and ``j = 9..14``, are compared term
    by term at the common scale ``rho[5]``; a pure logarithm is caught earlier
    by its constant dyadic increments.
    """
    rho = np.asarray(rho, dtype=float)
    phi = np.asarray(phi, dtype=float)
    ref = rho[5]
    scale = max(1.0, float(np.max(np.abs(phi))))
    d = np.diff(phi)
    divergent = bool(abs(d[-1]) > tol * scale and abs(d[-1] - d[-2]) <= 0.05 * abs(d[-1]))
    s = rho / ref
    coarse = np.polynomial.polynomial.polyfit(s[:6], phi[:6], k)
    fine = np.polynomial.polynomial.polyfit(s[5:], phi[5:], k)
    mismatch = float(np.max(np.abs(coarse - fine)) / scale)
    passed = (not divergent) and mismatch <= tol
    return ExtensionResult(passed, divergent, mismatch, float(fine[0]), float(fine[1] / ref),
                           rho, phi, tol)


def phi_extension_test(u, k: int = 4, tol: float = TOL_EXTENSION) -> ExtensionResult:
    """Smooth-extension surrogate for ``phi++`` of ``u`` in saddle coordinates."""
    rho = 2.0 ** -DYADIC.astype(float)
    phi = np.array([phi_functions(u, r)[0] for r in rho])
    return extension_surrogate(rho, phi, k, tol)


# ---------------------------------------------------------------------------
# global report


@dataclass
class SolvabilityReport:
    critical_vanishing: PartReport
    cycle_integrals: PartReport
    elliptic_tests: list[dict]
    hyperbolic_tests: list[dict]
    inconclusive: list[str] = field(default_factory=list)

    @property
    def reasons(self) -> list[str]:
        out = []
        if not self.critical_vanishing.passed:
            out.append("critical vanishing")
        if any(not r["pass"] for r in self.cycle_integrals.details):
            out.append("cycle integrals")
        if any(not t["pass"] for t in self.elliptic_tests):
            out.append("elliptic")
        if any(not t["pass"] for t in self.hyperbolic_tests):
            out.append("hyperbolic")
        return out

    @property
    def solvable(self) -> bool:
        return not self.reasons and not self.inconclusive

    @property
    def verdict(self) -> str:
        if self.reasons:
            return "obstructed"
        return "inconclusive" if self.inconclusive else "solvable"

    @property
    def exit_code(self) -> int:
        return {"solvable": 0, "obstructed": 3, "inconclusive": 4}[self.verdict]

    def to_json(self) -> dict:
        return {"verdict": self.verdict, "reasons": self.reasons,
                "inconclusive": self.inconclusive,
                "critical_vanishing": self.critical_vanishing.to_json(),
                "cycle_integrals": self.cycle_integrals.to_json(),
                "elliptic_tests": self.elliptic_tests,
                "hyperbolic_tests": self.hyperbolic_tests}


def _orbit_elliptic(flow: Flow, u: ScalarField, cp: CriticalPoint, M: np.ndarray, r: float,
                    n_rho: int, tol: float) -> dict:
    rho = r * np.arange(1, n_rho + 1) / (n_rho + 1)
    p0 = np.array(cp.location)
    seeds = p0 + np.outer(rho, M[:, 0])
    orbits = trace_orbits(flow.f, seeds, flow=flow, raise_on_error=False, record=False)
    bad = [o for o in orbits if isinstance(o, TracingError)]
    if bad:
        return {"pass": True, "inconclusive": bad[0].reason, "rho": rho.tolist(), "means": []}
    I = line_integrals(orbits, [u])[:, 0]
    means = I / np.array([o.period for o in orbits])
    return {"pass": bool(np.all(np.abs(means) <= tol)), "tol": tol,
            "max_abs_mean": float(np.max(np.abs(means))), "rho": rho.tolist(),
            "means": means.tolist()}


def _on_chart_line(f: ScalarField, p0, M, fixed: int, value: float, guess, levels):
    """Points ``p0 + M z`` with ``z[fixed] = value`` and ``f = levels`` (Newton in the free coordinate)."""
    free = 1 - fixed
    fx, fy = f.dx(), f.dy()
    w = np.array(guess, dtype=float)
    for _ in range(50):
        Z = np.empty((len(w), 2))
        Z[:, fixed] = value
        Z[:, free] = w
        P = p0 + Z @ M.T
        slope = fx(P[:, 0], P[:, 1]) * M[0, free] + fy(P[:, 0], P[:, 1]) * M[1, free]
        step = (f(P[:, 0], P[:, 1]) - levels) / slope
        w = w - step
        if np.all(np.abs(step) <= 1e-15 * abs(value)):
            break
    Z[:, free] = w
    return p0 + Z @ M.T


def saddle_phi_samples(flow: Flow, u: ScalarField, cp: CriticalPoint, M: np.ndarray, r: float,
                       sign: float = 1.0):
    """Flow integrals of ``u`` across the saddle chart square on the levels ``c + rho_j``.

    Arcs start on the chart line ``{y = sign r}`` and stop on ``{x = sign r}``;
    ``sign = -1`` gives the opposite quadrant.  Both end points sit exactly on
    the level, so the samples depend smoothly on ``rho`` whenever a smooth
    solution exists.  Returns ``(rho, phi, ok)``.
    """
    p0 = np.array(cp.location)
    rho = r * r * 2.0 ** -DYADIC.astype(float)
    levels = cp.value + rho
    starts = _on_chart_line(flow.f, p0, M, 1, sign * r, sign * rho / r, levels)
    ends = _on_chart_line(flow.f, p0, M, 0, sign * r, sign * rho / r, levels)
    _, I, ok = arc_integrals(flow, starts, ends, [u])
    return rho, I[:, 0], ok


def _chart_expr(u: ScalarField, cp: CriticalPoint, M: np.ndarray) -> Expr | None:
    if not u.is_expression:
        return None
    x0, y0 = cp.location
    return u.expr.subs(x=x0 + M[0, 0] * X + M[0, 1] * Y, y=y0 + M[1, 0] * X + M[1, 1] * Y)


def check_solvability(f, u, a=None, domain: Domain | None = None, *,
                      critical_points: list[CriticalPoint] | None = None,
                      reeb: ReebGraph | None = None, samples_per_edge: int = 16,
                      N: int = 8, chart_radius: float = 0.1, n_rho: int = 8,
                      tol_vanish: float = TOL_VANISH, tol_cycle: float = TOL_CYCLE,
                      tol_elliptic: float = TOL_ELLIPTIC, tol_extension: float = TOL_EXTENSION,
                      q_order: int | None = None) -> SolvabilityReport:
    """Run every solvability condition for ``{f, g} = u`` and collect the verdict.

    The elliptic and hyperbolic conditions are evaluated on actual orbits of
    ``X_f`` near each critical point.  The quadratic-chart versions (circle
    means, Q-values) are attached as approximate diagnostics only.
    """
    f = as_field(f, domain)
    domain = domain or f.domain
    u = as_field(u, domain)
    dens = a if isinstance(a, SymplecticDensity) else SymplecticDensity(1.0 if a is None else a,
                                                                         domain)
    crit = critical_points if critical_points is not None else find_critical_points(f, domain)
    reeb = reeb if reeb is not None else build_reeb_graph(f, domain, crit)
    flow = Flow(f, dens)
    inconclusive = []

    cv = check_critical_vanishing(u, crit, tol_vanish)
    ci = check_cycle_integrals(f, dens, u, reeb, samples_per_edge, tol_cycle)
    for fl in ci.failures:
        inconclusive.append(f"edge {fl['edge']} level {fl['level']:.6g}: {fl['reason']}")

    ell, hyp = [], []
    for i, cp in enumerate(crit):
        M = quadratic_chart(cp)
        if cp.morse_index in (0, 2):
            row = {"critical_point": i, "location": list(cp.location)}
            row.update(_orbit_elliptic(flow, u, cp, M, chart_radius, n_rho, tol_elliptic))
            if "inconclusive" in row:
                inconclusive.append(f"critical point {i}: {row['inconclusive']}")
            approx = _chart_expr(u, cp, M)
            if approx is not None:
                sign = 1.0 if cp.morse_index == 0 else -1.0
                e = elliptic_test(approx, (0.0, 0.0), chart_radius, n_rho, tol=tol_elliptic)
                row["approximate_chart"] = {"max_abs_mean": e.max_abs_mean, "chart_sign": sign}
            ell.append(row)
        else:
            rho, phi, ok = saddle_phi_samples(flow, u, cp, M, chart_radius)
            row = {"critical_point": i, "location": list(cp.location)}
            if not ok.all():
                inconclusive.append(f"critical point {i}: saddle arcs did not close")
                row.update({"pass": True, "phi_extension": None})
            else:
                ext = extension_surrogate(rho, phi, tol=tol_extension)
                row.update({"pass": ext.passed, "phi_extension": ext.to_json()})
            approx = _chart_expr(u, cp, M)
            if approx is not None:
                q = hyperbolic_q_test(approx, (0.0, 0.0), q_order or N, method="taylor")
                row["approximate_chart"] = q.to_json()
            hyp.append(row)
    return SolvabilityReport(cv, ci, ell, hyp, inconclusive)
