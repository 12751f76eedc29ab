"""Solutions of ``{f, g} = u``: local model solvers, the global solver and checks.

The global solver writes ``g(p) = G_E(f(p)) + int_{R_E(f(p))}^{p} u dt`` on each
Reeb edge ``E``: the integral runs along the orbit from a reference point on a
transversal curve ``R_E`` and ``G_E`` is a function of the level only, that is,
an element of the kernel.  ``G_E`` makes ``g`` zero-mean on orbits away from
saddles and continuous across the separatrices near them.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np
from numpy.polynomial import polynomial as P
from scipy.integrate import quad
from scipy.interpolate import CubicSpline, RectBivariateSpline
from scipy import ndimage

from .expr import Expr, as_expr
from .field import (Disk, Domain, Grid, Rect, ScalarField, SymplecticDensity, as_field,
                    grid_axes, write_grid_csv)
from .flow import (DELTA_SEP, Flow, TracingError, _Sections, arc_integrals, run_batch,
                   trace_orbits, trace_transversal, line_integrals)
from .morse import CriticalPoint, ReebEdge, ReebGraph, build_reeb_graph, check_genericity, \
    find_critical_points
from .solvability import (DYADIC, SolvabilityReport, check_solvability, edge_seeds,
                          elliptic_test, extension_surrogate, phi_functions, phi_extension_test)

__all__ = [
    "ObstructedError", "Solution", "ObstructionClass", "solve_elliptic_local",
    "solve_hyperbolic_local", "solve_global", "verify", "obstruction_class", "kernel_check",
    "kernel_variation", "separatrix_tubes", "smoothstep", "flat_step",
]


class ObstructedError(RuntimeError):
    """The equation has no smooth solution; ``reason`` names the failed condition."""

    def __init__(self, message: str, reason: str, certificate=None, report=None):
        super().__init__(message)
        self.reason = reason
        self.certificate = certificate
        self.report = report


def flat_step(t):
    """C-infinity ramp from 0 (t <= 0) to 1 (t >= 1), flat to all orders at both ends."""
    t = np.clip(np.asarray(t, dtype=float), 0.0, 1.0)
    with np.errstate(divide="ignore", over="ignore"):
        a = np.where(t > 0, np.exp(-1.0 / t), 0.0)
        b = np.where(t < 1, np.exp(-1.0 / (1.0 - t)), 0.0)
    return a / (a + b)


def smoothstep(t):
    """Quintic ramp: 0 for t <= 0, 1 for t >= 1, C^2 in between."""
    t = np.clip(t, 0.0, 1.0)
    return t * t * t * (10.0 - 15.0 * t + 6.0 * t * t)


@dataclass
class Solution:
    g: ScalarField
    normalization: str
    diagnostics: dict = field(default_factory=dict)
    kernel: Expr | None = None      # exact kernel term added on top of the grid part
    evaluator: object = field(default=None, repr=False)

    @property
    def grid(self) -> Grid:
        return self.g.grid

    def __call__(self, x, y):
        if self.evaluator is not None:
            v = self.evaluator(x, y)
        else:
            v = self.g(x, y)
        if self.kernel is not None:
            x, y = self.g.domain.normalize(x, y)
            v = v + self.kernel.veval(x, y)
        return v

    def add_kernel(self, kappa) -> "Solution":
        """A new solution with the exact kernel element ``kappa`` (an expression) added."""
        k = as_expr(kappa.expr if isinstance(kappa, ScalarField) else kappa)
        total = k if self.kernel is None else self.kernel + k
        return replace(self, kernel=total, diagnostics=dict(self.diagnostics))

    def to_json(self) -> dict:
        return self.diagnostics

    def write(self, out_dir, stem: str = "solution") -> tuple[Path, Path]:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        grid = self.grid
        if self.kernel is not None:
            X, Y = grid.mesh()
            grid = replace(grid, values=grid.values + self.kernel.veval(X, Y))
        csv = out / f"{stem}.csv"
        write_grid_csv(csv, grid, normalization=self.normalization)
        js = out / f"{stem}_diagnostics.json"
        from .cli import dumps
        js.write_text(dumps(self.diagnostics) + "\n", encoding="utf-8")
        return csv, js


# ---------------------------------------------------------------------------
# elliptic model


def _circle_coeffs(v, rho: np.ndarray, n_theta: int) -> np.ndarray:
    """Fourier coefficients of the zero-mean antiderivative in theta on each circle."""
    th = 2 * np.pi * np.arange(n_theta) / n_theta
    R, T = np.meshgrid(rho, th, indexing="ij")
    V = v(R * np.cos(T), R * np.sin(T))
    Vh = np.fft.rfft(V, axis=1) / n_theta
    k = np.arange(Vh.shape[1])
    Gh = np.zeros_like(Vh)
    Gh[:, 1:] = Vh[:, 1:] / (1j * k[1:])
    if n_theta % 2 == 0:
        Gh[:, -1] = 0.0
    return Gh


def _eval_series(Gh: np.ndarray, theta: np.ndarray, deriv: bool = False) -> np.ndarray:
    k = np.arange(Gh.shape[1])
    E = np.exp(1j * np.outer(theta, k)) if theta.ndim == 1 else np.exp(1j * theta[..., None] * k)
    C = Gh * (1j * k) if deriv else Gh
    w = np.where(k == 0, 1.0, 2.0)
    return np.real(np.sum(C * w * E, axis=-1))


def solve_elliptic_local(u, r: float = 1.0, a=None, *, n_rho: int = 128, n_theta: int = 1024,
                         grid_n: int = 129, check_rho_min: float = 0.05) -> Solution:
    """Solve the rotation model on ``Disk(0, r)`` circle by circle.

    Without ``a`` this solves ``X g = u`` for ``X = -y d/dx + x d/dy``; with a
    density ``a`` it solves ``{(x^2 + y^2)/2, g} = u``, i.e. ``d_theta g = -a u``.
    Each circle carries the antiderivative with zero mean.
    """
    dom = Disk(0.0, 0.0, r)
    u = as_field(u, dom)
    if a is None:
        v = u
    else:
        dens = a if isinstance(a, SymplecticDensity) else SymplecticDensity(a, dom)
        if dens.expr is None or u.expr is None:
            raise TypeError("a density needs expression-backed u and a")
        v = ScalarField(-(dens.expr * u.expr), dom)
    test = elliptic_test(v, (0.0, 0.0), r, n_rho=16)
    if not test.passed:
        cert = [[float(p), float(i)] for p, i in zip(test.rho, test.integrals)]
        raise ObstructedError(
            f"circle integrals do not vanish (max |mean| = {test.max_abs_mean:.3g})",
            "elliptic", certificate=cert)
    rho = r * (np.arange(n_rho) + 0.5) / n_rho
    Gh_polar = _circle_coeffs(v, rho, n_theta)

    def evaluate(x, y):
        x = np.asarray(x, dtype=float)
        y = np.asarray(y, dtype=float)
        shape = np.broadcast(x, y).shape
        xb, yb = np.broadcast_to(x, shape).ravel(), np.broadcast_to(y, shape).ravel()
        out = np.zeros(xb.shape)
        rr = np.hypot(xb, yb)
        tt = np.arctan2(yb, xb)
        live = np.flatnonzero(rr > 0)
        for s in range(0, live.size, 512):
            idx = live[s:s + 512]
            Gh = _circle_coeffs(v, rr[idx], n_theta)
            k = np.arange(Gh.shape[1])
            w = np.where(k == 0, 1.0, 2.0)
            out[idx] = np.real(np.sum(Gh * w * np.exp(1j * tt[idx, None] * k), axis=1))
        return out.reshape(shape)

    def x_derivative(x, y):
        """``d_theta g`` of the returned solution, spectrally exact on each circle."""
        x = np.asarray(x, dtype=float).ravel()
        y = np.asarray(y, dtype=float).ravel()
        rr, tt = np.hypot(x, y), np.arctan2(y, x)
        out = np.zeros(x.shape)
        for s in range(0, x.size, 512):
            Gh = _circle_coeffs(v, rr[s:s + 512], n_theta)
            k = np.arange(Gh.shape[1])
            w = np.where(k == 0, 1.0, 2.0)
            out[s:s + 512] = np.real(np.sum(Gh * (1j * k) * w * np.exp(1j * tt[s:s + 512, None] * k), axis=1))
        return out

    xs, ys = grid_axes(dom, grid_n)
    X, Y = np.meshgrid(xs, ys)
    mask = X * X + Y * Y <= r * r
    vals = np.full(X.shape, np.nan)
    vals[mask] = evaluate(X[mask], Y[mask])
    g = ScalarField(grid=Grid(dom, vals, mask, {"solver": "elliptic"}), domain=dom)

    # residual of d_theta g = v at off-node radii and angles
    rc = np.linspace(max(check_rho_min, r * 1e-3), r * (1 - 1e-9), 61)
    tc = 2 * np.pi * (np.arange(257) + 0.5) / 257
    RC, TC = np.meshgrid(rc, tc, indexing="ij")
    xc, yc = (RC * np.cos(TC)).ravel(), (RC * np.sin(TC)).ravel()
    res = np.abs(x_derivative(xc, yc) - v(xc, yc))
    diag = {"solver": "elliptic", "residual_max": float(res.max()),
            "residual_mean": float(res.mean()), "residual_rho_min": float(rc[0]),
            "max_abs_circle_mean": test.max_abs_mean}
    sol = Solution(g, "per-circle-zero-mean", diag, evaluator=evaluate)
    sol.polar = (rho, 2 * np.pi * np.arange(n_theta) / n_theta,
                 np.fft.irfft(Gh_polar * n_theta, n=n_theta, axis=1))
    sol.theta_derivative = x_derivative
    return sol


# ---------------------------------------------------------------------------
# hyperbolic model

_GL_X, _GL_W = np.polynomial.legendre.leggauss(10)


def _flow_integral(u, x0, y0, panels: int = 24):
    """``int_0^T u(x0 e^t, y0 e^-t) dt`` with ``T = -ln|x0|`` (flow until ``|x| = 1``)."""
    x0 = np.asarray(x0, dtype=float)
    y0 = np.asarray(y0, dtype=float)
    T = -np.log(np.abs(x0))
    h = T / panels
    out = np.zeros(x0.shape)
    for j in range(panels):
        for xi, wi in zip(_GL_X, _GL_W):
            t = h * (j + 0.5 * (xi + 1.0))
            out += 0.5 * wi * h * u(x0 * np.exp(t), y0 * np.exp(-t))
    return out


def _axis_integral(u, pts: np.ndarray, which: str) -> np.ndarray:
    """``int_0^inf u`` along an axis towards the origin (``'y'``) or out of it (``'x'``)."""
    out = []
    for s in pts:
        if which == "y":
            fn = lambda t: u.value((0.0, s * math.exp(-t)))
        else:
            fn = lambda t: u.value((s * math.exp(-t), 0.0))
        out.append(quad(fn, 0.0, np.inf, epsabs=1e-13, epsrel=1e-12, limit=200)[0])
    return np.array(out)


def _extension_poly(samples_rho: np.ndarray, values: np.ndarray, k: int):
    ext = extension_surrogate(samples_rho, values, k)
    ref = samples_rho[5]
    fine = P.polyfit(samples_rho[5:] / ref, values[5:], k)
    return ext, (lambda r: P.polyval(np.asarray(r) / ref, fine))


def solve_hyperbolic_local(u, n: int = 401, k: int = 4, delta_sep: float = DELTA_SEP) -> Solution:
    """Solve ``x g_x - y g_y = u`` on ``[-1, 1]^2`` along the hyperbolas ``xy = rho``.

    ``g(x, y) = h(xy) - int`` of ``u`` from ``(x, y)`` to the side ``|x| = 1``,
    with ``h = 0`` on the right side.  On the left side ``h`` is assembled from
    the four phi-functions and the smooth extensions of ``phi++`` and ``phi+-``
    across ``rho = 0`` so that the two halves meet smoothly on the y axis.
    """
    dom = Rect(-1.0, 1.0, -1.0, 1.0)
    u = as_field(u, dom)
    test = phi_extension_test(u, k)
    if not test.passed:
        why = "log divergence" if test.divergent else f"extension mismatch {test.mismatch:.3g}"
        raise ObstructedError(f"phi++ does not extend smoothly at 0 ({why})", "hyperbolic",
                              certificate=test.to_json())
    rho_pos = 2.0 ** -DYADIC.astype(float)
    pm = np.array([phi_functions(u, -r) for r in rho_pos])     # (phi+-, phi-+) at -rho
    _, E_pp = _extension_poly(rho_pos, test.samples, k)          # phi++ extended
    ext_pm, E_pm_neg = _extension_poly(rho_pos, pm[:, 0], k)     # phi+- as a function of -rho
    if not ext_pm.passed:
        raise ObstructedError("phi+- does not extend smoothly at 0", "hyperbolic",
                              certificate=ext_pm.to_json())

    def E_pm(r):            # phi+- extended, evaluated at rho (> 0)
        return E_pm_neg(-np.asarray(r))

    # limits of h_minus at 0 from both sides
    _, E_mp = _extension_poly(rho_pos, pm[:, 1], k)               # phi-+ at -rho
    mm = np.array([phi_functions(u, r)[1] for r in rho_pos])      # phi-- at rho
    _, E_mm = _extension_poly(rho_pos, mm, k)
    L_neg = float(E_mp(0.0) - E_pp(0.0))
    L_pos = float(E_mm(0.0) - E_pm(0.0))
    L = 0.5 * (L_neg + L_pos)
    blend = 0.05

    def h_minus(r):
        r = np.asarray(r, dtype=float)
        out = np.full(r.shape, L)
        neg, pos = r < 0, r > 0
        if neg.any():
            rn = r[neg]
            phi_mp = _flow_integral(u, rn, np.ones_like(rn))       # phi-+(rho) = I(rho, 1)
            fix = (L - L_neg) * (1 - smoothstep(-rn / blend))
            out[neg] = phi_mp - E_pp(rn) + fix
        if pos.any():
            rp = r[pos]
            phi_mm = _flow_integral(u, -rp, -np.ones_like(rp))     # phi--(rho) = I(-rho, -1)
            fix = (L - L_pos) * (1 - smoothstep(rp / blend))
            out[pos] = phi_mm - E_pm(rp) + fix
        return out

    def evaluate(x, y):
        x = np.asarray(x, dtype=float)
        y = np.asarray(y, dtype=float)
        shape = np.broadcast(x, y).shape
        xb, yb = np.broadcast_to(x, shape).ravel().copy(), np.broadcast_to(y, shape).ravel().copy()
        out = np.zeros(xb.shape)
        side = xb != 0
        if side.any():
            xs_, ys_ = xb[side], yb[side]
            I = _flow_integral(u, xs_, ys_)
            h = np.zeros(xs_.shape)
            left = xs_ < 0
            if left.any():
                h[left] = h_minus(xs_[left] * ys_[left])
            out[side] = h - I
        axis = ~side
        if axis.any():
            # limits from the right half: -(int down the y axis) - (int out along the x axis)
            ya = yb[axis]
            jx = _axis_integral(u, np.array([1.0]), "x")[0]
            jy = np.zeros(ya.shape)
            nz = ya != 0
            if nz.any():
                jy[nz] = _axis_integral(u, ya[nz], "y")
            out[axis] = -(jy + jx)
        return out.reshape(shape)

    xs, ys = grid_axes(dom, n)
    X, Y = np.meshgrid(xs, ys)
    vals = evaluate(X, Y)
    g = ScalarField(grid=Grid(dom, vals, None, {"solver": "hyperbolic"}), domain=dom)
    spl = RectBivariateSpline(xs, ys, vals.T, kx=3, ky=3, s=0)
    gx = spl.ev(X.ravel(), Y.ravel(), dx=1).reshape(X.shape)
    gy = spl.ev(X.ravel(), Y.ravel(), dy=1).reshape(X.shape)
    res = np.abs(X * gx - Y * gy - u(X, Y))
    off = (np.abs(X) >= delta_sep) & (np.abs(Y) >= delta_sep)
    diag = {"solver": "hyperbolic", "residual_max": float(res[off].max()),
            "residual_mean": float(res[off].mean()), "residual_cross_max": float(res[~off].max()),
            "h_minus_gap": abs(L_neg - L_pos), "phi_extension": test.to_json()}
    return Solution(g, "characteristic", diag, evaluator=evaluate)


# ---------------------------------------------------------------------------
# global solver


@dataclass
class _Zone:
    """Part of an edge with one reference curve."""

    kind: str                 # "ray" (near an extremum) or "transversal"
    lo: float
    hi: float
    ref: object               # level array -> reference points
    mean: object = None       # level array -> zero-mean gauge (extremum edges only)


@dataclass
class _Saddle:
    node: int
    value: float
    free: ReebEdge            # the single edge on one side
    doubles: list             # the two edges on the other side
    sigma: float              # +1 if the free edge lies above the node
    width: float              # distance from the node over which D is sampled


class _GlobalBuilder:
    """Reference curves and gauge functions ``G_E`` for every Reeb edge.

    Near an extremum ``G_E`` is the zero-mean gauge; near a saddle it is the
    matched gauge ``H`` that makes ``g`` continuous across the separatrices.
    The two are joined by a partition of unity spread over the whole edge so
    that the kernel part of ``g`` varies as slowly as possible.
    """

    def __init__(self, f, dens, u, reeb: ReebGraph, crit, *, collar: float, table: int,
                 rtol: float, delta_sep: float):
        self.f, self.dens, self.u, self.reeb, self.crit = f, dens, u, reeb, crit
        self.flow = Flow(f, dens)
        self.domain = f.domain
        self.collar = collar
        self.table = table
        self.rtol = rtol
        self.delta_sep = delta_sep
        self.fx, self.fy = f.dx(), f.dy()
        self.zones: dict[int, list[_Zone]] = {}
        self.saddles: dict[int, _Saddle] = {}
        self.targets: dict[tuple[int, int], object] = {}   # (edge, node) -> H
        self.matching: dict[int, dict] = {}
        self.warnings: list[str] = []

    # -- geometry helpers
    def project(self, P, levels, steps: int = 4):
        P = np.array(P, dtype=float)
        for _ in range(steps):
            gx, gy = self.fx(P[:, 0], P[:, 1]), self.fy(P[:, 0], P[:, 1])
            g2 = gx * gx + gy * gy
            r = self.f(P[:, 0], P[:, 1]) - levels
            P[:, 0] -= r / g2 * gx
            P[:, 1] -= r / g2 * gy
        return P

    def node_kind(self, nid):
        if nid is None:
            return None
        cps = [self.crit[i] for i in self.reeb.nodes[nid].critical_points]
        return "saddle" if any(c.morse_index == 1 for c in cps) else "extremum"

    def node_point(self, nid) -> CriticalPoint:
        return self.crit[self.reeb.nodes[nid].critical_points[0]]

    def span(self, e: ReebEdge) -> float:
        return e.value_interval[1] - e.value_interval[0]

    def width(self, e: ReebEdge) -> float:
        return min(self.collar, self.span(e) / 3.0)

    # -- reference curves
    def ray_ref(self, cp: CriticalPoint):
        lam, R = np.linalg.eigh(cp.hessian)
        j = int(np.argmax(np.abs(lam)))
        v = R[:, j]
        p0 = np.array(cp.location)
        c0 = cp.value
        scale = math.sqrt(2.0 / abs(lam[j]))
        fx, fy, f = self.fx, self.fy, self.f

        def ref(c):
            c = np.atleast_1d(np.asarray(c, dtype=float))
            r = np.sqrt(np.abs(c - c0)) * scale
            for _ in range(40):
                P = p0 + np.outer(r, v)
                d = fx(P[:, 0], P[:, 1]) * v[0] + fy(P[:, 0], P[:, 1]) * v[1]
                step = np.where(d != 0, (f(P[:, 0], P[:, 1]) - c) / np.where(d != 0, d, 1.0), 0.0)
                r = r - step
                if np.all(np.abs(step) <= 1e-15):
                    break
            return p0 + np.outer(r, v)

        return ref

    def transversal_ref(self, e: ReebEdge, lo: float, hi: float):
        mid = 0.5 * (lo + hi)
        for lev, x, y in sorted(e.seed_path, key=lambda s: abs(s[0] - mid)):
            start = np.array([x, y])
            up = trace_transversal(self.f, self.dens, start, hi, critical_points=self.crit,
                                   delta_sep=self.delta_sep, n_out=129)
            dn = trace_transversal(self.f, self.dens, start, lo, critical_points=self.crit,
                                   delta_sep=self.delta_sep, n_out=129)
            if up.truncated or dn.truncated:
                continue
            f0 = self.f.value(start)
            L = np.concatenate([f0 + dn.offsets[::-1], f0 + up.offsets[1:]])
            Pts = np.concatenate([dn.points[::-1], up.points[1:]])
            if self.domain.periodic:
                Pts = np.unwrap(Pts * 2 * np.pi, axis=0) / (2 * np.pi)
            spl = CubicSpline(L, Pts, axis=0)

            def ref(c, spl=spl):
                c = np.atleast_1d(np.asarray(c, dtype=float))
                return self.project(spl(c), c)

            return ref
        raise RuntimeError(f"no transversal across edge {e.id} avoids the critical points")

    # -- orbit quantities
    def orbit_means(self, starts: np.ndarray, nodes: int = 512) -> np.ndarray:
        """Time mean over the orbit of ``int_start^{lambda(t)} u`` for each start point."""
        orbits = trace_orbits(self.f, starts, flow=self.flow, record=False, raise_on_error=False)
        bad = [k for k, o in enumerate(orbits) if isinstance(o, TracingError)]
        if bad:
            raise RuntimeError(f"orbit tracing failed at {len(bad)} reference points")
        taus = np.array([o.period for o in orbits])
        fl = self.flow.with_integrands([self.u])
        Y0 = np.zeros((len(starts), 3))
        Y0[:, :2] = starts
        times = np.stack([np.linspace(0.0, t, nodes + 1) for t in taus])
        res = run_batch(fl, Y0, levels=self.f(starts[:, 0], starts[:, 1]), out_times=times,
                        rtol=self.rtol, atol=self.rtol * 0.1)
        I = res.outputs[:, :, 2]
        w = np.ones(nodes + 1)
        w[0] = w[-1] = 0.5
        return (I * w).sum(axis=1) / nodes

    # -- construction
    def classify_saddles(self):
        for node in self.reeb.nodes:
            if self.node_kind(node.id) != "saddle":
                continue
            below, above = self.reeb.edges_at(node.id)
            if len(below) == 1 and len(above) == 2:
                free, doubles, sigma = below[0], above, -1.0
            elif len(above) == 1 and len(below) == 2:
                free, doubles, sigma = above[0], below, 1.0
            else:
                raise RuntimeError(f"saddle node {node.id} has {len(below)} edges below and "
                                   f"{len(above)} above")
            reach = 0.4 * self.span(free)
            self.saddles[node.id] = _Saddle(node.id, node.value, free, doubles, sigma, reach)

    def extension(self, e: ReebEdge, nid) -> float:
        """How far past a saddle end the reference of ``e`` must reach."""
        s = self.saddles.get(nid)
        if s is None:
            return 0.0
        if any(d.id == e.id for d in s.doubles):
            return s.width * 1.02
        return self.width(e)

    def build(self):
        self.classify_saddles()
        for e in self.reeb.edges:
            lo, hi = e.value_interval
            span = hi - lo
            zones = []
            t_lo, t_hi = lo - self.extension(e, e.node_lo), hi + self.extension(e, e.node_hi)
            z_lo, z_hi = lo, hi
            if self.node_kind(e.node_lo) == "extremum":
                z_lo = lo + 0.35 * span
                zones.append(_Zone("ray", lo, z_lo, self.ray_ref(self.node_point(e.node_lo))))
                t_lo = z_lo - 0.05 * span
            if self.node_kind(e.node_hi) == "extremum":
                z_hi = hi - 0.35 * span
                zones.append(_Zone("ray", z_hi, hi, self.ray_ref(self.node_point(e.node_hi))))
                t_hi = z_hi + 0.05 * span
            zones.append(_Zone("transversal", z_lo, z_hi, self.transversal_ref(e, t_lo, t_hi)))
            zones.sort(key=lambda z: z.lo)
            self.zones[e.id] = zones
            if any(self.node_kind(n) == "extremum" for n in (e.node_lo, e.node_hi)):
                for z in zones:
                    z.mean = self.mean_table(e, z)
        for nid in self.saddles:
            self.match_saddle(nid)

    def mean_table(self, e: ReebEdge, z: _Zone):
        """Zero-mean gauge ``-M(c)`` on a zone, as a spline in the level."""
        lo, hi = e.value_interval
        if z.kind == "ray":
            at_lo = z.lo == lo
            c0 = lo if at_lo else hi
            s_max = math.sqrt(z.hi - z.lo) * 1.02
            s = s_max * (1 - np.cos(np.pi * np.arange(1, self.table + 1) / (self.table + 1))) / 2
            lv = c0 + (1.0 if at_lo else -1.0) * s * s
            M = self.orbit_means(z.ref(lv))
            spl = CubicSpline(np.concatenate([[0.0], s]), np.concatenate([[0.0], -M]))
            return lambda c, spl=spl, c0=c0: spl(np.sqrt(np.abs(np.asarray(c) - c0)))
        a, b = z.lo, z.hi
        W = self.width(e)
        if self.node_kind(e.node_lo) == "saddle":
            a = lo + W / 4
        if self.node_kind(e.node_hi) == "saddle":
            b = hi - W / 4
        pad = 0.02 * (b - a)
        nodes = 0.5 * (a + b) - 0.5 * (b - a + 2 * pad) * np.cos(
            np.pi * (np.arange(self.table) + 0.5) / self.table)
        nodes = np.clip(nodes, lo + 1e-6 * (hi - lo), hi - 1e-6 * (hi - lo))
        M = self.orbit_means(z.ref(nodes))
        # interpolant on Chebyshev nodes; beyond them the gauge weight is already zero
        cheb = np.polynomial.Chebyshev.fit(nodes, -M, self.table - 1)
        lo_n, hi_n = nodes.min(), nodes.max()
        return lambda c, cheb=cheb: cheb(np.clip(np.asarray(c, dtype=float), lo_n, hi_n))

    def zero_mean(self, e: ReebEdge, c):
        c = np.asarray(c, dtype=float)
        out = np.zeros(c.shape)
        for z in self.zones[e.id]:
            sel = (c >= z.lo) & (c <= z.hi)
            out[sel] = z.mean(c[sel])
        return out

    def match_saddle(self, nid):
        s = self.saddles[nid]
        c_s, sigma, e0 = s.value, s.sigma, s.free
        W = self.width(e0)
        # free edge: a smooth fit of its zero-mean gauge, continued across the node
        has_mean = any(z.mean is not None for z in self.zones[e0.id])
        if has_mean:
            L0 = self.span(e0)
            dd = np.linspace(W / 3, 0.6 * L0, 24)
            zm = self.zero_mean(e0, c_s + sigma * dd)
            fit0 = P.polyfit(dd / L0, zm, 4)
        else:
            L0, fit0 = 1.0, np.zeros(1)
        h0 = float(fit0[0])
        H0 = lambda c, fit0=fit0, L0=L0: P.polyval(sigma * (np.asarray(c) - c_s) / L0, fit0)
        self.targets[(e0.id, nid)] = H0
        m = 20
        d = W / 64 + (s.width - W / 64) * (1 - np.cos(np.pi * (np.arange(m) + 0.5) / m)) / 2
        levels = c_s + sigma * d
        starts = self.main_zone(e0.id).ref(levels)
        info = {"node": nid, "value": c_s, "free_edge": e0.id, "free_gauge": h0, "edges": []}
        for ei in s.doubles:
            ends = self.main_zone(ei.id).ref(levels)
            _, I, ok = arc_integrals(self.flow, starts, ends, [self.u], rtol=self.rtol,
                                     atol=self.rtol * 0.1)
            if not ok.all():
                raise RuntimeError(f"arc integrals across saddle node {nid} did not close")
            x = d / s.width
            coef = P.polyfit(x, I[:, 0], 7)
            fit_res = float(np.max(np.abs(P.polyval(x, coef) - I[:, 0])))
            # consistency of the extrapolation very close to the singular level
            dc = np.array([W / 256, W / 512])
            lc = c_s + sigma * dc
            _, Ic, okc = arc_integrals(self.flow, self.main_zone(e0.id).ref(lc),
                                       self.main_zone(ei.id).ref(lc), [self.u], rtol=self.rtol,
                                       atol=self.rtol * 0.1)
            jump = (float(np.max(np.abs(Ic[:, 0] - P.polyval(dc / s.width, coef))))
                    if okc.all() else float("inf"))

            def H(c, coef=coef, s=s, H0=H0):
                return H0(c) + P.polyval(s.sigma * (np.asarray(c) - s.value) / s.width, coef)

            self.targets[(ei.id, nid)] = H
            info["edges"].append({"edge": ei.id, "limit": h0 + float(coef[0]), "jump": jump,
                                  "fit_residual": fit_res})
        self.matching[nid] = info

    def main_zone(self, eid) -> _Zone:
        return next(z for z in self.zones[eid] if z.kind == "transversal")

    def gauge(self, e: ReebEdge, c):
        """``G_E(c)``: end targets joined by a smooth partition of unity along the edge."""
        c = np.asarray(c, dtype=float)
        lo, hi = e.value_interval
        span = hi - lo

        def target(nid):
            if self.node_kind(nid) == "extremum":
                return lambda cc: self.zero_mean(e, cc)
            if (e.id, nid) in self.targets:
                return self.targets[(e.id, nid)]
            return None

        t_lo, t_hi = target(e.node_lo), target(e.node_hi)
        if t_lo is None and t_hi is None:
            return np.zeros(c.shape)
        if t_lo is None or t_hi is None:
            return (t_lo or t_hi)(c)
        # flat parts: the ray zone at extrema, a third of the collar at saddles
        def margin(nid):
            return 0.35 * span if self.node_kind(nid) == "extremum" else self.width(e) / 3
        a = lo + margin(e.node_lo)
        b = hi - margin(e.node_hi)
        w = flat_step((c - a) / (b - a))
        out = np.zeros(c.shape)
        lo_part = w < 1
        hi_part = w > 0
        out[lo_part] += (1 - w[lo_part]) * t_lo(c[lo_part])
        out[hi_part] += w[hi_part] * t_hi(c[hi_part])
        return out

    # -- evaluation
    def solve_points(self, Pts: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        c = self.f(Pts[:, 0], Pts[:, 1])
        n = len(Pts)
        inside = [(c > e.value_interval[0]) & (c < e.value_interval[1]) for e in self.reeb.edges]
        count = np.sum(inside, axis=0)
        K = max(int(count.max()), 1)
        slot = np.zeros(n, dtype=int)
        base = np.full((n, K, 2), np.nan)
        gauge = np.full((n, K), np.nan)
        for e, m in zip(self.reeb.edges, inside):
            rows = np.flatnonzero(m)
            k = slot[rows]
            slot[rows] += 1
            gauge[rows, k] = self.gauge(e, c[rows])
            todo = np.ones(rows.size, dtype=bool)
            for z in self.zones[e.id]:
                sel = todo & (c[rows] >= z.lo) & (c[rows] <= z.hi)
                if sel.any():
                    base[rows[sel], k[sel]] = z.ref(c[rows[sel]])
                    todo &= ~sel
        live = np.flatnonzero(count > 0)
        base, gauge, Pts, c = base[live], gauge[live], Pts[live], c[live]
        fl = self.flow.with_integrands([self.u], direction=-1.0)
        have = np.isfinite(base[..., 0])
        nv = np.zeros_like(base)      # empty slots get a zero normal and never fire
        vx, vy = fl.velocity(base[have][:, 0], base[have][:, 1])
        v = -np.stack([vx, vy], axis=-1)
        nv[have] = v / np.linalg.norm(v, axis=-1, keepdims=True)
        base = np.where(have[..., None], base, 0.0)
        secs = _Sections(base, nv, gate=0.1, close=1e-6)
        Y0 = np.zeros((live.size, 3))
        Y0[:, :2] = Pts
        res = run_batch(fl, Y0, levels=c, t_max=200.0, rtol=self.rtol, atol=self.rtol * 0.1,
                        sections=secs)
        hit = np.flatnonzero(res.status == 1)
        w = np.clip(res.which, 0, K - 1)
        g = np.full(n, np.nan)
        ok = np.zeros(n, dtype=bool)
        # backward flow: the extra column holds minus the forward integral from the reference
        g[live[hit]] = gauge[hit, w[hit]] - res.Y[hit, 2]
        ok[live[hit]] = True
        return g, ok


def separatrix_tubes(f: ScalarField, crit: list[CriticalPoint], X, Y, width: float = DELTA_SEP):
    """Points within ``width`` of a saddle or (to first order) of a saddle level set."""
    fx, fy = f.dx()(X, Y), f.dy()(X, Y)
    gn = np.hypot(fx, fy)
    F = f(X, Y)
    tube = np.zeros(np.shape(X), dtype=bool)
    for cp in crit:
        if cp.morse_index != 1:
            continue
        d = f.domain.delta(np.stack([X, Y], axis=-1), np.array(cp.location))
        tube |= np.hypot(d[..., 0], d[..., 1]) <= width
        with np.errstate(divide="ignore", invalid="ignore"):
            tube |= np.abs(F - cp.value) <= width * gn
    return tube


def solve_global(f, a, u, reeb: ReebGraph | None = None, grid_n: int = 256, *,
                 domain: Domain | None = None, report: SolvabilityReport | None = None,
                 critical_points=None, check: bool = True, collar: float = 0.2,
                 table: int = 24, rtol: float = 1e-10, delta_sep: float = DELTA_SEP,
                 jump_tol: float = 1e-6) -> Solution:
    """Global solution of ``{f, g} = u`` on the torus, sampled on a ``grid_n^2`` grid.

    Raises ObstructedError when the solvability report is not "solvable".
    """
    f = as_field(f, domain)
    domain = domain or f.domain
    if not domain.periodic:
        raise ValueError("the global solver handles the torus only")
    u = as_field(u, domain)
    dens = a if isinstance(a, SymplecticDensity) else SymplecticDensity(1.0 if a is None else a,
                                                                         domain)
    crit = critical_points if critical_points is not None else find_critical_points(f, domain)
    reeb = reeb if reeb is not None else build_reeb_graph(f, domain, crit)
    gen = check_genericity(f, crit, reeb)
    if not gen.passed:
        raise ValueError(f"f is not generic: {gen.violators}")
    if check:
        if report is None:
            report = check_solvability(f, u, dens, domain, critical_points=crit, reeb=reeb)
        if not report.solvable:
            why = ", ".join(report.reasons) or "inconclusive: " + "; ".join(report.inconclusive)
            raise ObstructedError(f"no smooth solution ({why})",
                                  report.reasons[0] if report.reasons else "inconclusive",
                                  report=report)

    b = _GlobalBuilder(f, dens, u, reeb, crit, collar=collar, table=table, rtol=rtol,
                       delta_sep=delta_sep)
    b.build()
    xs, ys = grid_axes(domain, grid_n)
    X, Y = np.meshgrid(xs, ys)
    Pts = np.stack([X.ravel(), Y.ravel()], axis=1)
    gvals, ok = b.solve_points(Pts)
    near_ext = np.zeros(len(Pts), dtype=bool)
    for cp in crit:
        if cp.morse_index != 1:
            d = domain.delta(Pts, np.array(cp.location))
            near_ext |= np.hypot(d[:, 0], d[:, 1]) < 1e-9
    gvals[near_ext] = 0.0
    failed = ~np.isfinite(gvals)
    vals = gvals.reshape(X.shape)
    if failed.any():
        b.warnings.append(f"{int(failed.sum())} grid points filled from neighbours")
        idx = ndimage.distance_transform_edt(failed.reshape(X.shape), return_distances=False,
                                             return_indices=True)
        vals = vals[tuple(idx)]
    jumps = []
    for nid, info in b.matching.items():
        for row in info["edges"]:
            jumps.append({"node": nid, "edge": row["edge"], "free_edge": info["free_edge"],
                          "value": info["value"], "jump": row["jump"],
                          "fit_residual": row["fit_residual"]})
    matched = all(j["jump"] <= jump_tol for j in jumps)
    tubes = separatrix_tubes(f, crit, X, Y, delta_sep)
    mask = None if matched else ~tubes
    if not matched:
        b.warnings.append("saddle matching exceeded the jump tolerance; tubes are masked")
    grid = Grid(domain, vals, mask, {"solver": "global"})
    g = ScalarField(grid=grid, domain=domain)
    sol = Solution(g, "saddle-matched" if matched else "per-circle-zero-mean",
                   {"saddle_jumps": jumps, "filled_points": int(failed.sum()),
                    "warnings": b.warnings})
    stats = verify(f, dens, sol, u, critical_points=crit, width=delta_sep)
    sol.diagnostics = {**{k: stats[k] for k in ("residual_max", "residual_mean",
                                                 "residual_tube_max", "residual_off_tube_max")},
                       **sol.diagnostics}
    sol.builder = b
    return sol


# ---------------------------------------------------------------------------
# verification


def verify(f, a, g, u, *, critical_points=None, width: float = DELTA_SEP,
           grid_n: int | None = None) -> dict:
    """Residual ``(1/a)(f_y g_x - f_x g_y) - u`` on the grid of ``g``.

    Grid-backed parts of ``g`` are differentiated through their bicubic
    spline; expression parts, including kernel terms added to a Solution,
    exactly.
    """
    f = as_field(f)
    domain = f.domain
    dens = a if isinstance(a, SymplecticDensity) else SymplecticDensity(1.0 if a is None else a,
                                                                         domain)
    u = as_field(u, domain)
    kernel = None
    if isinstance(g, Solution):
        kernel = g.kernel
        g = g.g
    g = as_field(g, domain)
    if g.grid is not None:
        X, Y = g.grid.mesh()
    else:
        n = grid_n or 256
        xs, ys = grid_axes(domain, n)
        X, Y = np.meshgrid(xs, ys)
    gx, gy = g.gradient(X, Y)
    if kernel is not None:
        k = ScalarField(kernel, domain)
        gx = gx + k.dx()(X, Y)
        gy = gy + k.dy()(X, Y)
    fx, fy = f.dx()(X, Y), f.dy()(X, Y)
    res = np.abs((fy * gx - fx * gy) / dens(X, Y) - u(X, Y))
    valid = np.ones(res.shape, dtype=bool)
    if g.grid is not None and g.grid.mask is not None:
        valid &= g.grid.mask
    if critical_points is None:
        critical_points = find_critical_points(f, domain)
    tubes = separatrix_tubes(f, critical_points, X, Y, width)
    off = valid & ~tubes
    on = valid & tubes

    def mx(m):
        return float(res[m].max()) if m.any() else 0.0

    return {"residual_max": mx(valid), "residual_mean": float(res[valid].mean()),
            "residual_tube_max": mx(on), "residual_off_tube_max": mx(off),
            "residual": res, "tubes": tubes}


# ---------------------------------------------------------------------------
# obstruction class and kernel


@dataclass
class ObstructionClass:
    edges: dict[int, list[list[float]]]           # edge -> [[level, int_s u, tau], ...]
    nodes: dict[int, list[dict]]                  # node -> [{edge, limit}, ...]
    tol: float = 1e-6

    def vanishes(self, tol: float | None = None) -> bool:
        t = self.tol if tol is None else tol
        return all(abs(s[1]) <= t * s[2] for rows in self.edges.values() for s in rows)

    def to_json(self) -> dict:
        return {"edges": [{"edge": k, "samples": v} for k, v in sorted(self.edges.items())],
                "nodes": [{"node": k, "limits": v} for k, v in sorted(self.nodes.items())],
                "vanishes": self.vanishes()}


def obstruction_class(f, a, u, reeb: ReebGraph | None = None, *, samples_per_edge: int = 16,
                      limit_levels: int = 6, tol: float = 1e-6) -> ObstructionClass:
    """Cycle integrals of ``u`` along each Reeb edge and their limits at the nodes."""
    f = as_field(f)
    reeb = reeb if reeb is not None else build_reeb_graph(f, f.domain)
    u = as_field(u, f.domain)
    flow = Flow(f, a)
    seeds, owners, levels = [], [], []
    for e in reeb.edges:
        lo, hi = e.value_interval
        lv = list(lo + (hi - lo) * np.arange(1, samples_per_edge + 1) / (samples_per_edge + 1))
        L = hi - lo
        d = 0.2 * L * 2.0 ** -np.arange(limit_levels)
        if e.node_lo is not None:
            lv += list(lo + d)
        if e.node_hi is not None:
            lv += list(hi - d)
        seeds.append(edge_seeds(f, e, lv))
        owners += [e.id] * len(lv)
        levels += lv
    seeds = np.concatenate(seeds)
    orbits = trace_orbits(f, seeds, flow=flow, raise_on_error=False, record=False)
    good = [k for k, o in enumerate(orbits) if not isinstance(o, TracingError)]
    I = line_integrals([orbits[k] for k in good], [u])[:, 0]
    val = {k: (float(i), orbits[k].period) for k, i in zip(good, I)}
    edges: dict[int, list] = {e.id: [] for e in reeb.edges}
    for e in reeb.edges:
        lo, hi = e.value_interval
        for k in range(len(levels)):
            if owners[k] != e.id or k not in val:
                continue
            c = levels[k]
            edges[e.id].append([c, val[k][0], val[k][1]])
    for e in reeb.edges:
        edges[e.id].sort()
    nodes: dict[int, list] = {n.id: [] for n in reeb.nodes}
    for e in reeb.edges:
        lo, hi = e.value_interval
        for nid, c_n in ((e.node_lo, lo), (e.node_hi, hi)):
            if nid is None:
                continue
            pts = [(abs(s[0] - c_n), s[1]) for s in edges[e.id] if abs(s[0] - c_n) <= 0.2 * (hi - lo) * 1.0001]
            pts.sort()
            if len(pts) >= 3:
                dd = np.array([p[0] for p in pts[:limit_levels]])
                vv = np.array([p[1] for p in pts[:limit_levels]])
                lim = float(P.polyval(0.0, P.polyfit(dd, vv, min(3, len(dd) - 1))))
            else:
                lim = float("nan")
            nodes[nid].append({"edge": e.id, "limit": lim})
    return ObstructionClass(edges, nodes, tol)


def kernel_variation(f, a, kappa, n_orbits: int = 50, reeb: ReebGraph | None = None,
                     nodes: int = 1024) -> float:
    """Largest ``max - min`` of ``kappa`` along ``n_orbits`` traced orbits."""
    f = as_field(f)
    reeb = reeb if reeb is not None else build_reeb_graph(f, f.domain)
    kappa = kappa if isinstance(kappa, (ScalarField, Solution)) else as_field(kappa, f.domain)
    per = [n_orbits // len(reeb.edges) + (1 if i < n_orbits % len(reeb.edges) else 0)
           for i in range(len(reeb.edges))]
    seeds = []
    for e, m in zip(reeb.edges, per):
        if m == 0:
            continue
        lo, hi = e.value_interval
        lv = lo + (hi - lo) * (np.arange(m) + 1) / (m + 1)
        seeds.append(edge_seeds(f, e, lv))
    seeds = np.concatenate(seeds)
    orbits = trace_orbits(f, seeds, a, record=False)
    line_integrals(orbits, [], nodes)       # fills the uniform samples
    worst = 0.0
    for o in orbits:
        _, pts = o.uniform(nodes)
        v = kappa(pts[:, 0], pts[:, 1])
        worst = max(worst, float(np.max(v) - np.min(v)))
    return worst


def kernel_check(f, a, kappa, tol: float = 1e-7, n_orbits: int = 50,
                 reeb: ReebGraph | None = None) -> bool:
    """True iff ``kappa`` is constant (within ``tol``) along ``n_orbits`` orbits."""
    return kernel_variation(f, a, kappa, n_orbits, reeb) <= tol
