"""Integral circles of Hamiltonian fields, their periods and line integrals.

All trajectories are advanced by a vectorised Dormand-Prince 8(5,3) scheme
with per-point step sizes.  After every accepted step the position is pulled
back onto its starting level by one Newton step along ``grad f``.  First
returns are found as signed crossings of the normal line through the seed,
refined to ``1e-12`` in time.

On the torus positions are kept in lifted (unwrapped) coordinates; closure is
measured with the shortest periodic displacement.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.integrate import simpson, solve_ivp
from scipy.integrate._ivp import dop853_coefficients as _dop

from .field import (Domain, SymplecticDensity, as_field, hamiltonian_field)

__all__ = [
    "TracingError", "Flow", "Orbit", "TransversalPath",
    "integrate_orbit", "trace_orbits", "line_integral", "line_integrals", "arc_integrals",
    "trace_transversal", "write_orbit_csv", "DELTA_SEP", "GRAD_MIN",
]

DELTA_SEP = 0.05
GRAD_MIN = 1e-6
T_MAX = 1e4

_A = _dop.A[:_dop.N_STAGES, :_dop.N_STAGES]
_B = _dop.B
_C = _dop.C[:_dop.N_STAGES]
_E3 = _dop.E3
_E5 = _dop.E5


class TracingError(RuntimeError):
    """An orbit or transversal could not be completed.

    ``reason`` is one of ``no_return``, ``critical``, ``left_domain``.
    """

    def __init__(self, message: str, reason: str, point=None):
        super().__init__(message)
        self.reason = reason
        self.point = point


class Flow:
    """Right-hand side ``dp/dt = s * X_f(p)`` plus optional running integrals.

    ``integrands`` are scalar fields whose time integrals along the trajectory
    are carried as extra state columns.
    """

    def __init__(self, f, a=None, integrands=(), direction: float = 1.0):
        self.f = as_field(f)
        self.domain: Domain = self.f.domain
        self.a = a if isinstance(a, SymplecticDensity) else SymplecticDensity(1.0 if a is None else a,
                                                                               self.domain)
        X = hamiltonian_field(self.f, self.a)
        self._vx = X.vx
        self._vy = X.vy
        self._fx = self.f.dx()
        self._fy = self.f.dy()
        self.integrands = [as_field(u, self.domain) for u in integrands]
        self.direction = float(direction)

    @property
    def width(self) -> int:
        return 2 + len(self.integrands)

    def with_integrands(self, integrands, direction=None) -> "Flow":
        other = Flow.__new__(Flow)
        other.__dict__.update(self.__dict__)
        other.integrands = [as_field(u, self.domain) for u in integrands]
        if direction is not None:
            other.direction = float(direction)
        return other

    def velocity(self, x, y):
        return self._vx(x, y), self._vy(x, y)

    def rhs(self, Y: np.ndarray) -> np.ndarray:
        x, y = Y[:, 0], Y[:, 1]
        out = np.empty_like(Y)
        s = self.direction
        out[:, 0] = s * self._vx(x, y)
        out[:, 1] = s * self._vy(x, y)
        for k, u in enumerate(self.integrands):
            out[:, 2 + k] = s * u(x, y)
        return out

    def grad(self, x, y):
        return self._fx(x, y), self._fy(x, y)

    def project(self, P: np.ndarray, levels: np.ndarray, steps: int = 1) -> np.ndarray:
        """Newton steps along ``grad f`` towards the given levels."""
        P = np.array(P, dtype=float)
        for _ in range(steps):
            fx, fy = self.grad(P[:, 0], P[:, 1])
            g2 = fx * fx + fy * fy
            r = self.f(P[:, 0], P[:, 1]) - levels
            with np.errstate(divide="ignore", invalid="ignore"):
                c = np.where(g2 > 0, r / g2, 0.0)
            P[:, 0] -= c * fx
            P[:, 1] -= c * fy
        return P

    # -- one DOP853 step for every row
    def step(self, Y: np.ndarray, h: np.ndarray):
        n, m = Y.shape
        K = np.empty((_dop.N_STAGES + 1, n, m))
        K[0] = self.rhs(Y)
        hh = h[:, None]
        for s in range(1, _dop.N_STAGES):
            dy = np.tensordot(_A[s, :s], K[:s], axes=(0, 0)) * hh
            K[s] = self.rhs(Y + dy)
        Ynew = Y + hh * np.tensordot(_B, K[:-1], axes=(0, 0))
        K[-1] = self.rhs(Ynew)
        return Ynew, K

    @staticmethod
    def error_norm(K, h, scale):
        err5 = np.tensordot(_E5, K, axes=(0, 0)) / scale
        err3 = np.tensordot(_E3, K, axes=(0, 0)) / scale
        e5 = np.sum(err5 ** 2, axis=1)
        e3 = np.sum(err3 ** 2, axis=1)
        denom = e5 + 0.01 * e3
        with np.errstate(divide="ignore", invalid="ignore"):
            corr = np.where(denom > 0, e5 / np.sqrt(denom), 0.0)
        return np.abs(h) * corr / math.sqrt(K.shape[2])


@dataclass
class _Sections:
    """Per-row candidate Poincare sections: base points and unit normals."""

    base: np.ndarray     # (n, K, 2)
    normal: np.ndarray   # (n, K, 2)
    gate: float = 0.1    # crossings farther than this from the base are ignored
    close: float = 1e-6  # refined crossing must land this close to the base


@dataclass
class BatchResult:
    Y: np.ndarray            # final states (n, m)
    t: np.ndarray            # final times
    status: np.ndarray       # 0 running, 1 hit section, 2 t_max, 3 critical, 4 left domain
    which: np.ndarray        # index of the section that was hit
    samples: list | None     # per-row list of (t, Y) when recorded
    outputs: np.ndarray | None = None  # states at requested output times (n, M, m)


def run_batch(flow: Flow, Y0: np.ndarray, *, levels: np.ndarray | None = None,
              t_max=T_MAX, rtol: float = 1e-11, atol: float = 1e-12,
              sections: _Sections | None = None, out_times: np.ndarray | None = None,
              record: bool = False, grad_min: float = GRAD_MIN, h0: float = 1e-3,
              max_iter: int = 200000) -> BatchResult:
    """Advance every row of ``Y0`` until its stop condition.

    Rows stop when they cross one of their sections (closing onto the base),
    reach the last output time, exceed ``t_max`` or approach a critical point.
    """
    Y = np.array(Y0, dtype=float)
    n, m = Y.shape
    if levels is None:
        levels = flow.f(Y[:, 0], Y[:, 1])
    levels = np.asarray(levels, dtype=float)
    t = np.zeros(n)
    h = np.full(n, h0)
    t_max = np.broadcast_to(np.asarray(t_max, dtype=float), (n,)).copy()
    status = np.zeros(n, dtype=int)
    which = np.full(n, -1)
    samples = [[(0.0, Y[i].copy())] for i in range(n)] if record else None
    outputs = None
    next_out = None
    if out_times is not None:
        out_times = np.asarray(out_times, dtype=float)
        M = out_times.shape[1]
        outputs = np.full((n, M, m), np.nan)
        next_out = np.zeros(n, dtype=int)
        at0 = out_times[:, 0] <= 0
        outputs[at0, 0] = Y[at0]
        next_out[at0] = 1
        t_max = np.minimum(t_max, out_times[:, -1])
    sec_val = None
    if sections is not None:
        sec_val = _section_values(flow.domain, Y[:, :2], sections)

    for _ in range(max_iter):
        act = np.flatnonzero(status == 0)
        if act.size == 0:
            break
        hi = np.minimum(h[act], t_max[act] - t[act])
        if next_out is not None:
            tgt = out_times[act, np.minimum(next_out[act], out_times.shape[1] - 1)]
            hi = np.minimum(hi, tgt - t[act])
        hi = np.maximum(hi, 1e-15)
        Ya = Y[act]
        Ynew, K = flow.step(Ya, hi)
        scale = atol + rtol * np.maximum(np.abs(Ya), np.abs(Ynew))
        err = flow.error_norm(K, hi, scale)
        ok = err <= 1.0
        with np.errstate(divide="ignore"):
            fac = np.where(err > 0, 0.9 * err ** (-1.0 / 8.0), 10.0)
        fac = np.clip(fac, 0.2, 10.0)
        fac = np.where(ok, fac, np.minimum(fac, 1.0))
        # rows that were clipped to a target keep their natural step size
        h[act] = np.where(ok & (hi < h[act]), h[act], hi * fac)
        if not ok.any():
            continue
        acc = act[ok]
        Yacc = Ynew[ok]
        Yacc[:, :2] = flow.project(Yacc[:, :2], levels[acc])
        tacc = t[acc] + hi[ok]
        Yold = Y[acc]
        Y[acc] = Yacc
        t_old = t[acc].copy()
        t[acc] = tacc
        if record:
            for j, i in enumerate(acc):
                samples[i].append((tacc[j], Yacc[j].copy()))
        if next_out is not None:
            reached = np.abs(tacc - out_times[acc, np.minimum(next_out[acc], out_times.shape[1] - 1)]) <= 1e-13 * np.maximum(1, tacc)
            for j in np.flatnonzero(reached):
                i = acc[j]
                outputs[i, next_out[i]] = Yacc[j]
                next_out[i] += 1
                if next_out[i] >= out_times.shape[1]:
                    status[i] = 1
        if sections is not None:
            new_val = _section_values(flow.domain, Yacc[:, :2], _subsec(sections, acc))
            old_val = sec_val[acc]
            d = _segment_distance(flow.domain, Yold[:, :2], Yacc[:, :2], sections.base[acc])
            cross = (old_val < 0) & (new_val >= 0) & (d <= sections.gate)
            rows = np.flatnonzero(cross.any(axis=1))
            if rows.size:
                _refine_crossings(flow, acc, rows, cross, Yold, t_old, hi[ok], sections, levels,
                                  Y, t, status, which, samples)
            sec_val[acc] = new_val
            # rows whose state was replaced by a refined crossing keep running if rejected
        fx, fy = flow.grad(Yacc[:, 0], Yacc[:, 1])
        gnorm = np.hypot(fx, fy)
        crit = (gnorm < grad_min) & (status[acc] == 0)
        status[acc[crit]] = 3
        if not flow.domain.periodic:
            out = ~flow.domain.contains(Yacc[:, 0], Yacc[:, 1]) & (status[acc] == 0)
            status[acc[out]] = 4
        done_t = (t[acc] >= t_max[acc] * (1 - 1e-15)) & (status[acc] == 0)
        status[acc[done_t]] = 2
    return BatchResult(Y, t, status, which, samples, outputs)


def _segment_distance(domain: Domain, P0, P1, base) -> np.ndarray:
    """Distance from each base (n, K, 2) to the step chord P0 -> P1."""
    r0 = domain.delta(P0[:, None, :], base)
    step = (P1 - P0)[:, None, :]
    L2 = np.sum(step * step, axis=2)
    with np.errstate(divide="ignore", invalid="ignore"):
        s = np.clip(np.where(L2 > 0, -np.sum(r0 * step, axis=2) / L2, 0.0), 0.0, 1.0)
    return np.linalg.norm(r0 + s[..., None] * step, axis=2)


def _subsec(sec: _Sections, idx) -> _Sections:
    return _Sections(sec.base[idx], sec.normal[idx], sec.gate, sec.close)


def _section_values(domain: Domain, P: np.ndarray, sec: _Sections) -> np.ndarray:
    d = domain.delta(P[:, None, :], sec.base)
    return np.sum(d * sec.normal, axis=2)


def _refine_crossings(flow, acc, rows, cross, Yold, t_old, hstep, sections, levels,
                      Y, t, status, which, samples):
    """Illinois iteration on the step fraction, all crossings at once; accept those that close."""
    pending = np.ones(len(rows), dtype=bool)
    # k-th crossing section of each row, in index order (-1 when there are fewer)
    ranked = np.where(cross[rows], np.arange(cross.shape[1]), cross.shape[1])
    ranked.sort(axis=1)
    for rank in range(cross.shape[1]):
        pos = np.flatnonzero(pending & (ranked[:, rank] < cross.shape[1]))
        if pos.size == 0:
            break
        sel = rows[pos]
        ks = ranked[pos, rank]
        i = acc[sel]
        base = sections.base[i, ks]
        normal = sections.normal[i, ks]
        y0 = Yold[sel]
        h = hstep[sel]

        def sval(theta, idx):
            yy, _ = flow.step(y0[idx], theta * h[idx])
            return np.sum(flow.domain.delta(yy[:, :2], base[idx]) * normal[idx], axis=1), yy

        m = sel.size
        everyone = np.arange(m)
        a = np.zeros(m)
        b = np.ones(m)
        fa = np.sum(flow.domain.delta(y0[:, :2], base) * normal, axis=1)
        fb, ystar = sval(b, everyone)
        theta = np.ones(m)
        side = np.zeros(m, dtype=int)
        live = np.ones(m, dtype=bool)
        for _ in range(60):
            idx = np.flatnonzero(live)
            if idx.size == 0:
                break
            den = fb[idx] - fa[idx]
            with np.errstate(divide="ignore", invalid="ignore"):
                th = np.where(den != 0, (a[idx] * fb[idx] - b[idx] * fa[idx]) / den,
                              0.5 * (a[idx] + b[idx]))
            fc, yc = sval(th, idx)
            theta[idx] = th
            ystar[idx] = yc
            done = (np.abs(fc) < 1e-15) | (np.abs(b[idx] - a[idx]) * h[idx] < 1e-13)
            same = (fc < 0) == (fa[idx] < 0)
            # Illinois: halve the retained end point's value after two moves on the same side
            lo_move = same & ~done
            hi_move = ~same & ~done
            fb[idx[lo_move & (side[idx] == -1)]] *= 0.5
            fa[idx[hi_move & (side[idx] == 1)]] *= 0.5
            a[idx[lo_move]] = th[lo_move]
            fa[idx[lo_move]] = fc[lo_move]
            side[idx[lo_move]] = -1
            b[idx[hi_move]] = th[hi_move]
            fb[idx[hi_move]] = fc[hi_move]
            side[idx[hi_move]] = 1
            live[idx[done]] = False
        ystar = ystar.copy()
        ystar[:, :2] = flow.project(ystar[:, :2], levels[i])
        close = np.linalg.norm(flow.domain.delta(ystar[:, :2], base), axis=1) <= sections.close
        for q in np.flatnonzero(close):
            r = i[q]
            Y[r] = ystar[q]
            t[r] = t_old[sel[q]] + theta[q] * h[q]
            status[r] = 1
            which[r] = ks[q]
            if samples is not None:
                samples[r][-1] = (t[r], ystar[q].copy())
        pending[pos[close]] = False


# ---------------------------------------------------------------------------
# orbits


@dataclass
class Orbit:
    """A traced integral circle: samples on ``[0, period]`` in lifted coordinates."""

    times: np.ndarray
    points: np.ndarray
    period: float
    level: float
    seed: tuple[float, float]
    edge_id: int | None = None
    flow: Flow | None = field(default=None, repr=False)
    _uniform: dict = field(default_factory=dict, repr=False)

    def closure(self) -> float:
        return float(np.linalg.norm(self.flow.domain.delta(self.points[-1], self.points[0])))

    def level_drift(self) -> float:
        vals = self.flow.f(self.points[:, 0], self.points[:, 1])
        return float(np.max(np.abs(vals - self.level)))

    def uniform(self, nodes: int = 2048) -> tuple[np.ndarray, np.ndarray]:
        """Positions at ``nodes + 1`` equispaced times on ``[0, period]``."""
        if nodes not in self._uniform:
            times = np.linspace(0.0, self.period, nodes + 1)
            res = run_batch(self.flow.with_integrands(()), np.array([self.seed]),
                            levels=np.array([self.level]), out_times=times[None, :])
            self._uniform[nodes] = (times, res.outputs[0, :, :2])
        return self._uniform[nodes]


def _seed_sections(flow: Flow, seeds: np.ndarray, gate: float, close: float) -> _Sections:
    vx, vy = flow.velocity(seeds[:, 0], seeds[:, 1])
    v = np.stack([vx, vy], axis=1) * flow.direction
    nv = np.linalg.norm(v, axis=1, keepdims=True)
    return _Sections(seeds[:, None, :].copy(), (v / nv)[:, None, :], gate, close)


def trace_orbits(f, seeds, a=None, *, rtol: float = 1e-11, atol: float = 1e-12,
                 t_max: float = T_MAX, record: bool = True, raise_on_error: bool = True,
                 flow: Flow | None = None, edge_ids=None) -> list[Orbit | TracingError]:
    """Trace the integral circles through several seeds at once."""
    flow = flow.with_integrands(()) if flow is not None else Flow(f, a)
    seeds = np.atleast_2d(np.asarray(seeds, dtype=float))
    fx, fy = flow.grad(seeds[:, 0], seeds[:, 1])
    levels = flow.f(seeds[:, 0], seeds[:, 1])
    weak = np.hypot(fx, fy) <= GRAD_MIN
    secs = _seed_sections(flow, np.where(weak[:, None], seeds + 1e-3, seeds), gate=0.1, close=1e-6)
    res = run_batch(flow, seeds, levels=levels, t_max=t_max, rtol=rtol, atol=atol,
                    sections=secs, record=record)
    out: list = []
    for i in range(len(seeds)):
        seed = (float(seeds[i, 0]), float(seeds[i, 1]))
        if weak[i] or res.status[i] == 3:
            err = TracingError(f"orbit through {seed} comes within |grad f| < {GRAD_MIN} of a "
                               "critical point", "critical", seed)
        elif res.status[i] == 2:
            err = TracingError(f"no return to the section through {seed} before t={t_max}",
                               "no_return", seed)
        elif res.status[i] == 4:
            err = TracingError(f"orbit through {seed} leaves the domain", "left_domain", seed)
        else:
            err = None
        if err is not None:
            if raise_on_error:
                raise err
            out.append(err)
            continue
        if record:
            ts = np.array([s[0] for s in res.samples[i]])
            ps = np.array([s[1][:2] for s in res.samples[i]])
        else:
            ts = np.array([0.0, res.t[i]])
            ps = np.array([seeds[i], res.Y[i, :2]])
        out.append(Orbit(ts, ps, float(res.t[i]), float(levels[i]), seed,
                         None if edge_ids is None else edge_ids[i], flow))
    return out


def integrate_orbit(f, seed, a=None, tol: float = 1e-11, t_max: float = T_MAX) -> Orbit:
    """Trace one integral circle of ``X_f`` through ``seed``."""
    return trace_orbits(f, [seed], a, rtol=tol, atol=tol * 0.1, t_max=t_max)[0]


def line_integrals(orbits: list[Orbit], integrands, nodes: int = 2048) -> np.ndarray:
    """``[[int_s u for u in integrands] for s in orbits]`` by composite Simpson.

    Each orbit is resampled at ``nodes + 1`` equispaced times (``nodes`` even,
    at least 512); all orbits are advanced together.
    """
    if nodes < 512 or nodes % 2:
        raise ValueError("need an even number of at least 512 quadrature nodes")
    integrands = list(integrands)
    if not orbits:
        return np.zeros((0, len(integrands)))
    flow = orbits[0].flow.with_integrands(())
    missing = [o for o in orbits if nodes not in o._uniform]
    if missing:
        seeds = np.array([o.seed for o in missing])
        times = np.stack([np.linspace(0.0, o.period, nodes + 1) for o in missing])
        res = run_batch(flow, seeds, levels=np.array([o.level for o in missing]), out_times=times)
        for k, o in enumerate(missing):
            o._uniform[nodes] = (times[k], res.outputs[k, :, :2])
    out = np.empty((len(orbits), len(integrands)))
    for i, o in enumerate(orbits):
        ts, pts = o._uniform[nodes]
        for j, u in enumerate(integrands):
            vals = as_field(u, flow.domain)(pts[:, 0], pts[:, 1])
            out[i, j] = simpson(vals, x=ts)
    return out


def line_integral(s: Orbit, u, nodes: int = 2048) -> float:
    """``int_s u = int_0^period u(lambda(t)) dt``."""
    return float(line_integrals([s], [u], nodes)[0, 0])


def write_orbit_csv(path, s: Orbit) -> None:
    head = (f"# period={s.period:.17g} level={s.level:.17g} "
            f"seed={s.seed[0]:.17g},{s.seed[1]:.17g}")
    rows = ["t,x,y"] + [f"{t:.17g},{p[0]:.17g},{p[1]:.17g}" for t, p in zip(s.times, s.points)]
    Path(path).write_text(head + "\n" + "\n".join(rows) + "\n", encoding="utf-8")


def arc_integrals(flow: Flow, starts, ends, integrands=(), *, t_max: float = 1e3,
                  rtol: float = 1e-11, atol: float = 1e-13):
    """Integrate along the flow from ``starts`` until the sections through ``ends``.

    ``ends[i]`` must lie on the level of ``starts[i]``.  Returns the travel
    times, the integrals of ``integrands`` (shape ``(n, k)``) and a boolean
    array marking the rows that reached their end point.
    """
    starts = np.atleast_2d(np.asarray(starts, dtype=float))
    ends = np.atleast_2d(np.asarray(ends, dtype=float))
    fl = flow.with_integrands(integrands)
    Y0 = np.zeros((len(starts), fl.width))
    Y0[:, :2] = starts
    secs = _seed_sections(fl, ends, gate=0.1, close=1e-6)
    res = run_batch(fl, Y0, levels=fl.f(starts[:, 0], starts[:, 1]), t_max=t_max,
                    rtol=rtol, atol=atol, sections=secs)
    return res.t, res.Y[:, 2:], res.status == 1


# ---------------------------------------------------------------------------
# transversals


@dataclass
class TransversalPath:
    """Flow of ``Z = grad f/|grad f|^2``: ``f(points[k]) = f(start) + offsets[k]``."""

    offsets: np.ndarray
    points: np.ndarray
    truncated: bool = False
    reason: str = ""

    @property
    def end(self) -> np.ndarray:
        return self.points[-1]


def trace_transversal(f, a, start, to_value: float, *, critical_points=(),
                      delta_sep: float = DELTA_SEP, n_out: int = 65, tol: float = 1e-12
                      ) -> TransversalPath:
    """Move from ``start`` across level sets until ``f = to_value``.

    The density ``a`` does not enter ``Z``; it is accepted for symmetry with the
    other flow operations.  Integration stops early (``truncated``) if the path
    comes within ``delta_sep`` of a listed critical point or ``|grad f|`` drops
    below ``1e-6``.
    """
    f = as_field(f)
    fx_f, fy_f = f.dx(), f.dy()
    dom = f.domain
    p0 = np.asarray(start, dtype=float)
    f0 = f.value(p0)
    span = float(to_value) - f0
    crit = np.array([c.location if hasattr(c, "location") else c for c in critical_points],
                    dtype=float).reshape(-1, 2)

    def gradv(p):
        gx, gy = float(fx_f(p[0], p[1])), float(fy_f(p[0], p[1]))
        return gx, gy

    def rhs(t, p):
        gx, gy = gradv(p)
        g2 = gx * gx + gy * gy
        if g2 < GRAD_MIN ** 2:
            return np.zeros(2)
        return np.array([gx, gy]) * (np.sign(span) / g2)

    def ev_crit(t, p):
        gx, gy = gradv(p)
        return math.hypot(gx, gy) - GRAD_MIN
    ev_crit.terminal = True

    events = [ev_crit]
    if len(crit):
        def ev_near(t, p):
            d = dom.delta(p[None, :], crit)
            return float(np.min(np.linalg.norm(d, axis=1))) - delta_sep
        ev_near.terminal = True
        events.append(ev_near)
    if not dom.periodic:
        def ev_out(t, p):
            return 1.0 if dom.contains(p[0], p[1]) else -1.0
        ev_out.terminal = True
        events.append(ev_out)

    if span == 0:
        return TransversalPath(np.zeros(1), p0[None, :].copy())
    T = abs(span)
    t_eval = np.linspace(0.0, T, n_out)
    sol = solve_ivp(rhs, (0.0, T), p0, method="DOP853", t_eval=t_eval, events=events,
                    rtol=tol, atol=tol * 0.1)
    offs = list(sol.t)
    pts = list(sol.y.T)
    truncated = sol.status == 1
    reason = ""
    if truncated:
        for k, ev in enumerate(sol.t_events):
            if len(ev):
                offs.append(ev[0])
                pts.append(sol.y_events[k][0])
                reason = ["critical", "near_critical", "left_domain"][k if len(crit) or k == 0 else 2]
                break
    offs = np.array(offs) * np.sign(span)
    pts = np.array(pts)
    # remove integration drift so that f(path) = f0 + offset exactly
    lv = f0 + offs
    for _ in range(3):
        gx = fx_f(pts[:, 0], pts[:, 1])
        gy = fy_f(pts[:, 0], pts[:, 1])
        g2 = gx * gx + gy * gy
        r = f(pts[:, 0], pts[:, 1]) - lv
        pts = pts - (r / np.where(g2 > 0, g2, 1.0))[:, None] * np.stack([gx, gy], axis=1)
    return TransversalPath(offs, pts, bool(truncated), reason)
