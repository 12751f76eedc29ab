"""Critical points of Morse functions and the Reeb graph of level-set components.

The Reeb graph is assembled on a raster.  Pixels are split into value bands
between consecutive critical values and each band is labelled into connected
components.  Across every critical value ``c`` the pixels bordering
``{f >= c}`` form thin strips tracing the level set ``f = c``; a strip
component that contains a critical point is a vertex, every other strip
component glues the band components on its two sides into one edge.
"""
from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy import ndimage

from .field import Domain, ScalarField, as_field, grid_axes

__all__ = [
    "CriticalPoint", "NotMorseError", "ReebError", "ReebNode", "ReebEdge", "ReebGraph",
    "GenericityReport", "find_critical_points", "build_reeb_graph", "check_genericity",
]


class NotMorseError(ValueError):
    """A critical point with degenerate Hessian was found."""


class ReebError(RuntimeError):
    """Level-set components could not be matched at the current resolution."""


@dataclass
class CriticalPoint:
    location: tuple[float, float]
    morse_index: int
    value: float
    hessian: np.ndarray

    @property
    def kind(self) -> str:
        return ("minimum", "saddle", "maximum")[self.morse_index]

    def to_json(self) -> dict:
        return {"location": list(self.location), "morse_index": self.morse_index,
                "value": self.value, "hessian": self.hessian.tolist()}


def _hessian_fields(f: ScalarField):
    fx, fy = f.dx(), f.dy()
    return fx, fy, fx.dx(), fx.dy(), fy.dy()


def find_critical_points(f, domain: Domain | None = None, seeds_per_axis: int = 32,
                         tol: float = 1e-10, merge_dist: float = 1e-6,
                         max_iter: int = 100) -> list[CriticalPoint]:
    """Newton iteration on ``grad f = 0`` from a grid of seeds.

    Raises NotMorseError if a critical point has ``|det H| <= 1e-8``.
    Seeds that fail to converge are reported with a warning.
    """
    f = as_field(f, domain)
    domain = domain or f.domain
    if seeds_per_axis < 8:
        raise ValueError("seeds_per_axis must be at least 8")
    fx, fy, fxx, fxy, fyy = _hessian_fields(f)
    xs, ys = grid_axes(domain, seeds_per_axis)
    if not domain.periodic:
        x0, x1, y0, y1 = domain.bbox()
        xs = x0 + (np.arange(seeds_per_axis) + 0.5) * (x1 - x0) / seeds_per_axis
        ys = y0 + (np.arange(seeds_per_axis) + 0.5) * (y1 - y0) / seeds_per_axis
    X, Y = np.meshgrid(xs, ys)
    P = np.stack([X.ravel(), Y.ravel()], axis=1)
    if not domain.periodic:
        P = P[domain.contains(P[:, 0], P[:, 1])]
    x0, x1, y0, y1 = domain.bbox()
    max_step = max(x1 - x0, y1 - y0) / seeds_per_axis

    alive = np.ones(len(P), dtype=bool)
    last_step = np.full(len(P), np.inf)
    for _ in range(max_iter):
        idx = np.flatnonzero(alive)
        if idx.size == 0:
            break
        px, py = P[idx, 0], P[idx, 1]
        gx, gy = fx(px, py), fy(px, py)
        a, b, d = fxx(px, py), fxy(px, py), fyy(px, py)
        det = a * d - b * b
        with np.errstate(divide="ignore", invalid="ignore"):
            sx = (d * gx - b * gy) / det
            sy = (-b * gx + a * gy) / det
        step = np.hypot(sx, sy)
        bad = ~np.isfinite(step)
        scale = np.where(step > max_step, max_step / np.where(step > 0, step, 1), 1.0)
        sx = np.where(bad, 0.0, sx * scale)
        sy = np.where(bad, 0.0, sy * scale)
        P[idx, 0] -= sx
        P[idx, 1] -= sy
        last_step[idx] = np.where(bad, 0.0, np.hypot(sx, sy))
        stop = bad | (last_step[idx] < 1e-15)
        if not domain.periodic:
            stop |= ~domain.contains(P[idx, 0], P[idx, 1])
        alive[idx[stop]] = False

    px, py = P[:, 0], P[:, 1]
    if domain.periodic:
        px, py = domain.normalize(px, py)
        P = np.stack([px, py], axis=1)
    with np.errstate(all="ignore"):
        inside = domain.contains(px, py) & np.isfinite(px) & np.isfinite(py)
    P = P[inside]
    gnorm = np.hypot(fx(P[:, 0], P[:, 1]), fy(P[:, 0], P[:, 1]))
    conv = gnorm <= tol
    n_fail = int((~conv).sum())

    found: list[np.ndarray] = []
    for p in P[conv]:
        if all(np.linalg.norm(domain.delta(p, q)) > merge_dist for q in found):
            found.append(p)

    out: list[CriticalPoint] = []
    for p in found:
        x, y = float(p[0]), float(p[1])
        H = np.array([[fxx.value(p), fxy.value(p)], [fxy.value(p), fyy.value(p)]])
        det = float(np.linalg.det(H))
        if abs(det) <= 1e-8:
            raise NotMorseError(f"degenerate Hessian at ({x:.6g}, {y:.6g}): det = {det:.3g}")
        index = int(np.sum(np.linalg.eigvalsh(H) < 0))
        out.append(CriticalPoint((x, y), index, f.value(p), H))
    out.sort(key=lambda c: (c.value, c.location))
    if n_fail and len(out) == 0:
        warnings.warn(f"Newton did not converge from {n_fail} seeds and found no critical point")
    if domain.periodic:
        chi = sum((-1) ** c.morse_index for c in out)
        if chi != domain.euler_characteristic:
            warnings.warn(f"index count {chi} differs from Euler characteristic "
                          f"{domain.euler_characteristic}; critical points may be missing")
    return out


# ---------------------------------------------------------------------------
# Reeb graph


@dataclass
class ReebNode:
    id: int
    value: float
    critical_points: list[int]
    h1_rank: int

    def to_json(self) -> dict:
        return {"id": self.id, "value": self.value, "critical_points": self.critical_points,
                "h1_rank": self.h1_rank}


@dataclass
class ReebEdge:
    id: int
    node_lo: int | None
    node_hi: int | None
    value_interval: tuple[float, float]
    seed_path: list[tuple[float, float, float]]
    h1_rank: int = 1

    def to_json(self) -> dict:
        return {"id": self.id, "node_lo": self.node_lo, "node_hi": self.node_hi,
                "value_interval": list(self.value_interval),
                "seed_path": [list(s) for s in self.seed_path]}

    def seed_near(self, level: float) -> tuple[float, float]:
        best = min(self.seed_path, key=lambda s: abs(s[0] - level))
        return best[1], best[2]


@dataclass
class ReebGraph:
    nodes: list[ReebNode]
    edges: list[ReebEdge]
    critical_points: list[CriticalPoint]
    domain: Domain
    edge_raster: np.ndarray = field(repr=False)
    resolution: int = 512

    @property
    def betti_number(self) -> int:
        # each open end of an edge counts as a leaf vertex
        open_ends = sum((e.node_lo is None) + (e.node_hi is None) for e in self.edges)
        return len(self.edges) - len(self.nodes) - open_ends + self.components()

    def components(self) -> int:
        parent = {("n", n.id): ("n", n.id) for n in self.nodes}
        parent.update({("e", e.id): ("e", e.id) for e in self.edges})

        def find(a):
            while parent[a] != a:
                parent[a] = parent[parent[a]]
                a = parent[a]
            return a

        for e in self.edges:
            for nid in (e.node_lo, e.node_hi):
                if nid is not None:
                    parent[find(("e", e.id))] = find(("n", nid))
        return len({find(k) for k in parent})

    def node(self, nid: int) -> ReebNode:
        return self.nodes[nid]

    def edges_at(self, nid: int) -> tuple[list[ReebEdge], list[ReebEdge]]:
        """Edges below and above a node."""
        below = [e for e in self.edges if e.node_hi == nid]
        above = [e for e in self.edges if e.node_lo == nid]
        return below, above

    def edges_at_level(self, c: float) -> list[ReebEdge]:
        return [e for e in self.edges if e.value_interval[0] < c < e.value_interval[1]]

    def edge_at(self, x, y) -> np.ndarray:
        """Edge id of the raster pixel containing each point (-1 if none)."""
        n = self.resolution
        x0, x1, y0, y1 = self.domain.bbox()
        x, y = self.domain.normalize(x, y)
        if self.domain.periodic:
            i = np.floor((x - x0) / (x1 - x0) * n).astype(int) % n
            j = np.floor((y - y0) / (y1 - y0) * n).astype(int) % n
        else:
            i = np.clip(np.rint((x - x0) / (x1 - x0) * (n - 1)).astype(int), 0, n - 1)
            j = np.clip(np.rint((y - y0) / (y1 - y0) * (n - 1)).astype(int), 0, n - 1)
        return self.edge_raster[j, i]

    def to_json(self) -> dict:
        return {"nodes": [n.to_json() for n in self.nodes],
                "edges": [e.to_json() for e in self.edges]}


class _UnionFind:
    def __init__(self, n: int):
        self.parent = np.arange(n)

    def find(self, a: int) -> int:
        p = self.parent
        root = a
        while p[root] != root:
            root = p[root]
        while p[a] != root:
            p[a], a = root, p[a]
        return root

    def union(self, a: int, b: int) -> None:
        ra, rb = self.find(a), self.find(b)
        if ra != rb:
            self.parent[max(ra, rb)] = min(ra, rb)


def _label(mask: np.ndarray, periodic: bool, eight: bool) -> tuple[np.ndarray, int]:
    structure = np.ones((3, 3), dtype=int) if eight else None
    lab, n = ndimage.label(mask, structure=structure)
    if not periodic or n == 0:
        return lab, n
    uf = _UnionFind(n + 1)
    shifts = [0] if not eight else [-1, 0, 1]
    for s in shifts:
        a, b = lab[0], np.roll(lab[-1], s)
        for u, v in zip(a[(a > 0) & (b > 0)], b[(a > 0) & (b > 0)]):
            uf.union(u, v)
        a, b = lab[:, 0], np.roll(lab[:, -1], s)
        for u, v in zip(a[(a > 0) & (b > 0)], b[(a > 0) & (b > 0)]):
            uf.union(u, v)
    roots = np.array([uf.find(k) for k in range(n + 1)])
    uniq, remap = np.unique(roots, return_inverse=True)
    return remap[lab], len(uniq) - 1


def _boundary(A: np.ndarray, valid: np.ndarray, periodic: bool) -> np.ndarray:
    """Pixels whose 4-neighbour lies on the other side of the indicator ``A``."""
    out = np.zeros_like(A)
    for axis in (0, 1):
        for s in (1, -1):
            if periodic:
                nb = np.roll(A, s, axis=axis)
                nv = np.roll(valid, s, axis=axis)
            else:
                nb = np.roll(A, s, axis=axis)
                nv = np.roll(valid, s, axis=axis).copy()
                edge = [slice(None)] * 2
                edge[axis] = 0 if s == 1 else -1
                nv[tuple(edge)] = False
            out |= (nb != A) & nv
    return out & valid


def _disk_pixels(domain: Domain, X, Y, p, radius: float) -> np.ndarray:
    d = domain.delta(np.stack([X, Y], axis=-1), np.asarray(p))
    return np.hypot(d[..., 0], d[..., 1]) <= radius


def build_reeb_graph(f, domain: Domain | None = None, critical_points=None, n: int = 512,
                     seed_levels: int = 17) -> ReebGraph:
    """Reeb graph of a Morse function sampled on an ``n x n`` raster."""
    f = as_field(f, domain)
    domain = domain or f.domain
    if critical_points is None:
        critical_points = find_critical_points(f, domain)
    crit = list(critical_points)
    xs, ys = grid_axes(domain, n)
    X, Y = np.meshgrid(xs, ys)
    valid = domain.contains(X, Y) if not domain.periodic else np.ones(X.shape, dtype=bool)
    F = np.where(valid, f(np.where(valid, X, xs[0]), np.where(valid, Y, ys[0])), np.nan)
    h = max(xs[1] - xs[0], ys[1] - ys[0])
    per = domain.periodic

    # distinct critical values
    levels: list[float] = []
    for c in sorted(cp.value for cp in crit):
        if not levels or c - levels[-1] > 1e-9 * max(1.0, abs(c)):
            levels.append(c)
    lev = np.array(levels)
    crit_level = [int(np.argmin(np.abs(lev - cp.value))) for cp in crit]

    # band components, with small disks around critical points cut out so that
    # opposite sectors of a saddle do not touch
    disk_r = 2.5 * h
    disks = [_disk_pixels(domain, X, Y, cp.location, disk_r) & valid for cp in crit]
    holes = np.zeros(F.shape, dtype=bool)
    for d in disks:
        holes |= d
    band = np.where(valid, np.searchsorted(lev, np.where(valid, F, 0.0), side="right") - 1, -9)
    band = np.where(holes, -9, band)
    comp = np.zeros(F.shape, dtype=int)
    comp_band: list[int] = [-9]
    ncomp = 0
    for b in range(-1, len(lev)):
        lab, k = _label((band == b) & valid, per, eight=False)
        if k:
            comp[lab > 0] = lab[lab > 0] + ncomp
            comp_band.extend([b] * k)
            ncomp += k
    uf = _UnionFind(ncomp + 1)
    attach_lo: dict[int, set[int]] = {}   # band comp -> nodes at its lower side
    attach_hi: dict[int, set[int]] = {}

    node_members: list[list[int]] = []     # critical point indices per node
    node_value: list[float] = []
    node_comps: list[tuple[set[int], set[int]]] = []
    for k, c in enumerate(lev):
        A = (F >= c) & valid
        strip = _boundary(A, valid, per)
        here = [i for i, L in enumerate(crit_level) if L == k]
        for i in here:
            strip |= disks[i]
        lab, m = _label(strip, per, eight=True)
        if m == 0:
            continue
        crit_lab = {}
        for i in here:
            d = domain.delta(np.stack([X, Y], axis=-1), np.asarray(crit[i].location))
            jj, ii = np.unravel_index(np.argmin(np.hypot(d[..., 0], d[..., 1])), X.shape)
            crit_lab.setdefault(int(lab[jj, ii]), []).append(i)
        for s in range(1, m + 1):
            pix = lab == s
            if s in crit_lab:
                pix = ndimage.maximum_filter(pix, size=3, mode="wrap" if per else "constant")
            below = set(np.unique(comp[pix & ~A]).tolist()) - {0}
            above = set(np.unique(comp[pix & A]).tolist()) - {0}
            if s in crit_lab:
                node_members.append(sorted(crit_lab[s]))
                node_value.append(float(c))
                node_comps.append((below, above))
            else:
                if len(below) != 1 or len(above) != 1:
                    if len(below) <= 1 and len(above) <= 1:
                        # regular component cut off by the domain boundary
                        continue
                    raise ReebError(
                        f"ambiguous component matching at level {c:.6g} "
                        f"({len(below)} below, {len(above)} above); raise the resolution")
                uf.union(next(iter(below)), next(iter(above)))

    # nodes sorted by value
    order = sorted(range(len(node_value)), key=lambda i: (node_value[i], node_members[i]))
    nodes: list[ReebNode] = []
    for new_id, i in enumerate(order):
        mem = node_members[i]
        saddles = sum(1 for j in mem if crit[j].morse_index == 1)
        rank = 0 if saddles == 0 else saddles + 1
        nodes.append(ReebNode(new_id, node_value[i], mem, rank))
        below, above = node_comps[i]
        for b_ in below:
            attach_hi.setdefault(b_, set()).add(new_id)
        for b_ in above:
            attach_lo.setdefault(b_, set()).add(new_id)

    # edges = union classes of band components
    classes: dict[int, list[int]] = {}
    for cid in range(1, ncomp + 1):
        classes.setdefault(uf.find(cid), []).append(cid)
    raw_edges = []
    for root, members in classes.items():
        lo_nodes = set().union(*(attach_lo.get(m, set()) for m in members))
        hi_nodes = set().union(*(attach_hi.get(m, set()) for m in members))
        if len(lo_nodes) > 1 or len(hi_nodes) > 1:
            raise ReebError("an edge attaches to several nodes at one end; raise the resolution")
        pix = np.isin(comp, members)
        fvals = F[pix]
        lo = next(iter(lo_nodes)) if lo_nodes else None
        hi = next(iter(hi_nodes)) if hi_nodes else None
        vlo = nodes[lo].value if lo is not None else float(np.nanmin(fvals))
        vhi = nodes[hi].value if hi is not None else float(np.nanmax(fvals))
        raw_edges.append((vlo, vhi, lo, hi, pix))
    raw_edges.sort(key=lambda e: (e[0], e[1], -1 if e[2] is None else e[2],
                                  -1 if e[3] is None else e[3],
                                  float(X[e[4]].mean())))

    fx_f, fy_f = f.dx(), f.dy()
    G = np.hypot(fx_f(X, Y), fy_f(X, Y))
    crit_xy = np.array([cp.location for cp in crit]).reshape(-1, 2)
    P = np.stack([X, Y], -1)
    far = np.ones(F.shape, dtype=bool)
    for q in crit_xy:
        d = domain.delta(P, q)
        far &= np.hypot(d[..., 0], d[..., 1]) >= 0.05
    raster = np.full(F.shape, -1, dtype=int)
    edges: list[ReebEdge] = []
    for eid, (vlo, vhi, lo, hi, pix) in enumerate(raw_edges):
        raster[pix] = eid
        path = []
        for j in range(seed_levels):
            c = vlo + (vhi - vlo) * (j + 1) / (seed_levels + 1)
            cand = pix & (np.abs(F - c) <= 1.5 * h * G)
            cand &= far
            if not cand.any():
                continue
            score = np.where(cand, G, -np.inf)
            jj, ii = np.unravel_index(np.argmax(score), F.shape)
            p = np.array([X[jj, ii], Y[jj, ii]])
            for _ in range(4):
                gx, gy = fx_f.value(p), fy_f.value(p)
                p = p - (f.value(p) - c) / (gx * gx + gy * gy) * np.array([gx, gy])
            if domain.periodic:
                p = np.mod(p, 1.0)
            path.append((float(c), float(p[0]), float(p[1])))
        edges.append(ReebEdge(eid, lo, hi, (vlo, vhi), path))
    return ReebGraph(nodes, edges, crit, domain, raster, n)


@dataclass
class GenericityReport:
    passed: bool
    violators: list[dict]

    def to_json(self) -> dict:
        return {"passed": self.passed, "violators": self.violators}


def check_genericity(f, critical_points, reeb: ReebGraph) -> GenericityReport:
    """Every level-set component may hold at most one index-1 point."""
    bad = []
    for node in reeb.nodes:
        saddles = [i for i in node.critical_points if critical_points[i].morse_index == 1]
        if len(saddles) > 1:
            bad.append({"node": node.id, "value": node.value, "saddles": saddles,
                        "locations": [list(critical_points[i].location) for i in saddles]})
    return GenericityReport(not bad, bad)
