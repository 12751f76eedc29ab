"""Domains, scalar and vector fields, the symplectic density and the bracket.

The symplectic form is ``a dx^dy`` with a positive density ``a``.  The
Hamiltonian vector field of ``f`` is ``(f_y/a, -f_x/a)`` and the Poisson
bracket is ``{f, g} = (f_y g_x - f_x g_y)/a``.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy import ndimage
from scipy.interpolate import RectBivariateSpline

from .expr import Expr, ONE, as_expr, parse

__all__ = [
    "Domain", "Torus", "Rect", "Disk", "domain_from_spec",
    "Grid", "ScalarField", "SymplecticDensity", "VectorField",
    "DomainError", "DensityError",
    "hamiltonian_field", "poisson_bracket", "sample_grid",
    "write_grid_csv", "read_grid_csv", "grid_axes", "as_field", "field_from_text",
]


class DomainError(ValueError):
    pass


class DensityError(ValueError):
    pass


# ---------------------------------------------------------------------------
# domains


class Domain:
    kind: str = ""
    periodic: bool = False
    euler_characteristic: int = 1

    def bbox(self) -> tuple[float, float, float, float]:
        raise NotImplementedError

    def contains(self, x, y):
        raise NotImplementedError

    def normalize(self, x, y):
        return np.asarray(x, dtype=float), np.asarray(y, dtype=float)

    def delta(self, p, q):
        """Displacement ``p - q`` (shortest representative on the torus)."""
        d = np.asarray(p, dtype=float) - np.asarray(q, dtype=float)
        return d

    def header(self) -> str:
        raise NotImplementedError


@dataclass(frozen=True)
class Torus(Domain):
    """Flat torus with unit periods; coordinates live in ``[0, 1)``."""

    kind = "torus"
    periodic = True
    euler_characteristic = 0

    def bbox(self):
        return 0.0, 1.0, 0.0, 1.0

    def contains(self, x, y):
        return np.ones(np.broadcast(np.asarray(x), np.asarray(y)).shape, dtype=bool)

    def normalize(self, x, y):
        return np.mod(np.asarray(x, dtype=float), 1.0), np.mod(np.asarray(y, dtype=float), 1.0)

    def delta(self, p, q):
        d = np.asarray(p, dtype=float) - np.asarray(q, dtype=float)
        return d - np.round(d)

    def header(self):
        return "domain=torus"


@dataclass(frozen=True)
class Rect(Domain):
    x0: float = -1.0
    x1: float = 1.0
    y0: float = -1.0
    y1: float = 1.0

    kind = "rect"

    def __post_init__(self):
        if not (self.x0 < self.x1 and self.y0 < self.y1):
            raise DomainError(f"empty rectangle {self}")

    def bbox(self):
        return self.x0, self.x1, self.y0, self.y1

    def contains(self, x, y):
        x = np.asarray(x)
        y = np.asarray(y)
        return (x >= self.x0) & (x <= self.x1) & (y >= self.y0) & (y <= self.y1)

    def header(self):
        return f"domain=rect x0={self.x0!r} x1={self.x1!r} y0={self.y0!r} y1={self.y1!r}"


@dataclass(frozen=True)
class Disk(Domain):
    cx: float = 0.0
    cy: float = 0.0
    r: float = 1.0

    kind = "disk"

    def __post_init__(self):
        if not self.r > 0:
            raise DomainError("disk radius must be positive")

    def bbox(self):
        return self.cx - self.r, self.cx + self.r, self.cy - self.r, self.cy + self.r

    def contains(self, x, y):
        return (np.asarray(x) - self.cx) ** 2 + (np.asarray(y) - self.cy) ** 2 <= self.r ** 2 * (1 + 1e-12)

    def header(self):
        return f"domain=disk cx={self.cx!r} cy={self.cy!r} r={self.r!r}"


def domain_from_spec(spec: str) -> Domain:
    """``torus`` | ``rect:x0,x1,y0,y1`` | ``disk:cx,cy,r``."""
    spec = spec.strip()
    kind, _, rest = spec.partition(":")
    kind = kind.strip().lower()
    try:
        nums = [float(v) for v in rest.split(",")] if rest.strip() else []
    except ValueError as exc:
        raise DomainError(f"bad domain parameters in {spec!r}") from exc
    if kind == "torus" and not nums:
        return Torus()
    if kind == "rect" and len(nums) in (0, 4):
        return Rect(*nums)
    if kind == "disk" and len(nums) in (0, 3):
        return Disk(*nums)
    raise DomainError(f"unrecognised domain {spec!r}")


# ---------------------------------------------------------------------------
# grids


def grid_axes(domain: Domain, n: int) -> tuple[np.ndarray, np.ndarray]:
    """Sample abscissae: cell centres on the torus, nodes elsewhere."""
    if n < 2:
        raise ValueError("grid resolution must be at least 2")
    x0, x1, y0, y1 = domain.bbox()
    if domain.periodic:
        xs = x0 + (np.arange(n) + 0.5) * (x1 - x0) / n
        ys = y0 + (np.arange(n) + 0.5) * (y1 - y0) / n
    else:
        xs = np.linspace(x0, x1, n)
        ys = np.linspace(y0, y1, n)
    return xs, ys


@dataclass
class Grid:
    """Row-major samples: ``values[j, i]`` is the value at ``(xs[i], ys[j])``."""

    domain: Domain
    values: np.ndarray
    mask: np.ndarray | None = None
    meta: dict = field(default_factory=dict)

    @property
    def n(self) -> int:
        return self.values.shape[0]

    def axes(self):
        return grid_axes(self.domain, self.n)

    def mesh(self):
        xs, ys = self.axes()
        return np.meshgrid(xs, ys)


# ---------------------------------------------------------------------------
# scalar fields


class ScalarField:
    """A real function on a domain, backed by an expression or a grid."""

    def __init__(self, expr: Expr | str | float | None = None, domain: Domain | None = None,
                 grid: Grid | None = None):
        if (expr is None) == (grid is None):
            raise ValueError("exactly one of expr or grid is required")
        self.domain = domain if domain is not None else (grid.domain if grid else Torus())
        self.expr = as_expr(expr) if expr is not None else None
        self.grid = grid
        self._spline = None
        self._dx = None
        self._dy = None

    def __repr__(self):
        backing = f"expr={self.expr}" if self.expr is not None else f"grid n={self.grid.n}"
        return f"ScalarField({backing}, domain={self.domain.kind})"

    @property
    def is_expression(self) -> bool:
        return self.expr is not None

    # -- evaluation
    def __call__(self, x, y):
        x, y = self.domain.normalize(x, y)
        if self.expr is not None:
            return self.expr.veval(x, y)
        return self._interp(x, y, 0, 0)

    def value(self, p) -> float:
        return float(self(p[0], p[1]))

    def dx(self) -> "ScalarField":
        self._need_expr("dx")
        if self._dx is None:
            self._dx = ScalarField(self.expr.diff("x"), self.domain)
        return self._dx

    def dy(self) -> "ScalarField":
        self._need_expr("dy")
        if self._dy is None:
            self._dy = ScalarField(self.expr.diff("y"), self.domain)
        return self._dy

    def gradient(self, x, y):
        """``(f_x, f_y)``; exact for expressions, spline derivatives for grids."""
        if self.expr is not None:
            return self.dx()(x, y), self.dy()(x, y)
        x, y = self.domain.normalize(x, y)
        return self._interp(x, y, 1, 0), self._interp(x, y, 0, 1)

    def _need_expr(self, what):
        if self.expr is None:
            raise TypeError(f"{what} needs an expression-backed field")

    # -- grid interpolation (bicubic spline)
    def _build_spline(self):
        g = self.grid
        xs, ys = g.axes()
        vals = np.array(g.values, dtype=float)
        if g.mask is not None or not np.all(np.isfinite(vals)):
            bad = ~np.isfinite(vals) if g.mask is None else (~g.mask | ~np.isfinite(vals))
            if bad.all():
                raise ValueError("grid has no valid samples")
            idx = ndimage.distance_transform_edt(bad, return_distances=False, return_indices=True)
            vals = vals[tuple(idx)]
        if self.domain.periodic:
            pad = 8
            n = g.n
            hx = xs[1] - xs[0]
            hy = ys[1] - ys[0]
            xs = xs[0] + hx * np.arange(-pad, n + pad)
            ys = ys[0] + hy * np.arange(-pad, n + pad)
            vals = np.pad(vals, pad, mode="wrap")
        self._spline = RectBivariateSpline(xs, ys, vals.T, kx=3, ky=3, s=0)

    def _interp(self, x, y, nx, ny):
        if self._spline is None:
            self._build_spline()
        x = np.asarray(x, dtype=float)
        y = np.asarray(y, dtype=float)
        shape = np.broadcast(x, y).shape
        xb = np.broadcast_to(x, shape).ravel()
        yb = np.broadcast_to(y, shape).ravel()
        out = self._spline.ev(xb, yb, dx=nx, dy=ny)
        return out.reshape(shape)

    # -- arithmetic on expression-backed fields
    def _combine(self, other, op):
        other_expr = other.expr if isinstance(other, ScalarField) else as_expr(other)
        self._need_expr("arithmetic")
        return ScalarField(op(self.expr, other_expr), self.domain)

    def __add__(self, o): return self._combine(o, lambda a, b: a + b)
    def __sub__(self, o): return self._combine(o, lambda a, b: a - b)
    def __mul__(self, o): return self._combine(o, lambda a, b: a * b)
    def __truediv__(self, o): return self._combine(o, lambda a, b: a / b)


def as_field(value, domain: Domain | None = None) -> ScalarField:
    if isinstance(value, ScalarField):
        return value
    return ScalarField(as_expr(value), domain if domain is not None else Torus())


class SymplecticDensity:
    """Coefficient ``a`` of the symplectic form; positivity is sampled on a 256^2 grid."""

    CHECK_N = 256

    def __init__(self, a=1.0, domain: Domain | None = None, check: bool = True):
        self.field = as_field(a, domain)
        self.domain = self.field.domain
        if check:
            self._check_positive()

    def _check_positive(self):
        if self.field.is_expression and isinstance(self.field.expr, type(ONE)):
            ok = self.field.expr.value > 0
            amin = self.field.expr.value
        else:
            xs, ys = grid_axes(self.domain, self.CHECK_N)
            X, Y = np.meshgrid(xs, ys)
            vals = self.field(X, Y)
            if not self.domain.periodic:
                vals = vals[self.domain.contains(X, Y)]
            amin = float(vals.min())
            ok = amin > 0
        if not ok:
            raise DensityError(f"symplectic density must be positive; sampled minimum {amin!r}")

    @property
    def expr(self) -> Expr:
        return self.field.expr

    def __call__(self, x, y):
        return self.field(x, y)

    def scaled(self, c: float) -> "SymplecticDensity":
        return SymplecticDensity(self.field.expr * c, self.domain)


class VectorField:
    def __init__(self, vx: ScalarField, vy: ScalarField):
        self.vx = vx
        self.vy = vy
        self.domain = vx.domain

    def __call__(self, x, y):
        return self.vx(x, y), self.vy(x, y)

    def __repr__(self):
        return f"VectorField({self.vx.expr}, {self.vy.expr})"


def _density(a, domain) -> SymplecticDensity:
    if isinstance(a, SymplecticDensity):
        return a
    return SymplecticDensity(1.0 if a is None else a, domain)


def hamiltonian_field(f: ScalarField, a: SymplecticDensity | float | None = None) -> VectorField:
    """``X_f = (f_y/a, -f_x/a)``; requires an expression-backed ``f``."""
    f = as_field(f)
    f._need_expr("hamiltonian_field")
    a = _density(a, f.domain)
    fx, fy = f.dx().expr, f.dy().expr
    return VectorField(ScalarField(fy / a.expr, f.domain), ScalarField(-fx / a.expr, f.domain))


def poisson_bracket(f: ScalarField, g: ScalarField, a: SymplecticDensity | float | None = None
                    ) -> ScalarField:
    """``{f, g} = (f_y g_x - f_x g_y)/a`` as an expression-backed field."""
    f = as_field(f)
    g = as_field(g, f.domain)
    f._need_expr("poisson_bracket")
    g._need_expr("poisson_bracket")
    a = _density(a, f.domain)
    fx, fy = f.dx().expr, f.dy().expr
    gx, gy = g.dx().expr, g.dy().expr
    return ScalarField((fy * gx - fx * gy) / a.expr, f.domain)


def sample_grid(s: ScalarField, n: int) -> Grid:
    xs, ys = grid_axes(s.domain, n)
    X, Y = np.meshgrid(xs, ys)
    if s.domain.periodic:
        return Grid(s.domain, s(X, Y))
    mask = s.domain.contains(X, Y)
    vals = np.full(X.shape, np.nan)
    vals[mask] = s(X[mask], Y[mask])
    return Grid(s.domain, vals, mask if not mask.all() else None)


# ---------------------------------------------------------------------------
# CSV grid files


def write_grid_csv(path, grid: Grid, **extra) -> None:
    head = f"# n={grid.n} {grid.domain.header()}"
    for k, v in {**grid.meta, **extra}.items():
        head += f" {k}={v}"
    lines = [head]
    for row in grid.values:
        lines.append(",".join("%.17g" % v for v in row))
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def _parse_header(line: str) -> dict[str, str]:
    if not line.startswith("#"):
        raise ValueError("grid file must start with a '# n=...' header")
    out = {}
    for tok in line[1:].split():
        k, sep, v = tok.partition("=")
        if sep:
            out[k] = v
    return out


def read_grid_csv(path) -> Grid:
    text = Path(path).read_text(encoding="utf-8").splitlines()
    head = _parse_header(text[0])
    n = int(head["n"])
    kind = head.get("domain", "torus")
    if kind == "torus":
        dom: Domain = Torus()
    elif kind == "rect":
        dom = Rect(*(float(head[k]) for k in ("x0", "x1", "y0", "y1")))
    elif kind == "disk":
        dom = Disk(*(float(head[k]) for k in ("cx", "cy", "r")))
    else:
        raise ValueError(f"unknown domain {kind!r}")
    rows = [r for r in text[1:] if r.strip()]
    if len(rows) != n:
        raise ValueError(f"expected {n} rows, found {len(rows)}")
    vals = np.array([[float(v) for v in r.split(",")] for r in rows])
    if vals.shape != (n, n):
        raise ValueError(f"expected {n}x{n} values, found {vals.shape}")
    mask = np.isfinite(vals)
    meta = {k: v for k, v in head.items() if k not in ("n", "domain", "x0", "x1", "y0", "y1", "cx", "cy", "r")}
    return Grid(dom, vals, None if mask.all() else mask, meta)


def field_from_text(src: str, domain: Domain) -> ScalarField:
    return ScalarField(parse(src), domain)
