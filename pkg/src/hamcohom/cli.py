"""Command line front end.

    hamcohom analyze|check|solve|bracket|local-elliptic|local-hyperbolic
             [--config PATH] [--out DIR] [--grid N] [--threads K] [--plot]

Every command writes its files to ``--out`` and prints tab-separated
``key<TAB>value`` lines on stdout.  Exit codes: 0 ok, 2 configuration error,
3 obstructed, 4 analysis or tracing failure, 5 solved with warnings.
"""
from __future__ import annotations

import argparse
import math
import os
import sys
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .expr import EvalError, ParseError, as_expr, to_string
from .field import (DensityError, DomainError, ScalarField, SymplecticDensity,
                    domain_from_spec, poisson_bracket, sample_grid, write_grid_csv)
from .flow import TracingError
from .morse import NotMorseError, ReebError, build_reeb_graph, check_genericity, \
    find_critical_points
from .solvability import (TOL_CYCLE, TOL_ELLIPTIC, TOL_EXTENSION, TOL_Q, TOL_VANISH,
                          check_solvability)
from .solver import ObstructedError, solve_elliptic_local, solve_global, \
    solve_hyperbolic_local, verify

EXIT_OK, EXIT_CONFIG, EXIT_OBSTRUCTED, EXIT_FAILURE, EXIT_WARNINGS = 0, 2, 3, 4, 5
COMMANDS = ("analyze", "check", "solve", "bracket", "local-elliptic", "local-hyperbolic")


class ConfigError(ValueError):
    pass


# ---------------------------------------------------------------------------
# JSON with %.17g floats


def dumps(obj, indent: int = 2) -> str:
    """Deterministic JSON: keys in insertion order, floats at %.17g, NaN/inf as null."""

    def enc(o, level):
        pad = " " * (indent * (level + 1))
        end = " " * (indent * level)
        if isinstance(o, dict):
            if not o:
                return "{}"
            items = [f"{pad}{enc(str(k), level + 1)}: {enc(v, level + 1)}" for k, v in o.items()]
            return "{\n" + ",\n".join(items) + "\n" + end + "}"
        if isinstance(o, (list, tuple, np.ndarray)):
            seq = list(o.tolist() if isinstance(o, np.ndarray) else o)
            if not seq:
                return "[]"
            if all(not isinstance(v, (dict, list, tuple, np.ndarray)) for v in seq):
                return "[" + ", ".join(enc(v, level + 1) for v in seq) + "]"
            return "[\n" + ",\n".join(pad + enc(v, level + 1) for v in seq) + "\n" + end + "]"
        if isinstance(o, (bool, np.bool_)):
            return "true" if o else "false"
        if o is None:
            return "null"
        if isinstance(o, (int, np.integer)):
            return str(int(o))
        if isinstance(o, (float, np.floating)):
            x = float(o)
            return "%.17g" % x if math.isfinite(x) else "null"
        if isinstance(o, str):
            import json
            return json.dumps(o)
        raise TypeError(f"cannot serialise {type(o).__name__}")

    return enc(obj, 0)


# ---------------------------------------------------------------------------
# configuration


def _int_in(lo, hi):
    def conv(v):
        x = int(v)
        if not lo <= x <= hi:
            raise ValueError(f"must lie in [{lo}, {hi}]")
        return x
    return conv


def _float_in(lo, hi, open_lo=True):
    def conv(v):
        x = float(v)
        if not (lo < x if open_lo else lo <= x) or not x <= hi:
            raise ValueError(f"must lie in {'(' if open_lo else '['}{lo}, {hi}]")
        return x
    return conv


# key -> (converter, default)
KEYS = {
    "domain": (str, "torus"),
    "f": (str, None),
    "u": (str, None),
    "a": (str, "1"),
    "g0": (str, None),
    "grid_n": (_int_in(8, 4096), 256),
    "seeds_per_axis": (_int_in(4, 512), 32),
    "delta_sep": (_float_in(0.0, 0.5), 0.05),
    "N": (_int_in(1, 24), 8),
    "samples_per_edge": (_int_in(8, 512), 16),
    "radius": (_float_in(0.0, 1e6), 1.0),
    "tol_vanish": (_float_in(0.0, 1.0), TOL_VANISH),
    "tol_cycle": (_float_in(0.0, 1.0), TOL_CYCLE),
    "tol_elliptic": (_float_in(0.0, 1.0), TOL_ELLIPTIC),
    "tol_q": (_float_in(0.0, 1.0), TOL_Q),
    "tol_extension": (_float_in(0.0, 1.0), TOL_EXTENSION),
    "tol_residual": (_float_in(0.0, 1e3), 1e-4),
    "tol_tube_residual": (_float_in(0.0, 1e3), 1e-2),
    "out": (str, "."),
    "threads": (_int_in(1, 1024), 1),
}


@dataclass
class JobConfig:
    values: dict = field(default_factory=dict)
    plot: bool = False

    def __getattr__(self, name):
        try:
            return self.__dict__["values"][name]
        except KeyError:
            raise AttributeError(name) from None

    def require(self, *names):
        missing = [k for k in names if self.values.get(k) in (None, "")]
        if missing:
            raise ConfigError(f"missing required key(s): {', '.join(missing)}")

    def to_json(self) -> dict:
        return {k: self.values[k] for k in KEYS}


def parse_config_text(text: str) -> dict:
    out = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, val = line.partition("=")
        key = key.strip()
        if not sep:
            raise ConfigError(f"line {lineno}: expected key=value")
        if key not in KEYS:
            raise ConfigError(f"line {lineno}: unknown key {key!r}")
        out[key] = val.strip()
    return out


def load_config(path=None, overrides: dict | None = None) -> JobConfig:
    raw = {}
    if path is not None:
        try:
            raw = parse_config_text(Path(path).read_text(encoding="utf-8"))
        except OSError as exc:
            raise ConfigError(f"cannot read config: {exc}") from exc
    env_threads = os.environ.get("HAMCOHOM_THREADS")
    if env_threads and "threads" not in raw:
        raw["threads"] = env_threads
    for k, v in (overrides or {}).items():
        if v is not None:
            raw[k] = v
    vals = {}
    for key, (conv, default) in KEYS.items():
        if key in raw:
            try:
                vals[key] = conv(raw[key])
            except ValueError as exc:
                raise ConfigError(f"{key}: {exc}") from exc
        else:
            vals[key] = default
    return JobConfig(vals)


# ---------------------------------------------------------------------------
# commands


def _emit(rows):
    for k, v in rows:
        if isinstance(v, float):
            v = "%.17g" % v
        print(f"{k}\t{v}")


def _fields(cfg: JobConfig, *names):
    dom = domain_from_spec(cfg.domain)
    out = [dom]
    for n in names:
        src = getattr(cfg, n)
        out.append(None if src is None else ScalarField(as_expr(src), dom))
    return out


def _out(cfg: JobConfig) -> Path:
    p = Path(cfg.out)
    p.mkdir(parents=True, exist_ok=True)
    return p


def cmd_analyze(cfg: JobConfig) -> int:
    cfg.require("f")
    dom, f = _fields(cfg, "f")
    crit = find_critical_points(f, dom, seeds_per_axis=cfg.seeds_per_axis)
    if not crit:
        raise RuntimeError("no critical points found")
    reeb = build_reeb_graph(f, dom, crit)
    gen = check_genericity(f, crit, reeb)
    out = _out(cfg)
    (out / "critical_points.json").write_text(
        dumps({"critical_points": [c.to_json() for c in crit]}) + "\n", encoding="utf-8")
    (out / "reeb_graph.json").write_text(
        dumps({**reeb.to_json(), "betti_number": reeb.betti_number,
               "genericity": gen.to_json()}) + "\n", encoding="utf-8")
    rows = [("critical_points", len(crit)), ("reeb_nodes", len(reeb.nodes)),
            ("reeb_edges", len(reeb.edges)), ("betti_number", reeb.betti_number),
            ("generic", str(gen.passed).lower())]
    if cfg.plot:
        from .plotting import contour_svg
        rows.append(("figure", str(contour_svg(out / "contour.svg", f, crit, reeb))))
    _emit(rows)
    return EXIT_OK


def _u_field(cfg: JobConfig, dom, f, a):
    if cfg.u is not None:
        return ScalarField(as_expr(cfg.u), dom)
    if cfg.g0 is not None:
        return poisson_bracket(f, ScalarField(as_expr(cfg.g0), dom), a)
    raise ConfigError("missing required key(s): u (or g0)")


def _check(cfg: JobConfig):
    cfg.require("f")
    dom, f = _fields(cfg, "f")
    a = SymplecticDensity(as_expr(cfg.a), dom)
    u = _u_field(cfg, dom, f, a)
    crit = find_critical_points(f, dom, seeds_per_axis=cfg.seeds_per_axis)
    reeb = build_reeb_graph(f, dom, crit)
    report = check_solvability(f, u, a, dom, critical_points=crit, reeb=reeb,
                               samples_per_edge=cfg.samples_per_edge, N=cfg.N,
                               tol_vanish=cfg.tol_vanish, tol_cycle=cfg.tol_cycle,
                               tol_elliptic=cfg.tol_elliptic, tol_extension=cfg.tol_extension)
    return dom, f, a, u, crit, reeb, report


def cmd_check(cfg: JobConfig) -> int:
    dom, f, a, u, crit, reeb, report = _check(cfg)
    out = _out(cfg)
    (out / "report.json").write_text(dumps(report.to_json()) + "\n", encoding="utf-8")
    rows = [("verdict", report.verdict), ("reasons", ",".join(report.reasons) or "-")]
    if cfg.plot:
        from .plotting import cycle_integrals_svg
        rows.append(("figure", str(cycle_integrals_svg(out / "cycle_integrals.svg", report))))
    _emit(rows)
    return report.exit_code


def cmd_solve(cfg: JobConfig) -> int:
    dom, f, a, u, crit, reeb, report = _check(cfg)
    out = _out(cfg)
    (out / "report.json").write_text(dumps(report.to_json()) + "\n", encoding="utf-8")
    if not report.solvable:
        _emit([("verdict", report.verdict), ("reasons", ",".join(report.reasons) or "-")])
        return report.exit_code
    sol = solve_global(f, a, u, reeb, cfg.grid_n, critical_points=crit, report=report,
                       delta_sep=cfg.delta_sep)
    csv, js = sol.write(out, "solution")
    d = sol.diagnostics
    warn = list(d.get("warnings", []))
    if d["residual_off_tube_max"] > cfg.tol_residual:
        warn.append("off-tube residual above tol_residual")
    if d["residual_tube_max"] > cfg.tol_tube_residual:
        warn.append("tube residual above tol_tube_residual")
    rows = [("verdict", report.verdict), ("normalization", sol.normalization),
            ("residual_off_tube_max", d["residual_off_tube_max"]),
            ("residual_tube_max", d["residual_tube_max"]), ("grid", str(csv)),
            ("diagnostics", str(js)), ("warnings", "; ".join(warn) or "-")]
    if cfg.plot:
        from .plotting import field_svg
        st = verify(f, a, sol, u, critical_points=crit, width=cfg.delta_sep)
        axes = sol.grid.axes()
        rows.append(("figure", str(field_svg(out / "solution.svg", sol.grid.values, axes, "$g$"))))
        rows.append(("figure", str(field_svg(out / "residual.svg", st["residual"], axes,
                                             r"$|\{f,g\}-u|$", log=True))))
    _emit(rows)
    return EXIT_WARNINGS if warn else EXIT_OK


def cmd_bracket(cfg: JobConfig) -> int:
    cfg.require("f", "g0")
    dom, f, g0 = _fields(cfg, "f", "g0")
    a = SymplecticDensity(as_expr(cfg.a), dom)
    br = poisson_bracket(f, g0, a)
    grid = sample_grid(br, cfg.grid_n)
    out = _out(cfg)
    path = out / "bracket.csv"
    write_grid_csv(path, grid, expr=to_string(br.expr).replace(" ", ""))
    rows = [("bracket", to_string(br.expr)), ("grid", str(path))]
    if cfg.plot:
        from .plotting import field_svg
        rows.append(("figure", str(field_svg(out / "bracket.svg", grid.values, grid.axes(),
                                             r"$\{f,g_0\}$"))))
    _emit(rows)
    return EXIT_OK


def _local(cfg: JobConfig, kind: str) -> int:
    cfg.require("u")
    out = _out(cfg)
    try:
        if kind == "elliptic":
            a = None if cfg.a.strip() in ("1", "1.0") else as_expr(cfg.a)
            sol = solve_elliptic_local(cfg.u, cfg.radius, a, grid_n=min(cfg.grid_n, 513))
        else:
            sol = solve_hyperbolic_local(cfg.u, n=min(cfg.grid_n, 1025) | 1,
                                         delta_sep=cfg.delta_sep)
    except ObstructedError as exc:
        (out / f"{kind}_refusal.json").write_text(
            dumps({"reason": exc.reason, "message": str(exc), "certificate": exc.certificate})
            + "\n", encoding="utf-8")
        _emit([("verdict", "obstructed"), ("reasons", exc.reason)])
        return EXIT_OBSTRUCTED
    csv, js = sol.write(out, kind)
    rows = [("verdict", "solvable"), ("residual_max", sol.diagnostics["residual_max"]),
            ("grid", str(csv)), ("diagnostics", str(js))]
    if cfg.plot:
        from .plotting import field_svg
        rows.append(("figure", str(field_svg(out / f"{kind}.svg", sol.grid.values,
                                             sol.grid.axes(), "$g$"))))
    _emit(rows)
    return EXIT_OK


HANDLERS = {
    "analyze": cmd_analyze,
    "check": cmd_check,
    "solve": cmd_solve,
    "bracket": cmd_bracket,
    "local-elliptic": lambda c: _local(c, "elliptic"),
    "local-hyperbolic": lambda c: _local(c, "hyperbolic"),
}


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="hamcohom", description="Solve {f, g} = u on surfaces.")
    p.add_argument("command", choices=COMMANDS)
    p.add_argument("--config", metavar="PATH")
    p.add_argument("--out", metavar="DIR")
    p.add_argument("--grid", metavar="N")
    p.add_argument("--threads", metavar="K")
    p.add_argument("--plot", action="store_true")
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_CONFIG if exc.code else EXIT_OK
    try:
        cfg = load_config(args.config, {"out": args.out, "grid_n": args.grid,
                                        "threads": args.threads})
        cfg.plot = args.plot
        return HANDLERS[args.command](cfg)
    except (ConfigError, ParseError, DomainError, DensityError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except NotMorseError as exc:
        print(f"analysis failure: {exc}", file=sys.stderr)
        return EXIT_FAILURE
    except ObstructedError as exc:
        print(f"obstructed: {exc}", file=sys.stderr)
        return EXIT_OBSTRUCTED
    except (ReebError, TracingError, EvalError, RuntimeError, ValueError) as exc:
        print(f"analysis failure: {exc}", file=sys.stderr)
        return EXIT_FAILURE


if __name__ == "__main__":
    sys.exit(main())
