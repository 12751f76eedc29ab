"""Solving the cohomological equation ``{f, g} = u`` on surfaces."""
from .expr import (EvalError, Expr, ParseError, UnknownIdentifierError, differentiate,
                   evaluate, parse, to_string)
from .field import (Disk, Rect, ScalarField, SymplecticDensity, Torus, domain_from_spec,
                    hamiltonian_field, poisson_bracket)
from .flow import Orbit, TracingError, integrate_orbit, line_integral, line_integrals, trace_orbits
from .morse import (CriticalPoint, NotMorseError, ReebGraph, build_reeb_graph, check_genericity,
                    find_critical_points)
from .solvability import SolvabilityReport, check_solvability
from .solver import (ObstructedError, Solution, kernel_check, obstruction_class,
                     solve_elliptic_local, solve_global, solve_hyperbolic_local, verify)

__version__ = "0.1.0"

__all__ = [
    "EvalError", "Expr", "ParseError", "UnknownIdentifierError", "differentiate", "evaluate",
    "parse", "to_string",
    "Disk", "Rect", "ScalarField", "SymplecticDensity", "Torus", "domain_from_spec",
    "hamiltonian_field", "poisson_bracket",
    "Orbit", "TracingError", "integrate_orbit", "line_integral", "line_integrals", "trace_orbits",
    "CriticalPoint", "NotMorseError", "ReebGraph", "build_reeb_graph", "check_genericity",
    "find_critical_points",
    "SolvabilityReport", "check_solvability",
    "ObstructedError", "Solution", "kernel_check", "obstruction_class", "solve_elliptic_local",
    "solve_global", "solve_hyperbolic_local", "verify",
]
