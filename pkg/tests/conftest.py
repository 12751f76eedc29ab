import pytest

from hamcohom.field import ScalarField, Torus
from hamcohom.morse import build_reeb_graph, find_critical_points

BENCH_F = "cos(2*pi*x) + 0.5*cos(2*pi*y)"
BENCH_G0 = "sin(2*pi*y)"
GRAD_SQ = "(2*pi*sin(2*pi*x))^2 + (pi*sin(2*pi*y))^2"


@pytest.fixture(scope="session")
def torus():
    return Torus()


@pytest.fixture(scope="session")
def bench(torus):
    """f, critical points and Reeb graph of the torus benchmark."""
    f = ScalarField(BENCH_F, torus)
    crit = find_critical_points(f, torus)
    return f, crit, build_reeb_graph(f, torus, crit)
