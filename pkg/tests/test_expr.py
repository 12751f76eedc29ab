import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from hamcohom.expr import (EvalError, Mul, ParseError, UnknownIdentifierError, Var, differentiate,
                           evaluate, parse, taylor_coefficients, to_string)

from strategies import expressions, points


def test_parse_product():
    assert parse("x*y") == Mul(Var("x"), Var("y"))


def test_benchmark_value_at_origin():
    assert evaluate(parse("cos(2*pi*x) + 0.5*cos(2*pi*y)"), (0, 0)) == 1.5


def test_incomplete_input_offset():
    with pytest.raises(ParseError) as exc:
        parse("x +")
    assert exc.value.offset == 3
    assert {"x", "y", "("} <= exc.value.expected


def test_offset_counts_bytes():
    with pytest.raises(ParseError) as exc:
        parse("x + é")
    assert exc.value.offset == 4


def test_unknown_identifier():
    with pytest.raises(UnknownIdentifierError):
        parse("z + 1")
    with pytest.raises(UnknownIdentifierError):
        parse("sqrt(x)")


@pytest.mark.parametrize("src", ["", "(x", "x y", "2**x", "sin x", ")"])
def test_syntax_errors(src):
    with pytest.raises(ParseError):
        parse(src)


def test_precedence():
    assert evaluate(parse("2^3^2"), (0, 0)) == 512
    # unary minus binds tighter than ^ in this grammar
    assert evaluate(parse("-2^2"), (0, 0)) == 4
    assert evaluate(parse("-(2^2)"), (0, 0)) == -4
    assert evaluate(parse("1 - 2 - 3"), (0, 0)) == -4
    assert evaluate(parse("8 / 4 / 2"), (0, 0)) == 1
    assert evaluate(parse("2 * 3 + 4"), (0, 0)) == 10


def test_eval_examples():
    assert evaluate(parse("x*y"), (2, 3)) == 6
    assert evaluate(parse("exp(x)"), (1, 0)) == pytest.approx(math.e, rel=1e-15)


@pytest.mark.parametrize("src, p", [("1/x", (0, 0)), ("ln(x)", (-1, 0)), ("ln(x)", (0, 0)),
                                    ("exp(x)", (1000, 0)), ("(x)^0.5", (-1, 0))])
def test_eval_errors(src, p):
    with pytest.raises(EvalError):
        evaluate(parse(src), p)


def test_vectorised_eval_errors():
    with pytest.raises(EvalError):
        parse("1/x").veval(np.array([0.0, 1.0]), np.zeros(2))


def test_derivative_examples():
    assert to_string(differentiate(parse("x*y"), "x")) == "y"
    d = differentiate(parse("cos(2*pi*y)"), "y")
    for y in (0.1, 0.3, 0.77):
        assert evaluate(d, (0, y)) == pytest.approx(-2 * math.pi * math.sin(2 * math.pi * y), rel=1e-14)
    assert evaluate(differentiate(differentiate(parse("x^2"), "x"), "x"), (0.4, 0)) == 2


def test_taylor_coefficients_match_derivatives():
    e = parse("sin(x + 2*y) * exp(x*y)")
    c = taylor_coefficients(e, (0.3, -0.2), 3)
    q = differentiate(differentiate(e, "x"), "y")
    assert c[1, 1] == pytest.approx(evaluate(q, (0.3, -0.2)), rel=1e-12)
    assert c[0, 0] == pytest.approx(evaluate(e, (0.3, -0.2)), rel=1e-14)


@settings(max_examples=60, deadline=None)
@given(expressions, st.lists(points, min_size=5, max_size=5))
def test_print_parse_round_trip(src, pts):
    e = parse(src)
    e2 = parse(to_string(e))
    for p in pts:
        a, b = evaluate(e, p), evaluate(e2, p)
        assert abs(a - b) <= 1e-12 * max(1.0, abs(a))


@settings(max_examples=60, deadline=None)
@given(expressions, expressions, points, st.sampled_from("xy"))
def test_derivative_linearity(s1, s2, p, var):
    lhs = evaluate(differentiate(parse(f"({s1}) + ({s2})"), var), p)
    rhs = evaluate(differentiate(parse(s1), var), p) + evaluate(differentiate(parse(s2), var), p)
    assert abs(lhs - rhs) <= 1e-12 * max(1.0, abs(lhs))


@settings(max_examples=80, deadline=None)
@given(expressions, st.tuples(st.floats(0.1, 0.9), st.floats(0.1, 0.9)), st.sampled_from("xy"))
def test_derivative_matches_finite_difference(src, p, var):
    e = parse(src)
    h = 1e-5
    dp = (h, 0.0) if var == "x" else (0.0, h)
    fd = (evaluate(e, (p[0] + dp[0], p[1] + dp[1]))
          - evaluate(e, (p[0] - dp[0], p[1] - dp[1]))) / (2 * h)
    d = evaluate(differentiate(e, var), p)
    # absolute floor covers cancellation in the difference quotient
    scale = max(abs(d), abs(evaluate(e, p)), 1.0)
    assert abs(d - fd) <= 1e-6 * scale
