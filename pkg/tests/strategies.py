"""Hypothesis strategies for expression sources that evaluate finitely on [0, 1]^2."""
from hypothesis import strategies as st

leaves = st.one_of(
    st.sampled_from(["x", "y", "pi"]),
    st.floats(0.1, 3.0, allow_nan=False).map(lambda c: f"{c:.4g}"),
)


def _extend(inner):
    return st.one_of(
        st.tuples(inner, st.sampled_from(["+", "-", "*"]), inner).map(lambda t: f"({t[0]}) {t[1]} ({t[2]})"),
        st.tuples(st.sampled_from(["sin", "cos"]), inner).map(lambda t: f"{t[0]}({t[1]})"),
        inner.map(lambda s: f"exp(0.2*sin({s}))"),
        inner.map(lambda s: f"ln(2 + cos({s}))"),
        st.tuples(inner, st.integers(2, 3)).map(lambda t: f"({t[0]})^{t[1]}"),
        st.tuples(inner, inner).map(lambda t: f"({t[0]}) / (1.5 + sin({t[1]}))"),
    )


expressions = st.recursive(leaves, _extend, max_leaves=8)
points = st.tuples(st.floats(0.0, 1.0), st.floats(0.0, 1.0))
