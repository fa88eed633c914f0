import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from hetcalib import expr as ex


def ev(src, d=1, q=1, **env):
    return ex.evaluate(ex.parse(src, d, q), env)


@pytest.mark.parametrize("src,val", [
    ("1 + 2 * 3", 7.0),
    ("(1 + 2) * 3", 9.0),
    ("2 ^ 3 ^ 2", 512.0),
    ("-2 ^ 2", -4.0),
    ("2 * -3", -6.0),
    ("sqrt(16) + abs(-2)", 6.0),
    ("exp(log(3))", 3.0),
    ("pi", math.pi),
    ("1e-3 * 2", 2e-3),
    ("8 / 4 / 2", 1.0),
])
def test_constant_arithmetic(src, val):
    assert ev(src) == pytest.approx(val, rel=1e-15)


def test_variables_and_aliases():
    x = np.array([0.0, 1.0, 2.0])
    np.testing.assert_allclose(ev("x * theta", x1=x, theta1=2.0), 2 * x)
    np.testing.assert_allclose(ev("x1 + x2", d=2, q=0, x1=x, x2=x), 2 * x)


@pytest.mark.parametrize("src", ["", "1 +", "(1", "sin 1", "x3", "theta2", "foo(1)", "1 $ 2", "2 3"])
def test_syntax_errors(src):
    with pytest.raises(ex.ExprSyntaxError):
        ex.parse(src, 2, 1)


@pytest.mark.parametrize("src,env", [
    ("log(x)", {"x1": np.array([1.0, -1.0])}),
    ("sqrt(x)", {"x1": -1.0}),
    ("1 / x", {"x1": np.array([0.0])}),
    ("x ^ 0.5", {"x1": -2.0}),
    ("exp(x)", {"x1": 1000.0}),
    ("theta", {}),
])
def test_domain_errors(src, env):
    with pytest.raises(ex.ExprEvalError):
        ex.evaluate(ex.parse(src, 1, 1), env)


# random expressions over x1, theta1 built from a tiny grammar
leaf = st.sampled_from(["x1", "theta1", "2", "0.5", "pi"])


def _combine(children):
    return st.one_of(
        st.tuples(children, st.sampled_from(["+", "-", "*"]), children).map(lambda t: f"({t[0]} {t[1]} {t[2]})"),
        st.tuples(st.sampled_from(["sin", "cos", "exp"]), children).map(lambda t: f"{t[0]}({t[1]})"),
        children.map(lambda c: f"({c})^2"),
    )


exprs = st.recursive(leaf, _combine, max_leaves=6)


@given(exprs)
def test_printer_round_trip(src):
    node = ex.parse(src, 1, 1)
    again = ex.parse(ex.to_string(node), 1, 1)
    env = {"x1": np.array([0.3, -0.7]), "theta1": 0.4}
    try:
        v = ex.evaluate(node, env)
    except ex.ExprEvalError:
        return
    np.testing.assert_allclose(ex.evaluate(again, env), v, rtol=1e-12)


@given(exprs)
def test_symbolic_derivative_matches_central_difference(src):
    node = ex.parse(src, 1, 1)
    dn = ex.derivative(node, "theta1")
    x = np.array([0.3, -0.7])
    h = 1e-6
    try:
        up = ex.evaluate(node, {"x1": x, "theta1": 0.4 + h})
        dn_ = ex.evaluate(node, {"x1": x, "theta1": 0.4 - h})
        d = np.broadcast_to(ex.evaluate(dn, {"x1": x, "theta1": 0.4}), x.shape)
    except ex.ExprEvalError:
        return
    fd = (up - dn_) / (2 * h)
    np.testing.assert_allclose(d, fd, rtol=1e-5, atol=1e-5 * (1 + np.max(np.abs(fd))))


def test_symbols():
    assert ex.symbols(ex.parse("x1 * sin(theta2) + pi", 1, 2)) == {"x1", "theta2", "pi"}
