import math

import numpy as np
import pytest
from hypothesis import HealthCheck, given, settings
from hypothesis import strategies as st

from safemargin import expr as ex
from safemargin.errors import DomainError, ExprSyntaxError, UnknownVariable

NAMES = ["x1", "x2", "p1", "p2"]


def test_parse_smib_field():
    e = ex.parse("p1*sin(x1) - 0.5*x2 + p2", NAMES)
    assert isinstance(e, ex.Binary) and e.op == "add"
    assert e.left.op == "sub" and e.left.left.op == "mul"
    assert e.variables() == {"p1", "x1", "x2", "p2"}


def test_parse_single_variable():
    assert ex.parse("x1", NAMES) == ex.Var("x1")


def test_pow_right_associative():
    assert ex.evaluate(ex.parse("2^3^2"), {}) == 512.0
    assert ex.evaluate(ex.parse("2**3**2"), {}) == 512.0


def test_pow_binds_tighter_than_neg():
    assert ex.evaluate(ex.parse("-2^2"), {}) == -4.0
    assert ex.evaluate(ex.parse("2^-1"), {}) == 0.5


@pytest.mark.parametrize("text,value", [
    ("1 - 2 - 3", -4.0),
    ("8 / 4 / 2", 1.0),
    ("2 + 3*4", 14.0),
    ("(2 + 3)*4", 20.0),
    ("-x1*2", -6.0),
    ("exp(0) + cos(0)", 2.0),
])
def test_precedence(text, value):
    assert ex.evaluate(ex.parse(text, NAMES), {"x1": 3.0}) == pytest.approx(value)


def test_eval_examples():
    e = ex.parse("p1*sin(x1) - 0.5*x2 + p2", NAMES)
    assert ex.evaluate(e, {"x1": 0, "x2": 0, "p1": 1.9, "p2": 1.5}) == 1.5
    assert ex.evaluate(ex.parse("sqrt(x1)", NAMES), {"x1": 4}) == 2.0


@pytest.mark.parametrize("text,env", [
    ("log(x1)", {"x1": -1.0}),
    ("log(x1)", {"x1": 0.0}),
    ("sqrt(x1)", {"x1": -1.0}),
    ("1/x1", {"x1": 0.0}),
    ("x1^0.5", {"x1": -2.0}),
])
def test_domain_errors(text, env):
    with pytest.raises(DomainError):
        ex.evaluate(ex.parse(text, NAMES), env)


def test_syntax_error_position():
    with pytest.raises(ExprSyntaxError) as info:
        ex.parse("x1 + * x2", NAMES)
    assert info.value.position == 5
    assert info.value.expected


@pytest.mark.parametrize("text", ["", "x1 +", "sin x1", "(x1", "x1)", "2 x1", "foo(x1)"])
def test_syntax_errors(text):
    with pytest.raises((ExprSyntaxError, UnknownVariable)):
        ex.parse(text, NAMES)


def test_unknown_variable():
    with pytest.raises(UnknownVariable) as info:
        ex.parse("x1 + y", NAMES)
    assert info.value.name == "y" and info.value.position == 5


def test_diff_examples():
    d = ex.diff(ex.parse("p1*sin(x1)", NAMES), "x1")
    assert ex.evaluate(d, {"x1": 0.0, "p1": 1.9}) == pytest.approx(1.9)
    assert ex.diff(ex.parse("p2", NAMES), "x1") == ex.Const(0.0)


def test_diff_folds_unit_factors():
    assert ex.diff(ex.parse("x1", NAMES), "x1") == ex.Const(1.0)
    assert ex.diff(ex.parse("3*x1", NAMES), "x1") == ex.Const(3.0)


# ---------------------------------------------------------------------------
# random expressions

_leaf = st.one_of(
    st.sampled_from([ex.Var(n) for n in NAMES]),
    st.floats(-3, 3, allow_nan=False).map(lambda v: ex.Const(round(v, 3))),
)


def _extend(children):
    return st.one_of(
        st.builds(ex.Unary, st.sampled_from(ex.UNARY_OPS), children),
        st.builds(ex.Binary, st.sampled_from(("add", "sub", "mul", "div")), children, children),
        st.builds(ex.Binary, st.just("pow"), children, st.sampled_from(
            [ex.Const(2.0), ex.Const(3.0), ex.Const(0.5), ex.Const(-1.0)])),
    )


expressions = st.recursive(_leaf, _extend, max_leaves=12)
envs = st.fixed_dictionaries({n: st.floats(0.2, 2.0) for n in NAMES})


@settings(max_examples=200, deadline=None)
@given(expressions)
def test_print_parse_roundtrip(e):
    assert ex.parse(ex.to_string(e), NAMES) == e


def _central(e, env, var):
    h = 1e-6 * max(1.0, abs(env[var]))
    up, dn = dict(env), dict(env)
    up[var] += h
    dn[var] -= h
    return (ex.evaluate(e, up) - ex.evaluate(e, dn)) / (2 * h)


def _well_conditioned(e, env, var):
    """Skip points near domain singularities or with heavy cancellation."""
    try:
        vals = [ex.evaluate(e, {**env, var: env[var] + s}) for s in (-1e-3, 0.0, 1e-3)]
        d = ex.evaluate(ex.diff(e, var), env)
    except (DomainError, OverflowError, ZeroDivisionError):
        return False
    scale = max(1.0, *map(abs, vals))
    return all(map(math.isfinite, vals + [d])) and scale < 1e4 and abs(d) < 1e4


@settings(max_examples=100, deadline=None, suppress_health_check=[HealthCheck.filter_too_much])
@given(expressions, envs, st.sampled_from(NAMES))
def test_derivative_matches_finite_differences(e, env, var):
    from hypothesis import assume
    assume(_well_conditioned(e, env, var))
    sym = ex.evaluate(ex.diff(e, var), env)
    fd = _central(e, env, var)
    assert abs(sym - fd) <= 1e-6 * max(1.0, abs(fd))


def test_compile_vectorized_matches_eval(rng):
    texts = ["p1*sin(x1) - 0.5*x2 + p2", "exp(-x1^2)*p2", "sqrt(x2^2 + 1)/p1"]
    es = [ex.parse(t, NAMES) for t in texts]
    fn = ex.compile_vectorized([es], [["x1", "x2"], ["p1", "p2"]])
    X = rng.uniform(-2, 2, (7, 2))
    P = rng.uniform(0.5, 2, (7, 2))
    (out,) = fn(X, P)
    for i in range(7):
        env = {"x1": X[i, 0], "x2": X[i, 1], "p1": P[i, 0], "p2": P[i, 1]}
        assert np.allclose(out[i], [ex.evaluate(e, env) for e in es], rtol=1e-14)
