import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from ksym.errors import (
    DomainError,
    ExpressionSyntaxError,
    UndefinedVariable,
    UnknownFunction,
)
from ksym.exprlang import (
    Bin,
    Call,
    HyperDual,
    Neg,
    Num,
    Var,
    compile_expr,
    eval_expr,
    eval_hd,
    expr_subst,
    parse,
    real_part,
    seed,
)


def test_precedence_forced_tree():
    assert parse("q1^2 + 2*q2") == Bin(
        "+", Bin("^", Var("q1"), Num(2.0)), Bin("*", Num(2.0), Var("q2")))


def test_left_assoc_and_right_assoc():
    assert parse("a - b - c") == Bin("-", Bin("-", Var("a"), Var("b")),
                                     Var("c"))
    assert parse("a^b^c") == Bin("^", Var("a"), Bin("^", Var("b"), Var("c")))


def test_unary_minus_binds_below_power():
    assert parse("-x^2") == Neg(Bin("^", Var("x"), Num(2.0)))
    assert parse("2*-3") == Bin("*", Num(2.0), Neg(Num(3.0)))


def test_unbalanced_paren_offset():
    with pytest.raises(ExpressionSyntaxError) as err:
        parse("sin(")
    assert err.value.offset == 4


def test_unknown_function():
    with pytest.raises(UnknownFunction) as err:
        parse("foo(x)")
    assert err.value.name == "foo"


def test_empty_and_trailing():
    with pytest.raises(ExpressionSyntaxError):
        parse("   ")
    with pytest.raises(ExpressionSyntaxError):
        parse("1 + 2 )")


def test_cos_at_zero():
    assert eval_expr(parse("cos(theta)"), {"theta": 0.0}) == 1.0


def test_unbound_variable():
    with pytest.raises(UndefinedVariable):
        eval_expr(parse("x + y"), {"x": 1.0})


def test_derivative_of_square():
    v = eval_hd(parse("x^2"), {"x": HyperDual(3.0, 1.0)})
    assert v.value == 9.0 and v.d1 == 6.0


def test_sin_mixed_second_derivative_at_zero():
    v = eval_hd(parse("sin(x)"), {"x": HyperDual(0.0, 1.0, 1.0)})
    assert v.d12 == -math.sin(0.0) == 0.0


def test_product_mixed_partial():
    v = eval_hd(parse("x*y"), {"x": HyperDual(2.0, 1.0, 0.0),
                               "y": HyperDual(5.0, 0.0, 1.0)})
    assert v.d12 == 1.0


def test_domain_errors_carry_subexpression():
    with pytest.raises(DomainError) as err:
        eval_expr(parse("1/(x - 1)"), {"x": 1.0})
    assert "x - 1" in str(err.value.expr)
    with pytest.raises(DomainError):
        eval_expr(parse("log(x)"), {"x": -2.0})
    with pytest.raises(DomainError):
        eval_expr(parse("sqrt(x)"), {"x": -1.0})


# ---------------------------------------------------------------------------
# random expression battery against finite differences
# ---------------------------------------------------------------------------

_FUNCS = ["sin", "cos", "exp"]


def _random_expr(rng, names, depth):
    r = rng.random()
    if depth == 0 or r < 0.25:
        if rng.random() < 0.5:
            return Var(names[rng.integers(len(names))])
        return Num(round(float(rng.uniform(-2, 2)), 3))
    if r < 0.45:
        return Call(_FUNCS[rng.integers(len(_FUNCS))],
                    _random_expr(rng, names, depth - 1))
    if r < 0.55:
        return Neg(_random_expr(rng, names, depth - 1))
    op = "+-*"[rng.integers(3)] if rng.random() < 0.85 else "/"
    left = _random_expr(rng, names, depth - 1)
    right = _random_expr(rng, names, depth - 1)
    if op == "/":
        # keep denominators away from zero
        right = Bin("+", Bin("*", right, right), Num(1.5))
    return Bin(op, left, right)


def test_hyperdual_matches_finite_differences():
    rng = np.random.default_rng(42)
    names = ["x", "y", "z"]
    checked = 0
    while checked < 200:
        expr = _random_expr(rng, names, 3)
        pt = {nm: float(rng.uniform(-1.2, 1.2)) for nm in names}
        try:
            base = eval_expr(expr, pt)
        except DomainError:
            continue
        if not math.isfinite(base) or abs(base) > 1e6:
            continue
        d1 = {nm: float(rng.normal()) for nm in names}
        d2 = {nm: float(rng.normal()) for nm in names}
        hd = eval_hd(expr, {nm: HyperDual(pt[nm], d1[nm], d2[nm])
                            for nm in names})

        def at(eps1, eps2):
            return eval_expr(expr, {nm: pt[nm] + eps1 * d1[nm]
                                    + eps2 * d2[nm] for nm in names})

        h = 1e-6
        h2 = 1e-4  # second differences divide by h^2: keep rounding below tol
        try:
            fd1 = (at(h, 0) - at(-h, 0)) / (2 * h)
            fd12 = (at(h2, h2) - at(h2, -h2) - at(-h2, h2)
                    + at(-h2, -h2)) / (4 * h2 * h2)
        except DomainError:
            continue
        scale1 = max(1.0, abs(hd.d1))
        assert abs(hd.d1 - fd1) < 1e-6 * scale1
        assert abs(hd.d12 - fd12) < 1e-4 * max(1.0, abs(hd.d12))
        checked += 1


def test_evaluation_is_deterministic():
    expr = parse("sin(x)*exp(y) + x^3/(y^2 + 1)")
    b = {"x": 0.7, "y": -0.3}
    assert eval_expr(expr, b) == eval_expr(expr, b)
    assert compile_expr(expr)(b) == eval_expr(expr, b)


# ---------------------------------------------------------------------------
# hypothesis properties
# ---------------------------------------------------------------------------

_names = st.sampled_from(["x", "y", "q1", "theta_b"])
_nums = st.floats(min_value=0.0, max_value=9.5,
                  allow_nan=False, allow_infinity=False).map(
                      lambda v: round(v, 4))


def _exprs(depth):
    if depth == 0:
        return st.one_of(_names.map(Var), _nums.map(Num))
    sub = _exprs(depth - 1)
    return st.one_of(
        _names.map(Var),
        _nums.map(Num),
        st.builds(Neg, sub),
        st.builds(Bin, st.sampled_from(list("+-*/^")), sub, sub),
        st.builds(Call, st.sampled_from(["sin", "cos", "tan", "exp", "log",
                                         "sqrt"]), sub),
    )


@settings(max_examples=300, deadline=None)
@given(_exprs(4))
def test_print_parse_roundtrip(tree):
    assert parse(str(tree)) == tree


@settings(max_examples=200, deadline=None)
@given(st.tuples(*[st.floats(-3, 3).map(lambda v: round(v, 3))
                   for _ in range(8)]))
def test_hyperdual_product_rule(parts):
    f = HyperDual(*parts[:4])
    g = HyperDual(*parts[4:])
    prod = f * g
    assert prod.d12 == pytest.approx(
        f.d12 * g.value + f.d1 * g.d2 + f.d2 * g.d1 + f.value * g.d12,
        rel=1e-12, abs=1e-12)
    assert prod.d1 == pytest.approx(f.d1 * g.value + f.value * g.d1,
                                    rel=1e-12, abs=1e-12)


def test_nested_hyperduals_give_higher_derivatives():
    # second derivative of sin via one nesting level
    expr = parse("sin(x)")
    inner = HyperDual(0.7, 1.0, 0.0)
    outer = HyperDual(inner, 1.0, 0.0)
    r = eval_expr(expr, {"x": outer})
    assert r.d1.d1 == pytest.approx(-math.sin(0.7), abs=1e-14)


def test_expr_subst_folds_constants():
    expr = parse("cos(theta)*x + y^2")
    out = expr_subst(expr, {"theta": 0.0, "y": 2.0})
    assert out == Bin("+", Var("x"), Num(4.0))


def test_seed_and_real_part():
    s = seed([1.0, 2.0], [3.0, 4.0])
    assert [x.value for x in s] == [1.0, 2.0]
    assert [x.d1 for x in s] == [3.0, 4.0]
    assert real_part(HyperDual(HyperDual(5.0))) == 5.0
