import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from degenell.acceptance import PRECEDENCE_CASES, check_parser_input, fuzz_inputs
from degenell.exprparse import (
    ArityError,
    BinOp,
    Call,
    EvalDomainError,
    ExprSyntaxError,
    Neg,
    Num,
    UnknownIdentifierError,
    Var,
    evaluate,
    free_variables,
    parse,
    polynomial_degree,
    to_text,
)


def ev(text, **env):
    return float(evaluate(parse(text, 3 if "x2" in env else 2), env))


@pytest.mark.parametrize("text,t,expected", PRECEDENCE_CASES)
def test_precedence_and_associativity(text, t, expected):
    assert ev(text, x1=3.0, t=float(t)) == expected


def test_precedence_suite_size():
    assert len(PRECEDENCE_CASES) >= 30


def test_documented_examples():
    assert ev("2*t + x1", x1=1, t=0.5) == 2
    assert ev("t^2*exp(x1)", x1=0, t=0.5) == 0.25
    assert ev("1 - 2^2", x1=0, t=0) == -3
    assert ev("x1/(1+t)", x1=0.5, t=1) == 0.25
    assert ev("x1 + x2 * t", x1=1, x2=2, t=3) == 7


def test_syntax_error_offset():
    with pytest.raises(ExprSyntaxError) as info:
        parse("t +")
    assert info.value.offset == 3


@pytest.mark.parametrize(
    "text,error,offset",
    [
        ("t +", ExprSyntaxError, 3),
        ("(t", ExprSyntaxError, 2),
        ("t)", ExprSyntaxError, 1),
        ("foo + 1", UnknownIdentifierError, 0),
        ("1 + x2", UnknownIdentifierError, 4),
        ("sin()", ArityError, 3),
        ("sin(t, x1)", ArityError, 5),
        ("sin t", ArityError, 0),
        ("2 $ 3", ExprSyntaxError, 2),
        ("", ExprSyntaxError, 0),
        ("é + ", ExprSyntaxError, 0),
    ],
)
def test_located_rejections(text, error, offset):
    with pytest.raises(error) as info:
        parse(text, 2)
    assert info.value.offset == offset


def test_offsets_are_bytes_not_characters():
    with pytest.raises(ExprSyntaxError) as info:
        parse("1 + é", 2)
    assert info.value.offset == 4
    # a no-break space is whitespace but takes two bytes
    with pytest.raises(UnknownIdentifierError) as info:
        parse("\u00a0foo", 2)
    assert info.value.offset == 2


def test_invalid_utf8_has_offset():
    with pytest.raises(ExprSyntaxError) as info:
        parse(b"1 + \xff", 2)
    assert info.value.offset == 4


@pytest.mark.parametrize(
    "text,env",
    [
        ("log(t)", {"t": 0.0, "x1": 0.0}),
        ("1/t", {"t": 0.0, "x1": 0.0}),
        ("sqrt(x1)", {"t": 0.0, "x1": -1.0}),
        ("x1^0.5", {"t": 0.0, "x1": -4.0}),
        ("t^-1", {"t": 0.0, "x1": 0.0}),
    ],
)
def test_domain_errors(text, env):
    with pytest.raises(EvalDomainError):
        evaluate(parse(text), env)


def test_vectorised_evaluation():
    t = np.linspace(0, 1, 5)
    out = evaluate(parse("t^2 + x1"), {"t": t, "x1": 1.0})
    np.testing.assert_allclose(out, t**2 + 1)


def test_structure_queries():
    node = parse("x1*t^2 + 3")
    assert free_variables(node) == {"x1", "t"}
    assert polynomial_degree(node) == 3
    assert polynomial_degree(parse("sin(t)")) is None
    assert polynomial_degree(parse("(1+t)^2")) == 2


# random well-formed trees
_leaf = st.one_of(
    st.floats(0, 100, allow_nan=False, allow_infinity=False).map(Num),
    st.sampled_from(["x1", "t"]).map(Var),
)


def _extend(children):
    return st.one_of(
        children.map(Neg),
        st.tuples(st.sampled_from("+-*/^"), children, children).map(lambda a: BinOp(*a)),
        st.tuples(st.sampled_from(["sin", "cos", "exp", "log", "sqrt", "abs"]), children).map(lambda a: Call(*a)),
    )


trees = st.recursive(_leaf, _extend, max_leaves=12)


@settings(max_examples=300, deadline=None)
@given(trees)
def test_print_parse_idempotent(tree):
    printed = to_text(tree)
    reparsed = parse(printed, 2)
    assert to_text(reparsed) == printed
    assert parse(to_text(reparsed), 2) == reparsed


@settings(max_examples=300, deadline=None)
@given(trees, st.floats(-2, 2), st.floats(0, 1))
def test_well_formed_expressions_never_crash(tree, x1, t):
    try:
        with np.errstate(all="ignore"):
            value = evaluate(tree, {"x1": x1, "t": t})
        assert isinstance(float(value), float)
    except (EvalDomainError, OverflowError):
        pass


@settings(max_examples=500, deadline=None)
@given(st.binary(max_size=24))
def test_random_bytes_parse_or_locate(data):
    assert check_parser_input(data) in ("ok", "rejected")


@settings(max_examples=500, deadline=None)
@given(st.text(alphabet="0123456789.e+-*/^() tx12sinlogé,", max_size=20))
def test_random_text_parse_or_locate(text):
    assert check_parser_input(text) in ("ok", "rejected")


def test_fuzz_ten_thousand_inputs():
    outcomes = [check_parser_input(s) for s in fuzz_inputs(10_000, seed=0)]
    assert len(outcomes) == 10_000
    assert outcomes.count("ok") > 0 and outcomes.count("rejected") > 0


def test_overflowing_literal_is_located():
    with pytest.raises(ExprSyntaxError) as info:
        parse("t + 1e999")
    assert info.value.offset == 4
