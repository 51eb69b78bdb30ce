"""Expression language: parsing, printing, typing, total evaluation."""

from decimal import Decimal

import pytest
from hypothesis import given, settings, strategies as st

from reference import RefEvaluator
from toolgate.expr import (
    BoolOp,
    Compare,
    ContextSchema,
    EvalContext,
    ExprSyntaxError,
    ExprTypeError,
    Literal,
    Membership,
    Not,
    Path,
    ScalarType,
    TypedExpr,
    evaluate,
    parse_expr,
    print_expr,
    typecheck,
    typecheck_collect,
)

SCHEMA = ContextSchema(
    request_fields={
        "principal_id": ScalarType.STRING,
        "action": ScalarType.STRING,
        "resource": ScalarType.STRING,
        "amount": ScalarType.DECIMAL,
        "count": ScalarType.INT,
        "vendor": ScalarType.STRING,
        "urgent": ScalarType.BOOL,
    },
    trajectory_fields={"total_spend": ScalarType.DECIMAL, "po_count": ScalarType.INT},
    set_types={"vendors": ScalarType.STRING, "limits": ScalarType.INT},
)


def ctx(request=None, trajectory=None, sets=None) -> EvalContext:
    return EvalContext(
        request=request or {},
        trajectory=trajectory or {},
        sets=sets if sets is not None else {"vendors": ("V-001", "V-007"), "limits": (1, 2, 3)},
    )


def run(text: str, **kw):
    te = TypedExpr(parse_expr(text), SCHEMA)
    return evaluate(te, ctx(**kw))


class TestParsing:
    def test_or_binds_looser_than_and(self):
        e = parse_expr("request.urgent || request.urgent && request.urgent")
        assert isinstance(e, BoolOp) and e.op == "||"
        assert isinstance(e.operands[1], BoolOp) and e.operands[1].op == "&&"

    def test_parens_override(self):
        e = parse_expr("(request.urgent || request.urgent) && request.urgent")
        assert isinstance(e, BoolOp) and e.op == "&&"
        assert isinstance(e.operands[0], BoolOp) and e.operands[0].op == "||"

    def test_not_binds_tightest(self):
        e = parse_expr("!request.urgent && request.urgent")
        assert isinstance(e, BoolOp) and e.op == "&&"
        assert isinstance(e.operands[0], Not)

    def test_membership(self):
        e = parse_expr("request.vendor in set(vendors)")
        assert isinstance(e, Membership)
        assert e.set_name == "vendors"
        assert isinstance(e.operand, Path)

    def test_decimal_and_negative_literals(self):
        e = parse_expr("request.amount >= -12.5")
        assert isinstance(e, Compare)
        assert e.right == Literal(value=Decimal("-12.5"))

    def test_string_escapes(self):
        e = parse_expr('request.vendor == "a\\"b"')
        assert isinstance(e, Compare)
        assert e.right == Literal(value='a"b')

    @pytest.mark.parametrize(
        "bad",
        [
            "",
            "request.",
            "vendor == 3",
            "request.amount >",
            "(request.urgent",
            "request.vendor in vendors",
            "request.amount == 1 2",
        ],
    )
    def test_syntax_errors(self, bad):
        with pytest.raises(ExprSyntaxError):
            parse_expr(bad)


class TestTypecheck:
    def test_unknown_attribute(self):
        issues = typecheck_collect(parse_expr("request.missing == 1"), SCHEMA)
        assert [i.code for i in issues] == ["UNKNOWN_PATH"]

    def test_env_has_no_attributes(self):
        issues = typecheck_collect(parse_expr("env.anything == 1"), SCHEMA)
        assert [i.code for i in issues] == ["UNKNOWN_PATH"]

    def test_ordering_needs_numbers(self):
        issues = typecheck_collect(parse_expr("request.vendor < \"z\""), SCHEMA)
        assert [i.code for i in issues] == ["TYPE_MISMATCH"]

    def test_int_decimal_cross_comparison_allowed(self):
        assert typecheck_collect(parse_expr("request.count < request.amount"), SCHEMA) == []

    def test_equality_type_mismatch(self):
        issues = typecheck_collect(parse_expr("request.vendor == 3"), SCHEMA)
        assert [i.code for i in issues] == ["TYPE_MISMATCH"]

    def test_unknown_set(self):
        issues = typecheck_collect(parse_expr("request.vendor in set(nowhere)"), SCHEMA)
        assert [i.code for i in issues] == ["UNKNOWN_SET"]

    def test_membership_element_type(self):
        issues = typecheck_collect(parse_expr("request.vendor in set(limits)"), SCHEMA)
        assert [i.code for i in issues] == ["TYPE_MISMATCH"]

    def test_boolop_wants_bool(self):
        issues = typecheck_collect(parse_expr("request.count && request.urgent"), SCHEMA)
        assert [i.code for i in issues] == ["TYPE_MISMATCH"]

    def test_top_level_must_be_bool(self):
        with pytest.raises(ExprTypeError):
            typecheck(parse_expr("request.count"), SCHEMA)


class TestEvaluation:
    def test_numeric_cross_type_equality(self):
        out = run("request.amount == 12", request={"amount": Decimal("12.0000")})
        assert out == (True, False)

    def test_quantized_equality_boundary(self):
        # values closer than the 4-decimal grid collapse onto it
        out = run("request.amount == 12.00004", request={"amount": Decimal("12.0000")})
        assert out.value is True

    def test_missing_path_reads_false_and_flags(self):
        out = run("request.amount > 5", request={})
        assert out == (False, True)

    def test_negated_missing_reads_true_but_still_flags(self):
        out = run("!request.urgent", request={})
        assert out == (True, True)

    def test_missing_on_one_branch_of_or(self):
        out = run("request.urgent || request.count == 1", request={"count": 1})
        assert out == (True, True)

    def test_both_connective_branches_contribute_flags(self):
        out = run("request.urgent && request.count == 1", request={})
        assert out == (False, True)

    def test_unknown_set_at_runtime_flags(self):
        out = run("request.vendor in set(vendors)", request={"vendor": "V-001"}, sets={})
        assert out == (False, True)

    def test_membership_hit_and_miss(self):
        assert run("request.vendor in set(vendors)", request={"vendor": "V-007"}).value is True
        assert run("request.vendor in set(vendors)", request={"vendor": "V-999"}).value is False

    def test_trajectory_namespace(self):
        out = run("trajectory.total_spend > 5000", trajectory={"total_spend": Decimal("5000.0001")})
        assert out == (True, False)

    def test_strict_threshold_boundary(self):
        out = run("trajectory.total_spend > 5000", trajectory={"total_spend": Decimal("5000.0000")})
        assert out == (False, False)


# Cross-validation: the package evaluator against the rational-arithmetic
# reference interpreter, over generated well-typed expressions and contexts.

_FIELDS = {
    "amount": ScalarType.DECIMAL,
    "count": ScalarType.INT,
    "vendor": ScalarType.STRING,
    "urgent": ScalarType.BOOL,
}


def _value_for(t: ScalarType):
    if t == ScalarType.INT:
        return st.integers(-10, 10)
    if t == ScalarType.DECIMAL:
        return st.integers(-100000, 100000).map(lambda n: Decimal(n) / 10000)
    if t == ScalarType.BOOL:
        return st.booleans()
    return st.sampled_from(["a", "b", "V-001"])


def _leaf():
    numeric_path = st.sampled_from(["amount", "count"])
    comparisons = st.builds(
        lambda name, op, n: Compare(op=op, left=Path(namespace="request", name=name), right=Literal(value=n)),
        numeric_path,
        st.sampled_from(["==", "!=", "<", "<=", ">", ">="]),
        st.one_of(st.integers(-5, 5), st.integers(-50000, 50000).map(lambda n: Decimal(n) / 10000)),
    )
    member = st.builds(
        lambda: Membership(operand=Path(namespace="request", name="vendor"), set_name="vendors")
    )
    flags = st.just(Path(namespace="request", name="urgent"))
    lits = st.booleans().map(lambda b: Literal(value=b))
    return st.one_of(comparisons, member, flags, lits)


def _exprs():
    return st.recursive(
        _leaf(),
        lambda inner: st.one_of(
            inner.map(lambda e: Not(operand=e)),
            st.tuples(st.sampled_from(["&&", "||"]), st.lists(inner, min_size=2, max_size=3)).map(
                lambda t: BoolOp(op=t[0], operands=tuple(t[1]))
            ),
        ),
        max_leaves=8,
    )


@st.composite
def _contexts(draw):
    request = {}
    for name, t in _FIELDS.items():
        if draw(st.booleans()):
            request[name] = draw(_value_for(t))
    sets = {"vendors": ("V-001", "b")} if draw(st.booleans()) else {}
    return request, sets


@settings(max_examples=300, deadline=None)
@given(expr=_exprs(), env=_contexts())
def test_evaluator_agrees_with_rational_reference(expr, env):
    request, sets = env
    schema = ContextSchema(request_fields=_FIELDS, trajectory_fields={}, set_types={"vendors": ScalarType.STRING})
    got = evaluate(TypedExpr(expr, schema), EvalContext(request=request, trajectory={}, sets=sets))
    ref = RefEvaluator(request, {}, sets)
    want = ref.run(expr)
    assert got.value == want
    assert got.context_incomplete == ref.incomplete


@settings(max_examples=200, deadline=None)
@given(expr=_exprs())
def test_print_then_reparse_is_identity(expr):
    assert parse_expr(print_expr(expr)) == expr


@settings(max_examples=200, deadline=None)
@given(expr=_exprs(), env=_contexts())
def test_evaluation_is_total(expr, env):
    # no exception on any well-typed tree, however sparse the context
    request, sets = env
    schema = ContextSchema(request_fields=_FIELDS, trajectory_fields={}, set_types={"vendors": ScalarType.STRING})
    out = evaluate(TypedExpr(expr, schema), EvalContext(request=request, trajectory={}, sets=sets))
    assert isinstance(out.value, bool)
