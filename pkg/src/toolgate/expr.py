"""Precondition expression language: parser, typechecker, and total evaluator.

The language is deliberately small: two-segment attribute paths over the
``request`` / ``trajectory`` / ``env`` namespaces, scalar literals, the six
comparison operators, boolean connectives, and ``in set(name)`` membership.
No arithmetic, no regex, no user functions. Expressiveness grows only with
audit tooling, so a rule either states a crisp check or it does not belong
at the dispatch boundary.

Evaluation is total: a typechecked expression never raises. A comparison or
membership touching a context field that is absent evaluates to false and
sets the ``context_incomplete`` flag, which the mediator uses to fail closed
on guarded actions.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field
from decimal import Decimal
from typing import Iterator, Mapping, NamedTuple, Union

Scalar = Union[str, int, Decimal, bool]

# Money and every other decimal quantity is fixed-point with 4 fractional
# digits; comparisons happen on the scaled integer, never on floats.
DEC_QUANTUM = Decimal("0.0001")
DEC_SCALE = 10_000


class ScalarType(str, enum.Enum):
    STRING = "string"
    INT = "int"
    DECIMAL = "decimal"
    BOOL = "bool"

    @property
    def numeric(self) -> bool:
        return self in (ScalarType.INT, ScalarType.DECIMAL)


def scalar_type_of(value: Scalar) -> ScalarType:
    # bool first: it is an int subclass
    if isinstance(value, bool):
        return ScalarType.BOOL
    if isinstance(value, int):
        return ScalarType.INT
    if isinstance(value, Decimal):
        return ScalarType.DECIMAL
    if isinstance(value, str):
        return ScalarType.STRING
    raise TypeError(f"not a scalar: {value!r}")


def quantize(value: Decimal) -> Decimal:
    return value.quantize(DEC_QUANTUM)


def to_scaled(value: Scalar) -> int:
    """Exact fixed-point integer for a numeric scalar."""
    if isinstance(value, bool):
        raise TypeError("bool is not numeric")
    if isinstance(value, int):
        return value * DEC_SCALE
    return int(quantize(value) * DEC_SCALE)


# ---------------------------------------------------------------------------
# AST
# ---------------------------------------------------------------------------

NAMESPACES = ("request", "trajectory", "env")

COMPARISON_OPS = ("==", "!=", "<=", ">=", "<", ">")


@dataclass(frozen=True)
class Pos:
    line: int
    col: int

    def __str__(self) -> str:
        return f"{self.line}:{self.col}"


_NOPOS = Pos(0, 0)


@dataclass(frozen=True)
class Expr:
    # Position is diagnostic only; printed-and-reparsed trees compare equal.
    pos: Pos = field(default=_NOPOS, compare=False, kw_only=True)


@dataclass(frozen=True)
class Literal(Expr):
    value: Scalar = False


@dataclass(frozen=True)
class Path(Expr):
    namespace: str = ""
    name: str = ""


@dataclass(frozen=True)
class Not(Expr):
    operand: Expr = None  # type: ignore[assignment]


@dataclass(frozen=True)
class Compare(Expr):
    op: str = "=="
    left: Expr = None  # type: ignore[assignment]
    right: Expr = None  # type: ignore[assignment]


@dataclass(frozen=True)
class Membership(Expr):
    operand: Expr = None  # type: ignore[assignment]
    set_name: str = ""


@dataclass(frozen=True)
class BoolOp(Expr):
    op: str = "&&"  # "&&" or "||"
    operands: tuple[Expr, ...] = ()


# ---------------------------------------------------------------------------
# Errors
# ---------------------------------------------------------------------------


class ExprSyntaxError(Exception):
    def __init__(self, message: str, pos: Pos):
        super().__init__(f"{pos}: {message}")
        self.message = message
        self.pos = pos


@dataclass(frozen=True)
class TypeIssue:
    code: str  # UNKNOWN_PATH | TYPE_MISMATCH | UNKNOWN_SET
    message: str
    pos: Pos


class ExprTypeError(Exception):
    def __init__(self, issues: list[TypeIssue]):
        super().__init__("; ".join(f"{i.pos}: {i.message}" for i in issues))
        self.issues = issues


# ---------------------------------------------------------------------------
# Tokenizer
# ---------------------------------------------------------------------------

# Multi-char entries precede their prefixes. The bracket/colon/comma tokens
# exist for the policy-file parser, which shares this scanner; they cannot
# begin an expression, so the expression parser rejects them naturally.
_PUNCT = ("&&", "||", "==", "!=", "<=", ">=", "<", ">", "!", "(", ")", "[", "]", "{", "}", ",", ":", "=")


class Token(NamedTuple):
    kind: str  # ident | int | decimal | string | punct | eof
    text: str
    value: Scalar | None
    pos: Pos


def _is_ident_start(c: str) -> bool:
    return c.isalpha() or c == "_"


def _is_ident(c: str) -> bool:
    return c.isalnum() or c == "_"


class Cursor:
    """Character cursor with line/column tracking, shared with the policy
    file parser so `when:` clauses report positions in file coordinates."""

    def __init__(self, text: str, line: int = 1, col: int = 1):
        self.text = text
        self.i = 0
        self.line = line
        self.col = col

    def pos(self) -> Pos:
        return Pos(self.line, self.col)

    def eof(self) -> bool:
        return self.i >= len(self.text)

    def peek(self, ahead: int = 0) -> str:
        j = self.i + ahead
        return self.text[j] if j < len(self.text) else ""

    def advance(self, n: int = 1) -> str:
        taken = self.text[self.i : self.i + n]
        for c in taken:
            if c == "\n":
                self.line += 1
                self.col = 1
            else:
                self.col += 1
        self.i += n
        return taken

    def skip_ws_and_comments(self) -> None:
        while not self.eof():
            c = self.peek()
            if c in " \t\r\n":
                self.advance()
            elif c == "#":
                while not self.eof() and self.peek() != "\n":
                    self.advance()
            else:
                return

    def read_string(self) -> tuple[str, Pos]:
        pos = self.pos()
        quote = self.advance()
        if quote != '"':
            raise ExprSyntaxError("expected string", pos)
        out: list[str] = []
        while True:
            if self.eof():
                raise ExprSyntaxError("unterminated string", pos)
            c = self.advance()
            if c == '"':
                return "".join(out), pos
            if c == "\\":
                esc = self.advance()
                mapped = {"n": "\n", "t": "\t", '"': '"', "\\": "\\"}.get(esc)
                if mapped is None:
                    raise ExprSyntaxError(f"bad escape \\{esc}", pos)
                out.append(mapped)
            elif c == "\n":
                raise ExprSyntaxError("newline in string", pos)
            else:
                out.append(c)


def scan_token(cur: Cursor) -> Token:
    cur.skip_ws_and_comments()
    pos = cur.pos()
    if cur.eof():
        return Token("eof", "", None, pos)
    c = cur.peek()
    if c == '"':
        text, pos = cur.read_string()
        return Token("string", text, text, pos)
    if c.isdigit() or (c == "-" and cur.peek(1).isdigit()):
        digits = []
        if c == "-":
            digits.append(cur.advance())
        while cur.peek().isdigit():
            digits.append(cur.advance())
        if cur.peek() == "." and cur.peek(1).isdigit():
            digits.append(cur.advance())
            while cur.peek().isdigit():
                digits.append(cur.advance())
            text = "".join(digits)
            return Token("decimal", text, quantize(Decimal(text)), pos)
        text = "".join(digits)
        return Token("int", text, int(text), pos)
    if _is_ident_start(c):
        chars = []
        while _is_ident(cur.peek()):
            chars.append(cur.advance())
        return Token("ident", "".join(chars), None, pos)
    for p in _PUNCT:
        if cur.text.startswith(p, cur.i):
            cur.advance(len(p))
            return Token("punct", p, None, pos)
    if c == ".":
        cur.advance()
        return Token("punct", ".", None, pos)
    raise ExprSyntaxError(f"unexpected character {c!r}", pos)


# ---------------------------------------------------------------------------
# Parser
#
# Precedence, loosest to tightest:  ||  <  &&  <  comparison/membership  <  !
# Comparisons do not chain.
# ---------------------------------------------------------------------------


class _Parser:
    def __init__(self, cur: Cursor, stop_keywords: frozenset[str] = frozenset()):
        self.cur = cur
        self.stop_keywords = stop_keywords
        self.tok = self._next()

    def _next(self) -> Token:
        # Peeking without consuming: the scanner is destructive, so remember
        # the cursor state and restore if the token terminates the expression
        # (a policy-file clause keyword at nesting depth zero).
        return scan_token(self.cur)

    def _at_stop_keyword(self) -> bool:
        if self.tok.kind != "ident" or self.tok.text not in self.stop_keywords:
            return False
        save = (self.cur.i, self.cur.line, self.cur.col)
        self.cur.skip_ws_and_comments()
        is_clause = self.cur.peek() == ":"
        self.cur.i, self.cur.line, self.cur.col = save
        return is_clause

    def _advance(self) -> Token:
        prev = self.tok
        self.tok = self._next()
        return prev

    def _expect_punct(self, text: str) -> Token:
        if self.tok.kind != "punct" or self.tok.text != text:
            raise ExprSyntaxError(f"expected {text!r}, found {self.tok.text or 'end of input'!r}", self.tok.pos)
        return self._advance()

    def at_end(self) -> bool:
        if self.tok.kind == "eof":
            return True
        if self.tok.kind == "punct" and self.tok.text in ("}",):
            return True
        return self._at_stop_keyword()

    def parse_expr(self) -> Expr:
        return self._or()

    def _or(self) -> Expr:
        pos = self.tok.pos
        operands = [self._and()]
        while self.tok.kind == "punct" and self.tok.text == "||":
            self._advance()
            operands.append(self._and())
        if len(operands) == 1:
            return operands[0]
        return BoolOp(op="||", operands=tuple(operands), pos=pos)

    def _and(self) -> Expr:
        pos = self.tok.pos
        operands = [self._comparison()]
        while self.tok.kind == "punct" and self.tok.text == "&&":
            self._advance()
            operands.append(self._comparison())
        if len(operands) == 1:
            return operands[0]
        return BoolOp(op="&&", operands=tuple(operands), pos=pos)

    def _comparison(self) -> Expr:
        left = self._unary()
        if self.tok.kind == "punct" and self.tok.text in COMPARISON_OPS:
            op = self._advance().text
            right = self._unary()
            return Compare(op=op, left=left, right=right, pos=left.pos)
        if self.tok.kind == "ident" and self.tok.text == "in" and not self._at_stop_keyword():
            self._advance()
            kw = self._advance()
            if kw.kind != "ident" or kw.text != "set":
                raise ExprSyntaxError("expected 'set(' after 'in'", kw.pos)
            self._expect_punct("(")
            name = self._advance()
            if name.kind != "ident":
                raise ExprSyntaxError("expected set name", name.pos)
            self._expect_punct(")")
            return Membership(operand=left, set_name=name.text, pos=left.pos)
        return left

    def _unary(self) -> Expr:
        if self.tok.kind == "punct" and self.tok.text == "!":
            pos = self._advance().pos
            return Not(operand=self._unary(), pos=pos)
        return self._primary()

    def _primary(self) -> Expr:
        tok = self.tok
        if tok.kind == "punct" and tok.text == "(":
            self._advance()
            inner = self._or()
            self._expect_punct(")")
            return inner
        if tok.kind in ("int", "decimal", "string"):
            self._advance()
            return Literal(value=tok.value, pos=tok.pos)  # type: ignore[arg-type]
        if tok.kind == "ident":
            if tok.text in ("true", "false"):
                self._advance()
                return Literal(value=tok.text == "true", pos=tok.pos)
            if tok.text in NAMESPACES:
                self._advance()
                self._expect_punct(".")
                name = self._advance()
                if name.kind != "ident":
                    raise ExprSyntaxError("expected attribute name after '.'", name.pos)
                return Path(namespace=tok.text, name=name.text, pos=tok.pos)
            raise ExprSyntaxError(
                f"unknown identifier {tok.text!r} (namespaces are request/trajectory/env)", tok.pos
            )
        raise ExprSyntaxError(f"expected expression, found {tok.text or 'end of input'!r}", tok.pos)


def parse_expr(text: str) -> Expr:
    """Parse a standalone expression; raises ExprSyntaxError with position."""
    cur = Cursor(text)
    parser = _Parser(cur)
    expr = parser.parse_expr()
    if not parser.at_end() or parser.tok.kind != "eof":
        raise ExprSyntaxError(f"trailing input {parser.tok.text!r}", parser.tok.pos)
    return expr


def parse_embedded_expr(cur: Cursor, stop_keywords: frozenset[str]) -> tuple[Expr, Token]:
    """Parse an expression inside a policy file, stopping at '}' or at a
    clause keyword (an identifier from ``stop_keywords`` followed by ':').

    Returns the AST plus the one-token lookahead that terminated it; the
    caller resumes scanning from that token, not from the cursor.
    """
    parser = _Parser(cur, stop_keywords=stop_keywords)
    expr = parser.parse_expr()
    if not parser.at_end():
        raise ExprSyntaxError(f"trailing input {parser.tok.text!r}", parser.tok.pos)
    return expr, parser.tok


# ---------------------------------------------------------------------------
# Printing
# ---------------------------------------------------------------------------

_LEVEL_OR, _LEVEL_AND, _LEVEL_CMP, _LEVEL_UNARY = 1, 2, 3, 4


def _level(e: Expr) -> int:
    if isinstance(e, BoolOp):
        return _LEVEL_OR if e.op == "||" else _LEVEL_AND
    if isinstance(e, (Compare, Membership)):
        return _LEVEL_CMP
    return _LEVEL_UNARY


def format_scalar_literal(value: Scalar) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, Decimal):
        return str(quantize(value))
    if isinstance(value, int):
        return str(value)
    escaped = value.replace("\\", "\\\\").replace('"', '\\"').replace("\n", "\\n").replace("\t", "\\t")
    return f'"{escaped}"'


def print_expr(e: Expr) -> str:
    """Canonical text form; print_expr(parse_expr(t)) reparses to an equal AST."""
    return _print(e, 0)


def _print(e: Expr, min_level: int) -> str:
    text: str
    if isinstance(e, Literal):
        text = format_scalar_literal(e.value)
    elif isinstance(e, Path):
        text = f"{e.namespace}.{e.name}"
    elif isinstance(e, Not):
        text = "!" + _print(e.operand, _LEVEL_UNARY)
    elif isinstance(e, Compare):
        text = f"{_print(e.left, _LEVEL_UNARY)} {e.op} {_print(e.right, _LEVEL_UNARY)}"
    elif isinstance(e, Membership):
        text = f"{_print(e.operand, _LEVEL_UNARY)} in set({e.set_name})"
    elif isinstance(e, BoolOp):
        joiner = f" {e.op} "
        text = joiner.join(_print(o, _level(e) + 1) for o in e.operands)
    else:  # pragma: no cover
        raise TypeError(f"unknown node {e!r}")
    if _level(e) < min_level:
        return f"({text})"
    return text


# ---------------------------------------------------------------------------
# Typechecking
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class ContextSchema:
    """Reachable attribute paths and their scalar types.

    ``request_fields`` covers flattened args plus the built-in
    principal_id/action/resource strings; ``trajectory_fields`` one entry per
    declared accumulator; ``set_types`` the element type of each named set.
    The env namespace carries no addressable attributes in grammar v1.
    """

    request_fields: Mapping[str, ScalarType]
    trajectory_fields: Mapping[str, ScalarType]
    set_types: Mapping[str, ScalarType]


BUILTIN_REQUEST_FIELDS = {
    "principal_id": ScalarType.STRING,
    "action": ScalarType.STRING,
    "resource": ScalarType.STRING,
}


@dataclass(frozen=True)
class TypedExpr:
    """An expression plus the schema it was checked against: proof that
    evaluation cannot fail at runtime."""

    expr: Expr
    schema: ContextSchema


def typecheck_collect(e: Expr, schema: ContextSchema) -> list[TypeIssue]:
    issues: list[TypeIssue] = []
    top = _typeof(e, schema, issues)
    if top is not None and top != ScalarType.BOOL:
        issues.append(TypeIssue("TYPE_MISMATCH", f"expression has type {top.value}, expected bool", e.pos))
    return issues


def typecheck(e: Expr, schema: ContextSchema) -> TypedExpr:
    issues = typecheck_collect(e, schema)
    if issues:
        raise ExprTypeError(issues)
    return TypedExpr(e, schema)


def _typeof(e: Expr, schema: ContextSchema, issues: list[TypeIssue]) -> ScalarType | None:
    if isinstance(e, Literal):
        return scalar_type_of(e.value)
    if isinstance(e, Path):
        ns_fields: Mapping[str, ScalarType] | None
        if e.namespace == "request":
            ns_fields = schema.request_fields
        elif e.namespace == "trajectory":
            ns_fields = schema.trajectory_fields
        else:
            ns_fields = None
        if ns_fields is None or e.name not in ns_fields:
            issues.append(TypeIssue("UNKNOWN_PATH", f"unknown attribute {e.namespace}.{e.name}", e.pos))
            return None
        return ns_fields[e.name]
    if isinstance(e, Not):
        t = _typeof(e.operand, schema, issues)
        if t is not None and t != ScalarType.BOOL:
            issues.append(TypeIssue("TYPE_MISMATCH", f"! requires bool, got {t.value}", e.pos))
        return ScalarType.BOOL
    if isinstance(e, Compare):
        lt = _typeof(e.left, schema, issues)
        rt = _typeof(e.right, schema, issues)
        if lt is not None and rt is not None:
            if e.op in ("==", "!="):
                same = lt == rt or (lt.numeric and rt.numeric)
                if not same:
                    issues.append(
                        TypeIssue("TYPE_MISMATCH", f"cannot compare {lt.value} {e.op} {rt.value}", e.pos)
                    )
            else:
                if not (lt.numeric and rt.numeric):
                    issues.append(
                        TypeIssue(
                            "TYPE_MISMATCH",
                            f"ordering {e.op} requires numeric operands, got {lt.value} and {rt.value}",
                            e.pos,
                        )
                    )
        return ScalarType.BOOL
    if isinstance(e, Membership):
        ot = _typeof(e.operand, schema, issues)
        if e.set_name not in schema.set_types:
            issues.append(TypeIssue("UNKNOWN_SET", f"unknown set {e.set_name!r}", e.pos))
        else:
            et = schema.set_types[e.set_name]
            if ot is not None and not (ot == et or (ot.numeric and et.numeric)):
                issues.append(
                    TypeIssue(
                        "TYPE_MISMATCH",
                        f"membership operand is {ot.value} but set {e.set_name!r} holds {et.value}",
                        e.pos,
                    )
                )
        return ScalarType.BOOL
    if isinstance(e, BoolOp):
        for o in e.operands:
            t = _typeof(o, schema, issues)
            if t is not None and t != ScalarType.BOOL:
                issues.append(TypeIssue("TYPE_MISMATCH", f"{e.op} requires bool operands, got {t.value}", o.pos))
        return ScalarType.BOOL
    raise TypeError(f"unknown node {e!r}")  # pragma: no cover


# ---------------------------------------------------------------------------
# Evaluation
# ---------------------------------------------------------------------------


class _Missing:
    __slots__ = ()

    def __repr__(self) -> str:  # pragma: no cover
        return "<missing>"


MISSING = _Missing()


@dataclass(frozen=True)
class EvalContext:
    """Read-only snapshot for one evaluation.

    ``request`` holds flattened args plus the builtins; ``trajectory`` the
    accumulator snapshot the mediator chose; ``sets`` the policy's named
    sets; ``now`` the decision instant (data model only in grammar v1).
    """

    request: Mapping[str, Scalar]
    trajectory: Mapping[str, Scalar]
    sets: Mapping[str, tuple[Scalar, ...]]
    now: object = None


class EvalOutcome(NamedTuple):
    value: bool
    context_incomplete: bool


def evaluate(te: TypedExpr, ctx: EvalContext) -> EvalOutcome:
    """Total evaluation. Both operands of a connective are always evaluated
    so the context_incomplete flag reflects everything the rule touches;
    values still agree with the short-circuit truth tables.
    """
    flag: list[bool] = [False]
    value = _eval(te.expr, ctx, flag)
    if value is MISSING:
        value = False
    return EvalOutcome(bool(value), flag[0])


def _lookup(path: Path, ctx: EvalContext, flag: list[bool]) -> Scalar | _Missing:
    source = ctx.request if path.namespace == "request" else ctx.trajectory
    if path.name in source:
        return source[path.name]
    flag[0] = True
    return MISSING


def _eval(e: Expr, ctx: EvalContext, flag: list[bool]) -> Scalar | _Missing:
    if isinstance(e, Literal):
        return e.value
    if isinstance(e, Path):
        return _lookup(e, ctx, flag)
    if isinstance(e, Not):
        v = _eval(e.operand, ctx, flag)
        if v is MISSING:
            v = False
        return not v
    if isinstance(e, Compare):
        lv = _eval(e.left, ctx, flag)
        rv = _eval(e.right, ctx, flag)
        if lv is MISSING or rv is MISSING:
            return False
        return _compare(e.op, lv, rv)
    if isinstance(e, Membership):
        ov = _eval(e.operand, ctx, flag)
        if ov is MISSING:
            return False
        if e.set_name not in ctx.sets:
            flag[0] = True
            return False
        return any(_compare("==", ov, member) for member in ctx.sets[e.set_name])
    if isinstance(e, BoolOp):
        values = [_eval(o, ctx, flag) for o in e.operands]
        coerced = [False if v is MISSING else bool(v) for v in values]
        return all(coerced) if e.op == "&&" else any(coerced)
    raise TypeError(f"unknown node {e!r}")  # pragma: no cover


def _compare(op: str, left: Scalar, right: Scalar) -> bool:
    lt, rt = scalar_type_of(left), scalar_type_of(right)
    if lt.numeric and rt.numeric:
        a, b = to_scaled(left), to_scaled(right)
    elif lt == rt:
        a, b = left, right  # type: ignore[assignment]
        if op not in ("==", "!="):
            # typecheck rejects ordering on non-numerics; totality backstop
            return False
    else:
        return op == "!="
    if op == "==":
        return a == b
    if op == "!=":
        return a != b
    if op == "<":
        return a < b
    if op == "<=":
        return a <= b
    if op == ">":
        return a > b
    return a >= b


def iter_set_references(e: Expr) -> Iterator[str]:
    """Names of every set the expression refers to."""
    if isinstance(e, Membership):
        yield e.set_name
        yield from iter_set_references(e.operand)
    elif isinstance(e, Not):
        yield from iter_set_references(e.operand)
    elif isinstance(e, Compare):
        yield from iter_set_references(e.left)
        yield from iter_set_references(e.right)
    elif isinstance(e, BoolOp):
        for o in e.operands:
            yield from iter_set_references(o)
