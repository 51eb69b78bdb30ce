"""Policy file format: parser, canonical printer, and pack hashing.

A policy document is a flat sequence of statements:

    field amount: decimal
    set approved_vendors = ["V-001", "V-007"]
    guard create_purchase_order default deny
    track total_spend = sum(create_purchase_order.amount)
    control "po-vendor-allowlist" {
      actor: agent:*
      action: create_purchase_order
      resource: vendor:*
      when: request.vendor_id in set(approved_vendors)
      decision: allow
      evidence: [args]
      owner: "procurement-ops" role "procurement"
    }

Parsing recovers at statement granularity: one bad statement yields one
error and the parser resumes at the next statement keyword, so a lint run
reports everything wrong at once. The printer emits a canonical form whose
re-parse is structurally equal to the original policy set.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass

from .expr import (
    Cursor,
    Expr,
    ExprSyntaxError,
    Literal,
    Pos,
    Scalar,
    ScalarType,
    Token,
    format_scalar_literal,
    iter_set_references,
    parse_embedded_expr,
    print_expr,
    scalar_type_of,
    scan_token,
)
from .model import (
    AccumulatorDecl,
    AccumulatorKind,
    Attestation,
    ControlTuple,
    DecisionKind,
    DecisionSpec,
    EVIDENCE_FIELD_NAMES,
    EscalateParams,
    EvidenceSpec,
    GuardDecl,
    ModelError,
    OwnerRef,
    PolicySet,
    RewriteOp,
    RewriteOpKind,
    RUBRIC_CRITERIA,
    RubricAnswers,
)

STATEMENT_KEYWORDS = frozenset({"set", "field", "guard", "track", "control"})
CLAUSE_KEYWORDS = frozenset(
    {"actor", "action", "resource", "when", "decision", "evidence", "owner", "note", "rubric"}
)

_FIELD_TYPES = {
    "string": ScalarType.STRING,
    "int": ScalarType.INT,
    "decimal": ScalarType.DECIMAL,
    "bool": ScalarType.BOOL,
}


@dataclass(frozen=True)
class ParseError:
    message: str
    line: int
    col: int

    def __str__(self) -> str:
        return f"{self.line}:{self.col}: {self.message}"


class PolicyParseError(Exception):
    def __init__(self, errors: list[ParseError]):
        super().__init__("; ".join(str(e) for e in errors))
        self.errors = errors


class _StatementError(Exception):
    def __init__(self, message: str, pos: Pos):
        self.error = ParseError(message, pos.line, pos.col)


class _PolicyParser:
    def __init__(self, text: str):
        self.cur = Cursor(text)
        self.pending: Token | None = None
        self.errors: list[ParseError] = []
        self.field_types: dict[str, ScalarType] = {}
        self.named_sets: dict[str, tuple[Scalar, ...]] = {}
        self.guards: list[GuardDecl] = []
        self.accumulators: list[AccumulatorDecl] = []
        self.tuples: list[ControlTuple] = []

    # -- token plumbing ----------------------------------------------------

    def next_token(self) -> Token:
        if self.pending is not None:
            tok, self.pending = self.pending, None
            return tok
        try:
            return scan_token(self.cur)
        except ExprSyntaxError as exc:
            raise _StatementError(exc.message, exc.pos) from exc

    def expect_ident(self, what: str) -> Token:
        tok = self.next_token()
        if tok.kind != "ident":
            raise _StatementError(f"expected {what}, found {tok.text or 'end of input'!r}", tok.pos)
        return tok

    def expect_punct(self, text: str) -> Token:
        tok = self.next_token()
        if tok.kind != "punct" or tok.text != text:
            raise _StatementError(f"expected {text!r}, found {tok.text or 'end of input'!r}", tok.pos)
        return tok

    def expect_string(self, what: str) -> Token:
        tok = self.next_token()
        if tok.kind != "string":
            raise _StatementError(f"expected {what}, found {tok.text or 'end of input'!r}", tok.pos)
        return tok

    def expect_int(self, what: str) -> int:
        tok = self.next_token()
        if tok.kind != "int":
            raise _StatementError(f"expected {what}, found {tok.text or 'end of input'!r}", tok.pos)
        return int(tok.text)

    def read_selector(self, what: str, stop: str = "") -> str:
        """Raw non-whitespace run; globs are not tokenizable."""
        if self.pending is not None:
            raise _StatementError(f"expected {what}", self.pending.pos)
        self.cur.skip_ws_and_comments()
        pos = self.cur.pos()
        chars: list[str] = []
        while not self.cur.eof() and not self.cur.peek().isspace():
            c = self.cur.peek()
            if c == "#" or c == "}" or c in stop:
                break
            chars.append(self.cur.advance())
        if not chars:
            raise _StatementError(f"expected {what}", pos)
        return "".join(chars)

    def read_literal(self) -> Scalar:
        tok = self.next_token()
        if tok.kind in ("int", "decimal", "string"):
            return tok.value  # type: ignore[return-value]
        if tok.kind == "ident" and tok.text in ("true", "false"):
            return tok.text == "true"
        raise _StatementError(f"expected literal, found {tok.text or 'end of input'!r}", tok.pos)

    # -- recovery ----------------------------------------------------------

    def skip_to_next_statement(self) -> None:
        self.pending = None
        while not self.cur.eof():
            while not self.cur.eof() and self.cur.peek() != "\n":
                self.cur.advance()
            if not self.cur.eof():
                self.cur.advance()
            save = (self.cur.i, self.cur.line, self.cur.col)
            try:
                tok = scan_token(self.cur)
            except ExprSyntaxError:
                continue
            if tok.kind == "eof" or (tok.kind == "ident" and tok.text in STATEMENT_KEYWORDS):
                self.cur.i, self.cur.line, self.cur.col = save
                return

    # -- statements --------------------------------------------------------

    def parse_document(self) -> None:
        while True:
            try:
                tok = self.next_token()
            except _StatementError as exc:
                self.errors.append(exc.error)
                self.skip_to_next_statement()
                continue
            if tok.kind == "eof":
                return
            if tok.kind != "ident" or tok.text not in STATEMENT_KEYWORDS:
                self.errors.append(
                    ParseError(
                        f"expected a statement (set/field/guard/track/control), found {tok.text!r}",
                        tok.pos.line,
                        tok.pos.col,
                    )
                )
                self.skip_to_next_statement()
                continue
            try:
                getattr(self, f"parse_{tok.text}")(tok.pos)
            except _StatementError as exc:
                self.errors.append(exc.error)
                self.skip_to_next_statement()

    def parse_set(self, pos: Pos) -> None:
        name = self.expect_ident("set name")
        if name.text in self.named_sets:
            raise _StatementError(f"set {name.text!r} declared twice", name.pos)
        self.expect_punct("=")
        self.expect_punct("[")
        members: list[Scalar] = [self.read_literal()]
        while True:
            tok = self.next_token()
            if tok.kind == "punct" and tok.text == "]":
                break
            if tok.kind == "punct" and tok.text == ",":
                members.append(self.read_literal())
                continue
            raise _StatementError(f"expected ',' or ']', found {tok.text or 'end of input'!r}", tok.pos)
        first = scalar_type_of(members[0])
        for m in members[1:]:
            t = scalar_type_of(m)
            if t != first and not (t.numeric and first.numeric):
                raise _StatementError(
                    f"set {name.text!r} mixes {first.value} and {t.value} elements", name.pos
                )
        self.named_sets[name.text] = tuple(members)

    def parse_field(self, pos: Pos) -> None:
        name = self.expect_ident("field name")
        if name.text in self.field_types:
            raise _StatementError(f"field {name.text!r} declared twice", name.pos)
        self.expect_punct(":")
        type_tok = self.expect_ident("field type")
        if type_tok.text not in _FIELD_TYPES:
            raise _StatementError(
                f"unknown field type {type_tok.text!r} (string/int/decimal/bool)", type_tok.pos
            )
        self.field_types[name.text] = _FIELD_TYPES[type_tok.text]

    def parse_guard(self, pos: Pos) -> None:
        pattern = self.read_selector("action glob")
        kw = self.expect_ident("'default'")
        if kw.text != "default":
            raise _StatementError(f"expected 'default', found {kw.text!r}", kw.pos)
        kind_tok = self.expect_ident("'allow' or 'deny'")
        if kind_tok.text not in ("allow", "deny"):
            raise _StatementError(f"guard default must be allow or deny, not {kind_tok.text!r}", kind_tok.pos)
        self.guards.append(GuardDecl(pattern, DecisionKind(kind_tok.text)))

    def parse_track(self, pos: Pos) -> None:
        name = self.expect_ident("accumulator name")
        if any(a.name == name.text for a in self.accumulators):
            raise _StatementError(f"accumulator {name.text!r} declared twice", name.pos)
        self.expect_punct("=")
        kind_tok = self.expect_ident("sum/count/distinct_count")
        try:
            kind = AccumulatorKind(kind_tok.text)
        except ValueError:
            raise _StatementError(
                f"unknown accumulator kind {kind_tok.text!r}", kind_tok.pos
            ) from None
        self.expect_punct("(")
        glob = self.read_selector("action glob", stop=".)")
        source_field: str | None = None
        if kind in (AccumulatorKind.SUM, AccumulatorKind.DISTINCT_COUNT):
            self.expect_punct(".")
            source_field = self.expect_ident("arg field").text
        self.expect_punct(")")
        if kind == AccumulatorKind.SUM:
            declared = self.field_types.get(source_field or "")
            if declared is None or not declared.numeric:
                raise _StatementError(
                    f"sum source field {source_field!r} must be a declared numeric field", name.pos
                )
        self.accumulators.append(AccumulatorDecl(name.text, kind, glob, source_field))

    def parse_control(self, pos: Pos) -> None:
        id_tok = self.expect_string("control id string")
        tuple_id = id_tok.text
        if not tuple_id:
            raise _StatementError("control id must be non-empty", id_tok.pos)
        if any(t.id == tuple_id for t in self.tuples):
            raise _StatementError(f"duplicate tuple id {tuple_id!r}", id_tok.pos)
        self.expect_punct("{")
        actor = action = resource = "*"
        when: Expr = Literal(value=True)
        decision: DecisionSpec | None = None
        evidence = EvidenceSpec(frozenset())
        owner = OwnerRef("", "")
        note = ""
        rubric: RubricAnswers | None = None
        seen: set[str] = set()
        while True:
            tok = self.next_token()
            if tok.kind == "punct" and tok.text == "}":
                break
            if tok.kind != "ident" or tok.text not in CLAUSE_KEYWORDS:
                raise _StatementError(
                    f"expected a clause or '}}' in control {tuple_id!r}, found {tok.text or 'end of input'!r}",
                    tok.pos,
                )
            clause = tok.text
            if clause in seen:
                raise _StatementError(f"clause {clause!r} repeated in control {tuple_id!r}", tok.pos)
            seen.add(clause)
            self.expect_punct(":")
            if clause == "actor":
                actor = self.read_selector("actor glob")
            elif clause == "action":
                action = self.read_selector("action glob")
            elif clause == "resource":
                resource = self.read_selector("resource glob")
            elif clause == "when":
                try:
                    when, lookahead = parse_embedded_expr(self.cur, CLAUSE_KEYWORDS)
                except ExprSyntaxError as exc:
                    raise _StatementError(exc.message, exc.pos) from exc
                self.pending = lookahead
            elif clause == "decision":
                decision = self.parse_decision(tuple_id)
            elif clause == "evidence":
                evidence = self.parse_evidence()
            elif clause == "owner":
                identity = self.expect_string("owner identity")
                role_kw = self.expect_ident("'role'")
                if role_kw.text != "role":
                    raise _StatementError(f"expected 'role', found {role_kw.text!r}", role_kw.pos)
                role = self.expect_string("owner role")
                owner = OwnerRef(identity.text, role.text)
            elif clause == "note":
                note = self.expect_string("note text").text
            elif clause == "rubric":
                rubric = self.parse_rubric(tuple_id)
        if decision is None:
            raise _StatementError(f"control {tuple_id!r} has no decision clause", id_tok.pos)
        for set_name in _set_references(when):
            if set_name not in self.named_sets:
                raise _StatementError(
                    f"control {tuple_id!r} references undeclared set {set_name!r}", id_tok.pos
                )
        try:
            self.tuples.append(
                ControlTuple(
                    id=tuple_id,
                    actor_selector=actor,
                    action_selector=action,
                    resource_selector=resource,
                    precondition=when,
                    decision=decision,
                    evidence=evidence,
                    owner=owner,
                    review_note=note,
                    rubric_answers=rubric,
                )
            )
        except ModelError as exc:
            raise _StatementError(str(exc), id_tok.pos) from exc

    def parse_decision(self, tuple_id: str) -> DecisionSpec:
        kind_tok = self.expect_ident("decision kind")
        text = kind_tok.text
        if text not in ("allow", "deny", "escalate", "log_only", "rewrite"):
            raise _StatementError(
                f"malformed decision clause in {tuple_id!r}: unknown kind {text!r}", kind_tok.pos
            )
        kind = DecisionKind(text)
        escalate: EscalateParams | None = None
        rewrite_ops: tuple[RewriteOp, ...] = ()
        if kind == DecisionKind.ESCALATE:
            escalate = self.parse_escalate_params(tuple_id, kind_tok.pos)
        elif kind == DecisionKind.REWRITE:
            rewrite_ops = self.parse_rewrite_ops(tuple_id, kind_tok.pos)
        reason = ""
        save = (self.cur.i, self.cur.line, self.cur.col, self.pending)
        tok = self.next_token()
        if tok.kind == "string":
            reason = tok.text
        else:
            self.cur.i, self.cur.line, self.cur.col, self.pending = save
        try:
            return DecisionSpec(kind=kind, reason=reason, escalate=escalate, rewrite_ops=rewrite_ops)
        except ModelError as exc:
            raise _StatementError(f"malformed decision clause in {tuple_id!r}: {exc}", kind_tok.pos) from exc

    def parse_escalate_params(self, tuple_id: str, pos: Pos) -> EscalateParams:
        self.expect_punct("(")
        approver_role: str | None = None
        timeout_seconds: int | None = None
        on_timeout = DecisionKind.DENY
        while True:
            key = self.expect_ident("escalate parameter")
            self.expect_punct("=")
            if key.text == "approver_role":
                approver_role = self.expect_string("role string").text
            elif key.text == "timeout_seconds":
                timeout_seconds = self.expect_int("timeout in seconds")
            elif key.text == "on_timeout":
                val = self.expect_ident("'deny' or 'allow'")
                if val.text not in ("deny", "allow"):
                    raise _StatementError(f"on_timeout must be deny or allow, not {val.text!r}", val.pos)
                on_timeout = DecisionKind(val.text)
            else:
                raise _StatementError(f"unknown escalate parameter {key.text!r}", key.pos)
            tok = self.next_token()
            if tok.kind == "punct" and tok.text == ")":
                break
            if not (tok.kind == "punct" and tok.text == ","):
                raise _StatementError(f"expected ',' or ')', found {tok.text or 'end of input'!r}", tok.pos)
        if approver_role is None or timeout_seconds is None:
            raise _StatementError(
                f"malformed decision clause in {tuple_id!r}: escalate requires approver_role and timeout_seconds",
                pos,
            )
        try:
            return EscalateParams(approver_role, timeout_seconds, on_timeout)
        except ModelError as exc:
            raise _StatementError(f"malformed decision clause in {tuple_id!r}: {exc}", pos) from exc

    def parse_rewrite_ops(self, tuple_id: str, pos: Pos) -> tuple[RewriteOp, ...]:
        self.expect_punct("(")
        ops: list[RewriteOp] = []
        while True:
            op_tok = self.expect_ident("rewrite op (set/clamp/redact)")
            if op_tok.text == "set":
                fld = self.expect_ident("field name").text
                self.expect_punct("=")
                ops.append(RewriteOp(RewriteOpKind.SET, fld, value=self.read_literal()))
            elif op_tok.text == "clamp":
                fld = self.expect_ident("field name").text
                lo: Scalar | None = None
                hi: Scalar | None = None
                while True:
                    save = (self.cur.i, self.cur.line, self.cur.col, self.pending)
                    bound = self.next_token()
                    if bound.kind == "ident" and bound.text in ("min", "max"):
                        value = self.read_literal()
                        if not scalar_type_of(value).numeric:
                            raise _StatementError("clamp bounds must be numeric", bound.pos)
                        if bound.text == "min":
                            lo = value
                        else:
                            hi = value
                    else:
                        self.cur.i, self.cur.line, self.cur.col, self.pending = save
                        break
                if lo is None and hi is None:
                    raise _StatementError(
                        f"malformed decision clause in {tuple_id!r}: clamp needs min and/or max", op_tok.pos
                    )
                ops.append(RewriteOp(RewriteOpKind.CLAMP, fld, clamp_min=lo, clamp_max=hi))
            elif op_tok.text == "redact":
                ops.append(RewriteOp(RewriteOpKind.REDACT, self.expect_ident("field name").text))
            else:
                raise _StatementError(
                    f"malformed decision clause in {tuple_id!r}: unknown rewrite op {op_tok.text!r}",
                    op_tok.pos,
                )
            tok = self.next_token()
            if tok.kind == "punct" and tok.text == ")":
                break
            if not (tok.kind == "punct" and tok.text == ","):
                raise _StatementError(f"expected ',' or ')', found {tok.text or 'end of input'!r}", tok.pos)
        return tuple(ops)

    def parse_evidence(self) -> EvidenceSpec:
        self.expect_punct("[")
        fields: set[str] = set()
        while True:
            name = self.expect_ident("evidence field")
            if name.text not in EVIDENCE_FIELD_NAMES:
                raise _StatementError(
                    f"unknown evidence field {name.text!r} (args/matched_tuples/approver_identity/outcome)",
                    name.pos,
                )
            fields.add(name.text)
            tok = self.next_token()
            if tok.kind == "punct" and tok.text == "]":
                break
            if not (tok.kind == "punct" and tok.text == ","):
                raise _StatementError(f"expected ',' or ']', found {tok.text or 'end of input'!r}", tok.pos)
        attestation = Attestation.HASH_CHAIN_ONLY
        save = (self.cur.i, self.cur.line, self.cur.col, self.pending)
        tok = self.next_token()
        if tok.kind == "ident" and tok.text == "signed":
            attestation = Attestation.KEYED_SIGNATURE
        else:
            self.cur.i, self.cur.line, self.cur.col, self.pending = save
        return EvidenceSpec(frozenset(fields), attestation).normalized()

    def parse_rubric(self, tuple_id: str) -> RubricAnswers:
        self.expect_punct("{")
        scores: dict[str, int] = {}
        while True:
            name = self.expect_ident("rubric criterion")
            if name.text not in RUBRIC_CRITERIA:
                raise _StatementError(f"unknown rubric criterion {name.text!r}", name.pos)
            if name.text in scores:
                raise _StatementError(f"rubric criterion {name.text!r} repeated", name.pos)
            self.expect_punct(":")
            value = self.expect_int("score 0..2")
            if value not in (0, 1, 2):
                raise _StatementError("rubric scores are 0, 1, or 2", name.pos)
            scores[name.text] = value
            tok = self.next_token()
            if tok.kind == "punct" and tok.text == "}":
                break
            if not (tok.kind == "punct" and tok.text == ","):
                raise _StatementError(f"expected ',' or '}}', found {tok.text or 'end of input'!r}", tok.pos)
        missing = [c for c in RUBRIC_CRITERIA if c not in scores]
        if missing:
            raise _StatementError(
                f"rubric in {tuple_id!r} missing criteria: {', '.join(missing)}", self.cur.pos()
            )
        return RubricAnswers(**scores)


def _set_references(e: Expr) -> list[str]:
    return sorted(set(iter_set_references(e)))


def parse_policy_file(text: str) -> PolicySet:
    """Parse a policy document; raises PolicyParseError listing every error."""
    parser = _PolicyParser(text)
    parser.parse_document()
    if parser.errors:
        raise PolicyParseError(parser.errors)
    try:
        return PolicySet(
            tuples=tuple(parser.tuples),
            named_sets=parser.named_sets,
            guards=tuple(parser.guards),
            accumulators=tuple(parser.accumulators),
            field_types=parser.field_types,
        )
    except ModelError as exc:
        raise PolicyParseError([ParseError(str(exc), 1, 1)]) from exc


# ---------------------------------------------------------------------------
# Canonical printing
# ---------------------------------------------------------------------------

_TYPE_NAMES = {v: k for k, v in _FIELD_TYPES.items()}


def print_policy_set(ps: PolicySet) -> str:
    out: list[str] = []
    for name, ftype in ps.field_types.items():
        out.append(f"field {name}: {_TYPE_NAMES[ftype]}")
    for name, members in ps.named_sets.items():
        body = ", ".join(format_scalar_literal(m) for m in members)
        out.append(f"set {name} = [{body}]")
    for g in ps.guards:
        out.append(f"guard {g.action_glob} default {g.default.value}")
    for a in ps.accumulators:
        source = a.action_glob if a.source_field is None else f"{a.action_glob}.{a.source_field}"
        out.append(f"track {a.name} = {a.kind.value}({source})")
    for t in ps.tuples:
        out.append(print_control(t))
    return "\n".join(out) + ("\n" if out else "")


def print_control(t: ControlTuple) -> str:
    lines = [f'control "{_escape(t.id)}" {{']
    lines.append(f"  actor: {t.actor_selector}")
    lines.append(f"  action: {t.action_selector}")
    lines.append(f"  resource: {t.resource_selector}")
    lines.append(f"  when: {print_expr(t.precondition)}")
    lines.append(f"  decision: {_print_decision(t.decision)}")
    if t.evidence.required_fields:
        fields = ", ".join(t.evidence.ordered_fields())
        suffix = " signed" if t.evidence.attestation == Attestation.KEYED_SIGNATURE else ""
        lines.append(f"  evidence: [{fields}]{suffix}")
    if t.owner.identity or t.owner.role:
        lines.append(f'  owner: "{_escape(t.owner.identity)}" role "{_escape(t.owner.role)}"')
    if t.review_note:
        lines.append(f'  note: "{_escape(t.review_note)}"')
    if t.rubric_answers is not None:
        body = ", ".join(f"{name}: {score}" for name, score in t.rubric_answers.as_dict().items())
        lines.append(f"  rubric: {{ {body} }}")
    lines.append("}")
    return "\n".join(lines)


def _print_decision(d: DecisionSpec) -> str:
    if d.kind == DecisionKind.ESCALATE:
        p = d.escalate
        assert p is not None
        text = (
            f'escalate(approver_role="{_escape(p.approver_role)}", '
            f"timeout_seconds={p.timeout_seconds}, on_timeout={p.on_timeout.value})"
        )
    elif d.kind == DecisionKind.REWRITE:
        text = f"rewrite({', '.join(_print_rewrite_op(op) for op in d.rewrite_ops)})"
    else:
        text = d.kind.value
    if d.reason:
        text += f' "{_escape(d.reason)}"'
    return text


def _print_rewrite_op(op: RewriteOp) -> str:
    if op.op == RewriteOpKind.SET:
        return f"set {op.field} = {format_scalar_literal(op.value)}"
    if op.op == RewriteOpKind.REDACT:
        return f"redact {op.field}"
    parts = [f"clamp {op.field}"]
    if op.clamp_min is not None:
        parts.append(f"min {format_scalar_literal(op.clamp_min)}")
    if op.clamp_max is not None:
        parts.append(f"max {format_scalar_literal(op.clamp_max)}")
    return " ".join(parts)


def _escape(text: str) -> str:
    return text.replace("\\", "\\\\").replace('"', '\\"').replace("\n", "\\n").replace("\t", "\\t")


def policy_hash(ps: PolicySet) -> str:
    """Content hash of the canonical form; identifies the pack in evidence."""
    return hashlib.sha256(print_policy_set(ps).encode("utf-8")).hexdigest()
