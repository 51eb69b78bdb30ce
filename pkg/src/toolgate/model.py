"""Domain model: principals, action requests, control tuples, policy sets.

A control tuple binds seven things: who may act, on what action class, against
which resource, under what precondition, with what decision, producing what
evidence, answerable to whom. Everything argument- or state-dependent lives in
the precondition; selectors are plain globs so applicability stays cheap and
auditable.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field
from datetime import datetime, timezone
from decimal import Decimal, InvalidOperation
from typing import Mapping, Sequence

from .expr import (
    BUILTIN_REQUEST_FIELDS,
    ContextSchema,
    Expr,
    Literal,
    Scalar,
    ScalarType,
    TypedExpr,
    iter_set_references,
    quantize,
    scalar_type_of,
    typecheck_collect,
)


class ModelError(ValueError):
    """Invariant violation in a domain object."""


# ---------------------------------------------------------------------------
# Principals and requests
# ---------------------------------------------------------------------------


class PrincipalKind(str, enum.Enum):
    HUMAN = "human"
    AGENT = "agent"
    SUB_AGENT = "sub_agent"
    SERVICE = "service"


@dataclass(frozen=True)
class Principal:
    id: str
    kind: PrincipalKind
    # Root-first chain of principal ids this actor acts on behalf of.
    delegation_chain: tuple[str, ...] = ()

    def __post_init__(self) -> None:
        if not self.id:
            raise ModelError("principal id must be non-empty")
        if len(set(self.delegation_chain)) != len(self.delegation_chain):
            raise ModelError("delegation_chain contains duplicates")
        if self.kind == PrincipalKind.SUB_AGENT and not self.delegation_chain:
            raise ModelError("sub_agent requires a non-empty delegation_chain")

    @property
    def actor_string(self) -> str:
        """The string actor selectors match against."""
        return f"{self.kind.value}:{self.id}"


@dataclass(frozen=True)
class ActionRequest:
    request_id: str
    principal: Principal
    action: str
    resource: str
    args: Mapping[str, Scalar]
    trajectory_id: str
    step_index: int
    timestamp: datetime

    def __post_init__(self) -> None:
        if not self.request_id:
            raise ModelError("request_id must be non-empty")
        if not self.action:
            raise ModelError("action must be non-empty")
        if not self.resource:
            raise ModelError("resource must be non-empty")
        if self.step_index < 0:
            raise ModelError("step_index must be non-negative")
        if not self.trajectory_id:
            raise ModelError("trajectory_id must be non-empty")
        if self.timestamp.tzinfo is None:
            raise ModelError("timestamp must be timezone-aware")

    def with_args(self, args: Mapping[str, Scalar]) -> "ActionRequest":
        return ActionRequest(
            request_id=self.request_id,
            principal=self.principal,
            action=self.action,
            resource=self.resource,
            args=dict(args),
            trajectory_id=self.trajectory_id,
            step_index=self.step_index,
            timestamp=self.timestamp,
        )

    def request_fields(self) -> dict[str, Scalar]:
        """Flattened field map the expression language sees under `request.`."""
        fields: dict[str, Scalar] = {
            "principal_id": self.principal.id,
            "action": self.action,
            "resource": self.resource,
        }
        fields.update(self.args)
        return fields


# ---------------------------------------------------------------------------
# Glob matching: `*` is the only metacharacter, case-sensitive.
# ---------------------------------------------------------------------------


def glob_match(pattern: str, text: str) -> bool:
    segments = pattern.split("*")
    if len(segments) == 1:
        return pattern == text
    head, tail = segments[0], segments[-1]
    if not text.startswith(head) or not text.endswith(tail):
        return False
    if len(text) < len(head) + len(tail):
        return False
    pos = len(head)
    end = len(text) - len(tail)
    for middle in segments[1:-1]:
        if not middle:
            continue
        found = text.find(middle, pos, end)
        if found < 0:
            return False
        pos = found + len(middle)
    return True


# ---------------------------------------------------------------------------
# Decisions
# ---------------------------------------------------------------------------


class DecisionKind(str, enum.Enum):
    ALLOW = "allow"
    DENY = "deny"
    ESCALATE = "escalate"
    LOG_ONLY = "log_only"
    REWRITE = "rewrite"


# Worst-case-wins order used when several tuples fire at once.
SEVERITY: dict[DecisionKind, int] = {
    DecisionKind.ALLOW: 0,
    DecisionKind.LOG_ONLY: 1,
    DecisionKind.REWRITE: 2,
    DecisionKind.ESCALATE: 3,
    DecisionKind.DENY: 4,
}


def combine(kinds: Sequence[DecisionKind]) -> DecisionKind:
    """Join on the severity order; associative, commutative, idempotent."""
    if not kinds:
        raise ModelError("combine requires at least one decision kind")
    return max(kinds, key=SEVERITY.__getitem__)


@dataclass(frozen=True)
class EscalateParams:
    approver_role: str
    timeout_seconds: int
    on_timeout: DecisionKind = DecisionKind.DENY

    def __post_init__(self) -> None:
        if not self.approver_role:
            raise ModelError("approver_role must be non-empty")
        if self.timeout_seconds <= 0:
            raise ModelError("timeout_seconds must be positive")
        if self.on_timeout not in (DecisionKind.DENY, DecisionKind.ALLOW):
            raise ModelError("on_timeout must be deny or allow")


class RewriteOpKind(str, enum.Enum):
    SET = "set"
    CLAMP = "clamp"
    REDACT = "redact"


@dataclass(frozen=True)
class RewriteOp:
    op: RewriteOpKind
    field: str
    # set: replacement value; clamp: inclusive bounds (either may be absent).
    value: Scalar | None = None
    clamp_min: Scalar | None = None
    clamp_max: Scalar | None = None

    def __post_init__(self) -> None:
        if not self.field:
            raise ModelError("rewrite op field must be non-empty")
        if self.op == RewriteOpKind.SET and self.value is None:
            raise ModelError("set op requires a value")
        if self.op == RewriteOpKind.CLAMP and self.clamp_min is None and self.clamp_max is None:
            raise ModelError("clamp op requires min or max")


@dataclass(frozen=True)
class DecisionSpec:
    kind: DecisionKind
    reason: str = ""
    escalate: EscalateParams | None = None
    rewrite_ops: tuple[RewriteOp, ...] = ()

    def __post_init__(self) -> None:
        if (self.escalate is not None) != (self.kind == DecisionKind.ESCALATE):
            raise ModelError("escalate params present iff kind is escalate")
        if bool(self.rewrite_ops) != (self.kind == DecisionKind.REWRITE):
            raise ModelError("rewrite ops present and non-empty iff kind is rewrite")


EVIDENCE_FIELD_NAMES = ("args", "matched_tuples", "approver_identity", "outcome")


class Attestation(str, enum.Enum):
    HASH_CHAIN_ONLY = "hash_chain_only"
    KEYED_SIGNATURE = "keyed_signature"


@dataclass(frozen=True)
class EvidenceSpec:
    required_fields: frozenset[str]
    attestation: Attestation = Attestation.HASH_CHAIN_ONLY

    def __post_init__(self) -> None:
        unknown = self.required_fields - set(EVIDENCE_FIELD_NAMES)
        if unknown:
            raise ModelError(f"unknown evidence fields: {sorted(unknown)}")

    def normalized(self) -> "EvidenceSpec":
        # matched_tuples is always produced, so it is always required
        return EvidenceSpec(self.required_fields | {"matched_tuples"}, self.attestation)

    def ordered_fields(self) -> tuple[str, ...]:
        return tuple(n for n in EVIDENCE_FIELD_NAMES if n in self.required_fields)


@dataclass(frozen=True)
class OwnerRef:
    identity: str
    role: str


@dataclass(frozen=True)
class RubricAnswers:
    """Six enforceability criteria, each scored 0 (low), 1 (medium), 2 (high)."""

    timing_of_harm: int
    pre_action_observability: int
    rule_determinacy: int
    judgment_load: int
    reversibility_urgency: int
    evidence_clarity: int

    def __post_init__(self) -> None:
        for name, value in self.as_dict().items():
            if value not in (0, 1, 2):
                raise ModelError(f"rubric criterion {name} must be 0, 1, or 2")

    def as_dict(self) -> dict[str, int]:
        return {
            "timing_of_harm": self.timing_of_harm,
            "pre_action_observability": self.pre_action_observability,
            "rule_determinacy": self.rule_determinacy,
            "judgment_load": self.judgment_load,
            "reversibility_urgency": self.reversibility_urgency,
            "evidence_clarity": self.evidence_clarity,
        }

    @property
    def total(self) -> int:
        return sum(self.as_dict().values())


RUBRIC_CRITERIA = (
    "timing_of_harm",
    "pre_action_observability",
    "rule_determinacy",
    "judgment_load",
    "reversibility_urgency",
    "evidence_clarity",
)


# ---------------------------------------------------------------------------
# Control tuples and policy sets
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class ControlTuple:
    id: str
    actor_selector: str
    action_selector: str
    resource_selector: str
    precondition: Expr
    decision: DecisionSpec
    evidence: EvidenceSpec
    owner: OwnerRef
    review_note: str = ""
    rubric_answers: RubricAnswers | None = None

    def __post_init__(self) -> None:
        if not self.id:
            raise ModelError("tuple id must be non-empty")

    def matches(self, req: ActionRequest) -> bool:
        return (
            glob_match(self.actor_selector, req.principal.actor_string)
            and glob_match(self.action_selector, req.action)
            and glob_match(self.resource_selector, req.resource)
        )


class AccumulatorKind(str, enum.Enum):
    SUM = "sum"
    COUNT = "count"
    DISTINCT_COUNT = "distinct_count"


@dataclass(frozen=True)
class AccumulatorDecl:
    name: str
    kind: AccumulatorKind
    action_glob: str
    # arg field; required for sum and distinct_count, absent for count
    source_field: str | None = None

    def __post_init__(self) -> None:
        if not self.name:
            raise ModelError("accumulator name must be non-empty")
        needs_field = self.kind in (AccumulatorKind.SUM, AccumulatorKind.DISTINCT_COUNT)
        if needs_field and not self.source_field:
            raise ModelError(f"{self.kind.value} accumulator requires a source field")
        if not needs_field and self.source_field:
            raise ModelError("count accumulator takes no source field")


@dataclass(frozen=True)
class GuardDecl:
    action_glob: str
    default: DecisionKind

    def __post_init__(self) -> None:
        if self.default not in (DecisionKind.ALLOW, DecisionKind.DENY):
            raise ModelError("guard default must be allow or deny")


@dataclass(frozen=True)
class PolicySet:
    tuples: tuple[ControlTuple, ...] = ()
    named_sets: Mapping[str, tuple[Scalar, ...]] = field(default_factory=dict)
    # first match in declaration order wins
    guards: tuple[GuardDecl, ...] = ()
    accumulators: tuple[AccumulatorDecl, ...] = ()
    # declared arg field types; the schema preconditions typecheck against
    field_types: Mapping[str, ScalarType] = field(default_factory=dict)

    def __post_init__(self) -> None:
        ids = [t.id for t in self.tuples]
        if len(set(ids)) != len(ids):
            dupes = sorted({i for i in ids if ids.count(i) > 1})
            raise ModelError(f"duplicate tuple ids: {dupes}")
        names = [a.name for a in self.accumulators]
        if len(set(names)) != len(names):
            raise ModelError("duplicate accumulator names")

    def guard_for(self, action: str) -> GuardDecl | None:
        """First guard whose pattern matches; declaration order is semantic."""
        for g in self.guards:
            if glob_match(g.action_glob, action):
                return g
        return None

    def guard_default(self, action: str) -> DecisionKind | None:
        """Effective default for an action class; None when unguarded."""
        g = self.guard_for(action)
        return g.default if g else None

    def set_element_type(self, name: str) -> ScalarType | None:
        members = self.named_sets.get(name)
        if not members:
            return None
        return scalar_type_of(members[0])

    def accumulator_type(self, decl: AccumulatorDecl) -> ScalarType:
        if decl.kind == AccumulatorKind.SUM:
            declared = self.field_types.get(decl.source_field or "")
            return declared if declared is not None else ScalarType.DECIMAL
        return ScalarType.INT

    def context_schema(self) -> ContextSchema:
        request_fields = dict(BUILTIN_REQUEST_FIELDS)
        request_fields.update(self.field_types)
        trajectory_fields = {a.name: self.accumulator_type(a) for a in self.accumulators}
        set_types = {}
        for name in self.named_sets:
            et = self.set_element_type(name)
            if et is not None:
                set_types[name] = et
        return ContextSchema(
            request_fields=request_fields,
            trajectory_fields=trajectory_fields,
            set_types=set_types,
        )


def match_tuples(ps: PolicySet, req: ActionRequest) -> list[ControlTuple]:
    """Tuples whose three selectors all match, in policy-file order.

    Preconditions are not evaluated here; args never affect matching.
    """
    return [t for t in ps.tuples if t.matches(req)]


# ---------------------------------------------------------------------------
# Validation
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Violation:
    code: str  # MISSING_OWNER | MISSING_EVIDENCE | DANGLING_SET | TYPE_ERROR_IN_PRECONDITION
    tuple_id: str
    message: str


@dataclass(frozen=True)
class ValidationReport:
    violations: tuple[Violation, ...]

    @property
    def ok(self) -> bool:
        return not self.violations


def validate_tuple(t: ControlTuple, ps: PolicySet) -> list[Violation]:
    out: list[Violation] = []
    if not t.owner.identity or not t.owner.role:
        out.append(Violation("MISSING_OWNER", t.id, "owner identity and role must be non-empty"))
    if not t.evidence.required_fields:
        out.append(Violation("MISSING_EVIDENCE", t.id, "evidence spec must require at least one field"))
    for set_name in sorted(set(iter_set_references(t.precondition))):
        if set_name not in ps.named_sets:
            out.append(Violation("DANGLING_SET", t.id, f"precondition references undeclared set {set_name!r}"))
    issues = typecheck_collect(t.precondition, ps.context_schema())
    for issue in issues:
        if issue.code == "UNKNOWN_SET":
            continue  # already reported as DANGLING_SET
        out.append(Violation("TYPE_ERROR_IN_PRECONDITION", t.id, f"{issue.pos}: {issue.message}"))
    return out


def validate_policy_set(ps: PolicySet) -> ValidationReport:
    violations: list[Violation] = []
    for t in ps.tuples:
        violations.extend(validate_tuple(t, ps))
    return ValidationReport(tuple(violations))


def typecheck_tuples(ps: PolicySet) -> dict[str, TypedExpr]:
    """Typechecked precondition per tuple id; call after validation passes."""
    schema = ps.context_schema()
    out: dict[str, TypedExpr] = {}
    for t in ps.tuples:
        issues = typecheck_collect(t.precondition, schema)
        if issues:
            raise ModelError(f"tuple {t.id}: precondition does not typecheck: {issues[0].message}")
        out[t.id] = TypedExpr(t.precondition, schema)
    return out


TRUE_EXPR = Literal(value=True)


# ---------------------------------------------------------------------------
# Timestamps: one canonical wire form, parseable on Python 3.10
# ---------------------------------------------------------------------------


def format_instant(dt: datetime) -> str:
    return dt.astimezone(timezone.utc).isoformat(timespec="microseconds").replace("+00:00", "Z")


def parse_instant(text: str) -> datetime:
    raw = text.replace("Z", "+00:00") if text.endswith("Z") else text
    try:
        dt = datetime.fromisoformat(raw)
    except ValueError as exc:
        raise ModelError(f"bad timestamp {text!r}") from exc
    if dt.tzinfo is None:
        raise ModelError(f"timestamp {text!r} lacks a timezone")
    return dt.astimezone(timezone.utc)


# ---------------------------------------------------------------------------
# JSON conversion for requests (gateway and scenario files)
# ---------------------------------------------------------------------------


def coerce_arg(value: object, declared: ScalarType | None) -> Scalar:
    """Convert a JSON-decoded arg value to a scalar, honoring the declared type.

    Decimal wire form is a quoted fixed-point string; plain JSON numbers are
    accepted for convenience when the field is declared.
    """
    if declared == ScalarType.BOOL:
        if isinstance(value, bool):
            return value
        raise ModelError(f"not a boolean: {value!r}")
    if isinstance(value, bool):
        if declared is None:
            return value
        raise ModelError(f"not a {declared.value}: {value!r}")
    if declared == ScalarType.DECIMAL:
        if isinstance(value, (int, Decimal)):
            return quantize(Decimal(value))
        if isinstance(value, float):
            return quantize(Decimal(str(value)))
        if isinstance(value, str):
            try:
                return quantize(Decimal(value))
            except InvalidOperation as exc:
                raise ModelError(f"not a decimal: {value!r}") from exc
        raise ModelError(f"not a decimal: {value!r}")
    if declared == ScalarType.INT:
        if isinstance(value, int):
            return value
        raise ModelError(f"not an integer: {value!r}")
    if declared == ScalarType.STRING:
        if isinstance(value, str):
            return value
        raise ModelError(f"not a string: {value!r}")
    # undeclared field: keep what JSON gave us
    if isinstance(value, Decimal):
        return quantize(value)
    if isinstance(value, float):
        return quantize(Decimal(str(value)))
    if isinstance(value, (int, str)):
        return value
    raise ModelError(f"arg values must be scalars, got {type(value).__name__}")


def request_from_json(obj: Mapping, field_types: Mapping[str, ScalarType]) -> ActionRequest:
    try:
        principal_obj = obj["principal"]
        principal = Principal(
            id=str(principal_obj["id"]),
            kind=PrincipalKind(principal_obj["kind"]),
            delegation_chain=tuple(principal_obj.get("delegation_chain", ())),
        )
        raw_args = obj.get("args", {})
        if not isinstance(raw_args, Mapping):
            raise ModelError("args must be an object")
        args = {k: coerce_arg(v, field_types.get(k)) for k, v in raw_args.items()}
        return ActionRequest(
            request_id=str(obj["request_id"]),
            principal=principal,
            action=str(obj["action"]),
            resource=str(obj["resource"]),
            args=args,
            trajectory_id=str(obj["trajectory_id"]),
            step_index=int(obj["step_index"]),
            timestamp=parse_instant(str(obj["timestamp"])),
        )
    except KeyError as exc:
        raise ModelError(f"request missing field {exc.args[0]!r}") from exc
    except (TypeError, ValueError) as exc:
        if isinstance(exc, ModelError):
            raise
        raise ModelError(str(exc)) from exc


def request_to_json(req: ActionRequest) -> dict:
    return {
        "request_id": req.request_id,
        "principal": {
            "id": req.principal.id,
            "kind": req.principal.kind.value,
            "delegation_chain": list(req.principal.delegation_chain),
        },
        "action": req.action,
        "resource": req.resource,
        "args": {k: scalar_to_json(v) for k, v in req.args.items()},
        "trajectory_id": req.trajectory_id,
        "step_index": req.step_index,
        "timestamp": format_instant(req.timestamp),
    }


def scalar_to_json(value: Scalar) -> object:
    """Decimals go over the wire as fixed-point strings; ints stay ints."""
    if isinstance(value, Decimal):
        return str(quantize(value))
    return value
