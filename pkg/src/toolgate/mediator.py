"""The decision engine at the tool-dispatch boundary.

`decide_core` is the pure heart: match tuples, evaluate preconditions,
fold triggered decisions on the severity order, run the bounded rewrite
fixpoint. `MediationEngine` wraps it with the stateful obligations of a
real boundary: duplicate-request refusal, per-trajectory ordering, ticket
opening, evidence append (which must succeed before anything else counts),
outcome bookkeeping, and ticket expiry.

Decision procedure for one pass, spelled out because the oracle tests
re-implement it independently:

1. Selector-match the tuples; evaluate each matched precondition against
   the request plus prospective trajectory accumulators (the candidate
   folded in as if executed).
2. Triggered log_only tuples are recorded but carry no disposition; the
   rest contribute their decision kinds.
3. A guard default of deny joins the fold unless some triggered tuple
   allows the action. Unguarded or default-allow actions with nothing
   triggered default to allow.
4. Fail closed: a deny-guarded action whose evaluation hit missing context
   is denied outright, whatever else triggered.
5. The fold is the maximum over deny > escalate > rewrite > log_only >
   allow. A rewrite result applies its ops (policy order) and re-enters at
   step 1; after three applications the next rewrite verdict denies as
   diverged.
"""

from __future__ import annotations

import threading
import time
from dataclasses import dataclass
from datetime import datetime
from decimal import Decimal
from typing import Callable, Mapping

from .escalation import (
    EscalationTicket,
    TicketStatus,
    TicketStore,
    ticket_id_for,
)
from .expr import EvalContext, Scalar, TypedExpr, evaluate, quantize, to_scaled
from .ledger import EvidenceLedger, LedgerError
from .model import (
    ActionRequest,
    ControlTuple,
    DecisionKind,
    EscalateParams,
    OwnerRef,
    PolicySet,
    RewriteOp,
    RewriteOpKind,
    combine,
    match_tuples,
    parse_instant,
    request_from_json,
    request_to_json,
    typecheck_tuples,
    validate_policy_set,
)
from .policyfile import policy_hash
from .trajectory import StepOutcome, TrajectoryStore

# stable reason codes for decisions the policy text did not author
REASON_CONTEXT_INCOMPLETE = "CONTEXT_INCOMPLETE"
REASON_GUARD_DEFAULT_DENY = "GUARD_DEFAULT_DENY"
REASON_GUARD_DEFAULT_ALLOW = "GUARD_DEFAULT_ALLOW"
REASON_UNGUARDED_DEFAULT_ALLOW = "UNGUARDED_DEFAULT_ALLOW"
REASON_LEDGER_UNAVAILABLE = "LEDGER_UNAVAILABLE"
REASON_REWRITE_DIVERGED = "REWRITE_DIVERGED"
REASON_REWRITE_TYPE_ERROR = "REWRITE_TYPE_ERROR"

DECIDED_BY_FAIL_CLOSED = "fail_closed"
DECIDED_BY_UNGUARDED = "unguarded_default"

MAX_REWRITE_PASSES = 3

TrajectoryValues = Callable[[ActionRequest], Mapping[str, Scalar]]


@dataclass(frozen=True)
class TupleEvaluation:
    tuple_id: str
    triggered: bool
    context_incomplete: bool
    decision_kind: DecisionKind


@dataclass(frozen=True)
class CoreDecision:
    kind: DecisionKind  # allow, deny, or escalate; never log_only or rewrite
    reason: str
    decided_by: tuple[str, ...]
    evaluations: tuple[TupleEvaluation, ...]  # final pass
    context_incomplete: bool
    trajectory_values: Mapping[str, Scalar]
    escalate_tuple_id: str | None = None
    escalate_params: EscalateParams | None = None
    rewritten: ActionRequest | None = None
    rewrite_trace: tuple[tuple[str, ...], ...] = ()


@dataclass(frozen=True)
class _Pass:
    kind: DecisionKind
    reason: str
    decided_by: tuple[str, ...]
    evaluations: tuple[TupleEvaluation, ...]
    context_incomplete: bool
    trajectory_values: Mapping[str, Scalar]
    triggered: tuple[ControlTuple, ...]
    escalate_tuple_id: str | None
    escalate_params: EscalateParams | None


def _single_pass(
    ps: PolicySet,
    typed: Mapping[str, TypedExpr],
    req: ActionRequest,
    trajectory_values: TrajectoryValues,
) -> _Pass:
    matched = match_tuples(ps, req)
    traj_values = dict(trajectory_values(req))
    ctx = EvalContext(
        request=req.request_fields(),
        trajectory=traj_values,
        sets=ps.named_sets,
        now=req.timestamp,
    )
    evaluations: list[TupleEvaluation] = []
    triggered: list[ControlTuple] = []
    incomplete = False
    for t in matched:
        outcome = evaluate(typed[t.id], ctx)
        evaluations.append(
            TupleEvaluation(t.id, outcome.value, outcome.context_incomplete, t.decision.kind)
        )
        if outcome.value:
            triggered.append(t)
        incomplete = incomplete or outcome.context_incomplete

    guard = ps.guard_for(req.action)
    disposition = [t for t in triggered if t.decision.kind != DecisionKind.LOG_ONLY]
    kinds = [t.decision.kind for t in disposition]

    guard_denies = guard is not None and guard.default == DecisionKind.DENY
    if guard_denies and incomplete:
        return _Pass(
            kind=DecisionKind.DENY,
            reason=REASON_CONTEXT_INCOMPLETE,
            decided_by=(DECIDED_BY_FAIL_CLOSED,),
            evaluations=tuple(evaluations),
            context_incomplete=True,
            trajectory_values=traj_values,
            triggered=tuple(triggered),
            escalate_tuple_id=None,
            escalate_params=None,
        )

    guard_contributed = False
    if guard_denies and not any(k == DecisionKind.ALLOW for k in kinds):
        kinds.append(DecisionKind.DENY)
        guard_contributed = True

    if not kinds:
        if guard is not None:
            kind = guard.default
            reason = (
                REASON_GUARD_DEFAULT_ALLOW
                if kind == DecisionKind.ALLOW
                else REASON_GUARD_DEFAULT_DENY
            )
            decided_by: tuple[str, ...] = (f"guard:{guard.action_glob}",)
        else:
            kind = DecisionKind.ALLOW
            reason = REASON_UNGUARDED_DEFAULT_ALLOW
            decided_by = (DECIDED_BY_UNGUARDED,)
        return _Pass(
            kind=kind,
            reason=reason,
            decided_by=decided_by,
            evaluations=tuple(evaluations),
            context_incomplete=incomplete,
            trajectory_values=traj_values,
            triggered=tuple(triggered),
            escalate_tuple_id=None,
            escalate_params=None,
        )

    final = combine(kinds)
    deciders = [t.id for t in disposition if t.decision.kind == final]
    reason = next((t.decision.reason for t in disposition if t.decision.kind == final), "")
    if final == DecisionKind.DENY and guard_contributed:
        deciders.append(f"guard:{guard.action_glob}")  # type: ignore[union-attr]
        if not reason and len(deciders) == 1:
            reason = REASON_GUARD_DEFAULT_DENY

    escalate_tuple_id = None
    escalate_params = None
    if final == DecisionKind.ESCALATE:
        first = next(t for t in disposition if t.decision.kind == DecisionKind.ESCALATE)
        escalate_tuple_id = first.id
        escalate_params = first.decision.escalate

    return _Pass(
        kind=final,
        reason=reason,
        decided_by=tuple(deciders),
        evaluations=tuple(evaluations),
        context_incomplete=incomplete,
        trajectory_values=traj_values,
        triggered=tuple(triggered),
        escalate_tuple_id=escalate_tuple_id,
        escalate_params=escalate_params,
    )


class RewriteTypeError(Exception):
    def __init__(self, tuple_id: str, message: str):
        super().__init__(message)
        self.tuple_id = tuple_id


def _clamp_value(value: Scalar, bound: Scalar) -> Scalar:
    """Replacement value when a clamp bound kicks in, typed like the original."""
    if isinstance(value, int) and not isinstance(value, bool):
        as_dec = quantize(Decimal(bound)) if isinstance(bound, Decimal) else Decimal(bound)
        if as_dec != as_dec.to_integral_value():
            raise ValueError("fractional bound on integer field")
        return int(as_dec)
    return quantize(Decimal(bound))


def apply_rewrite_op(args: dict[str, Scalar], op: RewriteOp, tuple_id: str) -> None:
    if op.op == RewriteOpKind.SET:
        args[op.field] = op.value  # type: ignore[assignment]
        return
    if op.op == RewriteOpKind.REDACT:
        args.pop(op.field, None)
        return
    # clamp: absent fields are left absent; non-numeric values are a policy
    # bug surfaced as a closed-form deny, not an exception
    value = args.get(op.field)
    if value is None:
        return
    if isinstance(value, bool) or not isinstance(value, (int, Decimal)):
        raise RewriteTypeError(tuple_id, f"clamp on non-numeric field {op.field!r}")
    scaled = to_scaled(value)
    try:
        if op.clamp_min is not None and scaled < to_scaled(op.clamp_min):
            args[op.field] = _clamp_value(value, op.clamp_min)
        elif op.clamp_max is not None and scaled > to_scaled(op.clamp_max):
            args[op.field] = _clamp_value(value, op.clamp_max)
    except ValueError as exc:
        raise RewriteTypeError(tuple_id, f"clamp on field {op.field!r}: {exc}") from exc


def apply_rewrites(req: ActionRequest, tuples: list[ControlTuple]) -> ActionRequest:
    """All ops of the triggered rewrite tuples, in policy-file order."""
    args = dict(req.args)
    for t in tuples:
        for op in t.decision.rewrite_ops:
            apply_rewrite_op(args, op, t.id)
    return req.with_args(args)


def decide_core(
    ps: PolicySet,
    typed: Mapping[str, TypedExpr],
    req: ActionRequest,
    trajectory_values: TrajectoryValues,
) -> CoreDecision:
    """Pure decision for one request; deterministic given (ps, req, values)."""
    current = req
    applied = 0
    trace: list[tuple[str, ...]] = []
    while True:
        p = _single_pass(ps, typed, current, trajectory_values)
        if p.kind != DecisionKind.REWRITE:
            return CoreDecision(
                kind=p.kind,
                reason=p.reason,
                decided_by=p.decided_by,
                evaluations=p.evaluations,
                context_incomplete=p.context_incomplete,
                trajectory_values=p.trajectory_values,
                escalate_tuple_id=p.escalate_tuple_id,
                escalate_params=p.escalate_params,
                rewritten=current if applied else None,
                rewrite_trace=tuple(trace),
            )
        rewriters = [t for t in p.triggered if t.decision.kind == DecisionKind.REWRITE]
        if applied >= MAX_REWRITE_PASSES:
            return CoreDecision(
                kind=DecisionKind.DENY,
                reason=REASON_REWRITE_DIVERGED,
                decided_by=tuple(t.id for t in rewriters),
                evaluations=p.evaluations,
                context_incomplete=p.context_incomplete,
                trajectory_values=p.trajectory_values,
                rewritten=current if applied else None,
                rewrite_trace=tuple(trace),
            )
        try:
            current = apply_rewrites(current, rewriters)
        except RewriteTypeError as exc:
            return CoreDecision(
                kind=DecisionKind.DENY,
                reason=REASON_REWRITE_TYPE_ERROR,
                decided_by=(exc.tuple_id,),
                evaluations=p.evaluations,
                context_incomplete=p.context_incomplete,
                trajectory_values=p.trajectory_values,
                rewritten=None,
                rewrite_trace=tuple(trace),
            )
        trace.append(tuple(t.id for t in rewriters))
        applied += 1


# ---------------------------------------------------------------------------
# Engine errors
# ---------------------------------------------------------------------------


class EngineError(Exception):
    pass


class PolicyRejected(EngineError):
    """Policy failed validation; the engine refuses to run with it."""


class DuplicateRequest(EngineError):
    pass


class UnknownRequest(EngineError):
    pass


class StepOrderError(EngineError):
    pass


class OutcomeNotPermitted(EngineError):
    pass


class LedgerUnavailable(EngineError):
    """The decision could not be evidenced; treat as deny."""


@dataclass(frozen=True)
class MediationResult:
    kind: DecisionKind
    reason: str
    decided_by: tuple[str, ...]
    evaluations: tuple[TupleEvaluation, ...]
    context_incomplete: bool
    evidence_seq: int
    elapsed_seconds: float
    ticket_id: str | None = None
    rewritten: ActionRequest | None = None


@dataclass(frozen=True)
class _RequestInfo:
    request_id: str
    trajectory_id: str
    kind: DecisionKind
    ticket_id: str | None


class MediationEngine:
    """Stateful mediation over one policy pack, one ledger, one clock."""

    def __init__(
        self,
        ps: PolicySet,
        ledger: EvidenceLedger,
        clock: Callable[[], datetime],
        policy_source: str = "",
    ):
        report = validate_policy_set(ps)
        if not report.ok:
            lines = "; ".join(f"{v.code} on {v.tuple_id}: {v.message}" for v in report.violations)
            raise PolicyRejected(f"policy failed validation: {lines}")
        self._state_lock = threading.RLock()
        self._resolve_lock = threading.Lock()
        self._traj_locks: dict[str, threading.Lock] = {}
        self.ps = ps
        self.typed = typecheck_tuples(ps)
        self.pack_hash = policy_hash(ps)
        self.ledger = ledger
        self.clock = clock
        self.trajectories = TrajectoryStore(ps)
        self.tickets = TicketStore()
        self._requests: dict[str, _RequestInfo] = {}
        self.decision_timings: list[float] = []
        if ledger.broken:
            raise LedgerUnavailable(f"ledger chain is broken: {ledger.broken_reason}")
        if ledger.records():
            self._rebuild_from_ledger()
        self.ledger.append(
            "policy_load",
            {
                "policy_hash": self.pack_hash,
                "tuple_count": len(ps.tuples),
                "source": policy_source,
            },
            ts=self.clock(),
        )

    # -- state reconstruction ---------------------------------------------

    def _rebuild_from_ledger(self) -> None:
        """The ledger is the persistence format; rebuild everything from it."""
        for record in self.ledger.records():
            kind = record["kind"]
            body = record["body"]
            if kind == "decision":
                req = request_from_json(body["request"], self.ps.field_types)
                rewritten_args = body["final"].get("rewritten_args")
                effective = req
                if rewritten_args is not None:
                    reqj = dict(body["request"])
                    reqj["args"] = rewritten_args
                    effective = request_from_json(reqj, self.ps.field_types)
                final_kind = DecisionKind(body["final"]["kind"])
                self.trajectories.get_or_begin(req.trajectory_id, req.principal)
                outcome = (
                    StepOutcome.BLOCKED if final_kind == DecisionKind.DENY else StepOutcome.PENDING
                )
                self.trajectories.record_step(effective, final_kind, outcome)
                ticket_id = body["final"].get("ticket_id")
                if final_kind == DecisionKind.ESCALATE and ticket_id:
                    params = EscalateParams(
                        approver_role=body["final"]["approver_role"],
                        timeout_seconds=int(body["final"]["timeout_seconds"]),
                        on_timeout=DecisionKind(body["final"]["on_timeout"]),
                    )
                    self.tickets.open_ticket(
                        req,
                        body["final"].get("escalate_tuple_id", ""),
                        params,
                        parse_instant(record["ts"]),
                    )
                self._requests[req.request_id] = _RequestInfo(
                    req.request_id, req.trajectory_id, final_kind, ticket_id
                )
            elif kind == "outcome":
                self.trajectories.update_outcome(
                    body["trajectory_id"], body["request_id"], StepOutcome(body["outcome"])
                )
            elif kind == "escalation_resolution":
                ticket_id = body["ticket_id"]
                verdict = body["verdict"]
                when = parse_instant(record["ts"])
                if verdict == "approved":
                    approver = OwnerRef(body["approver"]["identity"], body["approver"]["role"])
                    self.tickets.commit_resolution(
                        ticket_id, approver, TicketStatus.APPROVED, body.get("reason", ""), when
                    )
                elif verdict == "denied":
                    approver = OwnerRef(body["approver"]["identity"], body["approver"]["role"])
                    self.tickets.commit_resolution(
                        ticket_id, approver, TicketStatus.DENIED, body.get("reason", ""), when
                    )
                    self.trajectories.update_outcome(
                        body["trajectory_id"], body["request_id"], StepOutcome.BLOCKED
                    )
                else:  # expired
                    self.tickets.commit_expiry(ticket_id, when)
                    if DecisionKind(body["on_timeout"]) == DecisionKind.DENY:
                        self.trajectories.update_outcome(
                            body["trajectory_id"], body["request_id"], StepOutcome.BLOCKED
                        )

    # -- mediation ---------------------------------------------------------

    def _traj_lock(self, trajectory_id: str) -> threading.Lock:
        with self._state_lock:
            lock = self._traj_locks.get(trajectory_id)
            if lock is None:
                lock = threading.Lock()
                self._traj_locks[trajectory_id] = lock
            return lock

    def decide(self, req: ActionRequest) -> MediationResult:
        started = time.perf_counter()
        with self._traj_lock(req.trajectory_id):
            with self._state_lock:
                if req.request_id in self._requests:
                    raise DuplicateRequest(f"request_id {req.request_id!r} was already decided")
            traj = self.trajectories.get_or_begin(req.trajectory_id, req.principal)
            expected = traj.last_step_index + 1
            if req.step_index != expected:
                raise StepOrderError(
                    f"step_index {req.step_index} out of order in trajectory "
                    f"{req.trajectory_id!r} (expected {expected})"
                )

            core = decide_core(
                self.ps,
                self.typed,
                req,
                lambda candidate: self.trajectories.prospective(req.trajectory_id, candidate),
            )
            ticket_id = ticket_id_for(req.request_id) if core.kind == DecisionKind.ESCALATE else None

            body = self._decision_body(req, core, ticket_id)
            try:
                record = self.ledger.append("decision", body, ts=self.clock())
            except (LedgerError, OSError) as exc:
                raise LedgerUnavailable(str(exc)) from exc

            if core.kind == DecisionKind.ESCALATE:
                assert core.escalate_params is not None
                self.tickets.open_ticket(
                    req, core.escalate_tuple_id or "", core.escalate_params, self.clock()
                )
            outcome = StepOutcome.BLOCKED if core.kind == DecisionKind.DENY else StepOutcome.PENDING
            # accumulators must see what would actually execute, so a
            # rewritten request is recorded in its rewritten form
            effective = core.rewritten if core.rewritten is not None else req
            self.trajectories.record_step(effective, core.kind, outcome)
            with self._state_lock:
                self._requests[req.request_id] = _RequestInfo(
                    req.request_id, req.trajectory_id, core.kind, ticket_id
                )
            elapsed = time.perf_counter() - started
            self.decision_timings.append(elapsed)
            return MediationResult(
                kind=core.kind,
                reason=core.reason,
                decided_by=core.decided_by,
                evaluations=core.evaluations,
                context_incomplete=core.context_incomplete,
                evidence_seq=record["seq"],
                elapsed_seconds=elapsed,
                ticket_id=ticket_id,
                rewritten=core.rewritten,
            )

    def _decision_body(
        self, req: ActionRequest, core: CoreDecision, ticket_id: str | None
    ) -> dict:
        by_id = {t.id: t for t in self.ps.tuples}
        matched = [
            {
                "tuple_id": ev.tuple_id,
                "triggered": ev.triggered,
                "context_incomplete": ev.context_incomplete,
                "decision_kind": ev.decision_kind.value,
                "owner": {
                    "identity": by_id[ev.tuple_id].owner.identity,
                    "role": by_id[ev.tuple_id].owner.role,
                },
            }
            for ev in core.evaluations
        ]
        final: dict = {
            "kind": core.kind.value,
            "reason": core.reason,
            "decided_by": list(core.decided_by),
        }
        if ticket_id is not None:
            assert core.escalate_params is not None
            final["ticket_id"] = ticket_id
            final["escalate_tuple_id"] = core.escalate_tuple_id
            final["approver_role"] = core.escalate_params.approver_role
            final["timeout_seconds"] = core.escalate_params.timeout_seconds
            final["on_timeout"] = core.escalate_params.on_timeout.value
        if core.rewritten is not None:
            final["rewritten_args"] = request_to_json(core.rewritten)["args"]
        evidence_fields = sorted(
            {
                f
                for ev in core.evaluations
                for f in by_id[ev.tuple_id].evidence.required_fields
            }
        )
        body = {
            "request": request_to_json(req),
            "matched": matched,
            "final": final,
            "context_incomplete": core.context_incomplete,
            "trajectory_values": dict(core.trajectory_values),
            "evidence_fields": evidence_fields,
            "policy_hash": self.pack_hash,
        }
        if core.rewrite_trace:
            body["rewrite_trace"] = [list(ids) for ids in core.rewrite_trace]
        return body

    # -- outcomes ----------------------------------------------------------

    def report_outcome(self, request_id: str, outcome: str) -> int:
        if outcome not in ("executed", "failed"):
            raise OutcomeNotPermitted(f"outcome must be executed or failed, got {outcome!r}")
        with self._state_lock:
            info = self._requests.get(request_id)
        if info is None:
            raise UnknownRequest(f"no decision recorded for request {request_id!r}")
        with self._traj_lock(info.trajectory_id):
            traj = self.trajectories.get(info.trajectory_id)
            assert traj is not None
            step = traj.step_for(request_id)
            assert step is not None
            if step.outcome != StepOutcome.PENDING:
                raise OutcomeNotPermitted(
                    f"request {request_id!r} already has outcome {step.outcome.value}"
                )
            if info.kind == DecisionKind.ESCALATE:
                ticket = self.tickets.get(info.ticket_id or "")
                assert ticket is not None
                held_open = ticket.status == TicketStatus.APPROVED or (
                    ticket.status == TicketStatus.EXPIRED
                    and ticket.on_timeout == DecisionKind.ALLOW
                )
                if not held_open:
                    raise OutcomeNotPermitted(
                        f"request {request_id!r} is escalated and not approved "
                        f"(ticket {ticket.status.value})"
                    )
            try:
                record = self.ledger.append(
                    "outcome",
                    {
                        "request_id": request_id,
                        "trajectory_id": info.trajectory_id,
                        "outcome": outcome,
                    },
                    ts=self.clock(),
                )
            except (LedgerError, OSError) as exc:
                raise LedgerUnavailable(str(exc)) from exc
            self.trajectories.update_outcome(
                info.trajectory_id, request_id, StepOutcome(outcome)
            )
            return record["seq"]

    # -- escalation --------------------------------------------------------

    def resolve_ticket(
        self, ticket_id: str, approver: OwnerRef, verdict: str, reason: str
    ) -> EscalationTicket:
        if verdict not in ("approved", "denied"):
            raise OutcomeNotPermitted(f"verdict must be approved or denied, got {verdict!r}")
        now = self.clock()
        self.expire_tickets(now)
        status = TicketStatus(verdict)
        with self._resolve_lock:
            # check first so a losing concurrent attempt never reaches the ledger
            ticket = self.tickets.check_resolvable(ticket_id, approver)
            try:
                self.ledger.append(
                    "escalation_resolution",
                    {
                        "ticket_id": ticket_id,
                        "request_id": ticket.request.request_id,
                        "trajectory_id": ticket.request.trajectory_id,
                        "verdict": verdict,
                        "approver": {"identity": approver.identity, "role": approver.role},
                        "reason": reason,
                    },
                    ts=now,
                )
            except (LedgerError, OSError) as exc:
                raise LedgerUnavailable(str(exc)) from exc
            resolved = self.tickets.commit_resolution(ticket_id, approver, status, reason, now)
        if status == TicketStatus.DENIED:
            with self._traj_lock(ticket.request.trajectory_id):
                self.trajectories.update_outcome(
                    ticket.request.trajectory_id, ticket.request.request_id, StepOutcome.BLOCKED
                )
        return resolved

    def expire_tickets(self, now: datetime | None = None) -> list[EscalationTicket]:
        if now is None:
            now = self.clock()
        expired: list[EscalationTicket] = []
        with self._resolve_lock:
            for ticket in self.tickets.pending_past_expiry(now):
                body = {
                    "ticket_id": ticket.ticket_id,
                    "request_id": ticket.request.request_id,
                    "trajectory_id": ticket.request.trajectory_id,
                    "verdict": "expired",
                    "approver": None,
                    "reason": "",
                    "on_timeout": ticket.on_timeout.value,
                }
                if ticket.on_timeout == DecisionKind.ALLOW:
                    # timing out into allow is legal but must be impossible to miss
                    body["flag"] = "AUTO_ALLOW"
                try:
                    self.ledger.append("escalation_resolution", body, ts=now)
                except (LedgerError, OSError) as exc:
                    raise LedgerUnavailable(str(exc)) from exc
                committed = self.tickets.commit_expiry(ticket.ticket_id, now)
                expired.append(committed)
                if ticket.on_timeout == DecisionKind.DENY:
                    with self._traj_lock(ticket.request.trajectory_id):
                        self.trajectories.update_outcome(
                            ticket.request.trajectory_id,
                            ticket.request.request_id,
                            StepOutcome.BLOCKED,
                        )
        return expired

    # -- admin -------------------------------------------------------------

    def reload_policy(self, ps: PolicySet, source: str = "") -> str:
        report = validate_policy_set(ps)
        if not report.ok:
            lines = "; ".join(f"{v.code} on {v.tuple_id}: {v.message}" for v in report.violations)
            raise PolicyRejected(f"policy failed validation: {lines}")
        typed = typecheck_tuples(ps)
        new_hash = policy_hash(ps)
        try:
            self.ledger.append(
                "policy_load",
                {"policy_hash": new_hash, "tuple_count": len(ps.tuples), "source": source},
                ts=self.clock(),
            )
        except (LedgerError, OSError) as exc:
            raise LedgerUnavailable(str(exc)) from exc
        with self._state_lock:
            self.ps = ps
            self.typed = typed
            self.pack_hash = new_hash
            self.trajectories.rebind_policy(ps)
        return new_hash
