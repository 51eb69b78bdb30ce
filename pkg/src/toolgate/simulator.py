"""Scripted scenario runner and labeled-corpus metrics.

Scenarios drive a real engine against a real ledger file under a simulated
clock, so approval timeouts measured in hours run in milliseconds and two
runs of the same script produce byte-identical ledgers. Each step carries
a ground-truth harmfulness label; the metrics harness tallies decisions
against those labels with exact rational arithmetic.
"""

from __future__ import annotations

import hashlib
import json
import os
from dataclasses import dataclass, field
from datetime import datetime, timedelta
from decimal import Decimal
from fractions import Fraction
from typing import Callable, Mapping, Sequence

from .ledger import EvidenceLedger, read_records
from .mediator import MediationEngine
from .model import (
    ActionRequest,
    DecisionKind,
    ModelError,
    OwnerRef,
    PolicySet,
    Principal,
    PrincipalKind,
    coerce_arg,
    parse_instant,
)
from .policyfile import parse_policy_file


class ScenarioError(Exception):
    pass


class MetricsError(Exception):
    pass


HARMFUL = "harmful"
BENIGN = "benign"


@dataclass(frozen=True)
class HumanResponse:
    verdict: str  # approved or denied
    delay_seconds: int
    approver: OwnerRef
    reason: str = ""


@dataclass(frozen=True)
class ScenarioStep:
    offset_seconds: int
    request_id: str
    trajectory_id: str
    step_index: int
    principal: Principal
    action: str
    resource: str
    args: Mapping[str, object]  # coerced against the pack at run time
    label: str
    expected_decision: DecisionKind
    human_response: HumanResponse | None = None


@dataclass(frozen=True)
class Scenario:
    name: str
    pack_ref: str
    base_time: datetime
    steps: tuple[ScenarioStep, ...]


def bundled_pack_path(name: str) -> str:
    return os.path.join(os.path.dirname(__file__), "packs", name)


def resolve_pack_ref(ref: str, relative_to: str | None = None) -> str:
    """A bare name means a bundled pack; anything with a separator is a path."""
    if os.sep not in ref and "/" not in ref:
        bundled = bundled_pack_path(ref)
        if os.path.exists(bundled):
            return bundled
    if relative_to and not os.path.isabs(ref):
        return os.path.join(relative_to, ref)
    return ref


def load_pack(path: str) -> PolicySet:
    with open(path, "r", encoding="utf-8") as fh:
        return parse_policy_file(fh.read())


def _parse_principal(obj: Mapping) -> Principal:
    return Principal(
        id=str(obj["id"]),
        kind=PrincipalKind(obj["kind"]),
        delegation_chain=tuple(obj.get("delegation_chain", ())),
    )


def parse_scenario(obj: Mapping) -> Scenario:
    try:
        name = str(obj["name"])
        pack_ref = str(obj["policy"])
        base_time = parse_instant(str(obj["base_time"]))
        default_principal = (
            _parse_principal(obj["principal"]) if "principal" in obj else None
        )
        steps: list[ScenarioStep] = []
        for i, s in enumerate(obj["steps"]):
            label = str(s["label"])
            if label not in (HARMFUL, BENIGN):
                raise ScenarioError(f"step {i}: label must be harmful or benign")
            r = s["request"]
            principal = (
                _parse_principal(r["principal"]) if "principal" in r else default_principal
            )
            if principal is None:
                raise ScenarioError(f"step {i}: no principal given and no scenario default")
            hr = None
            if "human_response" in s:
                h = s["human_response"]
                verdict = str(h["verdict"])
                if verdict not in ("approved", "denied"):
                    raise ScenarioError(f"step {i}: verdict must be approved or denied")
                hr = HumanResponse(
                    verdict=verdict,
                    delay_seconds=int(h["delay_seconds"]),
                    approver=OwnerRef(str(h["approver"]["identity"]), str(h["approver"]["role"])),
                    reason=str(h.get("reason", "")),
                )
            steps.append(
                ScenarioStep(
                    offset_seconds=int(s["offset_seconds"]),
                    request_id=str(r["request_id"]),
                    trajectory_id=str(r["trajectory_id"]),
                    step_index=int(r["step_index"]),
                    principal=principal,
                    action=str(r["action"]),
                    resource=str(r["resource"]),
                    args=dict(r.get("args", {})),
                    label=label,
                    expected_decision=DecisionKind(str(s["expected_decision"])),
                    human_response=hr,
                )
            )
        return Scenario(name=name, pack_ref=pack_ref, base_time=base_time, steps=tuple(steps))
    except ScenarioError:
        raise
    except (KeyError, TypeError, ValueError, ModelError) as exc:
        raise ScenarioError(f"malformed scenario: {exc}") from exc


def load_scenario(path: str) -> Scenario:
    with open(path, "r", encoding="utf-8") as fh:
        # parse_float keeps money out of binary floats
        obj = json.load(fh, parse_float=Decimal)
    return parse_scenario(obj)


class SimulatedClock:
    """Settable clock; scenarios advance it explicitly."""

    def __init__(self, start: datetime):
        self._now = start

    def now(self) -> datetime:
        return self._now

    def set(self, when: datetime) -> None:
        if when < self._now:
            raise ScenarioError("simulated clock cannot move backwards")
        self._now = when

    def advance(self, seconds: int) -> None:
        self._now = self._now + timedelta(seconds=seconds)


@dataclass(frozen=True)
class StepResult:
    step_index: int
    request_id: str
    label: str
    expected: DecisionKind
    actual: DecisionKind
    matched: bool
    reason: str
    ticket_id: str | None
    final_outcome: str  # executed / blocked / pending / failed


@dataclass
class SimulationReport:
    scenario: str
    pack_hash: str
    ledger_path: str
    steps: list[StepResult] = field(default_factory=list)
    decision_timings: list[float] = field(default_factory=list)

    @property
    def all_matched(self) -> bool:
        return all(s.matched for s in self.steps)

    @property
    def mismatches(self) -> list[StepResult]:
        return [s for s in self.steps if not s.matched]

    def ledger_sha256(self) -> str:
        with open(self.ledger_path, "rb") as fh:
            return hashlib.sha256(fh.read()).hexdigest()

    def labels(self) -> dict[str, str]:
        return {s.request_id: s.label for s in self.steps}

    def to_json(self) -> dict:
        return {
            "scenario": self.scenario,
            "pack_hash": self.pack_hash,
            "ledger_path": self.ledger_path,
            "all_matched": self.all_matched,
            "ledger_sha256": self.ledger_sha256(),
            "steps": [
                {
                    "step_index": s.step_index,
                    "request_id": s.request_id,
                    "label": s.label,
                    "expected": s.expected.value,
                    "actual": s.actual.value,
                    "matched": s.matched,
                    "reason": s.reason,
                    "ticket_id": s.ticket_id,
                    "final_outcome": s.final_outcome,
                }
                for s in self.steps
            ],
        }


Responder = Callable[[ScenarioStep, str], HumanResponse | None]


def scripted_responder(step: ScenarioStep, ticket_id: str) -> HumanResponse | None:
    return step.human_response


def run_scenario(
    scenario: Scenario,
    ps: PolicySet,
    ledger_path: str,
    responder: Responder = scripted_responder,
    signing_key: bytes | None = None,
) -> SimulationReport:
    """One deterministic pass: same script + pack → same ledger bytes."""
    clock = SimulatedClock(scenario.base_time)
    ledger = EvidenceLedger(ledger_path, clock=clock.now, signing_key=signing_key)
    try:
        engine = MediationEngine(ps, ledger, clock.now, policy_source=scenario.pack_ref)
        report = SimulationReport(
            scenario=scenario.name, pack_hash=engine.pack_hash, ledger_path=ledger_path
        )
        for step in scenario.steps:
            clock.set(scenario.base_time + timedelta(seconds=step.offset_seconds))
            engine.expire_tickets()
            req = ActionRequest(
                request_id=step.request_id,
                principal=step.principal,
                action=step.action,
                resource=step.resource,
                args={k: coerce_arg(v, ps.field_types.get(k)) for k, v in step.args.items()},
                trajectory_id=step.trajectory_id,
                step_index=step.step_index,
                timestamp=clock.now(),
            )
            result = engine.decide(req)
            outcome = "blocked" if result.kind == DecisionKind.DENY else "pending"
            if result.kind == DecisionKind.ALLOW:
                engine.report_outcome(req.request_id, "executed")
                outcome = "executed"
            elif result.kind == DecisionKind.ESCALATE:
                assert result.ticket_id is not None
                response = responder(step, result.ticket_id)
                if response is not None:
                    clock.advance(response.delay_seconds)
                    resolved = engine.resolve_ticket(
                        result.ticket_id, response.approver, response.verdict, response.reason
                    )
                    if resolved.status.value == "approved":
                        engine.report_outcome(req.request_id, "executed")
                        outcome = "executed"
                    else:
                        outcome = "blocked"
            report.steps.append(
                StepResult(
                    step_index=step.step_index,
                    request_id=step.request_id,
                    label=step.label,
                    expected=step.expected_decision,
                    actual=result.kind,
                    matched=result.kind == step.expected_decision,
                    reason=result.reason,
                    ticket_id=result.ticket_id,
                    final_outcome=outcome,
                )
            )
        report.decision_timings = list(engine.decision_timings)
        return report
    finally:
        ledger.close()


def run_scenario_file(
    scenario_path: str,
    ledger_path: str,
    pack_path: str | None = None,
    signing_key: bytes | None = None,
) -> SimulationReport:
    scenario = load_scenario(scenario_path)
    resolved = pack_path or resolve_pack_ref(
        scenario.pack_ref, os.path.dirname(os.path.abspath(scenario_path))
    )
    return run_scenario(scenario, load_pack(resolved), ledger_path, signing_key=signing_key)


# ---------------------------------------------------------------------------
# Metrics
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Rate:
    value: Fraction
    zero_denominator: bool = False

    def to_json(self) -> dict:
        return {
            "value": float(self.value),
            "numerator": self.value.numerator,
            "denominator": self.value.denominator,
            "zero_denominator": self.zero_denominator,
        }


def _rate(num: int, den: int, when_empty: Fraction) -> Rate:
    if den == 0:
        return Rate(when_empty, zero_denominator=True)
    return Rate(Fraction(num, den))


@dataclass(frozen=True)
class Metrics:
    decisions_total: int
    harmful_total: int
    benign_total: int
    blocked_total: int
    harmful_blocked: int
    benign_blocked: int
    benign_executed: int
    tickets_opened: int
    precision: Rate
    recall: Rate
    false_block_rate: Rate
    escalation_burden: Rate
    task_completion: Rate
    latency_mean_seconds: float | None = None
    latency_p95_seconds: float | None = None

    def to_json(self) -> dict:
        out = {
            "decisions_total": self.decisions_total,
            "harmful_total": self.harmful_total,
            "benign_total": self.benign_total,
            "blocked_total": self.blocked_total,
            "harmful_blocked": self.harmful_blocked,
            "benign_blocked": self.benign_blocked,
            "benign_executed": self.benign_executed,
            "tickets_opened": self.tickets_opened,
            "precision": self.precision.to_json(),
            "recall": self.recall.to_json(),
            "false_block_rate": self.false_block_rate.to_json(),
            "escalation_burden": self.escalation_burden.to_json(),
            "task_completion": self.task_completion.to_json(),
            "latency_mean_seconds": self.latency_mean_seconds,
            "latency_p95_seconds": self.latency_p95_seconds,
        }
        return out


def compute_metrics(
    labels: Mapping[str, str],
    records: Sequence[Mapping],
    decision_timings: Sequence[float] | None = None,
) -> Metrics:
    """Contingency tally over a ledger, harmful-vs-blocked.

    Blocked means the external effect never happened by decision of the
    system: denied outright, escalated then denied, or escalated and
    expired with a closing timeout.
    """
    decided: dict[str, DecisionKind] = {}
    ticket_request: dict[str, str] = {}
    blocked: set[str] = set()
    executed: set[str] = set()
    tickets_opened = 0

    for record in records:
        kind = record["kind"]
        body = record["body"]
        if kind == "decision":
            request_id = body["request"]["request_id"]
            if request_id not in labels:
                raise MetricsError(f"decision for {request_id!r} has no label")
            final = DecisionKind(body["final"]["kind"])
            decided[request_id] = final
            if final == DecisionKind.DENY:
                blocked.add(request_id)
            elif final == DecisionKind.ESCALATE:
                tickets_opened += 1
                ticket_request[body["final"]["ticket_id"]] = request_id
        elif kind == "outcome":
            if body["outcome"] == "executed":
                executed.add(body["request_id"])
        elif kind == "escalation_resolution":
            request_id = ticket_request.get(body["ticket_id"], body.get("request_id", ""))
            if body["verdict"] == "denied":
                blocked.add(request_id)
            elif body["verdict"] == "expired":
                if DecisionKind(body["on_timeout"]) == DecisionKind.DENY:
                    blocked.add(request_id)

    harmful = {r for r in decided if labels[r] == HARMFUL}
    benign = {r for r in decided if labels[r] == BENIGN}
    harmful_blocked = len(harmful & blocked)
    benign_blocked = len(benign & blocked)
    benign_executed = len(benign & executed)

    latency_mean = latency_p95 = None
    if decision_timings:
        ordered = sorted(decision_timings)
        latency_mean = sum(ordered) / len(ordered)
        rank = max(0, -(-95 * len(ordered) // 100) - 1)  # ceil(0.95 n) - 1
        latency_p95 = ordered[rank]

    return Metrics(
        decisions_total=len(decided),
        harmful_total=len(harmful),
        benign_total=len(benign),
        blocked_total=len(blocked),
        harmful_blocked=harmful_blocked,
        benign_blocked=benign_blocked,
        benign_executed=benign_executed,
        tickets_opened=tickets_opened,
        precision=_rate(harmful_blocked, len(blocked), Fraction(1)),
        recall=_rate(harmful_blocked, len(harmful), Fraction(1)),
        false_block_rate=_rate(benign_blocked, len(benign), Fraction(0)),
        escalation_burden=_rate(tickets_opened, len(decided), Fraction(0)),
        task_completion=_rate(benign_executed, len(benign), Fraction(1)),
        latency_mean_seconds=latency_mean,
        latency_p95_seconds=latency_p95,
    )


def compute_metrics_file(
    labels: Mapping[str, str], ledger_path: str, decision_timings: Sequence[float] | None = None
) -> Metrics:
    return compute_metrics(labels, read_records(ledger_path), decision_timings)
