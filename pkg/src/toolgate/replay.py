"""Re-derive every recorded decision from the evidence trail.

Replay walks a verified ledger in sequence order and re-runs the decision
procedure for each recorded request against a policy pack, evolving
trajectory state from the *recorded* decisions and outcomes so that each
re-decision sees exactly the accumulator values the original run saw.
Comparing replayed verdicts to recorded ones answers two questions:

- same pack: does the trail faithfully describe what the engine would do?
  (anything but 100% match means the trail or the engine is lying)
- different pack: which recorded calls would a proposed policy change
  have decided differently? (counterfactual review)
"""

from __future__ import annotations

from dataclasses import dataclass, field

from .ledger import read_records, verify_file
from .mediator import decide_core
from .model import (
    ActionRequest,
    DecisionKind,
    PolicySet,
    request_from_json,
    typecheck_tuples,
)
from .policyfile import policy_hash
from .trajectory import StepOutcome, TrajectoryStore


class ReplayError(Exception):
    pass


@dataclass(frozen=True)
class ReplayMismatch:
    seq: int
    request_id: str
    recorded: DecisionKind
    replayed: DecisionKind
    recorded_reason: str
    replayed_reason: str


@dataclass
class ReplayReport:
    decisions_total: int = 0
    matched: int = 0
    mismatches: list[ReplayMismatch] = field(default_factory=list)
    pack_hash: str = ""
    recorded_pack_hashes: list[str] = field(default_factory=list)

    @property
    def pack_matches_recording(self) -> bool:
        return all(h == self.pack_hash for h in self.recorded_pack_hashes)

    @property
    def ok(self) -> bool:
        return not self.mismatches

    def to_json(self) -> dict:
        return {
            "decisions_total": self.decisions_total,
            "matched": self.matched,
            "mismatched": len(self.mismatches),
            "ok": self.ok,
            "pack_hash": self.pack_hash,
            "recorded_pack_hashes": self.recorded_pack_hashes,
            "pack_matches_recording": self.pack_matches_recording,
            "mismatches": [
                {
                    "seq": m.seq,
                    "request_id": m.request_id,
                    "recorded": m.recorded.value,
                    "replayed": m.replayed.value,
                    "recorded_reason": m.recorded_reason,
                    "replayed_reason": m.replayed_reason,
                }
                for m in self.mismatches
            ],
        }


def replay_records(records: list[dict], ps: PolicySet) -> ReplayReport:
    """Replay already-parsed ledger records against `ps`."""
    typed = typecheck_tuples(ps)
    store = TrajectoryStore(ps)
    report = ReplayReport(pack_hash=policy_hash(ps))

    def effective_request(body: dict) -> ActionRequest:
        rewritten = body["final"].get("rewritten_args")
        if rewritten is None:
            return request_from_json(body["request"], ps.field_types)
        reqj = dict(body["request"])
        reqj["args"] = rewritten
        return request_from_json(reqj, ps.field_types)

    for record in records:
        kind = record["kind"]
        body = record["body"]
        if kind == "policy_load":
            report.recorded_pack_hashes.append(body["policy_hash"])
        elif kind == "decision":
            req = request_from_json(body["request"], ps.field_types)
            store.get_or_begin(req.trajectory_id, req.principal)
            core = decide_core(
                ps, typed, req, lambda c: store.prospective(req.trajectory_id, c)
            )
            recorded_kind = DecisionKind(body["final"]["kind"])
            report.decisions_total += 1
            if core.kind == recorded_kind:
                report.matched += 1
            else:
                report.mismatches.append(
                    ReplayMismatch(
                        seq=record["seq"],
                        request_id=req.request_id,
                        recorded=recorded_kind,
                        replayed=core.kind,
                        recorded_reason=body["final"].get("reason", ""),
                        replayed_reason=core.reason,
                    )
                )
            # state evolves from what actually happened, not the re-decision,
            # so one divergence cannot cascade into spurious later mismatches
            outcome = (
                StepOutcome.BLOCKED
                if recorded_kind == DecisionKind.DENY
                else StepOutcome.PENDING
            )
            store.record_step(effective_request(body), recorded_kind, outcome)
        elif kind == "outcome":
            store.update_outcome(
                body["trajectory_id"], body["request_id"], StepOutcome(body["outcome"])
            )
        elif kind == "escalation_resolution":
            denied = body["verdict"] == "denied"
            expired_closed = (
                body["verdict"] == "expired"
                and DecisionKind(body["on_timeout"]) == DecisionKind.DENY
            )
            if denied or expired_closed:
                store.update_outcome(
                    body["trajectory_id"], body["request_id"], StepOutcome.BLOCKED
                )
    return report


def replay_file(path: str, ps: PolicySet, signing_key: bytes | None = None) -> ReplayReport:
    """Verify the chain, then replay. A broken chain refuses to replay."""
    verification = verify_file(path, signing_key)
    if not verification.ok:
        raise ReplayError(
            f"ledger fails verification (first broken seq "
            f"{verification.first_broken_seq}); refusing to replay"
        )
    return replay_records(read_records(path), ps)
