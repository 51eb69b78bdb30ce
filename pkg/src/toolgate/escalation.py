"""Human-in-the-loop ticket queue for escalated decisions.

A ticket is the held action: opened when mediation lands on escalate,
resolved exactly once by a human whose role matches the tuple's approver
role, or expired by the clock with the tuple's on_timeout default (deny
unless the policy loudly opted into allow). First valid resolution wins;
every later attempt errors.
"""

from __future__ import annotations

import enum
import threading
from dataclasses import dataclass, replace
from datetime import datetime, timedelta

from .model import ActionRequest, DecisionKind, EscalateParams, OwnerRef


class TicketStatus(str, enum.Enum):
    PENDING = "pending"
    APPROVED = "approved"
    DENIED = "denied"
    EXPIRED = "expired"


class TicketError(Exception):
    def __init__(self, code: str, message: str):
        super().__init__(message)
        self.code = code


DUPLICATE_REQUEST = "DUPLICATE_REQUEST"
UNKNOWN_TICKET = "UNKNOWN_TICKET"
ALREADY_RESOLVED = "ALREADY_RESOLVED"
REFUSED_WRONG_ROLE = "REFUSED_WRONG_ROLE"


def ticket_id_for(request_id: str) -> str:
    return f"tkt-{request_id}"


@dataclass(frozen=True)
class EscalationTicket:
    ticket_id: str
    request: ActionRequest
    tuple_id: str
    approver_role: str
    on_timeout: DecisionKind
    opened_at: datetime
    expires_at: datetime
    status: TicketStatus = TicketStatus.PENDING
    resolved_at: datetime | None = None
    approver: OwnerRef | None = None
    reason: str = ""

    def to_json(self) -> dict:
        from .model import format_instant, request_to_json

        out = {
            "ticket_id": self.ticket_id,
            "request": request_to_json(self.request),
            "tuple_id": self.tuple_id,
            "approver_role": self.approver_role,
            "on_timeout": self.on_timeout.value,
            "opened_at": format_instant(self.opened_at),
            "expires_at": format_instant(self.expires_at),
            "status": self.status.value,
            "resolved_at": format_instant(self.resolved_at) if self.resolved_at else None,
            "approver": (
                {"identity": self.approver.identity, "role": self.approver.role}
                if self.approver
                else None
            ),
            "reason": self.reason,
        }
        return out


class TicketStore:
    """All tickets, keyed by ticket id; thread-safe.

    Resolution is split into check and commit so a caller can slot a ledger
    append between them under its own lock; `resolve` fuses both for callers
    without that need.
    """

    def __init__(self) -> None:
        self._lock = threading.RLock()
        self._tickets: dict[str, EscalationTicket] = {}
        self._by_request: dict[str, str] = {}

    def open_ticket(
        self,
        req: ActionRequest,
        tuple_id: str,
        params: EscalateParams,
        now: datetime,
    ) -> EscalationTicket:
        with self._lock:
            if req.request_id in self._by_request:
                raise TicketError(
                    DUPLICATE_REQUEST, f"a ticket already exists for request {req.request_id!r}"
                )
            ticket = EscalationTicket(
                ticket_id=ticket_id_for(req.request_id),
                request=req,
                tuple_id=tuple_id,
                approver_role=params.approver_role,
                on_timeout=params.on_timeout,
                opened_at=now,
                expires_at=now + timedelta(seconds=params.timeout_seconds),
            )
            self._tickets[ticket.ticket_id] = ticket
            self._by_request[req.request_id] = ticket.ticket_id
            return ticket

    def get(self, ticket_id: str) -> EscalationTicket | None:
        with self._lock:
            return self._tickets.get(ticket_id)

    def for_request(self, request_id: str) -> EscalationTicket | None:
        with self._lock:
            tid = self._by_request.get(request_id)
            return self._tickets.get(tid) if tid else None

    def list_tickets(self, status: TicketStatus | None = None) -> list[EscalationTicket]:
        with self._lock:
            tickets = sorted(self._tickets.values(), key=lambda t: (t.opened_at, t.ticket_id))
            if status is None:
                return tickets
            return [t for t in tickets if t.status == status]

    def check_resolvable(self, ticket_id: str, approver: OwnerRef) -> EscalationTicket:
        """Raise unless this approver may resolve this ticket right now."""
        with self._lock:
            ticket = self._tickets.get(ticket_id)
            if ticket is None:
                raise TicketError(UNKNOWN_TICKET, f"no ticket {ticket_id!r}")
            if ticket.status != TicketStatus.PENDING:
                raise TicketError(
                    ALREADY_RESOLVED, f"ticket {ticket_id!r} is already {ticket.status.value}"
                )
            if approver.role != ticket.approver_role:
                raise TicketError(
                    REFUSED_WRONG_ROLE,
                    f"ticket {ticket_id!r} requires role {ticket.approver_role!r}, "
                    f"got {approver.role!r}",
                )
            return ticket

    def commit_resolution(
        self,
        ticket_id: str,
        approver: OwnerRef,
        verdict: TicketStatus,
        reason: str,
        now: datetime,
    ) -> EscalationTicket:
        if verdict not in (TicketStatus.APPROVED, TicketStatus.DENIED):
            raise TicketError(ALREADY_RESOLVED, "verdict must be approved or denied")
        with self._lock:
            ticket = self.check_resolvable(ticket_id, approver)
            updated = replace(ticket, status=verdict, resolved_at=now, approver=approver, reason=reason)
            self._tickets[ticket_id] = updated
            return updated

    def resolve(
        self,
        ticket_id: str,
        approver: OwnerRef,
        verdict: TicketStatus,
        reason: str,
        now: datetime,
    ) -> EscalationTicket:
        with self._lock:
            self.check_resolvable(ticket_id, approver)
            return self.commit_resolution(ticket_id, approver, verdict, reason, now)

    def pending_past_expiry(self, now: datetime) -> list[EscalationTicket]:
        with self._lock:
            return [
                t
                for t in self.list_tickets(TicketStatus.PENDING)
                if now >= t.expires_at
            ]

    def commit_expiry(self, ticket_id: str, now: datetime) -> EscalationTicket:
        with self._lock:
            ticket = self._tickets.get(ticket_id)
            if ticket is None:
                raise TicketError(UNKNOWN_TICKET, f"no ticket {ticket_id!r}")
            if ticket.status != TicketStatus.PENDING:
                raise TicketError(
                    ALREADY_RESOLVED, f"ticket {ticket_id!r} is already {ticket.status.value}"
                )
            updated = replace(ticket, status=TicketStatus.EXPIRED, resolved_at=now)
            self._tickets[ticket_id] = updated
            return updated
