"""HTTP boundary for the mediation engine.

Thin by intent: every route parses JSON, calls the engine, and maps typed
errors onto status codes. A deny is a successful mediation (200); only
transport-level problems get error codes. Escalations are non-blocking:
the caller gets a ticket id at once and polls, because human approval is
measured in hours and connections are not.
"""

from __future__ import annotations

import json
import os
from contextlib import asynccontextmanager
from dataclasses import dataclass
from datetime import datetime, timezone
from decimal import Decimal
from typing import Callable

from fastapi import FastAPI, Request, Response
from fastapi.middleware.cors import CORSMiddleware
from fastapi.responses import JSONResponse

from .escalation import TicketError, TicketStatus, REFUSED_WRONG_ROLE, UNKNOWN_TICKET
from .ledger import EvidenceLedger, LedgerError
from .mediator import (
    DuplicateRequest,
    LedgerUnavailable,
    MediationEngine,
    OutcomeNotPermitted,
    PolicyRejected,
    REASON_LEDGER_UNAVAILABLE,
    StepOrderError,
    UnknownRequest,
)
from .model import ModelError, OwnerRef, request_from_json, request_to_json
from .policyfile import PolicyParseError, parse_policy_file


@dataclass(frozen=True)
class GatewayConfig:
    policy_path: str
    ledger_path: str
    host: str = "127.0.0.1"
    port: int = 8080
    signing_key_env: str = "GUARDRAIL_SIGNING_KEY"
    page_limit: int = 500

    @staticmethod
    def from_file(path: str) -> "GatewayConfig":
        with open(path, "r", encoding="utf-8") as fh:
            obj = json.load(fh)
        base = os.path.dirname(os.path.abspath(path))

        def resolve(p: str) -> str:
            return p if os.path.isabs(p) else os.path.join(base, p)

        return GatewayConfig(
            policy_path=resolve(str(obj["policy_path"])),
            ledger_path=resolve(str(obj["ledger_path"])),
            host=str(obj.get("host", "127.0.0.1")),
            port=int(obj.get("port", 8080)),
            signing_key_env=str(obj.get("signing_key_env", "GUARDRAIL_SIGNING_KEY")),
            page_limit=int(obj.get("page_limit", 500)),
        )


class GatewayStartupError(Exception):
    pass


def _utc_now() -> datetime:
    return datetime.now(timezone.utc)


def build_engine(
    config: GatewayConfig, clock: Callable[[], datetime] = _utc_now
) -> MediationEngine:
    """Construct the engine or refuse loudly; never start half-open."""
    try:
        with open(config.policy_path, "r", encoding="utf-8") as fh:
            ps = parse_policy_file(fh.read())
    except OSError as exc:
        raise GatewayStartupError(f"cannot read policy: {exc}") from exc
    except PolicyParseError as exc:
        raise GatewayStartupError(f"policy does not parse: {exc}") from exc
    key_value = os.environ.get(config.signing_key_env, "")
    key = key_value.encode("utf-8") if key_value else None
    try:
        ledger = EvidenceLedger(config.ledger_path, signing_key=key, clock=clock)
        return MediationEngine(ps, ledger, clock, policy_source=config.policy_path)
    except (PolicyRejected, LedgerUnavailable, LedgerError, OSError) as exc:
        raise GatewayStartupError(f"refusing to start: {exc}") from exc


def _bad_request(detail: str) -> JSONResponse:
    return JSONResponse({"error": "BAD_REQUEST", "detail": detail}, status_code=400)


async def _read_json(request: Request) -> dict:
    raw = await request.body()
    try:
        obj = json.loads(raw, parse_float=Decimal)
    except json.JSONDecodeError as exc:
        raise ModelError(f"body is not valid JSON: {exc}") from exc
    if not isinstance(obj, dict):
        raise ModelError("body must be a JSON object")
    return obj


def create_app(engine: MediationEngine, config: GatewayConfig | None = None) -> FastAPI:
    @asynccontextmanager
    async def lifespan(app: FastAPI):
        yield
        engine.ledger.close()

    app = FastAPI(title="toolgate gateway", docs_url=None, redoc_url=None, lifespan=lifespan)
    app.add_middleware(
        CORSMiddleware,
        allow_origins=["*"],
        allow_methods=["*"],
        allow_headers=["*"],
    )
    app.state.engine = engine
    app.state.config = config
    page_limit = config.page_limit if config else 500

    @app.post("/v1/decide")
    async def decide(request: Request) -> Response:
        try:
            body = await _read_json(request)
            req = request_from_json(body, engine.ps.field_types)
        except ModelError as exc:
            return _bad_request(str(exc))
        try:
            result = engine.decide(req)
        except DuplicateRequest as exc:
            return JSONResponse(
                {"error": "DUPLICATE_REQUEST", "detail": str(exc)}, status_code=409
            )
        except StepOrderError as exc:
            return _bad_request(str(exc))
        except LedgerUnavailable as exc:
            return JSONResponse(
                {
                    "decision": "deny",
                    "reason": REASON_LEDGER_UNAVAILABLE,
                    "detail": str(exc),
                },
                status_code=503,
            )
        out: dict = {
            "decision": result.kind.value,
            "reason": result.reason,
            "decided_by": list(result.decided_by),
            "context_incomplete": result.context_incomplete,
            "evidence_seq": result.evidence_seq,
        }
        if result.ticket_id is not None:
            out["ticket_id"] = result.ticket_id
        if result.rewritten is not None:
            out["rewritten_request"] = request_to_json(result.rewritten)
        return JSONResponse(out)

    @app.post("/v1/outcome")
    async def outcome(request: Request) -> Response:
        try:
            body = await _read_json(request)
            request_id = str(body["request_id"])
            reported = str(body["outcome"])
        except (ModelError, KeyError) as exc:
            return _bad_request(f"missing or malformed field: {exc}")
        try:
            seq = engine.report_outcome(request_id, reported)
        except UnknownRequest as exc:
            return JSONResponse({"error": "UNKNOWN_REQUEST", "detail": str(exc)}, status_code=404)
        except OutcomeNotPermitted as exc:
            return JSONResponse(
                {"error": "OUTCOME_NOT_PERMITTED", "detail": str(exc)}, status_code=409
            )
        except LedgerUnavailable as exc:
            return JSONResponse(
                {"error": REASON_LEDGER_UNAVAILABLE, "detail": str(exc)}, status_code=503
            )
        return JSONResponse({"ack": True, "evidence_seq": seq})

    @app.get("/v1/escalations")
    async def escalations(status: str | None = None) -> Response:
        engine.expire_tickets()
        wanted: TicketStatus | None = None
        if status is not None:
            try:
                wanted = TicketStatus(status)
            except ValueError:
                return _bad_request(f"unknown status {status!r}")
        tickets = engine.tickets.list_tickets(wanted)
        return JSONResponse({"tickets": [t.to_json() for t in tickets]})

    @app.post("/v1/escalations/{ticket_id}/resolve")
    async def resolve(ticket_id: str, request: Request) -> Response:
        try:
            body = await _read_json(request)
            approver = OwnerRef(
                identity=str(body["approver_identity"]), role=str(body["approver_role"])
            )
            verdict = str(body["verdict"])
            reason = str(body.get("reason", ""))
        except (ModelError, KeyError) as exc:
            return _bad_request(f"missing or malformed field: {exc}")
        if verdict not in ("approved", "denied"):
            return _bad_request(f"verdict must be approved or denied, got {verdict!r}")
        try:
            ticket = engine.resolve_ticket(ticket_id, approver, verdict, reason)
        except TicketError as exc:
            status_code = {
                UNKNOWN_TICKET: 404,
                REFUSED_WRONG_ROLE: 403,
            }.get(exc.code, 409)
            return JSONResponse(
                {"error": exc.code, "detail": str(exc)}, status_code=status_code
            )
        except LedgerUnavailable as exc:
            return JSONResponse(
                {"error": REASON_LEDGER_UNAVAILABLE, "detail": str(exc)}, status_code=503
            )
        return JSONResponse({"status": ticket.status.value, "ticket": ticket.to_json()})

    @app.get("/v1/tickets/{ticket_id}")
    async def ticket_status(ticket_id: str) -> Response:
        engine.expire_tickets()
        ticket = engine.tickets.get(ticket_id)
        if ticket is None:
            return JSONResponse(
                {"error": UNKNOWN_TICKET, "detail": f"no ticket {ticket_id!r}"},
                status_code=404,
            )
        return JSONResponse(ticket.to_json())

    @app.get("/v1/ledger")
    async def ledger_page(from_seq: int = 0, limit: int | None = None) -> Response:
        if from_seq < 0:
            return _bad_request("from_seq must be >= 0")
        page = engine.ledger.records(from_seq)
        cap = min(limit, page_limit) if limit and limit > 0 else page_limit
        page = page[:cap]
        next_seq = page[-1]["seq"] + 1 if page else from_seq
        return JSONResponse(
            {"records": page, "next_seq": next_seq, "total": engine.ledger.next_seq}
        )

    @app.get("/v1/ledger/verify")
    async def ledger_verify() -> Response:
        return JSONResponse(engine.ledger.verify().to_json())

    @app.post("/v1/policies/validate")
    async def validate_policy(request: Request) -> Response:
        from .model import validate_policy_set

        try:
            body = await _read_json(request)
            text = str(body["policy"])
        except (ModelError, KeyError) as exc:
            return _bad_request(f"missing or malformed field: {exc}")
        try:
            ps = parse_policy_file(text)
        except PolicyParseError as exc:
            return JSONResponse(
                {
                    "ok": False,
                    "parse_errors": [
                        {"line": e.line, "col": e.col, "message": e.message}
                        for e in exc.errors
                    ],
                    "violations": [],
                }
            )
        report = validate_policy_set(ps)
        return JSONResponse(
            {
                "ok": report.ok,
                "parse_errors": [],
                "violations": [
                    {"tuple_id": v.tuple_id, "code": v.code, "message": v.message}
                    for v in report.violations
                ],
            }
        )

    @app.post("/v1/admin/reload")
    async def reload_policy() -> Response:
        if config is None:
            return _bad_request("gateway was built without a policy path; reload unavailable")
        try:
            with open(config.policy_path, "r", encoding="utf-8") as fh:
                ps = parse_policy_file(fh.read())
        except OSError as exc:
            return _bad_request(f"cannot read policy: {exc}")
        except PolicyParseError as exc:
            return _bad_request(f"policy does not parse: {exc}")
        try:
            new_hash = engine.reload_policy(ps, source=config.policy_path)
        except PolicyRejected as exc:
            return _bad_request(str(exc))
        except LedgerUnavailable as exc:
            return JSONResponse(
                {"error": REASON_LEDGER_UNAVAILABLE, "detail": str(exc)}, status_code=503
            )
        return JSONResponse({"policy_pack_hash": new_hash})

    return app


def serve(config: GatewayConfig) -> None:
    """Blocking server entry point; used by the CLI."""
    import uvicorn

    engine = build_engine(config)
    app = create_app(engine, config)
    uvicorn.run(app, host=config.host, port=config.port, log_level="info")
