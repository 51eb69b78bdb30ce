import type {
  DecisionBody,
  LedgerRecord,
  OutcomeBody,
  ResolutionBody,
  Ticket,
  VerifyReport,
} from './types.js';

export interface TraceEntry {
  seq: number;
  ts: string;
  kind: string;
  title: string;
  lines: string[];
  hash: string;
  prevHash: string;
}

export interface TicketTrace {
  ticketId: string;
  requestId: string;
  entries: TraceEntry[];
  warnings: string[];
}

function decisionEntry(record: LedgerRecord, body: DecisionBody): TraceEntry {
  const lines: string[] = [];
  lines.push(`final: ${body.final.kind} (${body.final.reason || 'no reason recorded'})`);
  lines.push(`decided by: ${body.final.decided_by.join(', ')}`);
  for (const m of body.matched) {
    const fired = m.triggered ? 'triggered' : 'not triggered';
    lines.push(
      `tuple ${m.tuple_id}: ${m.decision_kind}, ${fired}, owner ${m.owner.identity} (${m.owner.role})`
    );
  }
  if (body.context_incomplete) lines.push('context incomplete: required fields were missing');
  lines.push(`policy hash: ${body.policy_hash}`);
  return entry(record, 'decision', lines);
}

function resolutionEntry(record: LedgerRecord, body: ResolutionBody): TraceEntry {
  const lines: string[] = [];
  if (body.approver) {
    lines.push(`verdict: ${body.verdict} by ${body.approver.identity} (${body.approver.role})`);
  } else {
    lines.push(`verdict: ${body.verdict} (unattended)`);
  }
  if (body.reason) lines.push(`reason: ${body.reason}`);
  if (body.flag) lines.push(`flag: ${body.flag}`);
  return entry(record, 'resolution', lines);
}

function outcomeEntry(record: LedgerRecord, body: OutcomeBody): TraceEntry {
  return entry(record, 'outcome', [`tool call ${body.outcome}`]);
}

function entry(record: LedgerRecord, title: string, lines: string[]): TraceEntry {
  return {
    seq: record.seq,
    ts: record.ts,
    kind: record.kind,
    title,
    lines,
    hash: record.hash,
    prevHash: record.prev_hash,
  };
}

/**
 * Assemble the per-ticket evidence trail from a full ledger read plus the
 * chain verification report. Pure; callers fetch, this shapes.
 */
export function buildTrace(
  ticket: Ticket,
  records: LedgerRecord[],
  verify: VerifyReport
): TicketTrace {
  const requestId = ticket.request.request_id;
  const entries: TraceEntry[] = [];
  const warnings: string[] = [];
  let sawDecision = false;

  for (const record of records) {
    if (record.kind === 'decision') {
      const body = record.body as unknown as DecisionBody;
      if (body.request.request_id !== requestId) continue;
      sawDecision = true;
      entries.push(decisionEntry(record, body));
    } else if (record.kind === 'escalation_resolution') {
      const body = record.body as unknown as ResolutionBody;
      if (body.ticket_id !== ticket.ticket_id) continue;
      entries.push(resolutionEntry(record, body));
    } else if (record.kind === 'outcome') {
      const body = record.body as unknown as OutcomeBody;
      if (body.request_id !== requestId) continue;
      entries.push(outcomeEntry(record, body));
    }
  }
  entries.sort((a, b) => a.seq - b.seq);

  if (!verify.ok) {
    warnings.push(
      `ledger integrity check failed: ${verify.detail || 'chain broken'}` +
        (verify.first_broken_seq !== null ? ` (first broken seq ${verify.first_broken_seq})` : '')
    );
  }
  if (!sawDecision) {
    warnings.push(`no decision record found for request ${requestId}`);
  }

  return { ticketId: ticket.ticket_id, requestId, entries, warnings };
}

/** Evidence seq of the resolution record for a ticket, newest wins. */
export function findResolutionSeq(records: LedgerRecord[], ticketId: string): number | null {
  let seq: number | null = null;
  for (const record of records) {
    if (record.kind !== 'escalation_resolution') continue;
    if ((record.body as unknown as ResolutionBody).ticket_id !== ticketId) continue;
    seq = record.seq;
  }
  return seq;
}
