import type { Ticket } from './types.js';

export interface QueueRow {
  ticketId: string;
  requester: string;
  action: string;
  resource: string;
  amount: string | null;
  tupleId: string;
  approverRole: string;
  expiresAt: string;
  secondsLeft: number;
  expired: boolean;
}

export function secondsUntil(iso: string, now: Date): number {
  return Math.floor((new Date(iso).getTime() - now.getTime()) / 1000);
}

/** "2d 3h" / "1h 05m" / "4m 09s" / "42s" / "expired". */
export function formatCountdown(seconds: number): string {
  if (seconds <= 0) return 'expired';
  const d = Math.floor(seconds / 86400);
  const h = Math.floor((seconds % 86400) / 3600);
  const m = Math.floor((seconds % 3600) / 60);
  const s = seconds % 60;
  if (d > 0) return `${d}d ${h}h`;
  if (h > 0) return `${h}h ${String(m).padStart(2, '0')}m`;
  if (m > 0) return `${m}m ${String(s).padStart(2, '0')}s`;
  return `${s}s`;
}

function requesterLabel(ticket: Ticket): string {
  const p = ticket.request.principal;
  const chain = p.delegation_chain ?? [];
  if (chain.length === 0) return p.id;
  return `${p.id} via ${chain.join(', ')}`;
}

function amountLabel(ticket: Ticket): string | null {
  const raw = ticket.request.args['amount'];
  if (raw === undefined || raw === null) return null;
  return String(raw);
}

/** Project pending tickets into display rows, soonest expiry first. */
export function buildRows(tickets: Ticket[], now: Date): QueueRow[] {
  const rows = tickets.map((t) => {
    const left = secondsUntil(t.expires_at, now);
    return {
      ticketId: t.ticket_id,
      requester: requesterLabel(t),
      action: t.request.action,
      resource: t.request.resource,
      amount: amountLabel(t),
      tupleId: t.tuple_id,
      approverRole: t.approver_role,
      expiresAt: t.expires_at,
      secondsLeft: left,
      expired: left <= 0,
    };
  });
  rows.sort((a, b) => a.expiresAt.localeCompare(b.expiresAt) || a.ticketId.localeCompare(b.ticketId));
  return rows;
}
