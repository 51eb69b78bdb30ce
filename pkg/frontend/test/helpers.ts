import type { LedgerRecord, Ticket } from '../src/types.js';
import type { ConsoleSession } from '../src/session.js';
import type { FetchLike } from '../src/client.js';

export function makeTicket(overrides: Partial<Ticket> = {}): Ticket {
  return {
    ticket_id: 'tkt-po-9',
    request: {
      request_id: 'po-9',
      principal: { id: 'buyer-agent', kind: 'agent', delegation_chain: ['user:orders-lead'] },
      action: 'create_purchase_order',
      resource: 'db:orders',
      args: { amount: '5001.0000', vendor_id: 'V-001' },
      trajectory_id: 'run-1',
      step_index: 0,
      timestamp: '2025-07-02T09:00:00.000000Z',
    },
    tuple_id: 'po-threshold',
    approver_role: 'procurement_manager',
    on_timeout: 'deny',
    opened_at: '2025-07-02T09:00:01.000000Z',
    expires_at: '2025-07-03T09:00:01.000000Z',
    status: 'pending',
    resolved_at: null,
    approver: null,
    reason: '',
  ...overrides,
  };
}

export const SESSION: ConsoleSession = {
  approverIdentity: 'pm@example.test',
  approverRole: 'procurement_manager',
  gatewayUrl: 'http://gw.test',
  pollSeconds: 2,
};

export function record(
  seq: number,
  kind: LedgerRecord['kind'],
  body: Record<string, unknown>
): LedgerRecord {
  return {
    seq,
    ts: `2025-07-02T09:00:0${seq}.000000Z`,
    kind,
    body,
    prev_hash: seq === 0 ? '0'.repeat(64) : `h${seq - 1}`.padEnd(64, 'x'),
    hash: `h${seq}`.padEnd(64, 'x'),
  };
}

interface CannedReply {
  status: number;
  body: unknown;
}

/** fetch stub: exact-path table plus a call log for payload assertions. */
export function fakeFetch(routes: Record<string, CannedReply | CannedReply[]>): {
  fetchImpl: FetchLike;
  calls: { url: string; init?: RequestInit }[];
} {
  const calls: { url: string; init?: RequestInit }[] = [];
  const remaining = new Map<string, CannedReply[]>();
  for (const [key, value] of Object.entries(routes)) {
    remaining.set(key, Array.isArray(value) ? [...value] : [value]);
  }
  const fetchImpl: FetchLike = async (url, init) => {
    calls.push({ url, init });
    const path = url.replace(/^https?:\/\/[^/]+/, '');
    const queue = remaining.get(path);
    const reply = queue?.length === 1 ? queue[0] : queue?.shift();
    if (!reply) throw new TypeError(`no route for ${path}`);
    return new Response(JSON.stringify(reply.body), {
      status: reply.status,
      headers: { 'Content-Type': 'application/json' },
    });
  };
  return { fetchImpl, calls };
}
