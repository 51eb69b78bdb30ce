import type {
  LedgerPage,
  LedgerRecord,
  ResolveResult,
  Ticket,
  VerifyReport,
} from './types.js';
import type { ConsoleSession } from './session.js';

export type FetchLike = (url: string, init?: RequestInit) => Promise<Response>;

/**
 * Raised for every non-2xx gateway reply and for network failures.
 * `code` is the gateway's error code verbatim (REFUSED_WRONG_ROLE,
 * ALREADY_RESOLVED, ...) or UNREACHABLE when the request never landed.
 */
export class GatewayError extends Error {
  constructor(
    public readonly code: string,
    public readonly status: number,
    detail: string
  ) {
    super(detail);
    this.name = 'GatewayError';
  }
}

export class GatewayClient {
  private readonly base: string;
  private readonly fetchImpl: FetchLike;

  constructor(baseUrl: string, fetchImpl?: FetchLike) {
    this.base = baseUrl.replace(/\/+$/, '');
    this.fetchImpl = fetchImpl ?? ((url, init) => fetch(url, init));
  }

  private async request(path: string, init?: RequestInit): Promise<unknown> {
    let res: Response;
    try {
      res = await this.fetchImpl(`${this.base}${path}`, init);
    } catch (err) {
      throw new GatewayError('UNREACHABLE', 0, `gateway unreachable: ${String(err)}`);
    }
    let body: unknown = null;
    try {
      body = await res.json();
    } catch {
      // non-JSON reply; fall through with the status alone
    }
    if (!res.ok) {
      const obj = (body ?? {}) as { error?: string; detail?: string };
      throw new GatewayError(
        obj.error ?? `HTTP_${res.status}`,
        res.status,
        obj.detail ?? `gateway returned ${res.status}`
      );
    }
    return body;
  }

  async listPending(): Promise<Ticket[]> {
    const body = (await this.request('/v1/escalations?status=pending')) as {
      tickets: Ticket[];
    };
    return body.tickets;
  }

  async getTicket(ticketId: string): Promise<Ticket> {
    return (await this.request(`/v1/tickets/${encodeURIComponent(ticketId)}`)) as Ticket;
  }

  async resolve(
    ticketId: string,
    session: ConsoleSession,
    verdict: 'approved' | 'denied',
    reason: string
  ): Promise<ResolveResult> {
    const payload = {
      approver_identity: session.approverIdentity,
      approver_role: session.approverRole,
      verdict,
      reason,
    };
    return (await this.request(`/v1/escalations/${encodeURIComponent(ticketId)}/resolve`, {
      method: 'POST',
      headers: { 'Content-Type': 'application/json' },
      body: JSON.stringify(payload),
    })) as ResolveResult;
  }

  async ledgerPage(fromSeq = 0, limit?: number): Promise<LedgerPage> {
    const params = new URLSearchParams({ from_seq: String(fromSeq) });
    if (limit !== undefined) params.set('limit', String(limit));
    return (await this.request(`/v1/ledger?${params.toString()}`)) as LedgerPage;
  }

  /** Walk the paged endpoint until every record is in hand. */
  async allRecords(): Promise<LedgerRecord[]> {
    const out: LedgerRecord[] = [];
    let from = 0;
    for (;;) {
      const page = await this.ledgerPage(from);
      out.push(...page.records);
      if (page.records.length === 0 || page.next_seq >= page.total) {
        return out;
      }
      from = page.next_seq;
    }
  }

  async verify(): Promise<VerifyReport> {
    return (await this.request('/v1/ledger/verify')) as VerifyReport;
  }
}

export type ResolveFailure = 'wrong_role' | 'stale' | 'unreachable' | 'other';

// Maps a resolve error onto the console's recovery behavior: wrong_role gets
// a banner, stale rows are refreshed away on the next poll, unreachable
// retries with backoff.
export function classifyResolveError(err: unknown): ResolveFailure {
  if (!(err instanceof GatewayError)) return 'other';
  if (err.code === 'REFUSED_WRONG_ROLE') return 'wrong_role';
  if (err.code === 'ALREADY_RESOLVED' || err.code === 'UNKNOWN_TICKET') return 'stale';
  if (err.code === 'UNREACHABLE') return 'unreachable';
  return 'other';
}
