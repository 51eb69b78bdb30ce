// Wire contracts for the gateway JSON API. Field names mirror the gateway
// exactly (snake_case) so responses can be used without mapping layers.

export type DecisionKind = 'allow' | 'deny' | 'escalate';

export type TicketStatus = 'pending' | 'approved' | 'denied' | 'expired';

export type RecordKind = 'decision' | 'outcome' | 'escalation_resolution' | 'policy_load';

export interface Principal {
  id: string;
  kind: string;
  delegation_chain: string[];
}

export interface RequestSnapshot {
  request_id: string;
  principal: Principal;
  action: string;
  resource: string;
  args: Record<string, unknown>;
  trajectory_id: string;
  step_index: number;
  timestamp: string;
}

export interface ApproverRef {
  identity: string;
  role: string;
}

export interface Ticket {
  ticket_id: string;
  request: RequestSnapshot;
  tuple_id: string;
  approver_role: string;
  on_timeout: 'allow' | 'deny';
  opened_at: string;
  expires_at: string;
  status: TicketStatus;
  resolved_at: string | null;
  approver: ApproverRef | null;
  reason: string;
}

export interface ResolveResult {
  status: TicketStatus;
  ticket: Ticket;
}

export interface LedgerRecord {
  seq: number;
  ts: string;
  kind: RecordKind;
  body: Record<string, unknown>;
  prev_hash: string;
  hash: string;
  sig?: string;
}

export interface LedgerPage {
  records: LedgerRecord[];
  next_seq: number;
  total: number;
}

export interface VerifyReport {
  ok: boolean;
  total: number;
  first_broken_seq: number | null;
  gaps: number[];
  signature_failures: number[];
  detail: string;
}

// Record bodies the trace viewer reads. Only the fields it renders are
// declared; everything else stays behind the index signature.

export interface MatchedTuple {
  tuple_id: string;
  triggered: boolean;
  context_incomplete: boolean;
  decision_kind: string;
  owner: ApproverRef;
}

export interface DecisionFinal {
  kind: DecisionKind;
  reason: string;
  decided_by: string[];
  ticket_id?: string;
  rewritten_args?: Record<string, unknown>;
}

export interface DecisionBody {
  request: RequestSnapshot;
  matched: MatchedTuple[];
  final: DecisionFinal;
  context_incomplete: boolean;
  policy_hash: string;
}

export interface OutcomeBody {
  request_id: string;
  trajectory_id: string;
  outcome: 'executed' | 'failed';
}

export interface ResolutionBody {
  ticket_id: string;
  request_id: string;
  trajectory_id: string;
  verdict: 'approved' | 'denied' | 'expired';
  approver: ApproverRef | null;
  reason: string;
  flag?: string;
}
