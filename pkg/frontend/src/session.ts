import type { Ticket } from './types.js';

export const DEFAULT_POLL_SECONDS = 2;

export interface ConsoleSession {
  approverIdentity: string;
  approverRole: string;
  gatewayUrl: string;
  pollSeconds: number;
}

export interface SessionInput {
  approverIdentity?: string;
  approverRole?: string;
  gatewayUrl?: string;
  pollSeconds?: string | number;
}

/** Validate raw form input; empty array means createSession will succeed. */
export function sessionProblems(input: SessionInput): string[] {
  const problems: string[] = [];
  if (!input.approverIdentity?.trim()) problems.push('approver identity is required');
  if (!input.approverRole?.trim()) problems.push('approver role is required');
  const url = input.gatewayUrl?.trim();
  if (!url) {
    problems.push('gateway URL is required');
  } else if (!/^https?:\/\//.test(url)) {
    problems.push('gateway URL must start with http:// or https://');
  }
  if (input.pollSeconds !== undefined && input.pollSeconds !== '') {
    const n = Number(input.pollSeconds);
    if (!Number.isFinite(n) || n <= 0) problems.push('poll interval must be a positive number of seconds');
  }
  return problems;
}

export function createSession(input: SessionInput): ConsoleSession {
  const problems = sessionProblems(input);
  if (problems.length > 0) {
    throw new Error(problems.join('; '));
  }
  const poll =
    input.pollSeconds === undefined || input.pollSeconds === ''
      ? DEFAULT_POLL_SECONDS
      : Number(input.pollSeconds);
  return {
    approverIdentity: input.approverIdentity!.trim(),
    approverRole: input.approverRole!.trim(),
    gatewayUrl: input.gatewayUrl!.trim().replace(/\/+$/, ''),
    pollSeconds: poll,
  };
}

// resolve buttons stay disabled until the session carries a role
export function canResolve(session: ConsoleSession | null): boolean {
  return session !== null && session.approverRole.length > 0;
}

/** Client-side precheck; the gateway enforces the same rule server-side. */
export function roleMatches(session: ConsoleSession, ticket: Ticket): boolean {
  return session.approverRole === ticket.approver_role;
}

/**
 * Console rule: a denial must say why. Approvals may omit the reason.
 * Returns an error message, or null when the verdict may be submitted.
 */
export function verdictProblem(verdict: 'approved' | 'denied', reason: string): string | null {
  if (verdict === 'denied' && reason.trim().length === 0) {
    return 'a reason is required to deny';
  }
  return null;
}
