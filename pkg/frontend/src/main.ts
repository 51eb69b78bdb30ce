// DOM wiring. Everything testable lives in the other modules; this file only
// binds them to the page.

import { GatewayClient, GatewayError, classifyResolveError } from './client.js';
import { QueuePoller, type PollState } from './poller.js';
import { renderBanner, renderConfirmation, renderQueue, renderTrace } from './render.js';
import {
  createSession,
  sessionProblems,
  roleMatches,
  verdictProblem,
  type ConsoleSession,
} from './session.js';
import { buildTrace, findResolutionSeq } from './trace.js';

const $ = (id: string): HTMLElement => {
  const el = document.getElementById(id);
  if (!el) throw new Error(`missing element #${id}`);
  return el;
};

let session: ConsoleSession | null = null;
let client: GatewayClient | null = null;
let poller: QueuePoller | null = null;

function setBanner(message: string | null): void {
  $('banner-area').innerHTML = renderBanner(message);
}

function setNotice(html: string): void {
  $('notice-area').innerHTML = html;
}

function onPoll(state: PollState): void {
  setBanner(state.banner);
  if (session) {
    $('queue-area').innerHTML = renderQueue(state.rows, session.approverRole);
  }
  $('sync-label').textContent = state.lastSync ? `last sync ${state.lastSync}` : '';
}

async function submitVerdict(ticketId: string, verdict: 'approved' | 'denied'): Promise<void> {
  if (!session || !client || !poller) return;
  const ticket = poller.state.rows.find((r) => r.ticketId === ticketId);
  if (ticket && ticket.approverRole !== session.approverRole) {
    setBanner(`your role does not match; this ticket requires ${ticket.approverRole}`);
    return;
  }
  const promptText =
    verdict === 'denied' ? 'Reason for denial (required):' : 'Reason (optional):';
  const reason = window.prompt(promptText, '');
  if (reason === null) return; // cancelled
  const problem = verdictProblem(verdict, reason);
  if (problem) {
    setBanner(problem);
    return;
  }
  try {
    await client.resolve(ticketId, session, verdict, reason);
    const records = await client.allRecords();
    setNotice(renderConfirmation(ticketId, verdict, findResolutionSeq(records, ticketId)));
    setBanner(null);
  } catch (err) {
    const kind = classifyResolveError(err);
    if (kind === 'wrong_role' && err instanceof GatewayError) {
      // surfaced verbatim so the approver sees exactly what the gateway said
      setBanner(`${err.code}: ${err.message}`);
    } else if (kind === 'stale') {
      setNotice('<div class="confirm">Ticket was already resolved; refreshing.</div>');
    } else {
      setBanner(err instanceof Error ? err.message : String(err));
    }
  }
  await poller.tick();
}

async function showTrace(ticketId: string): Promise<void> {
  if (!client) return;
  try {
    const [ticket, records, verify] = await Promise.all([
      client.getTicket(ticketId),
      client.allRecords(),
      client.verify(),
    ]);
    $('trace-area').innerHTML = renderTrace(buildTrace(ticket, records, verify));
  } catch (err) {
    setBanner(err instanceof Error ? err.message : String(err));
  }
}

function startConsole(s: ConsoleSession): void {
  session = s;
  client = new GatewayClient(s.gatewayUrl);
  poller?.stop();
  poller = new QueuePoller(client, s.pollSeconds, onPoll);
  poller.start();
  $('session-form').classList.add('hidden');
  $('console-area').classList.remove('hidden');
  $('session-label').textContent = `${s.approverIdentity} (${s.approverRole}) @ ${s.gatewayUrl}`;
}

function readForm(): void {
  const input = {
    approverIdentity: ($('f-identity') as HTMLInputElement).value,
    approverRole: ($('f-role') as HTMLInputElement).value,
    gatewayUrl: ($('f-gateway') as HTMLInputElement).value,
    pollSeconds: ($('f-poll') as HTMLInputElement).value,
  };
  const problems = sessionProblems(input);
  if (problems.length > 0) {
    $('form-errors').textContent = problems.join('; ');
    return;
  }
  $('form-errors').textContent = '';
  startConsole(createSession(input));
}

document.addEventListener('DOMContentLoaded', () => {
  $('f-start').addEventListener('click', (ev) => {
    ev.preventDefault();
    readForm();
  });
  $('queue-area').addEventListener('click', (ev) => {
    const button = (ev.target as HTMLElement).closest('button');
    if (!button) return;
    const row = button.closest('tr');
    const ticketId = row?.dataset['ticket'];
    if (!ticketId) return;
    if (button.classList.contains('trace')) {
      void showTrace(ticketId);
    } else {
      const verdict = button.dataset['verdict'];
      if (verdict === 'approved' || verdict === 'denied') {
        void submitVerdict(ticketId, verdict);
      }
    }
  });
});
