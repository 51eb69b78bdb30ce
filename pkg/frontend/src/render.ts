import type { QueueRow } from './queue.js';
import { formatCountdown } from './queue.js';
import type { TicketTrace } from './trace.js';

export function escapeHtml(text: string): string {
  return text
    .replace(/&/g, '&amp;')
    .replace(/</g, '&lt;')
    .replace(/>/g, '&gt;')
    .replace(/"/g, '&quot;')
    .replace(/'/g, '&#39;');
}

export function renderBanner(message: string | null): string {
  if (!message) return '';
  return `<div class="banner">${escapeHtml(message)}</div>`;
}

export function renderEmptyQueue(): string {
  return '<div class="empty">No pending escalations.</div>';
}

/**
 * Queue table. Resolve buttons are rendered disabled when the session role
 * does not match the ticket's approver role; the gateway re-checks anyway.
 */
export function renderQueue(rows: QueueRow[], sessionRole: string): string {
  if (rows.length === 0) return renderEmptyQueue();
  const body = rows
    .map((row) => {
      const mismatch = row.approverRole !== sessionRole;
      const disabled = mismatch ? ' disabled' : '';
      const hint = mismatch ? ` title="requires role ${escapeHtml(row.approverRole)}"` : '';
      return `<tr data-ticket="${escapeHtml(row.ticketId)}">
  <td class="mono">${escapeHtml(row.ticketId)}</td>
  <td>${escapeHtml(row.requester)}</td>
  <td class="mono">${escapeHtml(row.action)}</td>
  <td class="mono">${escapeHtml(row.resource)}</td>
  <td class="num">${row.amount === null ? '' : escapeHtml(row.amount)}</td>
  <td class="mono">${escapeHtml(row.tupleId)}</td>
  <td class="countdown${row.expired ? ' expired' : ''}">${formatCountdown(row.secondsLeft)}</td>
  <td class="actions">
    <button class="approve" data-verdict="approved"${disabled}${hint}>Approve</button>
    <button class="deny" data-verdict="denied"${disabled}${hint}>Deny</button>
    <button class="trace" data-verdict="">Trace</button>
  </td>
</tr>`;
    })
    .join('\n');
  return `<table class="queue">
<thead><tr><th>Ticket</th><th>Requester</th><th>Action</th><th>Resource</th><th>Amount</th><th>Policy</th><th>Expires in</th><th></th></tr></thead>
<tbody>${body}</tbody>
</table>`;
}

export function renderConfirmation(ticketId: string, verdict: string, evidenceSeq: number | null): string {
  const seq = evidenceSeq === null ? 'not yet visible' : `#${evidenceSeq}`;
  return `<div class="confirm">Ticket ${escapeHtml(ticketId)} ${escapeHtml(verdict)}; resolution evidence seq ${escapeHtml(
    seq
  )}.</div>`;
}

export function renderTrace(trace: TicketTrace): string {
  const warnings = trace.warnings
    .map((w) => `<div class="warning">${escapeHtml(w)}</div>`)
    .join('');
  const entries = trace.entries
    .map(
      (e) => `<section class="entry">
<h3>#${e.seq} ${escapeHtml(e.title)} <time>${escapeHtml(e.ts)}</time></h3>
<ul>${e.lines.map((line) => `<li>${escapeHtml(line)}</li>`).join('')}</ul>
<div class="hashes mono">hash ${escapeHtml(e.hash)}<br>prev ${escapeHtml(e.prevHash)}</div>
</section>`
    )
    .join('\n');
  return `<div class="trace-view">
<h2>Trace for ${escapeHtml(trace.ticketId)} (request ${escapeHtml(trace.requestId)})</h2>
${warnings}
${entries || '<div class="empty">No ledger records for this request.</div>'}
</div>`;
}
