import { expect, test } from 'vitest';

import { buildRows } from '../src/queue.js';
import { escapeHtml, renderBanner, renderConfirmation, renderQueue, renderTrace } from '../src/render.js';
import { buildTrace } from '../src/trace.js';
import { makeTicket, record } from './helpers.js';

const NOW = new Date('2025-07-02T09:00:01.000Z');

test('escapeHtml neutralizes markup from ticket fields', () => {
  expect(escapeHtml('<img src=x onerror=alert(1)>')).toBe('&lt;img src=x onerror=alert(1)&gt;');
  expect(escapeHtml(`a"b'c&d`)).toBe('a&quot;b&#39;c&amp;d');
});

test('queue rows carry requester, action, amount, policy id and countdown', () => {
  const html = renderQueue(buildRows([makeTicket()], NOW), 'procurement_manager');
  expect(html).toContain('tkt-po-9');
  expect(html).toContain('buyer-agent via user:orders-lead');
  expect(html).toContain('create_purchase_order');
  expect(html).toContain('5001.0000');
  expect(html).toContain('po-threshold');
  expect(html).toContain('1d 0h');
  expect(html).not.toContain('disabled');
});

test('role mismatch disables the verdict buttons with a hint', () => {
  const html = renderQueue(buildRows([makeTicket()], NOW), 'auditor');
  expect(html).toContain('disabled');
  expect(html).toContain('requires role procurement_manager');
});

test('empty queue renders the empty state', () => {
  expect(renderQueue([], 'any')).toContain('No pending escalations');
});

test('banner renders only when there is a message', () => {
  expect(renderBanner(null)).toBe('');
  expect(renderBanner('REFUSED_WRONG_ROLE: wrong role')).toContain('REFUSED_WRONG_ROLE');
});

test('confirmation shows the resolution evidence seq', () => {
  expect(renderConfirmation('tkt-po-9', 'approved', 7)).toContain('#7');
  expect(renderConfirmation('tkt-po-9', 'approved', null)).toContain('not yet visible');
});

test('trace view includes chain hashes and warnings', () => {
  const ticket = makeTicket();
  const decision = record(1, 'decision', {
    request: ticket.request,
    matched: [],
    final: { kind: 'escalate', reason: 'r', decided_by: ['po-threshold'] },
    context_incomplete: false,
    policy_hash: 'p',
  });
  const trace = buildTrace(ticket, [decision], {
    ok: false,
    total: 2,
    first_broken_seq: 1,
    gaps: [],
    signature_failures: [],
    detail: 'hash mismatch at seq 1',
  });
  const html = renderTrace(trace);
  expect(html).toContain('class="warning"');
  expect(html).toContain('hash mismatch at seq 1');
  expect(html).toContain(decision.hash);
  expect(html).toContain(decision.prev_hash);
});
