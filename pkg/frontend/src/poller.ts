import { GatewayClient } from './client.js';
import { buildRows, type QueueRow } from './queue.js';

export interface PollState {
  rows: QueueRow[];
  banner: string | null;
  failures: number;
  lastSync: string | null;
}

export function initialPollState(): PollState {
  return { rows: [], banner: null, failures: 0, lastSync: null };
}

/**
 * One poll round. On success the queue is rebuilt and any outage banner is
 * cleared; on failure the stale rows are kept visible and the failure count
 * feeds the backoff.
 */
export async function pollOnce(
  client: GatewayClient,
  state: PollState,
  now: Date = new Date()
): Promise<PollState> {
  try {
    const tickets = await client.listPending();
    return {
      rows: buildRows(tickets, now),
      banner: null,
      failures: 0,
      lastSync: now.toISOString(),
    };
  } catch (err) {
    const failures = state.failures + 1;
    return {
      rows: state.rows,
      banner: `gateway unreachable, retrying (attempt ${failures}): ${
        err instanceof Error ? err.message : String(err)
      }`,
      failures,
      lastSync: state.lastSync,
    };
  }
}

const MAX_DELAY_MS = 60_000;

// plain interval while healthy, doubling per consecutive failure once down
export function nextDelayMs(pollSeconds: number, failures: number): number {
  const base = pollSeconds * 1000;
  if (failures === 0) return base;
  return Math.min(base * 2 ** Math.min(failures, 5), MAX_DELAY_MS);
}

export class QueuePoller {
  private timer: ReturnType<typeof setTimeout> | null = null;
  private stopped = false;
  state: PollState = initialPollState();

  constructor(
    private readonly client: GatewayClient,
    private readonly pollSeconds: number,
    private readonly onChange: (state: PollState) => void
  ) {}

  start(): void {
    this.stopped = false;
    void this.tick();
  }

  stop(): void {
    this.stopped = true;
    if (this.timer !== null) clearTimeout(this.timer);
    this.timer = null;
  }

  /** Run one round now (also used after a verdict to refresh immediately). */
  async tick(): Promise<void> {
    if (this.timer !== null) clearTimeout(this.timer);
    this.state = await pollOnce(this.client, this.state);
    this.onChange(this.state);
    if (this.stopped) return;
    this.timer = setTimeout(() => void this.tick(), nextDelayMs(this.pollSeconds, this.state.failures));
  }
}
