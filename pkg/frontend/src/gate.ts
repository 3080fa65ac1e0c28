/** Debounced latest-wins request scheduling.
 *
 * Controls fire on every input event; the scheduler coalesces bursts
 * with a trailing debounce and stamps each dispatched request with a
 * sequence number. A response is applied only while its number is
 * still the newest, so a slow render can never overwrite the result
 * of a later adjustment.
 */

export interface Gate {
  issue: () => number;
  isCurrent: (token: number) => boolean;
}

export function createGate(): Gate {
  let current = 0;
  return {
    issue: () => ++current,
    isCurrent: (token) => token === current,
  };
}

export class LatestWins<Q, R> {
  private gate = createGate();
  private timer: ReturnType<typeof setTimeout> | undefined;
  private pending: Q | undefined;

  constructor(
    private send: (request: Q) => Promise<R>,
    private apply: (response: R) => void,
    private onError: (error: unknown) => void,
    readonly waitMs = 100,
  ) {}

  /** Queue a request; bursts within waitMs collapse to the last one. */
  request(request: Q): void {
    this.pending = request;
    if (this.timer !== undefined) clearTimeout(this.timer);
    this.timer = setTimeout(() => this.fire(), this.waitMs);
  }

  /** Dispatch immediately, bypassing the debounce (initial load). */
  requestNow(request: Q): void {
    this.pending = request;
    if (this.timer !== undefined) clearTimeout(this.timer);
    this.timer = undefined;
    this.fire();
  }

  private fire(): void {
    this.timer = undefined;
    const request = this.pending as Q;
    this.pending = undefined;
    const token = this.gate.issue();
    this.send(request).then(
      (response) => {
        if (this.gate.isCurrent(token)) this.apply(response);
      },
      (error) => {
        if (this.gate.isCurrent(token)) this.onError(error);
      },
    );
  }
}
