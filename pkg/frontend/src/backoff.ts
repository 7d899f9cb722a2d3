/** Deterministic exponential backoff (no jitter: a single assessor's
 * retries cannot stampede anything, and determinism keeps tests exact). */
export function backoffDelay(attempt: number, baseMs = 500, capMs = 8000): number {
  return Math.min(capMs, baseMs * 2 ** Math.min(attempt, 16));
}
