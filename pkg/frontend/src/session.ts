/** The judgment flow of one assessor: fetch the next strategy-chosen pair,
 * collect a grade, submit, repeat until the budget (or this assessor's
 * group budget) is exhausted.
 *
 * Failure handling:
 *  - transport failures retry forever with exponential backoff and a
 *    non-blocking banner; a grade captured before an outage is never lost,
 *    it is resubmitted when the server returns;
 *  - StaleAssignment (the lease expired and the pair went back to the
 *    pool) silently refetches a fresh assignment;
 *  - Exhausted / GroupBudgetExhausted flip the view into the completion
 *    state and disable input.
 *
 * Exactly one judgment is in flight at any time: grade() is a no-op unless
 * the phase is "grading", which also suppresses duplicate submissions from
 * key bounce or double clicks.
 */

import { ApiClient, ApiError, NetworkError } from "./api.js";
import { backoffDelay } from "./backoff.js";
import type { Assignment, NextItemResponse, Phase, SessionView } from "./types.js";

export interface ControllerOptions {
  sleep?: (ms: number) => Promise<void>;
  retryBaseMs?: number;
  retryCapMs?: number;
}

const COMPLETION_KINDS = new Set(["Exhausted", "GroupBudgetExhausted"]);

function defaultSleep(ms: number): Promise<void> {
  return new Promise((resolve) => setTimeout(resolve, ms));
}

export class SessionController {
  readonly view: SessionView;
  private readonly sleep: (ms: number) => Promise<void>;
  private readonly retryBaseMs: number;
  private readonly retryCapMs: number;
  private readonly listeners: Array<(view: SessionView) => void> = [];

  constructor(
    private readonly api: ApiClient,
    sessionId: string,
    assessorId: string,
    options: ControllerOptions = {},
  ) {
    this.sleep = options.sleep ?? defaultSleep;
    this.retryBaseMs = options.retryBaseMs ?? 500;
    this.retryCapMs = options.retryCapMs ?? 8000;
    this.view = {
      sessionId,
      assessorId,
      status: "active",
      judged: 0,
      budget: 0,
      assignment: null,
      curve: null,
      banner: null,
      phase: "loading",
    };
  }

  onChange(listener: (view: SessionView) => void): void {
    this.listeners.push(listener);
  }

  private update(changes: Partial<SessionView>): void {
    Object.assign(this.view, changes);
    for (const listener of this.listeners) listener(this.view);
  }

  /** Retry transport failures forever; service errors pass through. */
  private async withNetworkRetry<T>(operation: () => Promise<T>): Promise<T> {
    let attempt = 0;
    for (;;) {
      try {
        const result = await operation();
        if (this.view.banner !== null) this.update({ banner: null });
        return result;
      } catch (err) {
        if (!(err instanceof NetworkError)) throw err;
        this.update({ banner: "server unreachable, retrying" });
        await this.sleep(backoffDelay(attempt, this.retryBaseMs, this.retryCapMs));
        attempt += 1;
      }
    }
  }

  async start(): Promise<void> {
    const status = await this.withNetworkRetry(() =>
      this.api.getSession(this.view.sessionId),
    );
    this.update({
      status: status.status,
      judged: status.judged,
      budget: status.budget,
    });
    if (status.status !== "active") {
      await this.complete();
      return;
    }
    await this.fetchNext();
  }

  /** Accept a grade for the current assignment. Ignored unless a pair is
   * on screen and nothing is in flight. */
  grade(value: number): Promise<void> {
    const assignment = this.view.assignment;
    if (this.view.phase !== "grading" || assignment === null) {
      return Promise.resolve();
    }
    if (!assignment.grade_levels.includes(value)) {
      return Promise.resolve();
    }
    return this.submit(assignment, value);
  }

  async refreshStatus(): Promise<void> {
    let status;
    try {
      status = await this.api.getSession(this.view.sessionId);
    } catch {
      return; // polling is best-effort; the flow has its own retries
    }
    this.update({
      status: status.status,
      judged: status.judged,
      budget: status.budget,
    });
  }

  async refreshCurve(): Promise<void> {
    try {
      const curve = await this.api.calibration(this.view.sessionId);
      this.update({ curve });
    } catch {
      // keep the previous curve; the next poll will try again
    }
  }

  private adopt(item: NextItemResponse): void {
    const assignment: Assignment = {
      topic_id: item.topic_id,
      doc_id: item.doc_id,
      topic_title: item.topic_title,
      topic_description: item.topic_description,
      document_text: item.document_text,
      grade_levels: item.grade_levels,
      lease_expires_at: item.lease_expires_at,
    };
    this.update({
      assignment,
      judged: item.judged,
      budget: item.budget,
      phase: "grading" as Phase,
    });
  }

  private async fetchNext(): Promise<void> {
    this.update({ phase: "loading", assignment: null });
    let item: NextItemResponse;
    try {
      item = await this.withNetworkRetry(() =>
        this.api.nextItem(this.view.sessionId, this.view.assessorId),
      );
    } catch (err) {
      if (err instanceof ApiError && COMPLETION_KINDS.has(err.kind)) {
        await this.complete();
        return;
      }
      if (err instanceof ApiError) {
        this.update({ banner: `${err.kind}: ${err.message}` });
        return;
      }
      throw err;
    }
    this.adopt(item);
  }

  private async submit(assignment: Assignment, grade: number): Promise<void> {
    this.update({ phase: "submitting" });
    try {
      const reply = await this.withNetworkRetry(() =>
        this.api.submitJudgment(
          this.view.sessionId,
          this.view.assessorId,
          assignment.topic_id,
          assignment.doc_id,
          grade,
        ),
      );
      this.update({
        status: reply.status,
        judged: reply.judged,
        budget: reply.budget,
      });
      await this.fetchNext();
    } catch (err) {
      if (err instanceof ApiError && err.kind === "StaleAssignment") {
        await this.fetchNext(); // the pair went back to the pool; no banner
        return;
      }
      if (err instanceof ApiError && COMPLETION_KINDS.has(err.kind)) {
        await this.complete();
        return;
      }
      if (err instanceof ApiError) {
        this.update({ phase: "grading", banner: `${err.kind}: ${err.message}` });
        return;
      }
      throw err;
    }
  }

  private async complete(): Promise<void> {
    try {
      const status = await this.api.getSession(this.view.sessionId);
      this.update({
        status: status.status,
        judged: status.judged,
        budget: status.budget,
      });
    } catch {
      // completion still renders with the counters we already have
    }
    this.update({ phase: "complete", assignment: null });
  }
}
