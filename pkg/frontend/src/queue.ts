// Task-queue state machine: serves one unit-verdict task at a time, submits
// optimistically, and keeps a retry queue for submissions made while the
// server is unreachable. All state is reconstructible from the server: a
// refresh reloads open tasks and continues where the annotator left off.

import { ApiError, OfflineError } from "./api.js";
import type {
  AnnotationSubmission,
  AnnotationTask,
  AnnotatorRef,
} from "./types.js";

export interface SubmitResult {
  ok: boolean;
  /** verdict stored locally and will be retried; the queue advanced */
  queuedOffline?: boolean;
  /** server rejected the submission; the task stays current */
  error?: string;
  /** the task list was refreshed because the server said ours was stale */
  refreshed?: boolean;
}

export interface QueueStats {
  total: number;
  submitted: number;
  pendingOffline: number;
  remaining: number;
}

interface QueueApi {
  listTasks(
    runId: string,
    annotator: string,
    status?: "open" | "done",
  ): Promise<AnnotationTask[]>;
  submitAnnotation(
    runId: string,
    submission: AnnotationSubmission,
  ): Promise<AnnotationSubmission>;
}

export class TaskQueue {
  private tasks: AnnotationTask[] = [];
  private index = 0;
  private submitted = 0;
  private pending: AnnotationSubmission[] = [];
  readonly failures: string[] = [];

  constructor(
    private readonly api: QueueApi,
    private readonly runId: string,
    private readonly annotator: AnnotatorRef,
  ) {}

  async load(): Promise<void> {
    this.tasks = await this.api.listTasks(this.runId, this.annotator.name, "open");
    this.index = 0;
  }

  current(): AnnotationTask | null {
    return this.index < this.tasks.length ? this.tasks[this.index] : null;
  }

  done(): boolean {
    return this.index >= this.tasks.length;
  }

  stats(): QueueStats {
    return {
      total: this.tasks.length,
      submitted: this.submitted,
      pendingOffline: this.pending.length,
      remaining: this.tasks.length - this.index,
    };
  }

  async submit(verdict: boolean, note?: string): Promise<SubmitResult> {
    const task = this.current();
    if (!task) return { ok: false, error: "no task open" };
    const submission: AnnotationSubmission = {
      annotator: this.annotator,
      cf_id: task.cf_id,
      unit_id: task.unit_id,
      target: task.target,
      verdict,
      note: note || null,
    };
    try {
      await this.api.submitAnnotation(this.runId, submission);
    } catch (err) {
      if (err instanceof OfflineError) {
        // keep the verdict; it syncs on the next flush
        this.pending.push(submission);
        this.index += 1;
        return { ok: true, queuedOffline: true };
      }
      if (err instanceof ApiError && err.status === 409) {
        await this.load();
        return { ok: false, refreshed: true, error: err.detail };
      }
      const detail = err instanceof ApiError ? err.detail : String(err);
      return { ok: false, error: detail };
    }
    this.submitted += 1;
    this.index += 1;
    await this.flushPending();
    return { ok: true };
  }

  /** Retry queued offline submissions in order; stops at the first network
   * failure, drops (and records) ones the server rejects outright. */
  async flushPending(): Promise<number> {
    let flushed = 0;
    while (this.pending.length > 0) {
      const next = this.pending[0];
      try {
        await this.api.submitAnnotation(this.runId, next);
      } catch (err) {
        if (err instanceof OfflineError) return flushed;
        this.failures.push(
          `${next.unit_id}/${next.target}: ${err instanceof ApiError ? err.detail : err}`,
        );
        this.pending.shift();
        continue;
      }
      this.pending.shift();
      this.submitted += 1;
      flushed += 1;
    }
    return flushed;
  }
}
