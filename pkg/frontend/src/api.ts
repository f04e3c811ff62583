// Thin typed client for the annotation service. The UI talks only to these
// JSON endpoints, never to raw run files.

import type {
  AnnotationSubmission,
  AnnotationTask,
  ParseAuditSubmission,
  RunProgress,
  SessionInfo,
} from "./types.js";

export class ApiError extends Error {
  constructor(
    public readonly status: number,
    public readonly detail: string,
  ) {
    super(`HTTP ${status}: ${detail}`);
  }
}

/** Network-level failure (server unreachable); submissions queue offline. */
export class OfflineError extends Error {}

type FetchLike = typeof fetch;

export class ApiClient {
  private token: string | null = null;

  constructor(
    private readonly baseUrl: string = "",
    private readonly fetchFn: FetchLike = (...args) => fetch(...args),
  ) {}

  setToken(token: string | null): void {
    this.token = token;
  }

  private async request<T>(path: string, init?: RequestInit): Promise<T> {
    let response: Response;
    try {
      response = await this.fetchFn(this.baseUrl + path, {
        ...init,
        headers: {
          "Content-Type": "application/json",
          ...(this.token ? { "X-Annotator-Token": this.token } : {}),
          ...(init?.headers ?? {}),
        },
      });
    } catch (err) {
      throw new OfflineError(String(err));
    }
    if (!response.ok) {
      let detail = response.statusText;
      try {
        const body = (await response.json()) as { detail?: unknown };
        if (body.detail !== undefined) detail = JSON.stringify(body.detail);
      } catch {
        // non-JSON error body; keep the status text
      }
      throw new ApiError(response.status, detail);
    }
    return (await response.json()) as T;
  }

  openSession(annotator: string): Promise<SessionInfo> {
    return this.request<SessionInfo>(
      `/session?annotator=${encodeURIComponent(annotator)}`,
    );
  }

  listTasks(
    runId: string,
    annotator: string,
    status?: "open" | "done",
  ): Promise<AnnotationTask[]> {
    const query = new URLSearchParams({ annotator });
    if (status) query.set("status", status);
    return this.request<AnnotationTask[]>(
      `/runs/${encodeURIComponent(runId)}/tasks?${query.toString()}`,
    );
  }

  submitAnnotation(
    runId: string,
    submission: AnnotationSubmission,
  ): Promise<AnnotationSubmission> {
    return this.request<AnnotationSubmission>(
      `/runs/${encodeURIComponent(runId)}/annotations`,
      { method: "POST", body: JSON.stringify(submission) },
    );
  }

  submitParseAudit(
    runId: string,
    submission: ParseAuditSubmission,
  ): Promise<ParseAuditSubmission> {
    return this.request<ParseAuditSubmission>(
      `/runs/${encodeURIComponent(runId)}/parse-audits`,
      { method: "POST", body: JSON.stringify(submission) },
    );
  }

  progress(runId: string): Promise<RunProgress> {
    return this.request<RunProgress>(
      `/runs/${encodeURIComponent(runId)}/progress`,
    );
  }
}
