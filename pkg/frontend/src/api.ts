/** Thin typed client over the annotation service's HTTP endpoints.
 *
 * Service-level failures arrive as JSON bodies {error, detail} and are
 * rethrown as ApiError with the server's error name as `kind`; transport
 * failures (server down, DNS, aborted) become NetworkError so callers can
 * retry them without inspecting messages.
 */

import type {
  CalibrationData,
  FinalizeResponse,
  NextItemResponse,
  SessionStatus,
  SubmitResponse,
} from "./types.js";

export interface ApiConfig {
  baseUrl: string;
  token?: string;
  fetchFn?: typeof fetch;
}

export class ApiError extends Error {
  constructor(
    readonly kind: string,
    readonly status: number,
    detail: string,
  ) {
    super(detail);
    this.name = "ApiError";
  }
}

export class NetworkError extends Error {
  constructor(detail: string) {
    super(detail);
    this.name = "NetworkError";
  }
}

interface ErrorBody {
  error?: string;
  detail?: string;
}

export class ApiClient {
  private readonly baseUrl: string;
  private readonly token?: string;
  private readonly fetchFn: typeof fetch;

  constructor(config: ApiConfig) {
    this.baseUrl = config.baseUrl.replace(/\/$/, "");
    this.token = config.token;
    this.fetchFn = config.fetchFn ?? fetch.bind(globalThis);
  }

  private headers(hasBody: boolean): Record<string, string> {
    const out: Record<string, string> = {};
    if (hasBody) out["Content-Type"] = "application/json";
    if (this.token !== undefined) out["Authorization"] = `Bearer ${this.token}`;
    return out;
  }

  private async raw(method: string, path: string, body?: unknown): Promise<Response> {
    let response: Response;
    try {
      response = await this.fetchFn(this.baseUrl + path, {
        method,
        headers: this.headers(body !== undefined),
        body: body === undefined ? undefined : JSON.stringify(body),
      });
    } catch (err) {
      throw new NetworkError(String(err));
    }
    if (!response.ok) {
      let kind = `http_${response.status}`;
      let detail = response.statusText;
      try {
        const data = (await response.json()) as ErrorBody;
        if (data.error !== undefined) kind = data.error;
        if (data.detail !== undefined) detail = data.detail;
      } catch {
        // non-JSON error body; keep the status-derived kind
      }
      throw new ApiError(kind, response.status, detail);
    }
    return response;
  }

  private async request<T>(method: string, path: string, body?: unknown): Promise<T> {
    const response = await this.raw(method, path, body);
    return (await response.json()) as T;
  }

  getSession(sessionId: string): Promise<SessionStatus> {
    return this.request("GET", `/sessions/${encodeURIComponent(sessionId)}`);
  }

  nextItem(sessionId: string, assessorId: string): Promise<NextItemResponse> {
    const q = encodeURIComponent(assessorId);
    return this.request(
      "GET",
      `/sessions/${encodeURIComponent(sessionId)}/next?assessor=${q}`,
    );
  }

  submitJudgment(
    sessionId: string,
    assessorId: string,
    topicId: string,
    docId: string,
    grade: number,
  ): Promise<SubmitResponse> {
    return this.request(
      "POST",
      `/sessions/${encodeURIComponent(sessionId)}/judgments`,
      { assessor: assessorId, topic_id: topicId, doc_id: docId, grade },
    );
  }

  finalize(sessionId: string, force = false): Promise<FinalizeResponse> {
    return this.request(
      "POST",
      `/sessions/${encodeURIComponent(sessionId)}/finalize`,
      force ? { force } : {},
    );
  }

  async exportText(sessionId: string): Promise<string> {
    const response = await this.raw(
      "GET",
      `/sessions/${encodeURIComponent(sessionId)}/export`,
    );
    return response.text();
  }

  calibration(sessionId: string): Promise<CalibrationData> {
    return this.request(
      "GET",
      `/sessions/${encodeURIComponent(sessionId)}/calibration`,
    );
  }
}
