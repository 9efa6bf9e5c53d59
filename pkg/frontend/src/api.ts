import type {
  FeedbackResponse,
  ReportResponse,
  SnapshotResponse,
  StartResponse,
} from "./types";

export class ApiError extends Error {
  constructor(
    public readonly status: number,
    message: string,
    public readonly body: unknown = null,
  ) {
    super(message);
  }
}

async function parseOrThrow<T>(response: Response): Promise<T> {
  let body: unknown = null;
  try {
    body = await response.json();
  } catch {
    // non-JSON error bodies fall through with a generic message
  }
  if (!response.ok) {
    const message =
      body && typeof body === "object" && "error" in body
        ? String((body as { error: unknown }).error)
        : `request failed with status ${response.status}`;
    throw new ApiError(response.status, message, body);
  }
  return body as T;
}

/** Thin typed client over the /v1 session endpoints. */
export class Client {
  constructor(private readonly baseUrl: string) {}

  startSession(
    constraints: Record<string, string>,
    seed?: number,
  ): Promise<StartResponse> {
    const payload: Record<string, unknown> = { constraints };
    if (seed !== undefined) payload.seed = seed;
    return this.post<StartResponse>("/v1/sessions", payload);
  }

  submitFeedback(
    sessionId: string,
    similarIds: string[],
  ): Promise<FeedbackResponse> {
    return this.post<FeedbackResponse>(
      `/v1/sessions/${encodeURIComponent(sessionId)}/feedback`,
      { similar_ids: similarIds },
    );
  }

  reportTarget(sessionId: string, imageId: string): Promise<ReportResponse> {
    return this.post<ReportResponse>(
      `/v1/sessions/${encodeURIComponent(sessionId)}/report`,
      { image_id: imageId },
    );
  }

  async snapshot(sessionId: string): Promise<SnapshotResponse> {
    const response = await fetch(
      `${this.baseUrl}/v1/sessions/${encodeURIComponent(sessionId)}`,
    );
    return parseOrThrow<SnapshotResponse>(response);
  }

  imageUrl(imageId: string): string {
    return `${this.baseUrl}/v1/images/${encodeURIComponent(imageId)}`;
  }

  private async post<T>(path: string, payload: unknown): Promise<T> {
    const response = await fetch(`${this.baseUrl}${path}`, {
      method: "POST",
      headers: { "content-type": "application/json" },
      body: JSON.stringify(payload),
    });
    return parseOrThrow<T>(response);
  }
}
