/**
 * Typed client for the judgment-service wire protocol (v1).
 *
 * All state lives on the server; this client only shuttles JSON. A 409
 * response surfaces as a ConflictError carrying the server's cursor so
 * callers can resync.
 */

export interface SessionInfo {
  session_id: string;
  subject_id: string;
  cursor: number;
  total: number;
  completed: boolean;
}

export interface NextPair {
  completed: boolean;
  cursor: number;
  total: number;
  reference_id?: string;
  reference_image?: string;
  left?: string;
  right?: string;
}

export interface JudgmentAck {
  cursor: number;
  total: number;
  completed: boolean;
}

export interface PlanInfo {
  total: number;
  criterion: string;
  budget: number;
  protocol: string;
}

export class ConflictError extends Error {
  readonly serverCursor: number | null;

  constructor(message: string, serverCursor: number | null) {
    super(message);
    this.name = "ConflictError";
    this.serverCursor = serverCursor;
  }
}

export class ServiceError extends Error {
  readonly status: number;

  constructor(message: string, status: number) {
    super(message);
    this.name = "ServiceError";
    this.status = status;
  }
}

async function parseError(response: Response): Promise<never> {
  let message = `HTTP ${response.status}`;
  let cursor: number | null = null;
  try {
    const body = (await response.json()) as { error?: string; cursor?: number };
    if (body.error) message = body.error;
    if (typeof body.cursor === "number") cursor = body.cursor;
  } catch {
    /* non-JSON error body: keep the status text */
  }
  if (response.status === 409) throw new ConflictError(message, cursor);
  throw new ServiceError(message, response.status);
}

export class ProtocolClient {
  constructor(private readonly baseUrl: string = "") {}

  private url(path: string): string {
    return `${this.baseUrl}/api/v1${path}`;
  }

  async createSession(
    subjectId: string,
    seed?: number,
    sessionId?: string,
  ): Promise<SessionInfo> {
    const body: Record<string, unknown> = { subject_id: subjectId };
    if (seed !== undefined) body.seed = seed;
    if (sessionId !== undefined) body.session_id = sessionId;
    const response = await fetch(this.url("/sessions"), {
      method: "POST",
      headers: { "Content-Type": "application/json" },
      body: JSON.stringify(body),
    });
    if (!response.ok) await parseError(response);
    return (await response.json()) as SessionInfo;
  }

  async nextPair(sessionId: string): Promise<NextPair> {
    const response = await fetch(this.url(`/sessions/${sessionId}/next`));
    if (!response.ok) await parseError(response);
    return (await response.json()) as NextPair;
  }

  async submitJudgment(
    sessionId: string,
    referenceId: string,
    images: [string, string],
    chosen: string,
    cursor: number,
  ): Promise<JudgmentAck> {
    const response = await fetch(this.url(`/sessions/${sessionId}/judgments`), {
      method: "POST",
      headers: { "Content-Type": "application/json" },
      body: JSON.stringify({
        reference_id: referenceId,
        images,
        chosen,
        cursor,
      }),
    });
    if (!response.ok) await parseError(response);
    return (await response.json()) as JudgmentAck;
  }

  async progress(sessionId: string): Promise<SessionInfo> {
    const response = await fetch(this.url(`/sessions/${sessionId}/progress`));
    if (!response.ok) await parseError(response);
    return (await response.json()) as SessionInfo;
  }

  async plan(): Promise<PlanInfo> {
    const response = await fetch(this.url("/plan"));
    if (!response.ok) await parseError(response);
    return (await response.json()) as PlanInfo;
  }

  async exportCsv(): Promise<string> {
    const response = await fetch(this.url("/export"));
    if (!response.ok) await parseError(response);
    return await response.text();
  }

  imageUrl(imageId: string): string {
    return `${this.baseUrl}/images/${imageId}`;
  }
}
