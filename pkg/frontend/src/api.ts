/** Typed client for the session service. Streaming replies arrive over a
 *  POSTed fetch whose body is a text/event-stream (EventSource cannot POST). */

import { SseParser } from "./sse.js";

export interface RecordSummary {
  record_id: string;
  chief_complaint: string;
}

export interface TurnView {
  index: number;
  role: "chief_physician" | "assistant";
  content: string;
  is_tool_call: boolean;
}

export interface MetricValue {
  value: number;
  exact: string;
}

export interface MetricBlock {
  jaccard: MetricValue;
  precision: MetricValue;
  recall: MetricValue;
  f1: MetricValue;
  hallucinations: number;
}

export interface Scorecard {
  diagnosis: string;
  predicted_codes: string[];
  category: MetricBlock;
  chapter: MetricBlock;
  matched_categories: string[];
  missed_categories: string[];
  matched_chapters: string[];
  missed_chapters: string[];
  hallucinated_codes: string[];
  gold_codes: string[];
  gold_diagnosis: string;
}

export interface SessionView {
  session_id: string;
  record_id: string;
  case: string;
  status: string;
  chief_complaint: string;
  turn_count: number;
  turns: TurnView[];
  pending_reply: boolean;
  score?: Scorecard;
}

export interface DischargeResult {
  session_id: string;
  status: string;
  turn_count: number;
  score: Scorecard;
}

export interface StreamHandlers {
  onToken(token: string): void;
  onDone(turn: TurnView, turnCount: number): void;
  onError(message: string): void;
}

export class ApiError extends Error {
  constructor(message: string, readonly status: number) {
    super(message);
  }
}

async function jsonOrThrow<T>(resp: Response): Promise<T> {
  if (!resp.ok) {
    let detail = resp.statusText;
    try {
      const body = await resp.json();
      if (body && typeof body.detail === "string") detail = body.detail;
    } catch {
      /* keep statusText */
    }
    throw new ApiError(detail, resp.status);
  }
  return (await resp.json()) as T;
}

export class ApiClient {
  constructor(private readonly baseUrl: string = "") {}

  private url(path: string): string {
    return this.baseUrl + path;
  }

  listRecords(): Promise<RecordSummary[]> {
    return fetch(this.url("/records")).then((r) => jsonOrThrow<RecordSummary[]>(r));
  }

  createSession(recordId: string): Promise<SessionView> {
    return fetch(this.url("/sessions"), {
      method: "POST",
      headers: { "content-type": "application/json" },
      body: JSON.stringify({ record_id: recordId, case: "human_in_loop" }),
    }).then((r) => jsonOrThrow<SessionView>(r));
  }

  getSession(sessionId: string): Promise<SessionView> {
    return fetch(this.url(`/sessions/${sessionId}`)).then((r) => jsonOrThrow<SessionView>(r));
  }

  /** Send a message (or retry the unanswered one with null) and stream the reply. */
  async sendMessage(sessionId: string, text: string | null, handlers: StreamHandlers): Promise<void> {
    let resp: Response;
    try {
      resp = await fetch(this.url(`/sessions/${sessionId}/message`), {
        method: "POST",
        headers: { "content-type": "application/json" },
        body: JSON.stringify({ text }),
      });
    } catch (err) {
      handlers.onError(err instanceof Error ? err.message : String(err));
      return;
    }
    if (!resp.ok || !resp.body) {
      let detail = resp.statusText;
      try {
        const body = await resp.json();
        if (body && typeof body.detail === "string") detail = body.detail;
      } catch {
        /* keep statusText */
      }
      handlers.onError(detail);
      return;
    }
    const reader = resp.body.getReader();
    const decoder = new TextDecoder();
    const parser = new SseParser();
    let finished = false;
    try {
      for (;;) {
        const { done, value } = await reader.read();
        if (done) break;
        for (const event of parser.push(decoder.decode(value, { stream: true }))) {
          if (event.event === "token") {
            handlers.onToken(JSON.parse(event.data) as string);
          } else if (event.event === "done") {
            const payload = JSON.parse(event.data) as { turn: TurnView; turn_count: number };
            finished = true;
            handlers.onDone(payload.turn, payload.turn_count);
          } else if (event.event === "error") {
            finished = true;
            handlers.onError(JSON.parse(event.data) as string);
          }
        }
      }
      if (!finished) handlers.onError("stream ended unexpectedly");
    } catch (err) {
      if (!finished) handlers.onError(err instanceof Error ? err.message : String(err));
    }
  }

  submitDischarge(sessionId: string, diagnosis: string, codes: string): Promise<DischargeResult> {
    return fetch(this.url(`/sessions/${sessionId}/discharge`), {
      method: "POST",
      headers: { "content-type": "application/json" },
      body: JSON.stringify({ diagnosis, codes }),
    }).then((r) => jsonOrThrow<DischargeResult>(r));
  }
}
