/** Session state for one browser tab: what the physician can see and do.
 *
 *  Invariants enforced here rather than in the DOM layer:
 *  - before discharge the only record content held is the chief complaint;
 *  - one send in flight at a time, later sends queue client-side;
 *  - the turn counter always reflects the server's count after a stream
 *    completes (the done event carries it).
 */

import type { Scorecard, SessionView, TurnView } from "./api.js";

export type Phase = "picker" | "chat" | "discharged";

export interface Bubble {
  role: "chief_physician" | "assistant";
  content: string;
  streaming: boolean;
  toolCall: boolean;
}

export class SessionStore {
  phase: Phase = "picker";
  sessionId: string | null = null;
  chiefComplaint = "";
  bubbles: Bubble[] = [];
  turnCount = 0;
  inFlight = false;
  /** messages typed while a reply was streaming; sent in order afterwards */
  queue: string[] = [];
  needsRetry = false;
  error: string | null = null;
  scorecard: Scorecard | null = null;

  startSession(view: SessionView): void {
    this.phase = "chat";
    this.sessionId = view.session_id;
    this.chiefComplaint = view.chief_complaint;
    this.bubbles = view.turns.map(bubbleFromTurn);
    this.turnCount = view.turn_count;
    this.inFlight = false;
    this.queue = [];
    this.needsRetry = view.pending_reply;
    this.error = null;
    this.scorecard = view.score ?? null;
    if (view.status === "discharged") this.phase = "discharged";
  }

  /** Returns the text to actually send now, or null if it must wait. */
  beginSend(text: string): string | null {
    const trimmed = text.trim();
    if (!trimmed || this.phase !== "chat") return null;
    if (this.inFlight) {
      this.queue.push(trimmed);
      return null;
    }
    this.inFlight = true;
    this.error = null;
    this.bubbles.push({ role: "chief_physician", content: trimmed, streaming: false, toolCall: false });
    this.bubbles.push({ role: "assistant", content: "", streaming: true, toolCall: false });
    return trimmed;
  }

  /** Retry the unanswered message: reopen a streaming bubble, send null text. */
  beginRetry(): boolean {
    if (this.phase !== "chat" || this.inFlight || !this.needsRetry) return false;
    this.inFlight = true;
    this.error = null;
    this.bubbles.push({ role: "assistant", content: "", streaming: true, toolCall: false });
    return true;
  }

  pushToken(token: string): void {
    const last = this.bubbles[this.bubbles.length - 1];
    if (last && last.streaming) last.content += token;
  }

  finishReply(turn: TurnView, turnCount: number): string | null {
    const last = this.bubbles[this.bubbles.length - 1];
    if (last && last.streaming) {
      last.content = turn.content;
      last.streaming = false;
    }
    this.turnCount = turnCount;
    this.inFlight = false;
    this.needsRetry = false;
    return this.queue.shift() ?? null;
  }

  /** Drop the partial bubble; the physician turn is retained server-side. */
  failReply(message: string): void {
    const last = this.bubbles[this.bubbles.length - 1];
    if (last && last.streaming) this.bubbles.pop();
    this.inFlight = false;
    this.needsRetry = true;
    this.error = message;
  }

  applyDischarge(score: Scorecard, turnCount: number): void {
    this.scorecard = score;
    this.turnCount = turnCount;
    this.phase = "discharged";
    this.inFlight = false;
    this.queue = [];
  }

  canSend(): boolean {
    return this.phase === "chat" && !this.inFlight && !this.needsRetry;
  }

  canDischarge(): boolean {
    return this.phase === "chat" && !this.inFlight && !this.needsRetry;
  }
}

function bubbleFromTurn(turn: TurnView): Bubble {
  return {
    role: turn.role,
    content: turn.content,
    streaming: false,
    toolCall: turn.is_tool_call,
  };
}
