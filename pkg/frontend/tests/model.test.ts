import { describe, expect, it } from "vitest";

import type { Scorecard, SessionView, TurnView } from "../src/api.js";
import { SessionStore } from "../src/model.js";

export function sessionView(extra: Partial<SessionView> = {}): SessionView {
  return {
    session_id: "s1",
    record_id: "r1",
    case: "human_in_loop",
    status: "open",
    chief_complaint: "Chest pain",
    turn_count: 0,
    turns: [],
    pending_reply: false,
    ...extra,
  };
}

function assistantTurn(index: number, content: string): TurnView {
  return { index, role: "assistant", content, is_tool_call: false };
}

export function perfectScore(): Scorecard {
  const block = {
    jaccard: { value: 1, exact: "1/1" },
    precision: { value: 1, exact: "1/1" },
    recall: { value: 1, exact: "1/1" },
    f1: { value: 1, exact: "1/1" },
    hallucinations: 0,
  };
  return {
    diagnosis: "Hyperlipidemia",
    predicted_codes: ["E785"],
    category: block,
    chapter: { ...block },
    matched_categories: ["E78"],
    missed_categories: [],
    matched_chapters: ["E00-E89"],
    missed_chapters: [],
    hallucinated_codes: [],
    gold_codes: ["E785"],
    gold_diagnosis: "1. Hyperlipidemia, unspecified",
  };
}

describe("SessionStore", () => {
  it("starts a session holding only the chief complaint", () => {
    const store = new SessionStore();
    store.startSession(sessionView());
    expect(store.phase).toBe("chat");
    expect(store.chiefComplaint).toBe("Chest pain");
    expect(store.bubbles).toEqual([]);
    expect(store.turnCount).toBe(0);
    expect(store.scorecard).toBeNull();
  });

  it("queues a second send while one is in flight", () => {
    const store = new SessionStore();
    store.startSession(sessionView());
    expect(store.beginSend("first")).toBe("first");
    expect(store.inFlight).toBe(true);
    expect(store.beginSend("second")).toBeNull();
    expect(store.queue).toEqual(["second"]);
    const next = store.finishReply(assistantTurn(2, "reply"), 2);
    expect(next).toBe("second");
    expect(store.inFlight).toBe(false);
  });

  it("streams tokens into the open bubble then pins the final content", () => {
    const store = new SessionStore();
    store.startSession(sessionView());
    store.beginSend("hello?");
    store.pushToken("wor");
    store.pushToken("king");
    expect(store.bubbles[1].content).toBe("working");
    store.finishReply(assistantTurn(2, "working on it"), 2);
    expect(store.bubbles[1].content).toBe("working on it");
    expect(store.bubbles[1].streaming).toBe(false);
    expect(store.turnCount).toBe(2);
  });

  it("drops the partial bubble on stream failure and allows retry", () => {
    const store = new SessionStore();
    store.startSession(sessionView());
    store.beginSend("hello?");
    store.pushToken("par");
    store.failReply("backend down");
    expect(store.bubbles).toHaveLength(1); // physician bubble retained
    expect(store.needsRetry).toBe(true);
    expect(store.canSend()).toBe(false);
    expect(store.beginRetry()).toBe(true);
    store.finishReply(assistantTurn(2, "recovered"), 2);
    expect(store.bubbles[1].content).toBe("recovered");
    expect(store.canSend()).toBe(true);
  });

  it("rejects empty sends", () => {
    const store = new SessionStore();
    store.startSession(sessionView());
    expect(store.beginSend("   ")).toBeNull();
    expect(store.bubbles).toEqual([]);
  });

  it("restores a mid-flight session from the server view", () => {
    const store = new SessionStore();
    store.startSession(sessionView({
      turn_count: 2,
      turns: [
        { index: 1, role: "chief_physician", content: "q", is_tool_call: false },
        assistantTurn(2, "a"),
      ],
    }));
    expect(store.bubbles).toHaveLength(2);
    expect(store.turnCount).toBe(2);
  });

  it("discharge freezes the session with a scorecard", () => {
    const store = new SessionStore();
    store.startSession(sessionView());
    store.applyDischarge(perfectScore(), 1);
    expect(store.phase).toBe("discharged");
    expect(store.scorecard?.gold_codes).toEqual(["E785"]);
    expect(store.canSend()).toBe(false);
    expect(store.canDischarge()).toBe(false);
  });
});
