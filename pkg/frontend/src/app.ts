/** DOM wiring: one active session per tab, session id kept in the URL hash so
 *  a reload restores the session from the server. */

import { ApiClient } from "./api.js";
import { SessionStore } from "./model.js";
import { renderChat, renderCodeWarnings, renderRecordPicker, renderScorecard } from "./render.js";
import { dischargeFormReady } from "./validate.js";

export class App {
  readonly store = new SessionStore();

  constructor(
    private readonly api: ApiClient,
    private readonly root: HTMLElement,
  ) {}

  async boot(): Promise<void> {
    const fromHash = window.location.hash.replace(/^#session=/, "");
    if (fromHash) {
      try {
        this.store.startSession(await this.api.getSession(fromHash));
        this.render();
        return;
      } catch {
        window.location.hash = "";
      }
    }
    await this.showPicker();
  }

  private async showPicker(): Promise<void> {
    this.root.innerHTML = `<p class="loading">Loading records…</p>`;
    try {
      const records = await this.api.listRecords();
      this.root.innerHTML = `
        <h1>Ward round</h1>
        <p class="hint">Pick a patient. You will see only the chief complaint;
        ask Dr. Lee for everything else, then submit your discharge.</p>
        ${renderRecordPicker(records)}`;
      this.root.querySelectorAll<HTMLButtonElement>(".record-pick").forEach((btn) => {
        btn.addEventListener("click", () => void this.startSession(btn.dataset.recordId ?? ""));
      });
    } catch (err) {
      this.root.innerHTML = `
        <div class="banner error">
          Service unreachable: ${err instanceof Error ? err.message : String(err)}
          <button id="retry-boot">Retry</button>
        </div>`;
      this.root.querySelector("#retry-boot")?.addEventListener("click", () => void this.showPicker());
    }
  }

  private async startSession(recordId: string): Promise<void> {
    try {
      const view = await this.api.createSession(recordId);
      this.store.startSession(view);
      window.location.hash = `session=${view.session_id}`;
      this.render();
    } catch (err) {
      this.root.querySelector(".banner")?.remove();
      this.root.insertAdjacentHTML(
        "afterbegin",
        `<div class="banner error">Could not start session: ${
          err instanceof Error ? err.message : String(err)
        }</div>`,
      );
    }
  }

  private send(text: string): void {
    const toSend = this.store.beginSend(text);
    this.render();
    if (toSend === null) return;
    void this.stream(toSend);
  }

  private retry(): void {
    if (!this.store.beginRetry()) return;
    this.render();
    void this.stream(null);
  }

  private async stream(text: string | null): Promise<void> {
    const sid = this.store.sessionId;
    if (!sid) return;
    await this.api.sendMessage(sid, text, {
      onToken: (token) => {
        this.store.pushToken(token);
        this.patchStreamingBubble();
      },
      onDone: (turn, turnCount) => {
        const queued = this.store.finishReply(turn, turnCount);
        this.render();
        if (queued !== null) this.send(queued);
      },
      onError: (message) => {
        this.store.failReply(message);
        this.render();
      },
    });
  }

  private async discharge(diagnosis: string, codes: string): Promise<void> {
    const sid = this.store.sessionId;
    if (!sid || !this.store.canDischarge()) return;
    try {
      const result = await this.api.submitDischarge(sid, diagnosis, codes);
      this.store.applyDischarge(result.score, result.turn_count);
      this.render();
    } catch (err) {
      const box = this.root.querySelector("#discharge-error");
      if (box) box.textContent = err instanceof Error ? err.message : String(err);
    }
  }

  private patchStreamingBubble(): void {
    const nodes = this.root.querySelectorAll(".bubble.streaming");
    const last = nodes[nodes.length - 1];
    const bubble = this.store.bubbles[this.store.bubbles.length - 1];
    if (last && bubble) last.textContent = bubble.content;
  }

  render(): void {
    if (this.store.phase === "picker") {
      void this.showPicker();
      return;
    }
    if (this.store.phase === "discharged" && this.store.scorecard) {
      this.root.innerHTML =
        renderChat(this.store) +
        renderScorecard(this.store.scorecard, this.store.turnCount) +
        `<p><a href="#" id="new-session">Start another session</a></p>`;
      this.root.querySelector("#new-session")?.addEventListener("click", (ev) => {
        ev.preventDefault();
        window.location.hash = "";
        this.store.phase = "picker";
        void this.showPicker();
      });
      return;
    }

    this.root.innerHTML = `
      ${renderChat(this.store)}
      <form id="composer" autocomplete="off">
        <input id="message" type="text" placeholder="Ask Dr. Lee…"
               ${this.store.canSend() ? "" : "disabled"} />
        <button id="send" type="submit" ${this.store.canSend() ? "" : "disabled"}>Send</button>
      </form>
      <details class="discharge" ${this.store.bubbles.length ? "" : ""}>
        <summary>Write discharge</summary>
        <form id="discharge-form" autocomplete="off">
          <label>Diagnosis
            <textarea id="diagnosis" rows="2"></textarea>
          </label>
          <label>ICD-10 codes (comma separated)
            <input id="codes" type="text" placeholder="E78.5, I10" />
          </label>
          <div id="code-warnings"></div>
          <p id="discharge-error" class="error-text"></p>
          <button id="submit-discharge" type="submit" disabled>Submit discharge</button>
        </form>
      </details>`;

    const composer = this.root.querySelector<HTMLFormElement>("#composer");
    const input = this.root.querySelector<HTMLInputElement>("#message");
    composer?.addEventListener("submit", (ev) => {
      ev.preventDefault();
      if (input && input.value.trim()) {
        const value = input.value;
        input.value = "";
        this.send(value);
      }
    });

    this.root.querySelector("#retry-reply")?.addEventListener("click", () => this.retry());

    const form = this.root.querySelector<HTMLFormElement>("#discharge-form");
    const diagnosis = this.root.querySelector<HTMLTextAreaElement>("#diagnosis");
    const codes = this.root.querySelector<HTMLInputElement>("#codes");
    const warnings = this.root.querySelector<HTMLElement>("#code-warnings");
    const submit = this.root.querySelector<HTMLButtonElement>("#submit-discharge");
    const refresh = () => {
      if (!diagnosis || !codes || !submit || !warnings) return;
      warnings.innerHTML = renderCodeWarnings(codes.value);
      submit.disabled = !dischargeFormReady(diagnosis.value, codes.value) || !this.store.canDischarge();
    };
    diagnosis?.addEventListener("input", refresh);
    codes?.addEventListener("input", refresh);
    form?.addEventListener("submit", (ev) => {
      ev.preventDefault();
      if (diagnosis && codes && dischargeFormReady(diagnosis.value, codes.value)) {
        void this.discharge(diagnosis.value.trim(), codes.value.trim());
      }
    });

    const transcript = this.root.querySelector(".transcript");
    if (transcript) transcript.scrollTop = transcript.scrollHeight;
    input?.focus();
  }
}
