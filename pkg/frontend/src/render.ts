/** Pure HTML renderers. Everything user- or server-supplied is escaped; the
 *  functions return strings so tests can scan them without a DOM. */

import type { RecordSummary, Scorecard } from "./api.js";
import type { SessionStore } from "./model.js";
import { checkCodesField } from "./validate.js";

export function escapeHtml(text: string): string {
  return text
    .replace(/&/g, "&amp;")
    .replace(/</g, "&lt;")
    .replace(/>/g, "&gt;")
    .replace(/"/g, "&quot;")
    .replace(/'/g, "&#39;");
}

export function renderRecordPicker(records: RecordSummary[]): string {
  if (records.length === 0) {
    return `<p class="empty">No records loaded on the server.</p>`;
  }
  const rows = records
    .map(
      (r) => `
    <li>
      <button class="record-pick" data-record-id="${escapeHtml(r.record_id)}">
        <span class="record-id">${escapeHtml(r.record_id)}</span>
        <span class="record-complaint">${escapeHtml(r.chief_complaint)}</span>
      </button>
    </li>`,
    )
    .join("");
  return `<ul class="record-list">${rows}</ul>`;
}

export function renderChat(store: SessionStore): string {
  const bubbles = store.bubbles
    .map((b) => {
      const cls = b.role === "chief_physician" ? "physician" : "assistant";
      const streaming = b.streaming ? " streaming" : "";
      return `<div class="bubble ${cls}${streaming}">${escapeHtml(b.content)}${
        b.streaming ? `<span class="cursor"></span>` : ""
      }</div>`;
    })
    .join("");
  const banner = store.error
    ? `<div class="banner error">
         ${escapeHtml(store.error)}
         <button id="retry-reply">Retry reply</button>
       </div>`
    : "";
  return `
    <header class="case-header">
      <h2>Chief complaint</h2>
      <p class="complaint">${escapeHtml(store.chiefComplaint)}</p>
      <p class="turns">Turns: <span id="turn-count">${store.turnCount}</span></p>
    </header>
    ${banner}
    <section class="transcript">${bubbles}</section>`;
}

export function renderCodeWarnings(codes: string): string {
  const checks = checkCodesField(codes);
  const bad = checks.filter((c) => !c.valid);
  if (codes.trim() && bad.length > 0) {
    const names = bad.map((c) => escapeHtml(c.token)).join(", ");
    return `<p class="code-warning">Not valid ICD-10 syntax: ${names}</p>`;
  }
  return "";
}

function pct(value: number): string {
  return value.toFixed(2);
}

function metricRow(label: string, block: Scorecard["category"]): string {
  return `
    <tr>
      <th>${escapeHtml(label)}</th>
      <td>${pct(block.jaccard.value)}</td>
      <td>${pct(block.precision.value)}</td>
      <td>${pct(block.recall.value)}</td>
      <td>${pct(block.f1.value)}</td>
    </tr>`;
}

function codeList(codes: string[], cls: string): string {
  if (codes.length === 0) return `<span class="none">none</span>`;
  return codes.map((c) => `<code class="${cls}">${escapeHtml(c)}</code>`).join(" ");
}

export function renderScorecard(score: Scorecard, turnCount: number): string {
  return `
    <section class="scorecard">
      <h2>Discharge scorecard</h2>
      <p class="turns">Session length: ${turnCount} turns</p>
      <table class="metrics">
        <thead>
          <tr><th></th><th>Jaccard</th><th>Precision</th><th>Recall</th><th>F1</th></tr>
        </thead>
        <tbody>
          ${metricRow("Disease category", score.category)}
          ${metricRow("Disease chapter", score.chapter)}
        </tbody>
      </table>
      <dl class="breakdown">
        <dt>Your diagnosis</dt><dd>${escapeHtml(score.diagnosis)}</dd>
        <dt>Your codes</dt><dd>${codeList(score.predicted_codes, "pred")}</dd>
        <dt>Matched categories</dt><dd>${codeList(score.matched_categories, "hit")}</dd>
        <dt>Missed categories</dt><dd>${codeList(score.missed_categories, "miss")}</dd>
        <dt>Matched chapters</dt><dd>${codeList(score.matched_chapters, "hit")}</dd>
        <dt>Missed chapters</dt><dd>${codeList(score.missed_chapters, "miss")}</dd>
        <dt>Hallucinated codes</dt><dd>${codeList(score.hallucinated_codes, "halluc")}</dd>
        <dt>Gold codes</dt><dd>${codeList(score.gold_codes, "gold")}</dd>
        <dt>Gold diagnosis</dt><dd class="gold-diagnosis">${escapeHtml(score.gold_diagnosis)}</dd>
      </dl>
    </section>`;
}
