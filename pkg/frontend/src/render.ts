// Pure HTML rendering: state in, markup out. No DOM access here so the
// whole presentation layer is testable as plain string functions.

import type { RequestSummary } from "./api.js";
import { badgeClass, canDelete, canRetry, type DashboardState } from "./state.js";

export function escapeHtml(text: string): string {
  return text
    .replace(/&/g, "&amp;")
    .replace(/</g, "&lt;")
    .replace(/>/g, "&gt;")
    .replace(/"/g, "&quot;")
    .replace(/'/g, "&#39;");
}

function formatTime(ms: number | null): string {
  if (ms === null) return "–";
  return new Date(ms).toISOString().replace("T", " ").slice(0, 19);
}

function renderRow(row: RequestSummary, error: string | undefined): string {
  const key = escapeHtml(row.base_key);
  const retryAttr = canRetry(row) ? "" : " disabled";
  const deleteAttr = canDelete(row) ? "" : " disabled";
  const errorHtml = error
    ? `<div class="row-error">${escapeHtml(error)}</div>`
    : "";
  return `<tr data-key="${key}">
    <td class="mono">${key}</td>
    <td>${escapeHtml(row.device_id)}</td>
    <td class="mono">${escapeHtml(row.method)} ${escapeHtml(row.target_path)}</td>
    <td><span class="badge ${badgeClass(row.state)}">${escapeHtml(row.state)}</span></td>
    <td class="num">${row.trial_count}</td>
    <td>${escapeHtml(row.latest_outcome ?? "–")}</td>
    <td class="mono">${formatTime(row.created_at)}</td>
    <td>
      <button data-action="retry" data-key="${key}"${retryAttr}>retry</button>
      <button data-action="delete" data-key="${key}"${deleteAttr}>delete</button>
      ${errorHtml}
    </td>
  </tr>`;
}

export function renderDashboard(state: DashboardState): string {
  const banner = state.banner
    ? `<div class="banner stale">${escapeHtml(state.banner)} — showing the last known list</div>`
    : "";
  if (state.rows.length === 0 && !state.stale) {
    return `${banner}<div class="empty">No tracked requests yet.</div>`;
  }
  const rows = state.rows
    .map((row) => renderRow(row, state.rowErrors[row.base_key]))
    .join("\n");
  const polled = state.lastPolledAt
    ? `<div class="polled">last refresh: ${formatTime(state.lastPolledAt)}${state.stale ? " (stale)" : ""}</div>`
    : "";
  return `${banner}
<table class="requests">
  <thead>
    <tr><th>base key</th><th>device</th><th>target</th><th>state</th>
        <th>trials</th><th>last outcome</th><th>created</th><th>actions</th></tr>
  </thead>
  <tbody>
${rows}
  </tbody>
</table>
${polled}`;
}
