// Dashboard view state. Rendered rows come only from the management API;
// the reducers never invent or derive a request state themselves.

import type { RequestSummary } from "./api.js";

export interface DashboardState {
  rows: RequestSummary[];
  stale: boolean;
  banner: string | null;
  rowErrors: Record<string, string>;
  lastPolledAt: number | null;
}

export function initialState(): DashboardState {
  return { rows: [], stale: false, banner: null, rowErrors: {}, lastPolledAt: null };
}

export function applyPoll(
  state: DashboardState,
  rows: RequestSummary[],
  now: number,
): DashboardState {
  return { ...state, rows, stale: false, banner: null, lastPolledAt: now };
}

// A failed poll keeps the previous list on screen, flagged as stale.
export function applyPollFailure(state: DashboardState, message: string): DashboardState {
  return { ...state, stale: true, banner: `management API unreachable: ${message}` };
}

export function applyRowError(
  state: DashboardState,
  baseKey: string,
  message: string,
): DashboardState {
  return { ...state, rowErrors: { ...state.rowErrors, [baseKey]: message } };
}

export function clearRowError(state: DashboardState, baseKey: string): DashboardState {
  const rowErrors = { ...state.rowErrors };
  delete rowErrors[baseKey];
  return { ...state, rowErrors };
}

// Button enablement is derived from the state field alone, mirroring what
// the API would accept: SUCCEEDED (and DELETED, never listed) are final.
const RETRYABLE_STATES = new Set(["FAILED", "IN_DOUBT_WINDOW", "RECEIVED", "FORWARDED"]);

export function canRetry(row: RequestSummary): boolean {
  return RETRYABLE_STATES.has(row.state);
}

export function canDelete(_row: RequestSummary): boolean {
  return true;
}

export const BADGE_CLASSES: Record<string, string> = {
  SUCCEEDED: "badge-ok",
  CACHED: "badge-ok",
  FAILED: "badge-bad",
  IN_DOUBT_WINDOW: "badge-doubt",
  RECEIVED: "badge-wait",
  FORWARDED: "badge-wait",
};

export function badgeClass(state: string): string {
  return BADGE_CLASSES[state] ?? "badge-wait";
}
