// Dashboard view state. Rendered rows come only from the management API;
// the reducers never invent or derive a request state themselves.
export function initialState() {
    return { rows: [], stale: false, banner: null, rowErrors: {}, lastPolledAt: null };
}
export function applyPoll(state, rows, now) {
    return { ...state, rows, stale: false, banner: null, lastPolledAt: now };
}
// A failed poll keeps the previous list on screen, flagged as stale.
export function applyPollFailure(state, message) {
    return { ...state, stale: true, banner: `management API unreachable: ${message}` };
}
export function applyRowError(state, baseKey, message) {
    return { ...state, rowErrors: { ...state.rowErrors, [baseKey]: message } };
}
export function clearRowError(state, baseKey) {
    const rowErrors = { ...state.rowErrors };
    delete rowErrors[baseKey];
    return { ...state, rowErrors };
}
// Button enablement is derived from the state field alone, mirroring what
// the API would accept: SUCCEEDED (and DELETED, never listed) are final.
const RETRYABLE_STATES = new Set(["FAILED", "IN_DOUBT_WINDOW", "RECEIVED", "FORWARDED"]);
export function canRetry(row) {
    return RETRYABLE_STATES.has(row.state);
}
export function canDelete(_row) {
    return true;
}
export const BADGE_CLASSES = {
    SUCCEEDED: "badge-ok",
    CACHED: "badge-ok",
    FAILED: "badge-bad",
    IN_DOUBT_WINDOW: "badge-doubt",
    RECEIVED: "badge-wait",
    FORWARDED: "badge-wait",
};
export function badgeClass(state) {
    return BADGE_CLASSES[state] ?? "badge-wait";
}
