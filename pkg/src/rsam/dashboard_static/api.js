// Client for the gateway management API. The dashboard performs no state
// transitions of its own: every mutation here is exactly one API call.
export class ApiError extends Error {
    constructor(status, message, code = "") {
        super(message);
        this.status = status;
        this.code = code;
    }
}
async function parseError(res) {
    let message = `${res.status} ${res.statusText}`;
    let code = "";
    try {
        const body = await res.json();
        if (body && typeof body.error === "string")
            message = body.error;
        if (body && typeof body.code === "string")
            code = body.code;
    }
    catch {
        // non-JSON error body; keep the status line
    }
    return new ApiError(res.status, message, code);
}
export async function listRequests(base, filter = {}) {
    const params = new URLSearchParams();
    if (filter.device_id)
        params.set("device_id", filter.device_id);
    if (filter.state)
        params.set("state", filter.state);
    const query = params.toString();
    const res = await fetch(`${base}/rsam/requests${query ? `?${query}` : ""}`, {
        cache: "no-store",
    });
    if (!res.ok)
        throw await parseError(res);
    const body = await res.json();
    return body.requests;
}
export async function retryRequest(base, baseKey) {
    const res = await fetch(`${base}/rsam/requests/${encodeURIComponent(baseKey)}/retry`, { method: "POST", cache: "no-store" });
    if (!res.ok)
        throw await parseError(res);
    return (await res.json());
}
export async function deleteRequest(base, baseKey) {
    const res = await fetch(`${base}/rsam/requests/${encodeURIComponent(baseKey)}`, {
        method: "DELETE",
        cache: "no-store",
    });
    if (!res.ok)
        throw await parseError(res);
}
