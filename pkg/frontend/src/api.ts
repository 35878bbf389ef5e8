// Client for the gateway management API. The dashboard performs no state
// transitions of its own: every mutation here is exactly one API call.

export interface RequestSummary {
  base_key: string;
  device_id: string;
  method: string;
  target_path: string;
  state: string;
  trial_count: number;
  created_at: number;
  forwarded_at: number | null;
  completed_at: number | null;
  latest_outcome: string | null;
}

export interface RetryResult {
  outcome: string;
  record: RequestSummary | null;
}

export class ApiError extends Error {
  status: number;
  code: string;

  constructor(status: number, message: string, code = "") {
    super(message);
    this.status = status;
    this.code = code;
  }
}

async function parseError(res: Response): Promise<ApiError> {
  let message = `${res.status} ${res.statusText}`;
  let code = "";
  try {
    const body = await res.json();
    if (body && typeof body.error === "string") message = body.error;
    if (body && typeof body.code === "string") code = body.code;
  } catch {
    // non-JSON error body; keep the status line
  }
  return new ApiError(res.status, message, code);
}

export interface ListFilter {
  device_id?: string;
  state?: string;
}

export async function listRequests(
  base: string,
  filter: ListFilter = {},
): Promise<RequestSummary[]> {
  const params = new URLSearchParams();
  if (filter.device_id) params.set("device_id", filter.device_id);
  if (filter.state) params.set("state", filter.state);
  const query = params.toString();
  const res = await fetch(`${base}/rsam/requests${query ? `?${query}` : ""}`, {
    cache: "no-store",
  });
  if (!res.ok) throw await parseError(res);
  const body = await res.json();
  return body.requests as RequestSummary[];
}

export async function retryRequest(base: string, baseKey: string): Promise<RetryResult> {
  const res = await fetch(
    `${base}/rsam/requests/${encodeURIComponent(baseKey)}/retry`,
    { method: "POST", cache: "no-store" },
  );
  if (!res.ok) throw await parseError(res);
  return (await res.json()) as RetryResult;
}

export async function deleteRequest(base: string, baseKey: string): Promise<void> {
  const res = await fetch(`${base}/rsam/requests/${encodeURIComponent(baseKey)}`, {
    method: "DELETE",
    cache: "no-store",
  });
  if (!res.ok) throw await parseError(res);
}
