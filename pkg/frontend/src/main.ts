// DOM glue: polling loop, button dispatch, banner handling.
//
// Concurrency discipline: at most one poll is in flight; retry/delete
// mutations queue behind whatever is currently running so the UI never
// races itself against the management API.

import { deleteRequest, listRequests, retryRequest, type ListFilter } from "./api.js";
import { renderDashboard } from "./render.js";
import {
  applyPoll,
  applyPollFailure,
  applyRowError,
  clearRowError,
  initialState,
  type DashboardState,
} from "./state.js";

export interface DashboardOptions {
  base?: string;
  intervalMs?: number;
}

export class Dashboard {
  state: DashboardState = initialState();
  private base: string;
  private intervalMs: number;
  private container: HTMLElement;
  private chain: Promise<unknown> = Promise.resolve();
  private timer: ReturnType<typeof setInterval> | null = null;

  constructor(container: HTMLElement, options: DashboardOptions = {}) {
    this.container = container;
    this.base = options.base ?? "";
    this.intervalMs = options.intervalMs ?? 3000;
  }

  start(): void {
    this.container.addEventListener("click", (event) => this.onClick(event));
    void this.poll();
    this.timer = setInterval(() => void this.poll(), this.intervalMs);
  }

  stop(): void {
    if (this.timer !== null) clearInterval(this.timer);
    this.timer = null;
  }

  // Serialize every API interaction on one promise chain.
  private enqueue<T>(task: () => Promise<T>): Promise<T> {
    const next = this.chain.then(task, task);
    this.chain = next.catch(() => undefined);
    return next;
  }

  poll(filter: ListFilter = {}): Promise<void> {
    return this.enqueue(async () => {
      try {
        const rows = await listRequests(this.base, filter);
        this.state = applyPoll(this.state, rows, Date.now());
      } catch (err) {
        this.state = applyPollFailure(this.state, messageOf(err));
      }
      this.render();
    });
  }

  retry(baseKey: string): Promise<void> {
    return this.enqueue(async () => {
      this.state = clearRowError(this.state, baseKey);
      try {
        await retryRequest(this.base, baseKey);
      } catch (err) {
        this.state = applyRowError(this.state, baseKey, messageOf(err));
      }
    }).then(() => this.poll());
  }

  delete(baseKey: string): Promise<void> {
    return this.enqueue(async () => {
      this.state = clearRowError(this.state, baseKey);
      try {
        await deleteRequest(this.base, baseKey);
      } catch (err) {
        this.state = applyRowError(this.state, baseKey, messageOf(err));
      }
    }).then(() => this.poll());
  }

  private onClick(event: Event): void {
    const target = event.target as HTMLElement | null;
    if (!target || target.tagName !== "BUTTON") return;
    const action = target.getAttribute("data-action");
    const key = target.getAttribute("data-key");
    if (!key) return;
    if (action === "retry") void this.retry(key);
    if (action === "delete") void this.delete(key);
    if (action === "refresh") void this.poll();
  }

  private render(): void {
    this.container.innerHTML = renderDashboard(this.state);
  }
}

function messageOf(err: unknown): string {
  return err instanceof Error ? err.message : String(err);
}

export function boot(): void {
  const container = document.getElementById("requests");
  if (!container) throw new Error("dashboard container #requests missing");
  const dashboard = new Dashboard(container);
  const refresh = document.getElementById("refresh");
  if (refresh) refresh.addEventListener("click", () => void dashboard.poll());
  dashboard.start();
}

// Only auto-boot in a real browser; tests import the pieces directly.
if (typeof document !== "undefined" && document.getElementById("requests")) {
  boot();
}
