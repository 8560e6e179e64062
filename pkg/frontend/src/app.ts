/** The elicitation view: polls the session API, shows the pending query with
 * its predictive answer distribution, accepts exactly one three-way answer
 * per query, and visualizes posterior state (marginal heatmap, metric
 * sparklines) so the expert sees the effect of each judgment. */

import { ApiClient, FetchLike, PendingQuery, SessionInfo } from "./api.js";
import { renderHeatmap } from "./heatmap.js";
import { renderSparkline } from "./sparkline.js";

export interface AppOptions {
  doc: Document;
  baseUrl?: string;
  fetchFn?: FetchLike;
  pollMs?: number;
}

const BACKOFF_MAX_MS = 15_000;

function queryKey(q: PendingQuery): string | null {
  return q.pair ? `${q.round}:${q.pair[0]}:${q.pair[1]}` : null;
}

export class ElicitationApp {
  readonly api: ApiClient;
  private readonly doc: Document;
  private readonly pollMs: number;
  private timer: ReturnType<typeof setTimeout> | null = null;
  private backoffMs: number;

  session: SessionInfo | null = null;
  pending: PendingQuery | null = null;
  private submitting = false;
  private answeredKey: string | null = null;
  postsSent = 0; // exposed for tests: one per accepted click

  constructor(opts: AppOptions) {
    this.doc = opts.doc;
    this.api = new ApiClient(opts.baseUrl ?? "", opts.fetchFn);
    this.pollMs = opts.pollMs ?? 1000;
    this.backoffMs = this.pollMs;
    this.wireButtons();
  }

  private el(id: string): HTMLElement {
    const node = this.doc.getElementById(id);
    if (!node) throw new Error(`missing #${id} in document`);
    return node;
  }

  private wireButtons(): void {
    const labels: [string, 0 | 1 | 2][] = [
      ["btn-forward", 1],
      ["btn-reverse", 0],
      ["btn-none", 2],
    ];
    for (const [id, label] of labels) {
      this.el(id).addEventListener("click", () => {
        void this.submit(label);
      });
    }
  }

  start(): void {
    void this.tick();
  }

  stop(): void {
    if (this.timer !== null) clearTimeout(this.timer);
    this.timer = null;
  }

  private async tick(): Promise<void> {
    let delay: number;
    try {
      await this.pollOnce();
      this.backoffMs = this.pollMs;
      delay = this.pollMs;
    } catch {
      this.showBanner(`connection lost; retrying in ${Math.round(this.backoffMs / 1000)}s`);
      delay = this.backoffMs;
      this.backoffMs = Math.min(this.backoffMs * 2, BACKOFF_MAX_MS);
    }
    if (this.session?.done) return; // summary stays up; no further polling
    this.timer = setTimeout(() => void this.tick(), delay);
  }

  /** One refresh pass: query + marginals + metrics, then render. */
  async pollOnce(): Promise<void> {
    this.session = await this.api.session();
    this.pending = await this.api.query();
    const marginals = await this.api.marginals();
    const metrics = await this.api.metrics();
    this.hideBanner();
    this.renderSession(this.session);
    this.renderQuery(this.pending);
    renderHeatmap(this.el("heatmap"), marginals);
    this.renderMetrics(metrics.series);
    if (this.session.done) this.renderSummary(metrics.series);
  }

  async submit(label: 0 | 1 | 2): Promise<void> {
    const pending = this.pending;
    if (!pending || !pending.pair || this.submitting) return;
    const key = queryKey(pending);
    if (key === null || key === this.answeredKey) return; // one answer per query
    this.submitting = true;
    this.setButtonsEnabled(false);
    try {
      this.postsSent += 1;
      const outcome = await this.api.answer(pending.pair, label);
      if (outcome.status === 200) {
        this.answeredKey = key;
        this.showBanner("answer recorded; waiting for the next query", "ok");
      } else if (outcome.status === 409) {
        // stale pair: someone else answered or the round moved on; refresh
        this.pending = await this.api.query();
        this.renderQuery(this.pending);
        this.showBanner(outcome.body.error ?? "query changed; refreshed");
      } else {
        this.showBanner(outcome.body.error ?? `answer rejected (${outcome.status})`);
        this.setButtonsEnabled(true);
      }
    } catch {
      this.showBanner("failed to send answer; it was not recorded");
      this.setButtonsEnabled(true);
    } finally {
      this.submitting = false;
    }
  }

  private renderSession(info: SessionInfo): void {
    this.el("round-indicator").textContent =
      `round ${info.round} / ${info.rounds_total}`;
    this.el("policy-indicator").textContent = info.policy;
  }

  private renderQuery(q: PendingQuery): void {
    const card = this.el("query-card");
    if (!q.pair || !q.names) {
      this.el("query-question").textContent = q.done
        ? "session complete"
        : "waiting for the next query…";
      this.setButtonsEnabled(false);
      card.classList.toggle("done", q.done);
      return;
    }
    const [a, b] = q.names;
    this.el("query-question").textContent =
      `Does ${a} cause ${b}, does ${b} cause ${a}, or neither?`;
    this.el("btn-forward").textContent = `${a} → ${b}`;
    this.el("btn-reverse").textContent = `${b} → ${a}`;
    this.el("btn-none").textContent = "no direct edge";
    if (q.predictive) {
      const [p0, p1, p2] = q.predictive;
      this.el("predictive").textContent =
        `model expects: ${a}→${b} ${fmt(p1)} · ` +
        `${b}→${a} ${fmt(p0)} · none ${fmt(p2)}`;
    }
    const fresh = queryKey(q) !== this.answeredKey;
    this.setButtonsEnabled(fresh && !this.submitting);
  }

  private renderMetrics(series: Record<string, (number | null)[]>): void {
    const entropy = series["entropy"] ?? [];
    renderSparkline(this.el("spark-entropy"), entropy);
    const etcpRow = this.el("etcp-row");
    if (series["etcp"]) {
      etcpRow.classList.remove("hidden");
      renderSparkline(this.el("spark-etcp"), series["etcp"]);
    } else {
      etcpRow.classList.add("hidden");
    }
  }

  private renderSummary(series: Record<string, (number | null)[]>): void {
    const summary = this.el("summary");
    const answered = this.session ? this.session.round : 0;
    const parts = [`session complete after ${answered} answers`];
    for (const name of ["entropy", "etcp", "shd"]) {
      const values = (series[name] ?? []).filter(
        (v): v is number => v !== null && isFinite(v));
      if (values.length) {
        parts.push(`final ${name} ${values[values.length - 1].toFixed(4)}`);
      }
    }
    summary.textContent = parts.join(" · ");
    summary.classList.remove("hidden");
  }

  private setButtonsEnabled(enabled: boolean): void {
    for (const id of ["btn-forward", "btn-reverse", "btn-none"]) {
      (this.el(id) as HTMLButtonElement).disabled = !enabled;
    }
  }

  private showBanner(message: string, tone: "error" | "ok" = "error"): void {
    const banner = this.el("status-banner");
    banner.textContent = message;
    banner.className = `banner ${tone}`;
  }

  private hideBanner(): void {
    const banner = this.el("status-banner");
    if (banner.className.includes("error")) {
      banner.textContent = "";
      banner.className = "banner hidden";
    }
  }
}

function fmt(p: number): string {
  return p.toFixed(3);
}
