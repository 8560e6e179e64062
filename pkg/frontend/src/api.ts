/** Typed client for the session HTTP API. Every number the UI renders comes
 * through these calls; nothing is synthesized client-side. */

export interface SessionInfo {
  round: number;
  rounds_total: number;
  policy: string;
  d: number;
  node_names: string[];
  done: boolean;
}

export interface PendingQuery {
  pair: [number, number] | null;
  names: [string, string] | null;
  predictive: [number, number, number] | null;
  round: number;
  done: boolean;
}

export interface Marginals {
  d: number;
  names: string[];
  marginals: number[][];
}

export interface MetricSeries {
  rounds: number[];
  series: Record<string, (number | null)[]>;
}

export interface AnswerOutcome {
  status: number;
  body: { ok?: boolean; error?: string };
}

export type FetchLike = (input: string, init?: RequestInit) => Promise<Response>;

export class ApiClient {
  constructor(
    private readonly base: string = "",
    private readonly fetchFn: FetchLike = (input, init) => fetch(input, init),
  ) {}

  private async getJson<T>(path: string): Promise<T> {
    const resp = await this.fetchFn(this.base + path);
    if (!resp.ok) {
      throw new Error(`GET ${path} failed: ${resp.status}`);
    }
    return (await resp.json()) as T;
  }

  session(): Promise<SessionInfo> {
    return this.getJson<SessionInfo>("/api/session");
  }

  query(): Promise<PendingQuery> {
    return this.getJson<PendingQuery>("/api/query");
  }

  marginals(): Promise<Marginals> {
    return this.getJson<Marginals>("/api/marginals");
  }

  metrics(): Promise<MetricSeries> {
    return this.getJson<MetricSeries>("/api/metrics");
  }

  async answer(pair: [number, number], label: 0 | 1 | 2): Promise<AnswerOutcome> {
    const resp = await this.fetchFn(this.base + "/api/answer", {
      method: "POST",
      headers: { "Content-Type": "application/json" },
      body: JSON.stringify({ pair, label }),
    });
    let body: AnswerOutcome["body"] = {};
    try {
      body = await resp.json();
    } catch {
      body = {};
    }
    return { status: resp.status, body };
  }
}
