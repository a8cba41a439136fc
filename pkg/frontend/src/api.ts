// Typed client for the explanation-session service. Every number the UI
// shows comes from these responses; no math happens on the client.

export interface ColumnSpec {
  name: string;
  kind: "numerical" | "categorical";
  categories?: string[];
}

export interface SchemaSpec {
  columns: ColumnSpec[];
}

export interface Condition {
  feature: string;
  op: "<=" | ">" | "==" | "!=";
  value: number | string;
}

export interface Attribution {
  feature: string;
  encoded_feature: string;
  coefficient: number;
  encoded_value: number;
  value: number;
  category: string | null;
}

export interface Explanation {
  test_point: Record<string, number | string>;
  surrogate_prediction: number;
  oracle_prediction: number | null;
  context: Condition[];
  context_text: string;
  attributions: Attribution[];
  top_attributions: Attribution[];
  intercept: number;
  leaf_id: number;
  fidelity: number | null;
  task: string;
}

export interface WhatIfResult {
  explanation: Explanation;
  leaf_changed: boolean;
  overridden: Record<string, number | string>;
}

export interface TreeNodeSpec {
  id: number;
  depth: number;
  n_rows: number;
  feature_index?: number;
  threshold?: number;
  left?: number;
  right?: number;
}

export interface TreeSpec {
  format: string;
  task: string;
  feature_names: string[];
  nodes: TreeNodeSpec[];
}

export class ApiError extends Error {
  constructor(readonly status: number, readonly code: string, message: string) {
    super(message);
  }
}

async function parse<T>(res: Response): Promise<T> {
  const body = await res.json().catch(() => null);
  if (!res.ok) {
    const err = (body as { error?: { code?: string; message?: string } } | null)?.error;
    throw new ApiError(res.status, err?.code ?? "http_error",
      err?.message ?? `request failed with status ${res.status}`);
  }
  return body as T;
}

export class ApiClient {
  constructor(readonly baseUrl: string) {}

  private url(path: string): string {
    return `${this.baseUrl.replace(/\/+$/, "")}${path}`;
  }

  async health(): Promise<{ status: string }> {
    return parse(await fetch(this.url("/health")));
  }

  async getSchema(sessionId: string): Promise<SchemaSpec> {
    return parse(await fetch(this.url(`/sessions/${sessionId}/schema`)));
  }

  async getTree(sessionId: string): Promise<TreeSpec> {
    return parse(await fetch(this.url(`/sessions/${sessionId}/tree`)));
  }

  async explain(sessionId: string, topK: number,
                point?: Record<string, number | string>): Promise<Explanation> {
    const res = await fetch(this.url(`/sessions/${sessionId}/explain?top_k=${topK}`), {
      method: "POST",
      headers: { "Content-Type": "application/json" },
      body: JSON.stringify(point ? { point } : {}),
    });
    return parse(res);
  }

  async whatIf(sessionId: string, overrides: Record<string, number | string>,
               topK: number, signal?: AbortSignal): Promise<WhatIfResult> {
    const res = await fetch(this.url(`/sessions/${sessionId}/whatif?top_k=${topK}`), {
      method: "POST",
      headers: { "Content-Type": "application/json" },
      body: JSON.stringify({ overrides }),
      signal,
    });
    return parse(res);
  }
}
