// Typed client for the retrieval service. The UI never recomputes scores or
// ranks; everything rendered comes verbatim from these responses.

export interface SearchHit {
  name: string;
  kind: string;
  signature: string;
  informal: string;
  score: number;
  rank: number;
}

export interface SearchResponse {
  query: string;
  stage: string;
  hits: SearchHit[];
}

export interface SearchOptions {
  k: number;
  rerank: boolean;
}

export interface DeclDetail {
  name: string;
  kind: string;
  signature: string;
  value: string | null;
  source: { file: string; line: number };
  deps: string[];
  informal: string | null;
}

export interface BranchSummary {
  branch_id: number;
  status: string;
  revision: number | null;
  judge_calls: number;
}

export interface RankingEntry {
  decl_name: string;
  score: number;
}

export interface RunStatus {
  run_id: string;
  status: "running" | "done" | "error";
  error?: string;
  result?: {
    status: string;
    winner: number | null;
    branches: BranchSummary[];
    ranking: RankingEntry[];
  };
}

export interface TraceRecord {
  branch: number;
  event: "sketch" | "retrieve" | "filter" | "judge" | "revise" | "cancel" | "done";
  payload: Record<string, unknown>;
}

async function asJson<T>(response: Response): Promise<T> {
  if (!response.ok) {
    let detail = `${response.status}`;
    try {
      const body = (await response.json()) as { error?: string };
      if (body.error) detail = body.error;
    } catch {
      // keep the status code
    }
    throw new Error(detail);
  }
  return (await response.json()) as T;
}

export async function search(query: string, options: SearchOptions): Promise<SearchResponse> {
  const response = await fetch("/v1/search", {
    method: "POST",
    headers: { "Content-Type": "application/json" },
    body: JSON.stringify({ query, k: options.k, rerank: options.rerank }),
  });
  return asJson<SearchResponse>(response);
}

export async function declDetail(name: string): Promise<DeclDetail> {
  const response = await fetch(`/v1/decl/${encodeURIComponent(name)}`);
  return asJson<DeclDetail>(response);
}

export async function startRun(informal: string, formal: string): Promise<string> {
  const response = await fetch("/v1/reason", {
    method: "POST",
    headers: { "Content-Type": "application/json" },
    body: JSON.stringify({ informal, formal }),
  });
  const doc = await asJson<{ run_id: string }>(response);
  return doc.run_id;
}

export async function runStatus(runId: string): Promise<RunStatus> {
  const response = await fetch(`/v1/reason/${encodeURIComponent(runId)}`);
  return asJson<RunStatus>(response);
}

export async function runTrace(runId: string): Promise<TraceRecord[]> {
  const response = await fetch(`/v1/reason/${encodeURIComponent(runId)}/trace`);
  if (!response.ok) throw new Error(`${response.status}`);
  const text = await response.text();
  return text
    .split("\n")
    .filter((line) => line.trim().length > 0)
    .map((line) => JSON.parse(line) as TraceRecord);
}
