/** Typed client for the spindle session service.
 *
 * Field names mirror the service JSON exactly; everything the panels show
 * comes straight out of these payloads.
 */

export interface CollectiveCounts {
  all_gather: number;
  all_reduce: number;
  reduce_scatter: number;
  all_to_all: number;
}

export interface CostEstimate {
  runtime_s: number;
  peak_memory_bytes: number;
  compute_flops: number;
  comm_bytes: number;
  counts: CollectiveCounts;
  mfu_percent: number;
}

export interface Conflict {
  value: string;
  axis: string;
  options: string[];
  text: string;
}

export type TacticAction =
  | { kind: "tile"; value: string; dim: number; axis: string }
  | { kind: "atomic"; value: string; axis: string }
  | { kind: "propagate" };

export interface TacticReport {
  label: string;
  actions: TacticAction[];
  conflicts: Conflict[];
  counts: CollectiveCounts;
  cost: CostEstimate;
  ir: string;
}

export type ShardingChoice = number | "replicated" | "first_divisible";

export interface ManualTactic {
  kind: "manual";
  axis: string;
  shardings: Record<string, ShardingChoice>;
}

export interface AutoTactic {
  kind: "auto";
  axes: string[];
  budget?: number;
  seed?: number;
}

export type Tactic = ManualTactic | AutoTactic;

export interface SessionSummary {
  id: string;
  mesh: string;
  machine: string;
  base_ir: string;
  ir: string;
  counts: CollectiveCounts;
  cost: CostEstimate;
  tactics: Tactic[];
  reports: TacticReport[];
}

export interface ShardableValue {
  name: string;
  type: string;
  dims: number[];
  tiling: Record<string, string[]>;
  blocked: string[];
  legal: Record<string, number[]>;
}

export interface ShardingTable {
  args: Record<string, string[][]>;
  results: string[][][];
}

export interface ExportBundle {
  mesh: string;
  ir: string;
  spmd_ir: string;
  local_ir: string;
  sharding: ShardingTable;
  counts: CollectiveCounts;
  cost: CostEstimate;
  reports: TacticReport[];
}

export interface SessionRequest {
  model?: string;
  module?: string;
  params?: Record<string, unknown>;
  mesh?: string;
  machine?: string;
}

/** Service error, carrying the HTTP status alongside the message. */
export class ApiError extends Error {
  constructor(readonly status: number, message: string) {
    super(message);
    this.name = "ApiError";
  }
}

type FetchLike = (input: string, init?: RequestInit) => Promise<Response>;

export class ApiClient {
  constructor(
    readonly base: string,
    private readonly fetchFn: FetchLike = (input, init) => fetch(input, init),
  ) {}

  private async request<T>(
    method: string,
    path: string,
    body?: unknown,
  ): Promise<T> {
    const init: RequestInit = { method };
    if (body !== undefined) {
      init.body = JSON.stringify(body);
      init.headers = { "content-type": "application/json" };
    }
    const resp = await this.fetchFn(this.base + path, init);
    let payload: unknown = null;
    try {
      payload = await resp.json();
    } catch {
      payload = null;
    }
    if (!resp.ok) {
      const message =
        payload !== null && typeof payload === "object" && "error" in payload
          ? String((payload as { error: unknown }).error)
          : `${resp.status} ${resp.statusText}`;
      throw new ApiError(resp.status, message);
    }
    return payload as T;
  }

  createSession(req: SessionRequest): Promise<SessionSummary> {
    return this.request("POST", "/sessions", req);
  }

  getSession(id: string): Promise<SessionSummary> {
    return this.request("GET", `/sessions/${id}`);
  }

  applyTactic(id: string, tactic: Tactic): Promise<TacticReport> {
    return this.request("POST", `/sessions/${id}/tactics`, tactic);
  }

  async shardable(id: string): Promise<ShardableValue[]> {
    const wrapped = await this.request<{ values: ShardableValue[] }>(
      "GET",
      `/sessions/${id}/shardable`,
    );
    return wrapped.values;
  }

  exportSession(id: string): Promise<ExportBundle> {
    return this.request("GET", `/sessions/${id}/export`);
  }

  fork(id: string): Promise<SessionSummary> {
    return this.request("POST", `/sessions/${id}/fork`);
  }
}
