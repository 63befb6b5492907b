/** Canned service payloads for the unit tests, shaped like real responses. */
import type {
  CollectiveCounts,
  CostEstimate,
  SessionSummary,
  ShardableValue,
  TacticReport,
} from "../src/api.js";

export function counts(
  ag = 0,
  ar = 0,
  rs = 0,
  a2a = 0,
): CollectiveCounts {
  return {
    all_gather: ag,
    all_reduce: ar,
    reduce_scatter: rs,
    all_to_all: a2a,
  };
}

export function cost(runtime = 1e-9, peak = 51200): CostEstimate {
  return {
    runtime_s: runtime,
    peak_memory_bytes: peak,
    compute_flops: 393216,
    comm_bytes: 0,
    counts: counts(),
    mfu_percent: 12.5,
  };
}

export function report(overrides: Partial<TacticReport> = {}): TacticReport {
  return {
    label: "0:manual@B",
    actions: [
      { kind: "tile", value: "x", dim: 0, axis: "B" },
      { kind: "propagate" },
    ],
    conflicts: [],
    counts: counts(),
    cost: cost(),
    ir: 'mesh {B:4, M:2}\nfunc @main {\n  loop "B" {}\n}',
    ...overrides,
  };
}

export function summary(overrides: Partial<SessionSummary> = {}): SessionSummary {
  return {
    id: "abc123def456",
    mesh: "{B:4, M:2}",
    machine: "tpu-v3-core",
    base_ir: "mesh {B:4, M:2}\nfunc @main {\n  plain\n}",
    ir: 'mesh {B:4, M:2}\nfunc @main {\n  loop "B" {}\n}',
    counts: counts(),
    cost: cost(),
    tactics: [],
    reports: [],
    ...overrides,
  };
}

export function shardableValue(
  overrides: Partial<ShardableValue> = {},
): ShardableValue {
  return {
    name: "x",
    type: "tensor<256x8xf32>",
    dims: [256, 8],
    tiling: {},
    blocked: [],
    legal: { B: [0], M: [0, 1] },
    ...overrides,
  };
}
