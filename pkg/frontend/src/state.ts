/** Pure session-state helpers behind the workbench panels.
 *
 * The UI is stateless beyond the session id in the URL hash: every panel
 * is a function of the last GET /sessions/{id} payload, so a reload
 * rebuilds the exact same view.
 */
import type {
  AutoTactic,
  CollectiveCounts,
  ManualTactic,
  SessionSummary,
  ShardingChoice,
} from "./api.js";

export interface TimelineRow {
  index: number;
  label: string;
  counts: CollectiveCounts;
  runtime_s: number;
  peak_memory_bytes: number;
  conflicts: number;
}

/** One row per applied tactic; numbers are copied verbatim from the report. */
export function timelineRows(summary: SessionSummary): TimelineRow[] {
  return summary.reports.map((report, index) => ({
    index,
    label: report.label,
    counts: report.counts,
    runtime_s: report.cost.runtime_s,
    peak_memory_bytes: report.cost.peak_memory_bytes,
    conflicts: report.conflicts.length,
  }));
}

/** IR text in force before tactic `index` ran. */
export function irBefore(summary: SessionSummary, index: number): string {
  return index <= 0 ? summary.base_ir : summary.reports[index - 1].ir;
}

/** IR text after tactic `index`; the unpartitioned module for index -1. */
export function irAfter(summary: SessionSummary, index: number): string {
  return index < 0 ? summary.base_ir : summary.reports[index].ir;
}

export function lastIndex(summary: SessionSummary): number {
  return summary.reports.length - 1;
}

/** Axis names out of the rendered mesh, e.g. "{B:4, M:2}" -> ["B", "M"]. */
export function meshAxes(mesh: string): string[] {
  const inner = mesh.replace(/[{}]/g, "").trim();
  if (inner === "") return [];
  return inner.split(",").map((part) => part.split(":")[0].trim());
}

/** In-progress manual tactic; kept across failed applies for correction. */
export interface Draft {
  axis: string;
  shardings: Record<string, ShardingChoice>;
}

export function emptyDraft(axis: string = ""): Draft {
  return { axis, shardings: {} };
}

export function setAxis(draft: Draft, axis: string): Draft {
  return { axis, shardings: { ...draft.shardings } };
}

export function setChoice(
  draft: Draft,
  value: string,
  choice: ShardingChoice | null,
): Draft {
  const shardings = { ...draft.shardings };
  if (choice === null) delete shardings[value];
  else shardings[value] = choice;
  return { axis: draft.axis, shardings };
}

export function manualTactic(draft: Draft): ManualTactic {
  return { kind: "manual", axis: draft.axis, shardings: { ...draft.shardings } };
}

export function autoTactic(
  axes: string[],
  budget: number,
  seed?: number,
): AutoTactic {
  const tactic: AutoTactic = { kind: "auto", axes, budget };
  if (seed !== undefined) tactic.seed = seed;
  return tactic;
}

/** Select-option encoding for one sharding choice. */
export function encodeChoice(choice: ShardingChoice): string {
  return typeof choice === "number" ? `dim:${choice}` : choice;
}

export function decodeChoice(encoded: string): ShardingChoice | null {
  if (encoded === "") return null;
  if (encoded === "replicated" || encoded === "first_divisible") return encoded;
  if (encoded.startsWith("dim:")) return Number(encoded.slice(4));
  return null;
}

export const DEFAULT_API = "http://127.0.0.1:8000";

export interface Route {
  sid: string | null;
  api: string;
}

export function parseHash(hash: string): Route {
  const params = new URLSearchParams(hash.replace(/^#/, ""));
  return { sid: params.get("s"), api: params.get("api") ?? DEFAULT_API };
}

export function formatHash(route: Route): string {
  const params = new URLSearchParams();
  if (route.sid) params.set("s", route.sid);
  if (route.api !== DEFAULT_API) params.set("api", route.api);
  const text = params.toString();
  return text === "" ? "" : "#" + text;
}
