/** HTML builders for the workbench panels.
 *
 * Renderers are pure string functions so every panel can be exercised
 * without a browser; main.ts owns the DOM wiring. All figures shown come
 * verbatim from report fields, re-notated but never recomputed.
 */
import type { Conflict, SessionSummary, ShardableValue, ShardingChoice } from "./api.js";
import { diffLines } from "./diff.js";
import type { Draft } from "./state.js";
import { irAfter, irBefore, timelineRows } from "./state.js";

export function esc(text: string): string {
  return text
    .replace(/&/g, "&amp;")
    .replace(/</g, "&lt;")
    .replace(/>/g, "&gt;")
    .replace(/"/g, "&quot;");
}

function runtimeText(seconds: number): string {
  return `${seconds.toExponential(3)} s`;
}

/** Panel 1: read-only IR view, selected tactic's lines highlighted. */
export function renderIr(summary: SessionSummary, selected: number): string {
  if (selected < 0 || summary.reports.length === 0) {
    const body = summary.base_ir
      .split("\n")
      .map((line) => `<span class="line same">${esc(line)}</span>`)
      .join("\n");
    return `<pre class="ir">${body}</pre>`;
  }
  const lines = diffLines(irBefore(summary, selected), irAfter(summary, selected));
  const body = lines
    .map((line) => `<span class="line ${line.kind}">${esc(line.text)}</span>`)
    .join("\n");
  return `<pre class="ir">${body}</pre>`;
}

/** Panel 3: one timeline row per tactic, counts and cost verbatim. */
export function renderTimeline(summary: SessionSummary, selected: number): string {
  const rows = timelineRows(summary);
  if (rows.length === 0) {
    return `<p class="empty">No tactics applied yet.</p>`;
  }
  const body = rows
    .map(
      (row) => `
    <tr data-index="${row.index}"${row.index === selected ? ' class="selected"' : ""}>
      <td>${row.index}</td>
      <td>${esc(row.label)}</td>
      <td class="num ag">${row.counts.all_gather}</td>
      <td class="num">${row.counts.all_reduce}</td>
      <td class="num">${row.counts.reduce_scatter}</td>
      <td class="num">${row.counts.all_to_all}</td>
      <td class="num">${runtimeText(row.runtime_s)}</td>
      <td class="num">${row.peak_memory_bytes} B</td>
      <td>${row.conflicts > 0 ? `&#9888; ${row.conflicts}` : ""}</td>
    </tr>`,
    )
    .join("");
  return `<table class="timeline">
    <thead><tr>
      <th>#</th><th>tactic</th><th>AG</th><th>AR</th><th>RS</th><th>A2A</th>
      <th>runtime</th><th>peak</th><th></th>
    </tr></thead>
    <tbody>${body}</tbody>
  </table>`;
}

/** Panel 4: competing rewrite entries for the selected tactic, verbatim. */
export function renderConflicts(summary: SessionSummary, selected: number): string {
  const report = selected >= 0 ? summary.reports[selected] : undefined;
  const conflicts: Conflict[] = report ? report.conflicts : [];
  if (conflicts.length === 0) {
    return `<p class="empty">No conflicts for this tactic.</p>`;
  }
  const items = conflicts
    .map(
      (c) => `
    <li class="conflict">
      <div class="where">%${esc(c.value)} on '${esc(c.axis)}'</div>
      <ol class="options">
        ${c.options.map((o) => `<li><code>${esc(o)}</code></li>`).join("")}
      </ol>
      <div class="verbatim"><code>${esc(c.text)}</code></div>
    </li>`,
    )
    .join("");
  return `<ul class="conflicts">${items}</ul>`;
}

function choiceOptions(
  value: ShardableValue,
  axis: string,
  chosen: ShardingChoice | undefined,
): string {
  const legalDims = value.legal[axis] ?? [];
  const parts = [`<option value=""${chosen === undefined ? " selected" : ""}></option>`];
  for (let dim = 0; dim < value.dims.length; dim++) {
    const selected = chosen === dim ? " selected" : "";
    const disabled = legalDims.includes(dim) ? "" : " disabled";
    parts.push(
      `<option value="dim:${dim}"${selected}${disabled}>dim ${dim} (${value.dims[dim]})</option>`,
    );
  }
  parts.push(
    `<option value="replicated"${chosen === "replicated" ? " selected" : ""}>REPLICATED</option>`,
  );
  parts.push(
    `<option value="first_divisible"${
      chosen === "first_divisible" ? " selected" : ""
    }>FIRST_DIVISIBLE_DIM</option>`,
  );
  return parts.join("");
}

function tilingText(value: ShardableValue): string {
  const parts = Object.entries(value.tiling).map(
    ([dim, axes]) => `${dim}&#8594;${esc(axes.join(","))}`,
  );
  return parts.join(" ");
}

export interface ComposerView {
  axes: string[];
  values: ShardableValue[];
  draft: Draft;
  autoBudget: number;
  error: string | null;
}

/** Panel 2: tactic composer; the sole mutation path. */
export function renderComposer(view: ComposerView): string {
  const axisOptions = view.axes
    .map(
      (axis) =>
        `<option value="${esc(axis)}"${axis === view.draft.axis ? " selected" : ""}>${esc(axis)}</option>`,
    )
    .join("");
  const rows = view.values
    .map(
      (value) => `
    <tr>
      <td class="name">%${esc(value.name)}</td>
      <td class="type">${esc(value.type)}</td>
      <td class="tiling">${tilingText(value)}</td>
      <td class="blocked">${esc(value.blocked.join(" "))}</td>
      <td>
        <select class="choice" data-value="${esc(value.name)}">
          ${choiceOptions(value, view.draft.axis, view.draft.shardings[value.name])}
        </select>
      </td>
    </tr>`,
    )
    .join("");
  const error = view.error
    ? `<div class="error" role="alert">${esc(view.error)}</div>`
    : "";
  return `
  ${error}
  <div class="composer-controls">
    <label>axis
      <select id="axis-picker">${axisOptions}</select>
    </label>
    <button id="apply-tactic">apply tactic</button>
    <button id="clear-draft" type="button">clear</button>
    <span class="spacer"></span>
    <label>budget
      <input id="auto-budget" type="number" min="1" value="${view.autoBudget}">
    </label>
    <button id="apply-auto">auto partition</button>
  </div>
  <table class="shardable">
    <thead><tr>
      <th>value</th><th>type</th><th>tiling</th><th>blocked</th><th>shard</th>
    </tr></thead>
    <tbody>${rows}</tbody>
  </table>`;
}

export function renderHeader(summary: SessionSummary): string {
  return `
  <span class="session">session <code>${esc(summary.id)}</code></span>
  <span class="mesh">mesh <code>${esc(summary.mesh)}</code></span>
  <span class="machine">machine <code>${esc(summary.machine)}</code></span>
  <button id="fork-session">fork</button>
  <button id="new-session">new session</button>`;
}

/** Landing form shown when the hash carries no session id. */
export function renderCreateForm(error: string | null): string {
  const banner = error
    ? `<div class="error" role="alert">${esc(error)}</div>`
    : "";
  return `
  ${banner}
  <div class="create-form">
    <label>model
      <input id="create-model" list="model-names" value="chain">
      <datalist id="model-names">
        <option value="chain"><option value="mlp">
        <option value="transformer"><option value="transpose_diag">
      </datalist>
    </label>
    <label>params (JSON)
      <input id="create-params" placeholder="{}">
    </label>
    <label>mesh
      <input id="create-mesh" value="B:4,M:2">
    </label>
    <label>machine
      <input id="create-machine" placeholder="tpu-v3-core">
    </label>
    <label class="wide">module text (used instead of the model when non-empty)
      <textarea id="create-module" rows="6" spellcheck="false"></textarea>
    </label>
    <button id="create-session">create session</button>
  </div>`;
}
